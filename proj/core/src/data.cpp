#include "dfcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dfcn/serialization.hpp"

namespace dfcn {

namespace fs = std::filesystem;

void validate_record(const SampleRecord& r, int num_classes) {
  require_chw(r.image, "record image");
  if (r.image.dim(0) != 1) throw ShapeError(r.case_id + ": image must have one channel");
  const Shape hw{r.image.dim(1), r.image.dim(2)};
  if (r.labels.shape() != hw || r.roi.shape() != hw) {
    throw ShapeError(r.case_id + ": labels/roi shape does not match image " + shape_to_string(r.image.shape()));
  }
  validate_labels(r.labels, num_classes);
  for (std::size_t px = 0; px < r.labels.size(); ++px) {
    if (r.roi[px] > 1) throw DataError(r.case_id + ": roi mask values must be 0 or 1");
    if (r.labels[px] != kUnlabeled && !r.roi[px]) throw DataError(r.case_id + ": labeled pixel outside roi");
  }
  ensure_finite(r.image, r.case_id + " image");
}

std::vector<std::int64_t> count_labels(const LabelMap& labels, int num_classes, const Mask* roi) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t px = 0; px < labels.size(); ++px) {
    const auto v = labels[px];
    if (v == kUnlabeled || (roi && !(*roi)[px])) continue;
    if (v >= num_classes) throw DataError("count_labels: invalid label " + std::to_string(v));
    ++counts[v];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Cropping and augmentation

std::vector<SampleRecord> crop_lungs(const Tensor& image, const LabelMap& labels, const Mask& lung_mask,
                                     const std::string& case_id, const CropOptions& options) {
  require_chw(image, "crop_lungs");
  const std::int64_t h = image.dim(1), w = image.dim(2);
  const Shape hw{h, w};
  if (image.dim(0) != 1 || labels.shape() != hw || lung_mask.shape() != hw) {
    throw ShapeError("crop_lungs: image, labels and mask must share H x W");
  }
  if (options.margin < 0) throw ParameterError("crop_lungs: margin must be >= 0");
  std::vector<int> component(static_cast<std::size_t>(h * w), -1);
  int components = 0;
  struct Box {
    std::int64_t y0, x0, y1, x1;
  };
  std::vector<Box> boxes;
  for (std::int64_t start = 0; start < h * w; ++start) {
    if (!lung_mask[static_cast<std::size_t>(start)] || component[static_cast<std::size_t>(start)] >= 0) continue;
    Box box{h, w, -1, -1};
    std::deque<std::int64_t> queue{start};
    component[static_cast<std::size_t>(start)] = components;
    while (!queue.empty()) {
      const std::int64_t p = queue.front();
      queue.pop_front();
      const std::int64_t y = p / w, x = p % w;
      box = {std::min(box.y0, y), std::min(box.x0, x), std::max(box.y1, y), std::max(box.x1, x)};
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const std::int64_t ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const auto q = static_cast<std::size_t>(ny * w + nx);
          if (lung_mask[q] && component[q] < 0) {
            component[q] = components;
            queue.push_back(ny * w + nx);
          }
        }
      }
    }
    boxes.push_back(box);
    ++components;
  }
  if (components == 0) throw DataError("crop_lungs: empty lung mask");

  std::vector<SampleRecord> out;
  const std::int64_t m = options.margin;
  for (int c = 0; c < components; ++c) {
    const Box& b = boxes[static_cast<std::size_t>(c)];
    const std::int64_t y0 = std::max<std::int64_t>(0, b.y0 - m), y1 = std::min(h - 1, b.y1 + m);
    const std::int64_t x0 = std::max<std::int64_t>(0, b.x0 - m), x1 = std::min(w - 1, b.x1 + m);
    const std::int64_t ch = y1 - y0 + 1, cw = x1 - x0 + 1;
    SampleRecord r;
    r.case_id = case_id + "/" + std::to_string(c);
    r.origin_y = y0;
    r.origin_x = x0;
    r.image = Tensor({1, ch, cw}, 0.0f);
    r.labels = LabelMap({ch, cw}, kUnlabeled);
    r.roi = Mask({ch, cw}, 0);
    // Row-wise prefix of component membership, used for the box dilation.
    std::vector<std::int64_t> in_comp(static_cast<std::size_t>(ch * cw), 0);
    for (std::int64_t y = 0; y < ch; ++y) {
      for (std::int64_t x = 0; x < cw; ++x) {
        const auto src = static_cast<std::size_t>((y0 + y) * w + (x0 + x));
        const auto dst = static_cast<std::size_t>(y * cw + x);
        r.image[dst] = image[src];
        if (component[src] == c) {
          in_comp[dst] = 1;
          r.labels[dst] = labels[src];
        }
      }
    }
    // Square dilation by `m` via a 2-D summed-area table.
    std::vector<std::int64_t> sat(static_cast<std::size_t>((ch + 1) * (cw + 1)), 0);
    for (std::int64_t y = 0; y < ch; ++y) {
      for (std::int64_t x = 0; x < cw; ++x) {
        sat[static_cast<std::size_t>((y + 1) * (cw + 1) + x + 1)] =
            in_comp[static_cast<std::size_t>(y * cw + x)] + sat[static_cast<std::size_t>(y * (cw + 1) + x + 1)] +
            sat[static_cast<std::size_t>((y + 1) * (cw + 1) + x)] - sat[static_cast<std::size_t>(y * (cw + 1) + x)];
      }
    }
    for (std::int64_t y = 0; y < ch; ++y) {
      for (std::int64_t x = 0; x < cw; ++x) {
        const std::int64_t ya = std::max<std::int64_t>(0, y - m), yb = std::min(ch, y + m + 1);
        const std::int64_t xa = std::max<std::int64_t>(0, x - m), xb = std::min(cw, x + m + 1);
        const std::int64_t s = sat[static_cast<std::size_t>(yb * (cw + 1) + xb)] -
                               sat[static_cast<std::size_t>(ya * (cw + 1) + xb)] -
                               sat[static_cast<std::size_t>(yb * (cw + 1) + xa)] +
                               sat[static_cast<std::size_t>(ya * (cw + 1) + xa)];
        r.roi[static_cast<std::size_t>(y * cw + x)] = s > 0 ? 1 : 0;
      }
    }
    r.annotated = std::any_of(r.labels.data().begin(), r.labels.data().end(),
                              [](std::uint8_t v) { return v != kUnlabeled; });
    if (r.annotated || options.keep_unannotated) out.push_back(std::move(r));
  }
  return out;
}

SampleRecord augment(const SampleRecord& sample, int op_index) {
  if (op_index < 0 || op_index > 7) {
    throw ParameterError("augment: op index must be in 0..7, got " + std::to_string(op_index));
  }
  SampleRecord out = sample;
  if (op_index == 0) return out;
  out.image = dihedral(sample.image, op_index);
  out.labels = dihedral(sample.labels, op_index);
  out.roi = dihedral(sample.roi, op_index);
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<std::string> default_class_names() {
  return {"healthy", "ground_glass_opacity", "micronodules", "consolidation", "reticulation", "honeycombing"};
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  std::error_code ec;
  const auto rel = fs::relative(p, base, ec);
  return ec || rel.empty() ? p.string() : rel.generic_string();
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    reject_unknown_keys(j, {"classes", "records", "config_hash", "seed", "generator"}, "manifest");
    m.classes = j.at("classes").get<std::vector<std::string>>();
    if (m.classes.size() < 2) throw DataError("manifest: at least two classes required");
    std::set<std::string> seen;
    for (const auto& rj : j.at("records")) {
      reject_unknown_keys(rj, {"case_id", "image", "labels", "roi", "counts"}, "manifest record");
      ManifestRecord r;
      r.case_id = rj.at("case_id").get<std::string>();
      if (!seen.insert(r.case_id).second) throw DataError("manifest: duplicate case_id " + r.case_id);
      r.image = resolve(m.base_dir, rj.at("image").get<std::string>());
      r.labels = resolve(m.base_dir, rj.at("labels").get<std::string>());
      r.roi = resolve(m.base_dir, rj.at("roi").get<std::string>());
      const LabelMap labels = read_label_file(r.labels);
      const Mask roi = read_label_file(r.roi);
      if (labels.shape() != roi.shape()) throw DataError("manifest: labels/roi shape mismatch for " + r.case_id);
      validate_labels(labels, m.num_classes());
      r.counts = count_labels(labels, m.num_classes(), &roi);
      if (rj.contains("counts") && rj.at("counts").get<std::vector<std::int64_t>>() != r.counts) {
        throw DataError("manifest: stored counts of " + r.case_id + " disagree with its label file");
      }
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  nlohmann::json j;
  j["classes"] = manifest.classes;
  nlohmann::json records = nlohmann::json::array();
  const fs::path base = path.parent_path();
  for (const auto& r : manifest.records) {
    records.push_back({{"case_id", r.case_id},
                       {"image", relative_to(r.image, base)},
                       {"labels", relative_to(r.labels, base)},
                       {"roi", relative_to(r.roi, base)},
                       {"counts", r.counts}});
  }
  j["records"] = records;
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

SampleRecord load_record(const DatasetManifest& manifest, std::size_t index) {
  const auto& mr = manifest.records.at(index);
  SampleRecord r;
  r.case_id = mr.case_id;
  r.image = read_tensor_file(mr.image);
  if (r.image.rank() == 2) r.image = r.image.reshaped({1, r.image.dim(0), r.image.dim(1)});
  r.labels = read_label_file(mr.labels);
  r.roi = read_label_file(mr.roi);
  // Labels outside the roi never participate.
  for (std::size_t px = 0; px < r.labels.size() && px < r.roi.size(); ++px) {
    if (!r.roi[px]) r.labels[px] = kUnlabeled;
  }
  validate_record(r, manifest.num_classes());
  r.annotated = std::any_of(r.labels.data().begin(), r.labels.data().end(),
                            [](std::uint8_t v) { return v != kUnlabeled; });
  return r;
}

std::vector<SampleRecord> load_records(const DatasetManifest& manifest, std::span<const std::size_t> indices) {
  std::vector<SampleRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(load_record(manifest, i));
  return out;
}

std::vector<std::int64_t> class_counts(const DatasetManifest& manifest, std::span<const std::size_t> subset) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(manifest.num_classes()), 0);
  for (auto i : subset) {
    const auto& rc = manifest.records.at(i).counts;
    for (std::size_t c = 0; c < counts.size() && c < rc.size(); ++c) counts[c] += rc[c];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Splitting

std::vector<std::size_t> fold_sizes(std::size_t cases, std::size_t folds) {
  if (folds < 2) throw ParameterError("fold count must be >= 2");
  if (cases < folds) {
    throw DataError("cannot split " + std::to_string(cases) + " cases into " + std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> sizes(folds, cases / folds);
  sizes[0] = cases - (folds - 1) * (cases / folds);
  return sizes;
}

double distribution_entropy(std::span<const std::int64_t> counts) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (auto c : counts) {
    if (c <= 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return h;
}

std::vector<std::size_t> SplitAssignment::members(const DatasetManifest& manifest, int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto it = fold_of_case.find(manifest.records[i].case_id);
    if (it == fold_of_case.end()) throw DataError("split has no fold for case " + manifest.records[i].case_id);
    if (it->second == f) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> SplitAssignment::complement(const DatasetManifest& manifest, int f) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto it = fold_of_case.find(manifest.records[i].case_id);
    if (it == fold_of_case.end()) throw DataError("split has no fold for case " + manifest.records[i].case_id);
    if (it->second != f) out.push_back(i);
  }
  return out;
}

SplitAssignment hill_climb_split(std::span<const std::string> case_ids,
                                 std::span<const std::vector<std::int64_t>> case_counts, int folds,
                                 std::int64_t max_stale_iters, Rng& rng) {
  if (case_ids.size() != case_counts.size()) throw DataError("hill_climb_split: ids and counts differ in length");
  if (folds < 2) throw ParameterError("hill_climb_split: folds must be >= 2");
  if (case_ids.size() < static_cast<std::size_t>(folds)) {
    throw DataError("hill_climb_split: " + std::to_string(case_ids.size()) + " cases are fewer than " +
                    std::to_string(folds) + " folds");
  }
  const std::size_t classes = case_counts.empty() ? 0 : case_counts[0].size();
  for (const auto& c : case_counts) {
    if (c.size() != classes) throw DataError("hill_climb_split: inconsistent class count vectors");
  }
  const auto nf = static_cast<std::size_t>(folds);
  std::vector<std::size_t> order(case_ids.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  const auto sizes = fold_sizes(case_ids.size(), nf);
  std::vector<std::vector<std::size_t>> members(nf);
  std::size_t next = 0;
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t k = 0; k < sizes[f]; ++k) members[f].push_back(order[next++]);
  }
  std::vector<std::vector<std::int64_t>> counts(nf, std::vector<std::int64_t>(classes, 0));
  for (std::size_t f = 0; f < nf; ++f) {
    for (auto i : members[f]) {
      for (std::size_t c = 0; c < classes; ++c) counts[f][c] += case_counts[i][c];
    }
  }
  std::vector<double> entropy(nf);
  for (std::size_t f = 0; f < nf; ++f) entropy[f] = distribution_entropy(counts[f]);
  auto average = [&](const std::vector<double>& e) {
    double s = 0.0;
    for (double v : e) s += v;
    return s / static_cast<double>(e.size());
  };

  SplitAssignment out;
  out.folds = folds;
  double score = average(entropy);
  out.accepted_history.push_back(score);
  std::int64_t stale = 0;
  std::vector<std::int64_t> ca(classes), cb(classes);
  while (stale < max_stale_iters) {
    ++out.proposals;
    const std::size_t a = static_cast<std::size_t>(rng.below(nf));
    std::size_t b = static_cast<std::size_t>(rng.below(nf - 1));
    if (b >= a) ++b;
    const std::size_t ia = static_cast<std::size_t>(rng.below(members[a].size()));
    const std::size_t ib = static_cast<std::size_t>(rng.below(members[b].size()));
    const std::size_t case_a = members[a][ia], case_b = members[b][ib];
    for (std::size_t c = 0; c < classes; ++c) {
      ca[c] = counts[a][c] - case_counts[case_a][c] + case_counts[case_b][c];
      cb[c] = counts[b][c] - case_counts[case_b][c] + case_counts[case_a][c];
    }
    auto trial = entropy;
    trial[a] = distribution_entropy(ca);
    trial[b] = distribution_entropy(cb);
    const double candidate = average(trial);
    if (candidate > score) {
      counts[a] = ca;
      counts[b] = cb;
      entropy = std::move(trial);
      std::swap(members[a][ia], members[b][ib]);
      score = candidate;
      out.accepted_history.push_back(score);
      stale = 0;
    } else {
      ++stale;
    }
  }
  for (std::size_t f = 0; f < nf; ++f) {
    for (auto i : members[f]) out.fold_of_case[case_ids[i]] = static_cast<int>(f);
  }
  out.fold_counts = std::move(counts);
  out.fold_entropy = std::move(entropy);
  out.average_entropy = score;
  return out;
}

SplitAssignment hill_climb_split(const DatasetManifest& manifest, int folds, std::int64_t max_stale_iters, Rng& rng) {
  std::vector<std::string> ids;
  std::vector<std::vector<std::int64_t>> counts;
  for (const auto& r : manifest.records) {
    ids.push_back(r.case_id);
    counts.push_back(r.counts);
  }
  return hill_climb_split(ids, counts, folds, max_stale_iters, rng);
}

void to_json(nlohmann::json& j, const SplitAssignment& s) {
  j = nlohmann::json{{"folds", s.folds},
                     {"fold_of_case", s.fold_of_case},
                     {"fold_counts", s.fold_counts},
                     {"fold_entropy", s.fold_entropy},
                     {"average_entropy", s.average_entropy},
                     {"accepted_history", s.accepted_history},
                     {"proposals", s.proposals}};
}

void from_json(const nlohmann::json& j, SplitAssignment& s) {
  try {
    s.folds = j.at("folds").get<int>();
    s.fold_of_case = j.at("fold_of_case").get<std::map<std::string, int>>();
    s.fold_counts = j.value("fold_counts", std::vector<std::vector<std::int64_t>>{});
    s.fold_entropy = j.value("fold_entropy", std::vector<double>{});
    s.average_entropy = j.value("average_entropy", 0.0);
    s.accepted_history = j.value("accepted_history", std::vector<double>{});
    s.proposals = j.value("proposals", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("split: ") + e.what());
  }
  for (const auto& [id, f] : s.fold_of_case) {
    if (f < 0 || f >= s.folds) throw FormatError("split: fold index out of range for case " + id);
  }
}

// ---------------------------------------------------------------------------
// Synthetic texture mosaics

namespace {

constexpr double kPi = 3.14159265358979323846;

enum class Family { blobs, stripes_diag, speckle, checks, dots, stripes_fine, crosshatch, stripes_wide };

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"blobs", "diagonal stripes", "speckle", "checks",
                                              "dots",  "fine stripes",     "crosshatch", "wide stripes"};
  return names;
}

struct TextureInstance {
  Family family;
  double angle = 0.0;
  double freq_scale = 1.0;
  double phase_x = 0.0;
  double phase_y = 0.0;
  // Low-frequency components for the blob family.
  std::vector<std::array<double, 4>> waves;  // fx, fy, phase, amplitude
};

TextureInstance make_texture(Family f, Rng& rng) {
  TextureInstance t;
  t.family = f;
  t.angle = rng.uniform(-0.15, 0.15);
  t.freq_scale = rng.uniform(0.9, 1.1);
  t.phase_x = rng.uniform(0.0, 2.0 * kPi);
  t.phase_y = rng.uniform(0.0, 2.0 * kPi);
  if (f == Family::blobs) {
    for (int k = 0; k < 6; ++k) {
      const double theta = rng.uniform(0.0, kPi);
      const double freq = rng.uniform(1.0 / 20.0, 1.0 / 12.0);
      t.waves.push_back({freq * std::cos(theta), freq * std::sin(theta), rng.uniform(0.0, 2.0 * kPi), 1.0});
    }
  }
  return t;
}

// Roughly zero-mean, unit-variance texture value at (y, x); `noise` is a
// per-pixel standard normal draw.
double texture_value(const TextureInstance& t, double y, double x, double noise) {
  const double c = std::cos(t.angle), s = std::sin(t.angle);
  const double u = c * x + s * y;
  const double v = -s * x + c * y;
  const double f = t.freq_scale;
  switch (t.family) {
    case Family::blobs: {
      double acc = 0.0;
      for (const auto& w : t.waves) acc += std::cos(2.0 * kPi * (w[0] * x + w[1] * y) + w[2]);
      return acc / std::sqrt(0.5 * static_cast<double>(t.waves.size())) * 0.9 + 0.3 * noise;
    }
    case Family::stripes_diag:
      return std::sqrt(2.0) * std::sin(2.0 * kPi * f * (u + v) / (6.0 * std::sqrt(2.0)) + t.phase_x) * 0.9 +
             0.3 * noise;
    case Family::speckle:
      return noise;
    case Family::checks: {
      const double a = std::sin(2.0 * kPi * f * u / 10.0 + t.phase_x);
      const double b = std::sin(2.0 * kPi * f * v / 10.0 + t.phase_y);
      return ((a >= 0) == (b >= 0) ? 0.9 : -0.9) + 0.3 * noise;
    }
    case Family::dots: {
      const double a = std::cos(2.0 * kPi * f * u / 7.0 + t.phase_x) + std::cos(2.0 * kPi * f * v / 7.0 + t.phase_y);
      return (a > 1.0 ? 2.2 : -0.45) + 0.3 * noise;
    }
    case Family::stripes_fine:
      return std::sqrt(2.0) * std::sin(2.0 * kPi * f * u / 3.0 + t.phase_x) * 0.9 + 0.3 * noise;
    case Family::crosshatch:
      return (std::sin(2.0 * kPi * f * (u + v) / 9.0 + t.phase_x) + std::sin(2.0 * kPi * f * (u - v) / 9.0 + t.phase_y)) *
                 0.9 +
             0.3 * noise;
    case Family::stripes_wide:
      return std::sqrt(2.0) * std::sin(2.0 * kPi * f * v / 12.0 + t.phase_y) * 0.9 + 0.3 * noise;
  }
  return noise;
}

}  // namespace

int texture_family_count() { return static_cast<int>(family_names().size()); }

std::vector<std::string> texture_family_names() { return family_names(); }

SampleRecord synth_mosaic(const SynthOptions& o) {
  if (o.num_classes < 2 || o.num_classes > texture_family_count()) {
    throw ParameterError("synth_mosaic: num_classes must be in 2.." + std::to_string(texture_family_count()) +
                         ", got " + std::to_string(o.num_classes));
  }
  if (o.height < 1 || o.width < 1) throw ParameterError("synth_mosaic: canvas must be at least 1 x 1");
  if (o.regions < 1) throw ParameterError("synth_mosaic: regions must be >= 1");
  if (!(o.unlabeled_fraction >= 0.0 && o.unlabeled_fraction <= 1.0)) {
    throw ParameterError("synth_mosaic: unlabeled_fraction must be in [0, 1]");
  }
  if (o.border < 0) throw ParameterError("synth_mosaic: border must be >= 0");
  const std::int64_t h = o.height, w = o.width;
  Rng rng = Rng::stream(o.seed, "mosaic");

  // Region sites and a balanced class assignment.
  std::vector<std::pair<double, double>> sites;
  for (int s = 0; s < o.regions; ++s) sites.emplace_back(rng.uniform(0.0, double(h)), rng.uniform(0.0, double(w)));
  std::vector<int> region_class;
  while (static_cast<int>(region_class.size()) < o.regions) {
    std::vector<int> perm(static_cast<std::size_t>(o.num_classes));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    region_class.insert(region_class.end(), perm.begin(), perm.end());
  }
  region_class.resize(static_cast<std::size_t>(o.regions));
  std::vector<TextureInstance> textures;
  for (int s = 0; s < o.regions; ++s) {
    textures.push_back(make_texture(static_cast<Family>(region_class[static_cast<std::size_t>(s)]), rng));
  }
  const double gain = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  const double offset = rng.uniform(-1.0, 1.0);

  SampleRecord r;
  r.case_id = "mosaic-" + std::to_string(o.seed);
  r.image = Tensor({1, h, w}, 0.0f);
  r.labels = LabelMap({h, w}, kUnlabeled);
  r.roi = Mask({h, w}, 0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t s = 0; s < sites.size(); ++s) {
        const double dy = static_cast<double>(y) + 0.5 - sites[s].first;
        const double dx = static_cast<double>(x) + 0.5 - sites[s].second;
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      const double noise = rng.normal();
      const double v = texture_value(textures[best], static_cast<double>(y), static_cast<double>(x), noise);
      const auto px = static_cast<std::size_t>(y * w + x);
      r.image[px] = static_cast<float>(gain * v + offset);
      const bool inside = y >= o.border && y < h - o.border && x >= o.border && x < w - o.border;
      r.roi[px] = inside ? 1 : 0;
      if (inside) r.labels[px] = static_cast<std::uint8_t>(region_class[best]);
    }
  }

  // Smooth random field; its lowest roi pixels become unlabeled.
  std::vector<std::array<double, 3>> waves;
  for (int k = 0; k < 5; ++k) {
    const double theta = rng.uniform(0.0, kPi);
    const double freq = rng.uniform(1.0 / 48.0, 1.0 / 20.0);
    waves.push_back({freq * std::cos(theta), freq * std::sin(theta), rng.uniform(0.0, 2.0 * kPi)});
  }
  std::vector<std::pair<double, std::size_t>> field;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto px = static_cast<std::size_t>(y * w + x);
      if (!r.roi[px]) continue;
      double f = 0.0;
      for (const auto& wv : waves) f += std::cos(2.0 * kPi * (wv[0] * double(x) + wv[1] * double(y)) + wv[2]);
      field.emplace_back(f, px);
    }
  }
  const auto hidden = static_cast<std::size_t>(std::llround(o.unlabeled_fraction * static_cast<double>(field.size())));
  std::sort(field.begin(), field.end());
  for (std::size_t k = 0; k < hidden && k < field.size(); ++k) r.labels[field[k].second] = kUnlabeled;
  r.annotated = hidden < field.size();
  return r;
}

std::vector<SampleRecord> synthetic_records(int count, const SynthOptions& options) {
  std::vector<SampleRecord> out;
  for (int i = 0; i < count; ++i) {
    SynthOptions o = options;
    o.seed = splitmix64(options.seed + static_cast<std::uint64_t>(i));
    auto r = synth_mosaic(o);
    char id[32];
    std::snprintf(id, sizeof(id), "case-%04d", i);
    r.case_id = id;
    out.push_back(std::move(r));
  }
  return out;
}

fs::path write_synthetic_dataset(const fs::path& dir, int count, const SynthOptions& options) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.base_dir = dir;
  const auto names = texture_family_names();
  for (int c = 0; c < options.num_classes && c < static_cast<int>(names.size()); ++c) m.classes.push_back(names[c]);
  for (auto& r : synthetic_records(count, options)) {
    ManifestRecord mr;
    mr.case_id = r.case_id;
    mr.image = dir / (r.case_id + ".image.tsr");
    mr.labels = dir / (r.case_id + ".labels.tsr");
    mr.roi = dir / (r.case_id + ".roi.tsr");
    write_tensor_file(r.image, mr.image);
    write_tensor_file(r.labels, mr.labels);
    write_tensor_file(r.roi, mr.roi);
    mr.counts = count_labels(r.labels, options.num_classes, &r.roi);
    m.records.push_back(std::move(mr));
  }
  const fs::path manifest = dir / "manifest.json";
  save_manifest(m, manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// PGM import

namespace {

struct Pgm {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int maxval = 0;
  std::vector<std::uint16_t> samples;
};

Pgm read_pgm(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::int64_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(path.string() + ": malformed PGM header");
    std::int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) {
    throw FormatError(path.string() + ": bad magic (expected P5 or P2)");
  }
  const bool binary = bytes[1] == '5';
  pos = 2;
  Pgm p;
  p.width = read_int();
  p.height = read_int();
  p.maxval = static_cast<int>(read_int());
  if (p.width < 1 || p.height < 1 || p.maxval < 1 || p.maxval > 65535) {
    throw FormatError(path.string() + ": invalid PGM dimensions or maxval");
  }
  const auto n = static_cast<std::size_t>(p.width * p.height);
  p.samples.resize(n);
  if (binary) {
    ++pos;  // single whitespace after maxval
    const std::size_t bps = p.maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + n * bps) throw FormatError(path.string() + ": truncated payload");
    for (std::size_t i = 0; i < n; ++i) {
      p.samples[i] = bps == 1 ? bytes[pos + i]
                              : static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) p.samples[i] = static_cast<std::uint16_t>(read_int());
  }
  return p;
}

}  // namespace

Tensor read_pgm_image(const fs::path& path) {
  const Pgm p = read_pgm(path);
  Tensor t({1, p.height, p.width}, 0.0f);
  for (std::size_t i = 0; i < p.samples.size(); ++i) t[i] = static_cast<float>(p.samples[i]);
  return t;
}

LabelMap read_pgm_labels(const fs::path& path) {
  const Pgm p = read_pgm(path);
  if (p.maxval > 255) throw FormatError(path.string() + ": label maps must be 8-bit PGM");
  LabelMap m({p.height, p.width}, 0);
  for (std::size_t i = 0; i < p.samples.size(); ++i) m[i] = static_cast<std::uint8_t>(p.samples[i]);
  return m;
}

}  // namespace dfcn
