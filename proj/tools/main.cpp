#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "dfcn/data.hpp"
#include "dfcn/error.hpp"
#include "dfcn/gradcheck.hpp"
#include "dfcn/loss_metrics.hpp"
#include "dfcn/model.hpp"
#include "dfcn/serialization.hpp"
#include "dfcn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw dfcn::DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

dfcn::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? dfcn::RunConfig{} : dfcn::load_run_config(path);
}

std::string network_hash(const dfcn::NetworkConfig& c) { return dfcn::hex64(dfcn::json_hash(json(c))); }

// ---------------------------------------------------------------------------
// inspect

void print_table2() {
  std::printf("%-28s %6s %12s %10s %10s %9s %s\n", "configuration", "alpha", "trainable", "stored", "reported",
              "rel.err", "within 1%");
  for (const auto& row : dfcn::table2_configs()) {
    const auto trainable = dfcn::param_count(row.config);
    const auto stored = dfcn::stored_param_count(row.config);
    const double ours = static_cast<double>(stored) / 1e5;
    const double rel = (ours - row.reported_params) / row.reported_params;
    std::printf("%-28s %6.2f %12lld %10.4f %10.2f %+8.3f%% %s\n", row.name.c_str(), row.alpha,
                static_cast<long long>(trainable), ours, row.reported_params, 100.0 * rel,
                std::abs(rel) <= 0.01 ? "yes" : "no");
  }
}

void print_inspect(const dfcn::NetworkConfig& c) {
  std::printf("%-14s %-16s %6s %6s %6s %4s %10s %10s\n", "layer", "kind", "in", "out", "kernel", "dil", "params",
              "stored");
  for (const auto& l : dfcn::layer_table(c)) {
    std::printf("%-14s %-16s %6lld %6lld %6d %4d %10lld %10lld\n", l.name.c_str(), l.kind.c_str(),
                static_cast<long long>(l.in_channels), static_cast<long long>(l.out_channels), l.kernel, l.dilation,
                static_cast<long long>(l.params), static_cast<long long>(l.stored));
  }
  std::printf("\ntrainable parameters: %lld\n", static_cast<long long>(dfcn::param_count(c)));
  std::printf("stored parameters:    %lld\n", static_cast<long long>(dfcn::stored_param_count(c)));
  std::printf("receptive field:      %lld x %lld\n", static_cast<long long>(dfcn::receptive_field(c)),
              static_cast<long long>(dfcn::receptive_field(c)));
  std::printf("\nsampling coverage (per dilated prefix)\n");
  std::printf("%5s %4s %7s %9s %8s  %s\n", "depth", "dil", "extent", "offsets", "density", "1-D gaps (gap:count)");
  for (const auto& lv : dfcn::sampling_coverage(c).levels) {
    std::string gaps;
    for (const auto& [gap, count] : lv.gap_histogram) gaps += std::to_string(gap) + ":" + std::to_string(count) + " ";
    std::printf("%5d %4d %7lld %9lld %8.4f  %s\n", lv.depth, lv.dilation, static_cast<long long>(lv.extent),
                static_cast<long long>(lv.offsets), lv.density, gaps.c_str());
  }
}

// ---------------------------------------------------------------------------
// predict

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb class_color(int c) {
  static const Rgb palette[] = {{0, 0, 255}, {128, 0, 160}, {0, 170, 0}, {255, 230, 0}, {255, 140, 0}, {230, 0, 0}};
  if (c >= 0 && c < 6) return palette[c];
  const auto v = static_cast<std::uint8_t>(40 + (c * 53) % 180);
  return {v, v, v};
}

void write_overlay(const dfcn::Tensor& image, const dfcn::LabelMap& labels, const fs::path& path,
                   const std::string& header_comment) {
  const auto h = labels.dim(0), w = labels.dim(1);
  float lo = image[0], hi = image[0];
  for (float v : image.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi > lo ? hi - lo : 1.0f;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dfcn::DataError("cannot write " + path.string());
  out << "P6\n# " << header_comment << "\n" << w << " " << h << "\n255\n";
  for (std::int64_t i = 0; i < h * w; ++i) {
    const double gray = 255.0 * (image[static_cast<std::size_t>(i)] - lo) / span;
    const Rgb c = class_color(labels[static_cast<std::size_t>(i)]);
    const auto blend = [&](std::uint8_t col) { return static_cast<char>(std::lround(0.5 * gray + 0.5 * col)); };
    out.put(blend(c.r)).put(blend(c.g)).put(blend(c.b));
  }
}

dfcn::Tensor read_image(const fs::path& path) {
  const auto ext = path.extension().string();
  dfcn::Tensor t = (ext == ".pgm" || ext == ".PGM") ? dfcn::read_pgm_image(path) : dfcn::read_tensor_file(path);
  if (t.rank() == 2) t = t.reshaped({1, t.dim(0), t.dim(1)});
  return t;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"dfcn: dilated fully convolutional network for texture segmentation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads for convolutions (0 = all cores)")->check(CLI::NonNegativeNumber);

  // train
  auto* train = app.add_subcommand("train", "Train one cross-validation fold");
  std::string config_path, manifest_path, split_path, out_dir;
  int fold = 0;
  bool verbose = false;
  train->add_option("--config", config_path, "Run configuration JSON")->check(CLI::ExistingFile);
  train->add_option("--manifest", manifest_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--split", split_path, "Split assignment JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--fold", fold, "Held-out fold index")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_flag("--verbose", verbose, "Print per-epoch progress");

  // cv
  auto* cv = app.add_subcommand("cv", "Full cross-validation, optionally sweeping alpha");
  int folds = 5;
  std::int64_t split_iters = 10000;
  std::vector<double> sweep;
  cv->add_option("--config", config_path, "Run configuration JSON")->check(CLI::ExistingFile);
  cv->add_option("--manifest", manifest_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  cv->add_option("--out", out_dir, "Output directory")->required();
  cv->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 1000));
  cv->add_option("--split-iters", split_iters, "Consecutive rejected swaps before the split search stops");
  cv->add_option("--sweep-alpha", sweep, "Comma-separated alpha values")->delimiter(',');
  cv->add_flag("--verbose", verbose, "Print per-epoch progress");

  // predict
  auto* predict = app.add_subcommand("predict", "Segment one image");
  std::string checkpoint_path, image_path;
  predict->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("--image", image_path, "Image (TSR1 float32 or PGM)")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out_dir, "Output directory")->required();

  // split
  auto* split = app.add_subcommand("split", "Hill-climbing fold assignment");
  std::uint64_t seed = 0;
  std::string out_file;
  split->add_option("--manifest", manifest_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  split->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 1000));
  split->add_option("--iters", split_iters, "Consecutive rejected swaps before stopping");
  split->add_option("--seed", seed, "Random seed");
  split->add_option("--out", out_file, "Output JSON")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic texture-mosaic dataset");
  dfcn::SynthOptions so;
  int count = 200;
  std::int64_t size = 96;
  synth->add_option("--seed", so.seed, "Random seed");
  synth->add_option("--count", count, "Number of mosaics")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Side length in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--classes", so.num_classes, "Number of texture classes");
  synth->add_option("--regions", so.regions, "Voronoi regions per mosaic");
  synth->add_option("--unlabeled-fraction", so.unlabeled_fraction, "Fraction of roi pixels left unlabeled");
  synth->add_option("--out", out_dir, "Output directory")->required();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Layer table, parameter counts, receptive field, coverage");
  bool table2 = false;
  inspect->add_option("--config", config_path, "Run configuration JSON")->check(CLI::ExistingFile);
  inspect->add_flag("--table2", table2, "Print the built-in ablation configurations");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite in 64-bit mode");
  dfcn::GradcheckOptions go;
  gradcheck->add_option("--config", config_path, "Run configuration JSON (network section is used)")
      ->check(CLI::ExistingFile);
  gradcheck->add_option("--seed", go.seed, "Random seed");
  gradcheck->add_option("--size", go.height, "Probe input side length")->check(CLI::Range(1, 64));
  gradcheck->add_option("--coords", go.network_coords_per_tensor, "Coordinates probed per network tensor (0 = all)");
  bool gc_verbose = false;
  gradcheck->add_flag("--verbose", gc_verbose, "Print every entry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  dfcn::set_num_threads(threads);

  if (*train) {
    const auto config = config_or_default(config_path);
    const auto manifest = dfcn::load_manifest(manifest_path);
    std::ifstream sin(split_path);
    json sj;
    try {
      sin >> sj;
    } catch (const json::exception& e) {
      throw dfcn::FormatError(split_path + ": " + e.what());
    }
    const auto assignment = sj.get<dfcn::SplitAssignment>();
    dfcn::FoldOptions fo;
    fo.out_dir = fs::path(out_dir);
    fo.quiet = !verbose;
    const auto result = dfcn::run_fold(manifest, assignment, fold, config, fo);
    write_json(fs::path(out_dir) / "report.json", {{"config_hash", config.hash()},
                                                   {"seed", config.seed},
                                                   {"config", config},
                                                   {"fold", fold},
                                                   {"best_epoch", result.best_epoch},
                                                   {"epochs_run", result.epochs_run},
                                                   {"class_weights", result.weights.w},
                                                   {"report", result.report}});
    std::printf("fold %d: best BACC %.4f at epoch %d (%d epochs)\n", fold, result.report.bacc, result.best_epoch,
                result.epochs_run);
    return kOk;
  }

  if (*cv) {
    const auto config = config_or_default(config_path);
    const auto manifest = dfcn::load_manifest(manifest_path);
    dfcn::CvOptions co;
    co.folds = folds;
    co.split_iters = split_iters;
    co.out_dir = fs::path(out_dir);
    co.quiet = !verbose;
    fs::create_directories(out_dir);
    if (sweep.empty()) {
      const auto report = dfcn::run_cv(manifest, config, co);
      json j = report;
      j["config_hash"] = config.hash();
      j["seed"] = config.seed;
      j["config"] = config;
      write_json(fs::path(out_dir) / "cv_report.json", j);
      std::printf("mean BACC over %d folds: %.4f (pooled %.4f)\n", folds, report.mean_bacc, report.pooled.bacc);
      return kOk;
    }
    const auto result = dfcn::run_alpha_sweep(manifest, config, sweep, co);
    std::ofstream csv(fs::path(out_dir) / "curves.csv");
    csv << dfcn::curve_csv_header() << ",seed,config_hash\n";
    for (const auto& p : result.curves) csv << dfcn::curve_csv_row(p) << ',' << config.seed << ',' << config.hash() << '\n';
    json summary = json::array();
    for (std::size_t i = 0; i < result.alphas.size(); ++i) {
      json entry = result.reports[i];
      entry["alpha"] = result.alphas[i];
      summary.push_back(entry);
      std::printf("alpha %-8g mean BACC %.4f\n", result.alphas[i], result.reports[i].mean_bacc);
    }
    write_json(fs::path(out_dir) / "sweep_report.json",
               {{"config_hash", config.hash()}, {"seed", config.seed}, {"config", config}, {"sweep", summary}});
    return kOk;
  }

  if (*predict) {
    const auto net = dfcn::load_checkpoint(checkpoint_path);
    const auto image = read_image(image_path);
    dfcn::Rng unused(0);
    const auto [probs, cache] = dfcn::forward(net, image, dfcn::Mode::eval, unused);
    const auto labels = dfcn::argmax_labels(probs);
    double worst = 0.0;
    const auto hw = static_cast<std::size_t>(labels.size());
    for (std::size_t px = 0; px < hw; ++px) {
      double s = 0.0;
      for (std::int64_t c = 0; c < probs.dim(0); ++c) s += probs[static_cast<std::size_t>(c) * hw + px];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    fs::create_directories(out_dir);
    const std::string hash = network_hash(net.config);
    dfcn::write_tensor_file(labels, fs::path(out_dir) / "labels.tsr");
    write_overlay(image, labels, fs::path(out_dir) / "overlay.ppm",
                  "config_hash " + hash + " seed " + std::to_string(net.seed));
    std::vector<std::int64_t> histogram(static_cast<std::size_t>(net.config.num_classes), 0);
    for (auto v : labels.data()) ++histogram[v];
    write_json(fs::path(out_dir) / "prediction.json", {{"config_hash", hash},
                                                       {"seed", net.seed},
                                                       {"checkpoint", checkpoint_path},
                                                       {"image", image_path},
                                                       {"height", labels.dim(0)},
                                                       {"width", labels.dim(1)},
                                                       {"class_histogram", histogram},
                                                       {"max_channel_sum_deviation", worst}});
    std::printf("wrote %s (max |sum p - 1| = %.3g)\n", (fs::path(out_dir) / "overlay.ppm").c_str(), worst);
    return kOk;
  }

  if (*split) {
    const auto manifest = dfcn::load_manifest(manifest_path);
    dfcn::Rng rng = dfcn::Rng::stream(seed, "split");
    const auto s = dfcn::hill_climb_split(manifest, folds, split_iters, rng);
    json j = s;
    j["seed"] = seed;
    j["config_hash"] = dfcn::hex64(dfcn::json_hash({{"folds", folds}, {"iters", split_iters}}));
    write_json(out_file, j);
    std::printf("average entropy %.6f after %lld proposals (%zu accepted)\n", s.average_entropy,
                static_cast<long long>(s.proposals), s.accepted_history.size() - 1);
    return kOk;
  }

  if (*synth) {
    so.height = so.width = size;
    const auto manifest = dfcn::write_synthetic_dataset(out_dir, count, so);
    std::printf("wrote %d mosaics to %s\n", count, manifest.c_str());
    return kOk;
  }

  if (*inspect) {
    if (table2) {
      print_table2();
      if (config_path.empty()) return kOk;
      std::printf("\n");
    }
    const auto config = config_or_default(config_path);
    std::printf("config_hash %s seed %llu\n\n", config.hash().c_str(), static_cast<unsigned long long>(config.seed));
    print_inspect(config.network);
    return kOk;
  }

  if (*gradcheck) {
    go.width = go.height;
    const auto config = config_path.empty() ? dfcn::gradcheck_default_config() : config_or_default(config_path).network;
    const auto report = dfcn::gradcheck_all(config, go);
    std::int64_t checked = 0, skipped = 0;
    for (const auto& e : report.entries) {
      checked += e.checked;
      skipped += e.skipped;
      if (gc_verbose || !e.pass) {
        std::printf("%-4s %-52s max rel err %.3e (%lld checked, %lld skipped; worst %.6e vs %.6e)\n",
                    e.pass ? "ok" : "FAIL", e.name.c_str(), e.max_rel_error, static_cast<long long>(e.checked),
                    static_cast<long long>(e.skipped), e.worst_analytic, e.worst_numeric);
      }
    }
    std::printf("gradcheck config_hash %s seed %llu: %zu entries, %lld coordinates, %lld skipped at kinks, "
                "max rel err %.3e (tolerance %.0e) -> %s\n",
                network_hash(config).c_str(), static_cast<unsigned long long>(go.seed), report.entries.size(),
                static_cast<long long>(checked), static_cast<long long>(skipped), report.max_rel_error(),
                go.tolerance, report.pass() ? "PASS" : "FAIL");
    return report.pass() ? kOk : kNumeric;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dfcn::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const dfcn::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const dfcn::ParameterError& e) {
    std::cerr << "invalid parameter: " << e.what() << '\n';
    return kUsage;
  } catch (const dfcn::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
