#include "dfcn/loss_metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace dfcn {

ClassWeights class_weights(std::span<const std::int64_t> counts) {
  std::int64_t total = 0;
  std::int64_t present = 0;
  for (auto n : counts) {
    if (n < 0) throw DataError("class_weights: negative class count");
    total += n;
    if (n > 0) ++present;
  }
  if (total == 0) throw DataError("class_weights: empty reference set (all class counts are zero)");
  ClassWeights w;
  w.w.resize(counts.size(), 0.0);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) {
      w.w[i] = static_cast<double>(total) / (static_cast<double>(present) * static_cast<double>(counts[i]));
    }
  }
  return w;
}

namespace {

double clamped_log(double p) { return std::log(std::max(p, kProbClamp)); }

void check_label(std::uint8_t label, std::size_t classes) {
  if (label != kUnlabeled && label >= classes) {
    throw DataError("invalid label " + std::to_string(label) + " for " + std::to_string(classes) + " classes");
  }
}

struct PixelCounts {
  std::int64_t labeled = 0;
  std::int64_t unlabeled = 0;
};

template <typename T>
PixelCounts count_pixels(const BasicTensor<T>& probs, const LabelMap& labels, const Mask& roi, const ClassWeights& w,
                         const char* what) {
  require_chw(probs, what);
  const Shape hw{probs.dim(1), probs.dim(2)};
  if (labels.shape() != hw || roi.shape() != hw) {
    throw ShapeError(std::string(what) + ": labels " + shape_to_string(labels.shape()) + " / roi " +
                     shape_to_string(roi.shape()) + " do not match probabilities " + shape_to_string(probs.shape()));
  }
  if (static_cast<std::int64_t>(w.num_classes()) != probs.dim(0)) {
    throw ShapeError(std::string(what) + ": class weights cover " + std::to_string(w.num_classes()) +
                     " classes, probabilities have " + std::to_string(probs.dim(0)));
  }
  PixelCounts n;
  for (std::size_t px = 0; px < labels.size(); ++px) {
    if (!roi[px]) continue;
    check_label(labels[px], w.num_classes());
    if (labels[px] == kUnlabeled) {
      ++n.unlabeled;
    } else {
      ++n.labeled;
    }
  }
  if (n.labeled == 0 && n.unlabeled == 0) throw DataError(std::string(what) + ": empty roi");
  return n;
}

double unlabeled_weight(const PixelCounts& n) {
  return n.unlabeled > 0 ? static_cast<double>(n.labeled) / static_cast<double>(n.unlabeled) : 0.0;
}

}  // namespace

double pixel_loss(std::span<const double> probs, std::uint8_t label, const ClassWeights& w, const LossConfig& cfg,
                  double w_u) {
  check_label(label, probs.size());
  if (label != kUnlabeled) {
    if (label >= w.num_classes()) throw DataError("pixel_loss: no weight for class " + std::to_string(label));
    return -w.w[label] * clamped_log(probs[label]);
  }
  double h = 0.0;
  for (double p : probs) h -= p * clamped_log(p);
  return cfg.alpha * w_u * h;
}

template <typename T>
LossBreakdown image_loss(const BasicTensor<T>& probs, const LabelMap& labels, const Mask& roi, const ClassWeights& w,
                         const LossConfig& cfg) {
  if (cfg.alpha < 0.0) throw ParameterError("image_loss: alpha must be >= 0");
  const auto n = count_pixels(probs, labels, roi, w, "image_loss");
  const std::int64_t ch = probs.dim(0);
  const std::size_t plane = labels.size();
  double sup = 0.0;
  double ent = 0.0;
  for (std::size_t px = 0; px < plane; ++px) {
    if (!roi[px]) continue;
    const std::uint8_t y = labels[px];
    if (y != kUnlabeled) {
      sup -= w.w[y] * clamped_log(static_cast<double>(probs[static_cast<std::size_t>(y) * plane + px]));
    } else {
      double h = 0.0;
      for (std::int64_t c = 0; c < ch; ++c) {
        const double p = static_cast<double>(probs[static_cast<std::size_t>(c) * plane + px]);
        h -= p * clamped_log(p);
      }
      ent += h;
    }
  }
  LossBreakdown r;
  r.labeled = n.labeled;
  r.unlabeled = n.unlabeled;
  r.w_u = unlabeled_weight(n);
  r.supervised = n.labeled > 0 ? sup / static_cast<double>(n.labeled) : 0.0;
  r.mean_unlabeled_entropy = n.unlabeled > 0 ? ent / static_cast<double>(n.unlabeled) : 0.0;
  r.unsupervised = cfg.alpha * r.w_u * r.mean_unlabeled_entropy;
  r.total = r.supervised + r.unsupervised;
  if (!std::isfinite(r.total)) throw NumericError("image_loss: non-finite loss");
  return r;
}

template <typename T>
BasicTensor<T> image_loss_backward(const BasicTensor<T>& probs, const LabelMap& labels, const Mask& roi,
                                   const ClassWeights& w, const LossConfig& cfg) {
  const auto n = count_pixels(probs, labels, roi, w, "image_loss_backward");
  const std::int64_t ch = probs.dim(0);
  const std::size_t plane = labels.size();
  const double w_u = unlabeled_weight(n);
  const double sup_scale = n.labeled > 0 ? 1.0 / static_cast<double>(n.labeled) : 0.0;
  const double uns_scale = n.unlabeled > 0 ? cfg.alpha * w_u / static_cast<double>(n.unlabeled) : 0.0;
  BasicTensor<T> g(probs.shape(), T(0));
  for (std::size_t px = 0; px < plane; ++px) {
    if (!roi[px]) continue;
    const std::uint8_t y = labels[px];
    if (y != kUnlabeled) {
      const std::size_t k = static_cast<std::size_t>(y) * plane + px;
      const double p = static_cast<double>(probs[k]);
      g[k] = p > kProbClamp ? static_cast<T>(-w.w[y] * sup_scale / p) : T(0);
    } else {
      for (std::int64_t c = 0; c < ch; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + px;
        const double p = static_cast<double>(probs[k]);
        const double d = p > kProbClamp ? -(std::log(p) + 1.0) : -std::log(kProbClamp);
        g[k] = static_cast<T>(uns_scale * d);
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> image_loss_backward_logits(const BasicTensor<T>& probs, const LabelMap& labels, const Mask& roi,
                                          const ClassWeights& w, const LossConfig& cfg) {
  const auto n = count_pixels(probs, labels, roi, w, "image_loss_backward_logits");
  const std::int64_t ch = probs.dim(0);
  const std::size_t plane = labels.size();
  const double w_u = unlabeled_weight(n);
  const double sup_scale = n.labeled > 0 ? 1.0 / static_cast<double>(n.labeled) : 0.0;
  const double uns_scale = n.unlabeled > 0 ? cfg.alpha * w_u / static_cast<double>(n.unlabeled) : 0.0;
  BasicTensor<T> g(probs.shape(), T(0));
  for (std::size_t px = 0; px < plane; ++px) {
    if (!roi[px]) continue;
    const std::uint8_t y = labels[px];
    if (y != kUnlabeled) {
      const double s = w.w[y] * sup_scale;
      for (std::int64_t c = 0; c < ch; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + px;
        const double p = static_cast<double>(probs[k]);
        g[k] = static_cast<T>(s * (p - (c == y ? 1.0 : 0.0)));
      }
    } else if (uns_scale > 0.0) {
      double h = 0.0;
      for (std::int64_t c = 0; c < ch; ++c) {
        const double p = static_cast<double>(probs[static_cast<std::size_t>(c) * plane + px]);
        if (p > 0.0) h -= p * std::log(p);
      }
      for (std::int64_t c = 0; c < ch; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + px;
        const double p = static_cast<double>(probs[k]);
        g[k] = p > 0.0 ? static_cast<T>(-uns_scale * p * (std::log(p) + h)) : T(0);
      }
    }
  }
  return g;
}

template LossBreakdown image_loss(const Tensor&, const LabelMap&, const Mask&, const ClassWeights&, const LossConfig&);
template LossBreakdown image_loss(const TensorD&, const LabelMap&, const Mask&, const ClassWeights&, const LossConfig&);
template Tensor image_loss_backward(const Tensor&, const LabelMap&, const Mask&, const ClassWeights&,
                                    const LossConfig&);
template TensorD image_loss_backward(const TensorD&, const LabelMap&, const Mask&, const ClassWeights&,
                                     const LossConfig&);
template Tensor image_loss_backward_logits(const Tensor&, const LabelMap&, const Mask&, const ClassWeights&,
                                           const LossConfig&);
template TensorD image_loss_backward_logits(const TensorD&, const LabelMap&, const Mask&, const ClassWeights&,
                                            const LossConfig&);

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 0; p < num_classes; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw ShapeError("confusion matrices have different class counts");
  for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += other.counts[k];
  return *this;
}

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& truth, int num_classes, const Mask* roi) {
  if (pred.shape() != truth.shape() || (roi && roi->shape() != truth.shape())) {
    throw ShapeError("confusion_matrix: shape mismatch " + shape_to_string(pred.shape()) + " vs " +
                     shape_to_string(truth.shape()));
  }
  ConfusionMatrix m(num_classes);
  for (std::size_t px = 0; px < truth.size(); ++px) {
    const auto t = truth[px];
    if (t == kUnlabeled || (roi && !(*roi)[px])) continue;
    const auto p = pred[px];
    if (t >= num_classes || p >= num_classes) {
      throw DataError("confusion_matrix: label out of range at pixel " + std::to_string(px));
    }
    ++m.at(t, p);
  }
  return m;
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& m) {
  std::vector<double> acc(static_cast<std::size_t>(m.num_classes), std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < m.num_classes; ++c) {
    const auto n = m.row_sum(c);
    if (n > 0) acc[static_cast<std::size_t>(c)] = static_cast<double>(m.at(c, c)) / static_cast<double>(n);
  }
  return acc;
}

double balanced_accuracy(const ConfusionMatrix& m) {
  double sum = 0.0;
  int present = 0;
  for (double a : per_class_accuracy(m)) {
    if (std::isnan(a)) continue;
    sum += a;
    ++present;
  }
  return present > 0 ? sum / present : 0.0;
}

void EvalReport::finalize() {
  per_class_acc = per_class_accuracy(confusion);
  bacc = balanced_accuracy(confusion);
}

std::string EvalReport::csv_header() {
  return "bacc,supervised_loss,unsupervised_loss,mean_unlabeled_entropy,pixels";
}

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os.precision(9);
  os << bacc << ',' << supervised_loss << ',' << unsupervised_loss << ',' << mean_unlabeled_entropy << ','
     << confusion.total();
  return os.str();
}

void to_json(nlohmann::json& j, const ConfusionMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < m.num_classes; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < m.num_classes; ++p) row.push_back(m.at(t, p));
    rows.push_back(std::move(row));
  }
  j = rows;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json acc = nlohmann::json::array();
  for (double a : r.per_class_acc) {
    if (std::isnan(a)) {
      acc.push_back(nullptr);
    } else {
      acc.push_back(a);
    }
  }
  j = nlohmann::json{{"confusion", r.confusion},
                     {"per_class_acc", acc},
                     {"bacc", r.bacc},
                     {"supervised_loss", r.supervised_loss},
                     {"unsupervised_loss", r.unsupervised_loss},
                     {"mean_unlabeled_entropy", r.mean_unlabeled_entropy}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  const auto& rows = j.at("confusion");
  r.confusion = ConfusionMatrix(static_cast<int>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t p = 0; p < rows.size(); ++p) {
      r.confusion.at(static_cast<int>(t), static_cast<int>(p)) = rows.at(t).at(p).get<std::int64_t>();
    }
  }
  r.supervised_loss = j.value("supervised_loss", 0.0);
  r.unsupervised_loss = j.value("unsupervised_loss", 0.0);
  r.mean_unlabeled_entropy = j.value("mean_unlabeled_entropy", 0.0);
  r.finalize();
}

}  // namespace dfcn
