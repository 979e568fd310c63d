#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfcn/tensor.hpp"

namespace dfcn {

/// Lower clamp applied to probabilities before taking logarithms.
inline constexpr double kProbClamp = 1e-7;

/// Supervised per-class weights, inversely proportional to class pixel counts.
struct ClassWeights {
  std::vector<double> w;

  std::size_t num_classes() const { return w.size(); }
};

struct LossConfig {
  /// Scale of the unlabeled-entropy term (0 = purely supervised).
  double alpha = 0.1;
};

/**
 * w[i] = N_tot / (C_present * counts[i]) for present classes, 0 otherwise, so
 * that every present class contributes the same total weight and
 * sum_i w[i] * counts[i] = N_tot.
 */
ClassWeights class_weights(std::span<const std::int64_t> counts);

/// Loss of one pixel: -w[y] log p_y when labeled, -alpha * w_u * sum p log p otherwise.
double pixel_loss(std::span<const double> probs, std::uint8_t label, const ClassWeights& w, const LossConfig& cfg,
                  double w_u);

struct LossBreakdown {
  double total = 0.0;
  double supervised = 0.0;
  double unsupervised = 0.0;
  double w_u = 0.0;
  std::int64_t labeled = 0;
  std::int64_t unlabeled = 0;
  /// Mean per-pixel entropy over unlabeled roi pixels (before alpha and w_u).
  double mean_unlabeled_entropy = 0.0;
};

/**
 * Loss of a C x H x W probability map. supervised = mean weighted cross
 * entropy over labeled roi pixels; w_u = |labeled| / |unlabeled| within the
 * roi; unsupervised = alpha * w_u * mean entropy over unlabeled roi pixels.
 * Pixels outside the roi are ignored.
 */
template <typename T>
LossBreakdown image_loss(const BasicTensor<T>& probs, const LabelMap& labels, const Mask& roi, const ClassWeights& w,
                         const LossConfig& cfg);

/// Exact gradient of image_loss().total with respect to the probabilities (clamp included).
template <typename T>
BasicTensor<T> image_loss_backward(const BasicTensor<T>& probs, const LabelMap& labels, const Mask& roi,
                                   const ClassWeights& w, const LossConfig& cfg);

/**
 * Gradient of the unclamped loss with respect to the logits feeding a
 * softmax: w_y (p - onehot(y)) / |labeled| for labeled pixels and
 * -alpha w_u p_j (log p_j + H) / |unlabeled| for unlabeled ones.
 */
template <typename T>
BasicTensor<T> image_loss_backward_logits(const BasicTensor<T>& probs, const LabelMap& labels, const Mask& roi,
                                          const ClassWeights& w, const LossConfig& cfg);

/// C x C counts, rows = truth, cols = prediction.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int c = 0) : num_classes(c), counts(static_cast<std::size_t>(c * c), 0) {}

  std::int64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth * num_classes + pred)]; }
  std::int64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth * num_classes + pred)]; }
  std::int64_t row_sum(int truth) const;
  std::int64_t total() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Tallies pixels whose truth is labeled (and inside `roi` when one is given).
ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& truth, int num_classes,
                                 const Mask* roi = nullptr);

/// Recall of each class; NaN for classes with no samples.
std::vector<double> per_class_accuracy(const ConfusionMatrix& m);

/// Mean recall over classes with at least one sample (0 when there are none).
double balanced_accuracy(const ConfusionMatrix& m);

struct EvalReport {
  ConfusionMatrix confusion;
  std::vector<double> per_class_acc;
  double bacc = 0.0;
  double supervised_loss = 0.0;
  double unsupervised_loss = 0.0;
  /// Mean unlabeled-pixel entropy across the evaluated images.
  double mean_unlabeled_entropy = 0.0;

  /// Recomputes per_class_acc and bacc from the confusion matrix.
  void finalize();

  static std::string csv_header();
  std::string csv_row() const;
};

void to_json(nlohmann::json& j, const ConfusionMatrix& m);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

}  // namespace dfcn
