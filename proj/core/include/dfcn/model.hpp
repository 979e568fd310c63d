#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dfcn/ops.hpp"
#include "dfcn/rng.hpp"
#include "dfcn/tensor.hpp"

namespace dfcn {

enum class DilationSchedule { fibonacci, exponential, ones, explicit_list };

/// Declarative description of one architecture variant.
struct NetworkConfig {
  int kernels_per_layer = 32;
  DilationSchedule schedule = DilationSchedule::fibonacci;
  /// Only read when schedule == explicit_list.
  std::vector<int> explicit_dilations;
  int num_dilated_layers = 10;
  bool concat_enabled = true;
  NormMode norm_mode = NormMode::instance_norm_skip;
  std::vector<int> head_widths{128, 32};
  int num_classes = 6;
  double dropout_rate = 0.5;

  /// Dilation rates of the 3x3 layers (the named schedule expanded to num_dilated_layers terms).
  std::vector<int> dilations() const;
  /// Human-readable problems; empty when the config is valid.
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// First n terms of 1, 1, 2, 3, 5, 8, ...
std::vector<int> fibonacci_dilations(int n);
/// 1, 1, 2, 4, 8, ... (n terms)
std::vector<int> exponential_dilations(int n);

std::string to_string(DilationSchedule s);
DilationSchedule parse_dilation_schedule(const std::string& s);
std::string to_string(NormMode m);
NormMode parse_norm_mode(const std::string& s);

/// One convolution followed by its activation stage.
template <typename T>
struct Layer {
  ConvParams<T> conv;
  /// Present for dilated layers when the config normalizes.
  std::optional<NormParams<T>> norm;
  bool relu = true;

  template <typename U>
  Layer<U> cast() const {
    Layer<U> l{conv.template cast<U>(), std::nullopt, relu};
    if (norm) l.norm = norm->template cast<U>();
    return l;
  }
};

/// All trainable tensors (and running statistics) of a network, in a fixed order.
template <typename T>
struct ParameterSet {
  std::optional<NormParams<T>> input_norm;
  std::vector<Layer<T>> layers;

  /// Visits every trainable tensor with a stable dotted name.
  void for_each_trainable(const std::function<void(const std::string&, BasicTensor<T>&)>& fn);
  void for_each_trainable(const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const;
  /// Visits trainable tensors followed by the normalization running statistics.
  void for_each_stored(const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const;
  void for_each_stored(const std::function<void(const std::string&, BasicTensor<T>&)>& fn);

  /// Same structure with every tensor zero.
  ParameterSet zeros_like() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    if (input_norm) out.input_norm = input_norm->template cast<U>();
    for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
    return out;
  }
};

/**
 * Dilated fully convolutional network: an input InstanceNorm block, L dilated
 * 3x3 blocks, channel concatenation of the input block output with every
 * dilated block output, dropout, hidden 1x1 layers with ReLU and a 1x1
 * classifier feeding a per-pixel softmax.
 */
template <typename T>
struct BasicNetwork {
  NetworkConfig config;
  std::uint64_t seed = 0;
  ParameterSet<T> params;

  std::size_t num_conv_layers() const { return params.layers.size(); }

  template <typename U>
  BasicNetwork<U> cast() const {
    return {config, seed, params.template cast<U>()};
  }
};

using Network = BasicNetwork<float>;
using NetworkD = BasicNetwork<double>;
using Gradients = ParameterSet<float>;

/// Builds a network with seeded fan-in scaled init (variance 2 / fan_in), zero biases, gamma 1, beta 0.
Network build(const NetworkConfig& config, std::uint64_t seed);

/// Exact count of trainable values (weights, biases, gammas, betas).
std::int64_t param_count(const NetworkConfig& config);
std::int64_t param_count(const Network& net);
/// Trainable values plus the two running statistics kept per normalized channel.
std::int64_t stored_param_count(const NetworkConfig& config);

/// 1 + 2 * sum of the 3x3 dilation rates.
std::int64_t receptive_field(const NetworkConfig& config);

struct CoverageLevel {
  int depth = 0;            // number of dilated layers in the prefix
  int dilation = 0;         // rate of the last layer of the prefix
  std::int64_t extent = 0;  // receptive-field side length of the prefix
  std::int64_t offsets = 0; // distinct reachable 2-D input offsets
  double density = 0.0;     // offsets / extent^2
  /// Histogram of gaps between consecutive reachable 1-D offsets (gap -> count).
  std::map<std::int64_t, std::int64_t> gap_histogram;
};

struct CoverageReport {
  std::vector<CoverageLevel> levels;
};

/// Reachable input offsets of every schedule prefix (iterated Minkowski sums of dilated 3x3 taps).
CoverageReport sampling_coverage(const NetworkConfig& config);
/// Set of 1-D offsets reachable after stacking 3-tap kernels with the given dilations.
std::vector<std::int64_t> reachable_offsets_1d(const std::vector<int>& dilations);

/// Activations retained by forward for backward.
template <typename T>
struct ForwardCache {
  Mode mode = Mode::eval;
  BasicTensor<T> input;
  BasicTensor<T> input_block;          // output of the input InstanceNorm block
  std::vector<BasicTensor<T>> conv_in; // input of every conv layer
  std::vector<BasicTensor<T>> conv_out;
  std::vector<BasicTensor<T>> act;     // output of every layer's activation stage
  BasicTensor<T> concat;
  Mask dropout_keep;
  BasicTensor<T> logits;
  BasicTensor<T> probs;
  /// Statistics of every normalization in forward order (input norm first).
  std::vector<ChannelStats> norm_stats;
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> probs;
  ForwardCache<T> cache;
};

template <typename T>
ForwardResult<T> forward(const BasicNetwork<T>& net, const BasicTensor<T>& image, Mode mode, Rng& rng);

/// Gradients of every parameter given dLoss/dlogits.
template <typename T>
ParameterSet<T> backward_from_logits(const BasicNetwork<T>& net, const ForwardCache<T>& cache,
                                     const BasicTensor<T>& grad_logits);
/// Gradients of every parameter given dLoss/dprobs (applies the softmax Jacobian first).
template <typename T>
ParameterSet<T> backward(const BasicNetwork<T>& net, const ForwardCache<T>& cache, const BasicTensor<T>& grad_probs);

/// Sign pattern of every ReLU input in the cache (1 where the unit was active).
template <typename T>
std::vector<std::uint8_t> activation_pattern(const ForwardCache<T>& cache);

/// Exponential moving average of running statistics from the cached batch statistics.
void update_running_stats(Network& net, const ForwardCache<float>& cache, double momentum = 0.99);

/// Per-pixel argmax of a C x H x W probability map.
LabelMap argmax_labels(const Tensor& probs);

/// Layer table for display: one row per normalization/conv layer.
struct LayerSummary {
  std::string name;
  std::string kind;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 0;
  int dilation = 0;
  std::int64_t params = 0;
  std::int64_t stored = 0;
};
std::vector<LayerSummary> layer_table(const NetworkConfig& config);

/// The network variants compared in the ablation table, with the reported sizes.
struct AblationRow {
  std::string name;
  NetworkConfig config;
  double alpha = 0.1;
  double reported_params = 0.0;  // as printed, in units of 1e5
};
std::vector<AblationRow> table2_configs();

/// Checkpoint: JSON header length (u64 LE), JSON header, then TSR1 payloads.
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);
/// Like load_checkpoint but throws ConfigMismatchError unless the stored config equals `expected`.
Network load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected);
std::vector<std::uint8_t> encode_checkpoint(const Network& net);
Network decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Stable 64-bit hash over all stored tensors (bitwise).
std::uint64_t parameter_hash(const Network& net);

}  // namespace dfcn
