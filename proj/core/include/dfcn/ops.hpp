#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dfcn/rng.hpp"
#include "dfcn/tensor.hpp"

namespace dfcn {

/// Convolution weights (OC x IC x K x K, K in {1, 3}), bias (OC) and dilation.
template <typename T>
struct ConvParams {
  BasicTensor<T> weights;
  BasicTensor<T> bias;
  int dilation = 1;

  std::int64_t out_channels() const { return weights.dim(0); }
  std::int64_t in_channels() const { return weights.dim(1); }
  std::int64_t kernel_size() const { return weights.dim(2); }

  template <typename U>
  ConvParams<U> cast() const {
    return {weights.template cast<U>(), bias.template cast<U>(), dilation};
  }
};

/**
 * Trainable affine pair of an instance-normalization layer plus the running
 * statistics a framework batch-norm layer keeps alongside it. The running
 * statistics are updated during training and checkpointed but never enter
 * the forward pass: statistics always come from the current input.
 */
template <typename T>
struct NormParams {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double eps = 1e-5;

  static NormParams identity(std::int64_t channels, double eps = 1e-5) {
    return {BasicTensor<T>({channels}, T(1)), BasicTensor<T>({channels}, T(0)),
            BasicTensor<T>({channels}, T(0)), BasicTensor<T>({channels}, T(1)), eps};
  }

  std::int64_t channels() const { return gamma.dim(0); }

  template <typename U>
  NormParams<U> cast() const {
    return {gamma.template cast<U>(), beta.template cast<U>(), running_mean.template cast<U>(),
            running_var.template cast<U>(), eps};
  }
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> grad_x;
  BasicTensor<T> grad_w;
  BasicTensor<T> grad_b;
};

template <typename T>
struct NormGrads {
  BasicTensor<T> grad_x;
  BasicTensor<T> grad_gamma;
  BasicTensor<T> grad_beta;
};

/// Per-channel statistics of one instance-norm evaluation.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;
};

// Convolution with zero "same" padding of width dilation * (K / 2). Works for
// both the dilated 3x3 layers and the 1x1 head layers.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const ConvParams<T>& p);
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const ConvParams<T>& p, const BasicTensor<T>& grad_out);

/// conv2d_forward restricted to 3x3 kernels.
template <typename T>
BasicTensor<T> dilated_conv2d_forward(const BasicTensor<T>& x, const ConvParams<T>& p);
template <typename T>
ConvGrads<T> dilated_conv2d_backward(const BasicTensor<T>& x, const ConvParams<T>& p,
                                     const BasicTensor<T>& grad_out);

/// conv2d_forward restricted to 1x1 kernels (per-pixel affine map across channels).
template <typename T>
BasicTensor<T> conv1x1_forward(const BasicTensor<T>& x, const ConvParams<T>& p);
template <typename T>
ConvGrads<T> conv1x1_backward(const BasicTensor<T>& x, const ConvParams<T>& p, const BasicTensor<T>& grad_out);

template <typename T>
ChannelStats channel_stats(const BasicTensor<T>& x);

/// Per-channel normalization with the input's own population statistics.
template <typename T>
BasicTensor<T> instance_norm_forward(const BasicTensor<T>& x, const NormParams<T>& p);
template <typename T>
NormGrads<T> instance_norm_backward(const BasicTensor<T>& x, const NormParams<T>& p,
                                    const BasicTensor<T>& grad_out);

/// How a block combines a convolution output with its instance normalization.
enum class NormMode { instance_norm_skip, instance_norm, none };

/// relu(x + IN(x)) for instance_norm_skip, relu(IN(x)) for instance_norm, relu(x) for none.
template <typename T>
BasicTensor<T> norm_skip_block_forward(const BasicTensor<T>& x_conv, const NormParams<T>& p,
                                       NormMode mode = NormMode::instance_norm_skip);
/// `y` is the forward output; it carries the ReLU mask.
template <typename T>
NormGrads<T> norm_skip_block_backward(const BasicTensor<T>& x_conv, const NormParams<T>& p,
                                      const BasicTensor<T>& y, const BasicTensor<T>& grad_out,
                                      NormMode mode = NormMode::instance_norm_skip);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x);
/// Gradient is passed where x > 0; the subgradient at 0 is 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out);

enum class Mode { train, eval };

template <typename T>
struct DropoutResult {
  BasicTensor<T> y;
  Mask keep;  // 1 where the element survived
};

/// Inverted dropout: survivors are scaled by 1 / (1 - rate) at train time.
template <typename T>
DropoutResult<T> dropout_forward(const BasicTensor<T>& x, double rate, Mode mode, Rng& rng);
template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const Mask& keep, double rate);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts);
/// Inverse of concat_channels: slices `grad` into the given channel counts.
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const std::int64_t> channels);

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits);
/// Vector-Jacobian product of softmax_channels given its output.
template <typename T>
BasicTensor<T> softmax_channels_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_probs);

/// Worker threads used by the convolution kernels (0 = implementation default).
void set_num_threads(int threads);
int num_threads();

}  // namespace dfcn
