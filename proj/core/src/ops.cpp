#include "dfcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "conv_kernels.hpp"

namespace dfcn {

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

template <typename T>
void check_conv(const BasicTensor<T>& x, const ConvParams<T>& p, const char* what) {
  require_chw(x, what);
  if (p.weights.rank() != 4 || p.weights.dim(2) != p.weights.dim(3) ||
      (p.weights.dim(2) != 1 && p.weights.dim(2) != 3)) {
    throw ShapeError(std::string(what) + ": weights must be OC x IC x K x K with K in {1,3}, got " +
                     shape_to_string(p.weights.shape()));
  }
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.weights.dim(0)) {
    throw ShapeError(std::string(what) + ": bias shape " + shape_to_string(p.bias.shape()) +
                     " does not match " + std::to_string(p.weights.dim(0)) + " output channels");
  }
  if (x.dim(0) != p.weights.dim(1)) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(0)) +
                     " channels, weights expect " + std::to_string(p.weights.dim(1)));
  }
  if (p.dilation < 1) {
    throw ParameterError(std::string(what) + ": dilation must be >= 1, got " + std::to_string(p.dilation));
  }
}

detail::ConvGeometry geometry(const BasicTensor<float>& x, const ConvParams<float>& p) {
  return {x.dim(0), p.weights.dim(0), x.dim(1), x.dim(2), p.weights.dim(2), p.dilation};
}

// Generic direct implementation, used for the 64-bit gradient-checking mode.
template <typename T>
BasicTensor<T> conv_forward_direct(const BasicTensor<T>& x, const ConvParams<T>& p) {
  const std::int64_t ic = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t oc = p.weights.dim(0), k = p.weights.dim(2), c = k / 2, d = p.dilation;
  BasicTensor<T> out({oc, h, w}, T(0));
  for (std::int64_t o = 0; o < oc; ++o) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        T acc = p.bias[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < ic; ++i) {
          for (std::int64_t ky = 0; ky < k; ++ky) {
            const std::int64_t sy = y + (ky - c) * d;
            if (sy < 0 || sy >= h) continue;
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t sx = xx + (kx - c) * d;
              if (sx < 0 || sx >= w) continue;
              acc += p.weights[static_cast<std::size_t>(((o * ic + i) * k + ky) * k + kx)] * x.at(i, sy, sx);
            }
          }
        }
        out.at(o, y, xx) = acc;
      }
    }
  }
  return out;
}

template <typename T>
void conv_weight_grad_direct(const BasicTensor<T>& x, const ConvParams<T>& p, const BasicTensor<T>& g,
                             BasicTensor<T>& gw, BasicTensor<T>& gb) {
  const std::int64_t ic = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t oc = p.weights.dim(0), k = p.weights.dim(2), c = k / 2, d = p.dilation;
  for (std::int64_t o = 0; o < oc; ++o) {
    T bsum = 0;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) bsum += g.at(o, y, xx);
    }
    gb[static_cast<std::size_t>(o)] = bsum;
    for (std::int64_t i = 0; i < ic; ++i) {
      for (std::int64_t ky = 0; ky < k; ++ky) {
        for (std::int64_t kx = 0; kx < k; ++kx) {
          T acc = 0;
          for (std::int64_t y = 0; y < h; ++y) {
            const std::int64_t sy = y + (ky - c) * d;
            if (sy < 0 || sy >= h) continue;
            for (std::int64_t xx = 0; xx < w; ++xx) {
              const std::int64_t sx = xx + (kx - c) * d;
              if (sx < 0 || sx >= w) continue;
              acc += g.at(o, y, xx) * x.at(i, sy, sx);
            }
          }
          gw[static_cast<std::size_t>(((o * ic + i) * k + ky) * k + kx)] = acc;
        }
      }
    }
  }
}

// The input gradient is a convolution of grad_out with the channel-transposed,
// spatially flipped kernel: out[y] reads x[y + (ky-c)d], so x[s] receives
// grad[s - (ky-c)d] = grad[s + ((k-1-ky)-c)d].
template <typename T>
ConvParams<T> transposed_kernel(const ConvParams<T>& p) {
  const std::int64_t oc = p.weights.dim(0), ic = p.weights.dim(1), k = p.weights.dim(2);
  BasicTensor<T> wt({ic, oc, k, k}, T(0));
  for (std::int64_t o = 0; o < oc; ++o) {
    for (std::int64_t i = 0; i < ic; ++i) {
      for (std::int64_t ky = 0; ky < k; ++ky) {
        for (std::int64_t kx = 0; kx < k; ++kx) {
          wt[static_cast<std::size_t>(((i * oc + o) * k + (k - 1 - ky)) * k + (k - 1 - kx))] =
              p.weights[static_cast<std::size_t>(((o * ic + i) * k + ky) * k + kx)];
        }
      }
    }
  }
  return {std::move(wt), BasicTensor<T>({ic}, T(0)), p.dilation};
}

template <typename T>
BasicTensor<T> conv_forward_impl(const BasicTensor<T>& x, const ConvParams<T>& p) {
  if constexpr (std::is_same_v<T, float>) {
    BasicTensor<T> out({p.weights.dim(0), x.dim(1), x.dim(2)}, 0.0f);
    detail::conv_forward_f32(geometry(x, p), x.raw(), p.weights.raw(), p.bias.raw(), out.raw());
    return out;
  } else {
    return conv_forward_direct(x, p);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const ConvParams<T>& p) {
  check_conv(x, p, "conv2d_forward");
  auto out = conv_forward_impl(x, p);
  ensure_finite(out, "conv2d_forward");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const ConvParams<T>& p, const BasicTensor<T>& grad_out) {
  check_conv(x, p, "conv2d_backward");
  const Shape expected{p.weights.dim(0), x.dim(1), x.dim(2)};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward: grad_out shape " + shape_to_string(grad_out.shape()) + ", expected " +
                     shape_to_string(expected));
  }
  ConvGrads<T> g;
  g.grad_w = BasicTensor<T>(p.weights.shape(), T(0));
  g.grad_b = BasicTensor<T>(p.bias.shape(), T(0));
  if constexpr (std::is_same_v<T, float>) {
    detail::conv_weight_grad_f32(geometry(x, p), x.raw(), grad_out.raw(), g.grad_w.raw(), g.grad_b.raw());
  } else {
    conv_weight_grad_direct(x, p, grad_out, g.grad_w, g.grad_b);
  }
  g.grad_x = conv_forward_impl(grad_out, transposed_kernel(p));
  ensure_finite(g.grad_x, "conv2d_backward grad_x");
  ensure_finite(g.grad_w, "conv2d_backward grad_w");
  ensure_finite(g.grad_b, "conv2d_backward grad_b");
  return g;
}

template <typename T>
BasicTensor<T> dilated_conv2d_forward(const BasicTensor<T>& x, const ConvParams<T>& p) {
  if (p.weights.rank() != 4 || p.weights.dim(2) != 3 || p.weights.dim(3) != 3) {
    throw ShapeError("dilated_conv2d_forward: 3x3 kernel expected, got " + shape_to_string(p.weights.shape()));
  }
  return conv2d_forward(x, p);
}

template <typename T>
ConvGrads<T> dilated_conv2d_backward(const BasicTensor<T>& x, const ConvParams<T>& p,
                                     const BasicTensor<T>& grad_out) {
  if (p.weights.rank() != 4 || p.weights.dim(2) != 3 || p.weights.dim(3) != 3) {
    throw ShapeError("dilated_conv2d_backward: 3x3 kernel expected, got " + shape_to_string(p.weights.shape()));
  }
  return conv2d_backward(x, p, grad_out);
}

template <typename T>
BasicTensor<T> conv1x1_forward(const BasicTensor<T>& x, const ConvParams<T>& p) {
  if (p.weights.rank() != 4 || p.weights.dim(2) != 1 || p.weights.dim(3) != 1) {
    throw ShapeError("conv1x1_forward: 1x1 kernel expected, got " + shape_to_string(p.weights.shape()));
  }
  return conv2d_forward(x, p);
}

template <typename T>
ConvGrads<T> conv1x1_backward(const BasicTensor<T>& x, const ConvParams<T>& p, const BasicTensor<T>& grad_out) {
  if (p.weights.rank() != 4 || p.weights.dim(2) != 1 || p.weights.dim(3) != 1) {
    throw ShapeError("conv1x1_backward: 1x1 kernel expected, got " + shape_to_string(p.weights.shape()));
  }
  return conv2d_backward(x, p, grad_out);
}

template <typename T>
ChannelStats channel_stats(const BasicTensor<T>& x) {
  require_chw(x, "channel_stats");
  const std::int64_t ch = x.dim(0);
  const auto n = static_cast<double>(x.dim(1) * x.dim(2));
  ChannelStats s{std::vector<double>(static_cast<std::size_t>(ch)), std::vector<double>(static_cast<std::size_t>(ch))};
  for (std::int64_t c = 0; c < ch; ++c) {
    const auto plane = x.channel(c);
    double sum = 0.0;
    for (T v : plane) sum += static_cast<double>(v);
    const double mean = sum / n;
    double sq = 0.0;
    for (T v : plane) {
      const double dv = static_cast<double>(v) - mean;
      sq += dv * dv;
    }
    s.mean[static_cast<std::size_t>(c)] = mean;
    s.var[static_cast<std::size_t>(c)] = sq / n;
  }
  return s;
}

namespace {

template <typename T>
void check_norm(const BasicTensor<T>& x, const NormParams<T>& p, const char* what) {
  require_chw(x, what);
  if (p.gamma.rank() != 1 || p.beta.rank() != 1 || p.gamma.dim(0) != x.dim(0) || p.beta.dim(0) != x.dim(0)) {
    throw ShapeError(std::string(what) + ": norm parameters do not match " + std::to_string(x.dim(0)) +
                     " channels");
  }
  if (!(p.eps > 0.0)) throw ParameterError(std::string(what) + ": eps must be > 0");
}

}  // namespace

template <typename T>
BasicTensor<T> instance_norm_forward(const BasicTensor<T>& x, const NormParams<T>& p) {
  check_norm(x, p, "instance_norm_forward");
  const auto stats = channel_stats(x);
  BasicTensor<T> out(x.shape(), T(0));
  for (std::int64_t c = 0; c < x.dim(0); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double inv = 1.0 / std::sqrt(stats.var[ci] + p.eps);
    const T scale = static_cast<T>(static_cast<double>(p.gamma[ci]) * inv);
    const T mean = static_cast<T>(stats.mean[ci]);
    const T beta = p.beta[ci];
    const auto src = x.channel(c);
    auto dst = out.channel(c);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = (src[k] - mean) * scale + beta;
  }
  ensure_finite(out, "instance_norm_forward");
  return out;
}

template <typename T>
NormGrads<T> instance_norm_backward(const BasicTensor<T>& x, const NormParams<T>& p,
                                    const BasicTensor<T>& grad_out) {
  check_norm(x, p, "instance_norm_backward");
  if (grad_out.shape() != x.shape()) {
    throw ShapeError("instance_norm_backward: grad_out shape " + shape_to_string(grad_out.shape()) +
                     " does not match input " + shape_to_string(x.shape()));
  }
  const auto stats = channel_stats(x);
  const std::size_t n = static_cast<std::size_t>(x.dim(1) * x.dim(2));
  NormGrads<T> g{BasicTensor<T>(x.shape(), T(0)), BasicTensor<T>(p.gamma.shape(), T(0)),
                 BasicTensor<T>(p.beta.shape(), T(0))};
  for (std::int64_t c = 0; c < x.dim(0); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double mean = stats.mean[ci];
    const double inv = 1.0 / std::sqrt(stats.var[ci] + p.eps);
    const auto xs = x.channel(c);
    const auto gs = grad_out.channel(c);
    double sum_g = 0.0;
    double sum_g_xhat = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double xhat = (static_cast<double>(xs[k]) - mean) * inv;
      sum_g += static_cast<double>(gs[k]);
      sum_g_xhat += static_cast<double>(gs[k]) * xhat;
    }
    g.grad_beta[ci] = static_cast<T>(sum_g);
    g.grad_gamma[ci] = static_cast<T>(sum_g_xhat);
    // dL/dx = gamma * inv / N * (N g - sum(g) - xhat * sum(g xhat))
    const double gamma = static_cast<double>(p.gamma[ci]);
    const double mean_g = sum_g / static_cast<double>(n);
    const double mean_gx = sum_g_xhat / static_cast<double>(n);
    auto dst = g.grad_x.channel(c);
    for (std::size_t k = 0; k < n; ++k) {
      const double xhat = (static_cast<double>(xs[k]) - mean) * inv;
      dst[k] = static_cast<T>(gamma * inv * (static_cast<double>(gs[k]) - mean_g - xhat * mean_gx));
    }
  }
  ensure_finite(g.grad_x, "instance_norm_backward");
  return g;
}

template <typename T>
BasicTensor<T> norm_skip_block_forward(const BasicTensor<T>& x_conv, const NormParams<T>& p, NormMode mode) {
  require_chw(x_conv, "norm_skip_block_forward");
  BasicTensor<T> z;
  switch (mode) {
    case NormMode::instance_norm_skip: z = add(x_conv, instance_norm_forward(x_conv, p)); break;
    case NormMode::instance_norm: z = instance_norm_forward(x_conv, p); break;
    case NormMode::none: z = x_conv; break;
  }
  return relu_forward(z);
}

template <typename T>
NormGrads<T> norm_skip_block_backward(const BasicTensor<T>& x_conv, const NormParams<T>& p,
                                      const BasicTensor<T>& y, const BasicTensor<T>& grad_out, NormMode mode) {
  if (y.shape() != x_conv.shape() || grad_out.shape() != x_conv.shape()) {
    throw ShapeError("norm_skip_block_backward: shape mismatch");
  }
  // y > 0 exactly where the pre-activation was > 0.
  const auto gz = relu_backward(y, grad_out);
  switch (mode) {
    case NormMode::instance_norm_skip: {
      auto g = instance_norm_backward(x_conv, p, gz);
      T* gx = g.grad_x.raw();
      for (std::size_t k = 0; k < gz.size(); ++k) gx[k] += gz[k];
      return g;
    }
    case NormMode::instance_norm:
      return instance_norm_backward(x_conv, p, gz);
    case NormMode::none:
      break;
  }
  const auto ch = x_conv.dim(0);
  return {gz, BasicTensor<T>({ch}, T(0)), BasicTensor<T>({ch}, T(0))};
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape(), T(0));
  const T* src = x.raw();
  T* dst = out.raw();
  for (std::size_t k = 0; k < x.size(); ++k) dst[k] = src[k] > T(0) ? src[k] : T(0);
  ensure_finite(out, "relu_forward");
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  BasicTensor<T> out(x.shape(), T(0));
  const T* src = x.raw();
  const T* g = grad_out.raw();
  T* dst = out.raw();
  for (std::size_t k = 0; k < x.size(); ++k) dst[k] = src[k] > T(0) ? g[k] : T(0);
  return out;
}

template <typename T>
DropoutResult<T> dropout_forward(const BasicTensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  DropoutResult<T> r{x, Mask(x.shape(), 1)};
  if (mode == Mode::eval || rate == 0.0) return r;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  T* y = r.y.raw();
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (rng.uniform() < rate) {
      r.keep[k] = 0;
      y[k] = T(0);
    } else {
      y[k] *= scale;
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const Mask& keep, double rate) {
  if (keep.shape() != grad_out.shape()) throw ShapeError("dropout_backward: mask shape mismatch");
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  BasicTensor<T> out(grad_out.shape(), T(0));
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = keep[k] ? grad_out[k] * scale : T(0);
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    require_chw(p, "concat_channels");
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2)) {
      throw ShapeError("concat_channels: spatial size mismatch " + shape_to_string(p.shape()) + " vs " +
                       shape_to_string(parts[0].shape()));
    }
    channels += p.dim(0);
  }
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(channels * parts[0].dim(1) * parts[0].dim(2)));
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return BasicTensor<T>({channels, parts[0].dim(1), parts[0].dim(2)}, std::move(data));
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const std::int64_t> channels) {
  require_chw(grad, "split_channels");
  std::int64_t total = 0;
  for (auto c : channels) total += c;
  if (total != grad.dim(0)) throw ShapeError("split_channels: channel counts do not sum to input channels");
  std::vector<BasicTensor<T>> out;
  const std::size_t plane = static_cast<std::size_t>(grad.dim(1) * grad.dim(2));
  std::size_t offset = 0;
  for (auto c : channels) {
    const std::size_t n = static_cast<std::size_t>(c) * plane;
    std::vector<T> data(grad.data().begin() + static_cast<std::ptrdiff_t>(offset),
                        grad.data().begin() + static_cast<std::ptrdiff_t>(offset + n));
    out.emplace_back(Shape{c, grad.dim(1), grad.dim(2)}, std::move(data));
    offset += n;
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& logits) {
  require_chw(logits, "softmax_channels");
  const std::int64_t ch = logits.dim(0);
  const std::size_t plane = static_cast<std::size_t>(logits.dim(1) * logits.dim(2));
  BasicTensor<T> out(logits.shape(), T(0));
  const T* src = logits.raw();
  T* dst = out.raw();
  for (std::size_t px = 0; px < plane; ++px) {
    T m = -std::numeric_limits<T>::infinity();
    for (std::int64_t c = 0; c < ch; ++c) m = std::max(m, src[static_cast<std::size_t>(c) * plane + px]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < ch; ++c) {
      const T e = std::exp(src[static_cast<std::size_t>(c) * plane + px] - m);
      dst[static_cast<std::size_t>(c) * plane + px] = e;
      sum += static_cast<double>(e);
    }
    const double inv = 1.0 / sum;
    for (std::int64_t c = 0; c < ch; ++c) {
      auto& v = dst[static_cast<std::size_t>(c) * plane + px];
      v = static_cast<T>(static_cast<double>(v) * inv);
    }
  }
  ensure_finite(out, "softmax_channels");
  return out;
}

template <typename T>
BasicTensor<T> softmax_channels_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_probs) {
  if (probs.shape() != grad_probs.shape()) throw ShapeError("softmax_channels_backward: shape mismatch");
  require_chw(probs, "softmax_channels_backward");
  const std::int64_t ch = probs.dim(0);
  const std::size_t plane = static_cast<std::size_t>(probs.dim(1) * probs.dim(2));
  BasicTensor<T> out(probs.shape(), T(0));
  for (std::size_t px = 0; px < plane; ++px) {
    double dot = 0.0;
    for (std::int64_t c = 0; c < ch; ++c) {
      const std::size_t k = static_cast<std::size_t>(c) * plane + px;
      dot += static_cast<double>(probs[k]) * static_cast<double>(grad_probs[k]);
    }
    for (std::int64_t c = 0; c < ch; ++c) {
      const std::size_t k = static_cast<std::size_t>(c) * plane + px;
      out[k] = static_cast<T>(static_cast<double>(probs[k]) * (static_cast<double>(grad_probs[k]) - dot));
    }
  }
  return out;
}

#define DFCN_INSTANTIATE_OPS(T)                                                                                  \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const ConvParams<T>&);                          \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const ConvParams<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> dilated_conv2d_forward(const BasicTensor<T>&, const ConvParams<T>&);                  \
  template ConvGrads<T> dilated_conv2d_backward(const BasicTensor<T>&, const ConvParams<T>&,                    \
                                                const BasicTensor<T>&);                                         \
  template BasicTensor<T> conv1x1_forward(const BasicTensor<T>&, const ConvParams<T>&);                         \
  template ConvGrads<T> conv1x1_backward(const BasicTensor<T>&, const ConvParams<T>&, const BasicTensor<T>&);   \
  template ChannelStats channel_stats(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> instance_norm_forward(const BasicTensor<T>&, const NormParams<T>&);                   \
  template NormGrads<T> instance_norm_backward(const BasicTensor<T>&, const NormParams<T>&,                     \
                                               const BasicTensor<T>&);                                          \
  template BasicTensor<T> norm_skip_block_forward(const BasicTensor<T>&, const NormParams<T>&, NormMode);       \
  template NormGrads<T> norm_skip_block_backward(const BasicTensor<T>&, const NormParams<T>&,                   \
                                                 const BasicTensor<T>&, const BasicTensor<T>&, NormMode);       \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template DropoutResult<T> dropout_forward(const BasicTensor<T>&, double, Mode, Rng&);                         \
  template BasicTensor<T> dropout_backward(const BasicTensor<T>&, const Mask&, double);                         \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);                                     \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&, std::span<const std::int64_t>);    \
  template BasicTensor<T> softmax_channels(const BasicTensor<T>&);                                              \
  template BasicTensor<T> softmax_channels_backward(const BasicTensor<T>&, const BasicTensor<T>&);

DFCN_INSTANTIATE_OPS(float)
DFCN_INSTANTIATE_OPS(double)

#undef DFCN_INSTANTIATE_OPS

}  // namespace dfcn
