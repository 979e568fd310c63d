#include "conv_kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace dfcn::detail {

namespace {

constexpr int kLanes = 16;
using vfloat = float __attribute__((vector_size(kLanes * sizeof(float))));

inline vfloat load(const float* p) {
  vfloat v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store(float* p, vfloat v) { std::memcpy(p, &v, sizeof(v)); }

inline vfloat splat(float s) { return vfloat{} + s; }

inline float hsum(vfloat v) {
  float s = 0.0f;
  for (int l = 0; l < kLanes; ++l) s += v[l];
  return s;
}

constexpr int kOutBlock = 4;

// Input rows padded left and right by `pad` zeros.
std::vector<float> pad_rows(const ConvGeometry& g, const float* x, std::int64_t pad) {
  const std::int64_t wp = g.width + 2 * pad;
  std::vector<float> xp(static_cast<std::size_t>(g.in_channels * g.height * wp), 0.0f);
  for (std::int64_t r = 0; r < g.in_channels * g.height; ++r) {
    std::memcpy(xp.data() + r * wp + pad, x + r * g.width, sizeof(float) * static_cast<std::size_t>(g.width));
  }
  return xp;
}

// Weights of output block `ob` repacked as [i][ky][kx][n] so the per-tap
// broadcasts are contiguous.
std::vector<float> pack_block(const ConvGeometry& g, const float* w, std::int64_t ob, int nb) {
  const std::int64_t kk = g.kernel * g.kernel;
  std::vector<float> packed(static_cast<std::size_t>(g.in_channels * kk * kOutBlock), 0.0f);
  for (std::int64_t i = 0; i < g.in_channels; ++i) {
    for (std::int64_t t = 0; t < kk; ++t) {
      for (int n = 0; n < nb; ++n) {
        packed[static_cast<std::size_t>((i * kk + t) * kOutBlock + n)] = w[((ob + n) * g.in_channels + i) * kk + t];
      }
    }
  }
  return packed;
}

template <int NB>
void forward_block(const ConvGeometry& g, const float* xp, std::int64_t pad, const float* packed,
                   const float* bias, std::int64_t ob, float* out) {
  const std::int64_t h = g.height;
  const std::int64_t w = g.width;
  const std::int64_t k = g.kernel;
  const std::int64_t d = g.dilation;
  const std::int64_t c = k / 2;
  const std::int64_t wp = w + 2 * pad;
  const std::int64_t kk = k * k;
  std::vector<std::int64_t> rows;  // valid ky for the current output row
  for (std::int64_t y = 0; y < h; ++y) {
    rows.clear();
    for (std::int64_t ky = 0; ky < k; ++ky) {
      const std::int64_t sy = y + (ky - c) * d;
      if (sy >= 0 && sy < h) rows.push_back(ky);
    }
    std::int64_t x0 = 0;
    for (; x0 + 2 * kLanes <= w; x0 += 2 * kLanes) {
      vfloat acc[NB][2];
      for (int n = 0; n < NB; ++n) acc[n][0] = acc[n][1] = splat(bias[ob + n]);
      for (std::int64_t i = 0; i < g.in_channels; ++i) {
        for (std::int64_t ky : rows) {
          const float* src = xp + (i * h + y + (ky - c) * d) * wp + pad - c * d + x0;
          const float* wt = packed + (i * kk + ky * k) * kOutBlock;
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const vfloat v0 = load(src + kx * d);
            const vfloat v1 = load(src + kx * d + kLanes);
            for (int n = 0; n < NB; ++n) {
              const vfloat wv = splat(wt[kx * kOutBlock + n]);
              acc[n][0] += wv * v0;
              acc[n][1] += wv * v1;
            }
          }
        }
      }
      for (int n = 0; n < NB; ++n) {
        float* dst = out + ((ob + n) * h + y) * w + x0;
        store(dst, acc[n][0]);
        store(dst + kLanes, acc[n][1]);
      }
    }
    for (; x0 + kLanes <= w; x0 += kLanes) {
      vfloat acc[NB];
      for (int n = 0; n < NB; ++n) acc[n] = splat(bias[ob + n]);
      for (std::int64_t i = 0; i < g.in_channels; ++i) {
        for (std::int64_t ky : rows) {
          const float* src = xp + (i * h + y + (ky - c) * d) * wp + pad - c * d + x0;
          const float* wt = packed + (i * kk + ky * k) * kOutBlock;
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const vfloat v0 = load(src + kx * d);
            for (int n = 0; n < NB; ++n) acc[n] += splat(wt[kx * kOutBlock + n]) * v0;
          }
        }
      }
      for (int n = 0; n < NB; ++n) store(out + ((ob + n) * h + y) * w + x0, acc[n]);
    }
    for (; x0 < w; ++x0) {
      float acc[NB];
      for (int n = 0; n < NB; ++n) acc[n] = bias[ob + n];
      for (std::int64_t i = 0; i < g.in_channels; ++i) {
        for (std::int64_t ky : rows) {
          const float* src = xp + (i * h + y + (ky - c) * d) * wp + pad - c * d + x0;
          const float* wt = packed + (i * kk + ky * k) * kOutBlock;
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const float v = src[kx * d];
            for (int n = 0; n < NB; ++n) acc[n] += wt[kx * kOutBlock + n] * v;
          }
        }
      }
      for (int n = 0; n < NB; ++n) out[((ob + n) * h + y) * w + x0] = acc[n];
    }
  }
}

template <int NB>
void weight_grad_block(const ConvGeometry& g, const float* xp, std::int64_t pad, const float* grad_out,
                       std::int64_t ob, float* grad_w) {
  const std::int64_t h = g.height;
  const std::int64_t w = g.width;
  const std::int64_t k = g.kernel;
  const std::int64_t d = g.dilation;
  const std::int64_t c = k / 2;
  const std::int64_t wp = w + 2 * pad;
  const std::int64_t kk = k * k;
  constexpr int kMaxK = 3;
  for (std::int64_t i = 0; i < g.in_channels; ++i) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      vfloat acc[NB][kMaxK];
      float tail[NB][kMaxK];
      for (int n = 0; n < NB; ++n) {
        for (int kx = 0; kx < kMaxK; ++kx) {
          acc[n][kx] = vfloat{};
          tail[n][kx] = 0.0f;
        }
      }
      const std::int64_t y_lo = std::max<std::int64_t>(0, -(ky - c) * d);
      const std::int64_t y_hi = std::min<std::int64_t>(h, h - (ky - c) * d);
      for (std::int64_t y = y_lo; y < y_hi; ++y) {
        const float* src = xp + (i * h + y + (ky - c) * d) * wp + pad - c * d;
        std::int64_t x0 = 0;
        for (; x0 + kLanes <= w; x0 += kLanes) {
          vfloat gv[NB];
          for (int n = 0; n < NB; ++n) gv[n] = load(grad_out + ((ob + n) * h + y) * w + x0);
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const vfloat xv = load(src + x0 + kx * d);
            for (int n = 0; n < NB; ++n) acc[n][kx] += gv[n] * xv;
          }
        }
        for (; x0 < w; ++x0) {
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const float xv = src[x0 + kx * d];
            for (int n = 0; n < NB; ++n) tail[n][kx] += grad_out[((ob + n) * h + y) * w + x0] * xv;
          }
        }
      }
      for (int n = 0; n < NB; ++n) {
        for (std::int64_t kx = 0; kx < k; ++kx) {
          grad_w[((ob + n) * g.in_channels + i) * kk + ky * k + kx] = hsum(acc[n][kx]) + tail[n][kx];
        }
      }
    }
  }
}

template <typename Fn>
void for_each_out_block(std::int64_t out_channels, Fn&& fn) {
  const std::int64_t blocks = (out_channels + kOutBlock - 1) / kOutBlock;
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < blocks; ++b) {
    const std::int64_t ob = b * kOutBlock;
    fn(ob, static_cast<int>(std::min<std::int64_t>(kOutBlock, out_channels - ob)));
  }
}

}  // namespace

void conv_forward_f32(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* out) {
  const std::int64_t pad = g.dilation * (g.kernel / 2);
  const auto xp = pad_rows(g, x, pad);
  for_each_out_block(g.out_channels, [&](std::int64_t ob, int nb) {
    const auto packed = pack_block(g, w, ob, nb);
    switch (nb) {
      case 4: forward_block<4>(g, xp.data(), pad, packed.data(), bias, ob, out); break;
      case 3: forward_block<3>(g, xp.data(), pad, packed.data(), bias, ob, out); break;
      case 2: forward_block<2>(g, xp.data(), pad, packed.data(), bias, ob, out); break;
      default: forward_block<1>(g, xp.data(), pad, packed.data(), bias, ob, out); break;
    }
  });
}

void conv_weight_grad_f32(const ConvGeometry& g, const float* x, const float* grad_out, float* grad_w,
                          float* grad_b) {
  const std::int64_t pad = g.dilation * (g.kernel / 2);
  const auto xp = pad_rows(g, x, pad);
  const std::int64_t plane = g.height * g.width;
  for_each_out_block(g.out_channels, [&](std::int64_t ob, int nb) {
    switch (nb) {
      case 4: weight_grad_block<4>(g, xp.data(), pad, grad_out, ob, grad_w); break;
      case 3: weight_grad_block<3>(g, xp.data(), pad, grad_out, ob, grad_w); break;
      case 2: weight_grad_block<2>(g, xp.data(), pad, grad_out, ob, grad_w); break;
      default: weight_grad_block<1>(g, xp.data(), pad, grad_out, ob, grad_w); break;
    }
    for (int n = 0; n < nb; ++n) {
      double s = 0.0;
      const float* go = grad_out + (ob + n) * plane;
      for (std::int64_t p = 0; p < plane; ++p) s += go[p];
      grad_b[ob + n] = static_cast<float>(s);
    }
  });
}

}  // namespace dfcn::detail
