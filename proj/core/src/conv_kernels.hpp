#pragma once

#include <cstdint>

namespace dfcn::detail {

struct ConvGeometry {
  std::int64_t in_channels;
  std::int64_t out_channels;
  std::int64_t height;
  std::int64_t width;
  std::int64_t kernel;  // 1 or 3
  std::int64_t dilation;
};

// Register-tiled direct convolution over a horizontally padded copy of the
// input. Rows whose taps fall entirely in the vertical padding are skipped.
// Every output element is owned by one thread and accumulated in a fixed
// (channel, ky, kx) order, so results do not depend on the thread count.
void conv_forward_f32(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* out);

// Weight and bias gradients. grad_w has the OC x IC x K x K layout.
void conv_weight_grad_f32(const ConvGeometry& g, const float* x, const float* grad_out, float* grad_w,
                          float* grad_b);

}  // namespace dfcn::detail
