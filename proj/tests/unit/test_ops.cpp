#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dfcn/ops.hpp"
#include "fd.hpp"
#include "oracles.hpp"

namespace {

using dfcn::ConvParams;
using dfcn::NormParams;
using dfcn::Tensor;
using dfcn::TensorD;

double max_abs_diff(std::span<const float> a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

ConvParams<float> random_conv(std::int64_t out, std::int64_t in, std::int64_t k, int d, dfcn::Rng& rng) {
  return {fd::random_f({out, in, k, k}, rng, 0.5), fd::random_f({out}, rng, 0.5), d};
}

ConvParams<double> random_conv_d(std::int64_t out, std::int64_t in, std::int64_t k, int d, dfcn::Rng& rng) {
  return {fd::random({out, in, k, k}, rng, 0.5), fd::random({out}, rng, 0.5), d};
}

NormParams<double> random_norm(std::int64_t c, dfcn::Rng& rng) {
  auto p = NormParams<double>::identity(c);
  for (auto& v : p.gamma.data()) v = 1.0 + 0.3 * rng.normal();
  for (auto& v : p.beta.data()) v = 0.3 * rng.normal();
  return p;
}

// ---- dilated convolution ----

TEST(DilatedConv, DeltaKernelIsIdentity) {
  dfcn::Rng rng(1);
  const Tensor x = fd::random_f({1, 7, 9}, rng);
  for (int d = 1; d <= 5; ++d) {
    ConvParams<float> p{Tensor({1, 1, 3, 3}, 0.0f), Tensor({1}, 0.0f), d};
    p.weights[4] = 1.0f;
    EXPECT_EQ(dfcn::dilated_conv2d_forward(x, p), x) << "D=" << d;
  }
}

TEST(DilatedConv, CountsInBoundsTaps) {
  const Tensor x({1, 5, 5}, 1.0f);
  const ConvParams<float> p{Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}, 0.0f), 2};
  const Tensor y = dfcn::dilated_conv2d_forward(x, p);
  EXPECT_EQ(y.at(0, 2, 2), 9.0f);
  EXPECT_EQ(y.at(0, 0, 0), 4.0f);
}

TEST(DilatedConv, MatchesNestedLoopReference) {
  dfcn::Rng rng(2);
  const Tensor x = fd::random_f({2, 7, 7}, rng);
  const auto p = random_conv(3, 2, 3, 3, rng);
  EXPECT_LE(max_abs_diff(dfcn::dilated_conv2d_forward(x, p).data(), oracle::conv(x, p.weights, p.bias, 3)), 1e-6);
}

struct ConvCase {
  std::int64_t in, out, h, w;
  int d;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, ForwardWithinOneMillionth) {
  const auto c = GetParam();
  dfcn::Rng rng(static_cast<std::uint64_t>(c.in * 131 + c.out * 17 + c.h + c.d));
  const Tensor x = fd::random_f({c.in, c.h, c.w}, rng, 0.5);
  // Small weights keep output magnitudes near one, so 1e-6 is meaningful for float storage.
  const ConvParams<float> p{fd::random_f({c.out, c.in, 3, 3}, rng, 0.3 / std::sqrt(9.0 * static_cast<double>(c.in))),
                            fd::random_f({c.out}, rng, 0.1), c.d};
  EXPECT_LE(max_abs_diff(dfcn::dilated_conv2d_forward(x, p).data(), oracle::conv(x, p.weights, p.bias, c.d)), 1e-6);
}

TEST_P(ConvOracle, DoubleBackwardMatchesFiniteDifferences) {
  const auto c = GetParam();
  if (c.in * c.out * c.h * c.w > 4000) GTEST_SKIP() << "finite differences limited to small cases";
  dfcn::Rng rng(static_cast<std::uint64_t>(c.in * 7 + c.out * 3 + c.d));
  TensorD x = fd::random({c.in, c.h, c.w}, rng);
  auto p = random_conv_d(c.out, c.in, 3, c.d, rng);
  const TensorD g = fd::random({c.out, c.h, c.w}, rng);
  const auto grads = dfcn::dilated_conv2d_backward(x, p, g);
  auto loss = [&] { return fd::project(dfcn::dilated_conv2d_forward(x, p), g); };
  EXPECT_LE(fd::max_rel_error(grads.grad_x.data(), fd::gradient(x.data(), loss)), 1e-6);
  EXPECT_LE(fd::max_rel_error(grads.grad_w.data(), fd::gradient(p.weights.data(), loss)), 1e-6);
  EXPECT_LE(fd::max_rel_error(grads.grad_b.data(), fd::gradient(p.bias.data(), loss)), 1e-6);
}

TEST_P(ConvOracle, FloatBackwardAgreesWithDouble) {
  const auto c = GetParam();
  dfcn::Rng rng(static_cast<std::uint64_t>(c.in * 5 + c.out + c.w * 11 + c.d));
  const Tensor x = fd::random_f({c.in, c.h, c.w}, rng);
  const auto p = random_conv(c.out, c.in, 3, c.d, rng);
  const Tensor g = fd::random_f({c.out, c.h, c.w}, rng);
  const auto f = dfcn::dilated_conv2d_backward(x, p, g);
  const auto d = dfcn::dilated_conv2d_backward(x.cast<double>(), p.cast<double>(), g.cast<double>());
  auto check = [](const Tensor& a, const TensorD& b, const char* what) {
    double scale = 0.0;
    for (double v : b.data()) scale = std::max(scale, std::abs(v));
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(static_cast<double>(a[i]) - b[i]));
    EXPECT_LE(err, 1e-5 * std::max(scale, 1.0)) << what;
  };
  check(f.grad_x, d.grad_x, "grad_x");
  check(f.grad_w, d.grad_w, "grad_w");
  check(f.grad_b, d.grad_b, "grad_b");
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{2, 3, 7, 7, 1}, ConvCase{2, 3, 7, 7, 2}, ConvCase{2, 3, 7, 7, 3},
                                           ConvCase{2, 3, 7, 7, 5}, ConvCase{1, 2, 9, 9, 5}, ConvCase{3, 1, 4, 6, 2},
                                           ConvCase{16, 7, 40, 37, 1}, ConvCase{16, 16, 33, 70, 3},
                                           ConvCase{9, 8, 64, 65, 5}, ConvCase{4, 5, 3, 2, 1}),
                         [](const ::testing::TestParamInfo<ConvCase>& info) {
                           const auto& c = info.param;
                           return "in" + std::to_string(c.in) + "_out" + std::to_string(c.out) + "_" +
                                  std::to_string(c.h) + "x" + std::to_string(c.w) + "_d" + std::to_string(c.d);
                         });

TEST(DilatedConv, BackwardOfZeroIsZero) {
  dfcn::Rng rng(3);
  const Tensor x = fd::random_f({2, 6, 6}, rng);
  const auto p = random_conv(3, 2, 3, 2, rng);
  const auto g = dfcn::dilated_conv2d_backward(x, p, Tensor({3, 6, 6}, 0.0f));
  for (const Tensor* t : {&g.grad_x, &g.grad_w, &g.grad_b}) {
    for (float v : t->data()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(DilatedConv, SinglePixelChainRule) {
  ConvParams<double> p{TensorD({1, 1, 3, 3}, 0.0), TensorD({1}, 0.25), 1};
  for (std::size_t i = 0; i < 9; ++i) p.weights[i] = static_cast<double>(i) + 1.0;
  const TensorD x({1, 1, 1}, 1.5);
  const TensorD g({1, 1, 1}, -2.0);
  const auto grads = dfcn::dilated_conv2d_backward(x, p, g);
  EXPECT_DOUBLE_EQ(grads.grad_w[4], 1.5 * -2.0);
  for (std::size_t i = 0; i < 9; ++i) {
    if (i != 4) EXPECT_EQ(grads.grad_w[i], 0.0);
  }
  EXPECT_DOUBLE_EQ(grads.grad_x[0], 5.0 * -2.0);
  EXPECT_DOUBLE_EQ(grads.grad_b[0], -2.0);
}

TEST(DilatedConv, BiasGradientIsSumOfUpstream) {
  dfcn::Rng rng(4);
  const TensorD x = fd::random({2, 5, 4}, rng);
  const auto p = random_conv_d(3, 2, 3, 1, rng);
  const TensorD g = fd::random({3, 5, 4}, rng);
  const auto grads = dfcn::dilated_conv2d_backward(x, p, g);
  for (std::int64_t o = 0; o < 3; ++o) {
    const auto ch = g.channel(o);
    EXPECT_NEAR(grads.grad_b[static_cast<std::size_t>(o)], std::accumulate(ch.begin(), ch.end(), 0.0), 1e-12);
  }
}

TEST(DilatedConv, ErrorContract) {
  dfcn::Rng rng(5);
  const Tensor x = fd::random_f({2, 5, 5}, rng);
  auto p = random_conv(3, 3, 3, 1, rng);
  EXPECT_THROW(dfcn::dilated_conv2d_forward(x, p), dfcn::ShapeError);
  p = random_conv(3, 2, 3, 0, rng);
  EXPECT_THROW(dfcn::dilated_conv2d_forward(x, p), dfcn::ParameterError);
  p.dilation = 1;
  EXPECT_THROW(dfcn::dilated_conv2d_backward(x, p, Tensor({3, 4, 5}, 0.0f)), dfcn::ShapeError);
  EXPECT_THROW(dfcn::dilated_conv2d_forward(x, random_conv(3, 2, 1, 1, rng)), dfcn::ShapeError);
}

TEST(DilatedConv, DihedralEquivarianceIsExact) {
  // Small integers keep every partial sum exactly representable, so any
  // accumulation order gives the same bits.
  dfcn::Rng rng(6);
  Tensor x({3, 11, 8}, 0.0f);
  for (auto& v : x.data()) v = static_cast<float>(static_cast<int>(rng.below(9)) - 4);
  Tensor w({4, 3, 3, 3}, 0.0f);
  for (auto& v : w.data()) v = static_cast<float>(static_cast<int>(rng.below(7)) - 3);
  Tensor b({4}, 0.0f);
  for (auto& v : b.data()) v = static_cast<float>(static_cast<int>(rng.below(5)) - 2);
  for (int d : {1, 2, 3, 5}) {
    const Tensor y = dfcn::dilated_conv2d_forward(x, ConvParams<float>{w, b, d});
    for (int op = 0; op < 8; ++op) {
      const ConvParams<float> pt{oracle::dihedral(w, op), b, d};
      EXPECT_EQ(dfcn::dilated_conv2d_forward(oracle::dihedral(x, op), pt), oracle::dihedral(y, op))
          << "D=" << d << " op=" << op;
    }
  }
}

TEST(DilatedConv, UnitDilationEqualsPlainConvolution) {
  dfcn::Rng rng(7);
  const Tensor x = fd::random_f({3, 8, 8}, rng);
  const auto p = random_conv(2, 3, 3, 1, rng);
  EXPECT_EQ(dfcn::dilated_conv2d_forward(x, p), dfcn::conv2d_forward(x, p));
  EXPECT_LE(max_abs_diff(dfcn::conv2d_forward(x, p).data(), oracle::conv(x, p.weights, p.bias, 1)), 1e-6);
}

TEST(DilatedConv, ThreadCountDoesNotChangeBits) {
  dfcn::Rng rng(8);
  const Tensor x = fd::random_f({16, 48, 40}, rng);
  const auto p = random_conv(16, 16, 3, 2, rng);
  const Tensor g = fd::random_f({16, 48, 40}, rng);
  const int before = dfcn::num_threads();
  dfcn::set_num_threads(1);
  const Tensor y1 = dfcn::dilated_conv2d_forward(x, p);
  const auto g1 = dfcn::dilated_conv2d_backward(x, p, g);
  dfcn::set_num_threads(3);
  const Tensor y3 = dfcn::dilated_conv2d_forward(x, p);
  const auto g3 = dfcn::dilated_conv2d_backward(x, p, g);
  dfcn::set_num_threads(before);
  EXPECT_EQ(y1, y3);
  EXPECT_EQ(g1.grad_x, g3.grad_x);
  EXPECT_EQ(g1.grad_w, g3.grad_w);
}

// ---- 1x1 convolution ----

TEST(Conv1x1, IdentityMatrix) {
  dfcn::Rng rng(9);
  const Tensor x = fd::random_f({4, 3, 5}, rng);
  ConvParams<float> p{Tensor({4, 4, 1, 1}, 0.0f), Tensor({4}, 0.0f), 1};
  for (std::int64_t i = 0; i < 4; ++i) p.weights[static_cast<std::size_t>(i * 4 + i)] = 1.0f;
  EXPECT_EQ(dfcn::conv1x1_forward(x, p), x);
}

TEST(Conv1x1, MatrixVectorProduct) {
  dfcn::Rng rng(10);
  const TensorD x = fd::random({321, 1, 1}, rng);
  const auto p = random_conv_d(128, 321, 1, 1, rng);
  const TensorD y = dfcn::conv1x1_forward(x, p);
  ASSERT_EQ(y.shape(), (dfcn::Shape{128, 1, 1}));
  for (std::size_t o = 0; o < 128; ++o) {
    double s = p.bias[o];
    for (std::size_t i = 0; i < 321; ++i) s += p.weights[o * 321 + i] * x[i];
    EXPECT_NEAR(y[o], s, 1e-12);
  }
}

TEST(Conv1x1, MatchesOracleAndFiniteDifferences) {
  dfcn::Rng rng(11);
  const Tensor xf = fd::random_f({5, 6, 7}, rng);
  const auto pf = random_conv(3, 5, 1, 1, rng);
  EXPECT_LE(max_abs_diff(dfcn::conv1x1_forward(xf, pf).data(), oracle::conv(xf, pf.weights, pf.bias, 1)), 1e-6);

  TensorD x = fd::random({3, 4, 4}, rng);
  auto p = random_conv_d(2, 3, 1, 1, rng);
  const TensorD g = fd::random({2, 4, 4}, rng);
  const auto grads = dfcn::conv1x1_backward(x, p, g);
  auto loss = [&] { return fd::project(dfcn::conv1x1_forward(x, p), g); };
  EXPECT_LE(fd::max_rel_error(grads.grad_x.data(), fd::gradient(x.data(), loss)), 1e-6);
  EXPECT_LE(fd::max_rel_error(grads.grad_w.data(), fd::gradient(p.weights.data(), loss)), 1e-6);
  EXPECT_LE(fd::max_rel_error(grads.grad_b.data(), fd::gradient(p.bias.data(), loss)), 1e-6);
}

// ---- instance normalization ----

TEST(InstanceNorm, ConstantChannelMapsToBeta) {
  const Tensor x({1, 4, 4}, 5.0f);
  const Tensor y = dfcn::instance_norm_forward(x, NormParams<float>::identity(1));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(InstanceNorm, StandardizedInputIsFixedPoint) {
  const TensorD x({1, 1, 2}, std::vector<double>{-1.0, 1.0});
  const TensorD y = dfcn::instance_norm_forward(x, NormParams<double>::identity(1, 1e-12));
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(InstanceNorm, MatchesDirectFormula) {
  dfcn::Rng rng(12);
  const TensorD x = fd::random({3, 5, 4}, rng, 2.0);
  const auto p = random_norm(3, rng);
  const TensorD y = dfcn::instance_norm_forward(x, p);
  const auto ref = oracle::instance_norm(std::vector<double>(x.data().begin(), x.data().end()), 3, 20,
                                         std::vector<double>(p.gamma.data().begin(), p.gamma.data().end()),
                                         std::vector<double>(p.beta.data().begin(), p.beta.data().end()), p.eps);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(InstanceNorm, AffineInvariance) {
  dfcn::Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    // The eps guard breaks invariance by about eps / (2 a^2 var), so the input variance must dwarf eps.
    const Tensor x = fd::random_f({3, 9, 9}, rng, 20.0);
    const float a = static_cast<float>(std::exp(rng.uniform(std::log(0.1), std::log(10.0))));
    const float b = static_cast<float>(rng.uniform(-3.0, 3.0));
    Tensor ax = x;
    for (auto& v : ax.data()) v = a * v + b;
    const auto p = NormParams<float>::identity(3);
    const Tensor y0 = dfcn::instance_norm_forward(x, p);
    const Tensor y1 = dfcn::instance_norm_forward(ax, p);
    for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_NEAR(y0[i], y1[i], 1e-5) << "a=" << a << " b=" << b;
  }
}

TEST(InstanceNorm, OutputMomentsAreStandard) {
  dfcn::Rng rng(14);
  const Tensor x = fd::random_f({4, 16, 16}, rng, 3.0);
  const Tensor y = dfcn::instance_norm_forward(x, NormParams<float>::identity(4));
  for (std::int64_t c = 0; c < 4; ++c) {
    const auto ch = y.channel(c);
    double mean = 0.0, var = 0.0;
    for (float v : ch) mean += v;
    mean /= static_cast<double>(ch.size());
    for (float v : ch) var += (v - mean) * (v - mean);
    var /= static_cast<double>(ch.size());
    EXPECT_LE(std::abs(mean), 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(InstanceNorm, BackwardIdentitiesAndFiniteDifferences) {
  dfcn::Rng rng(15);
  TensorD x = fd::random({3, 4, 5}, rng);
  auto p = random_norm(3, rng);
  const TensorD g = fd::random({3, 4, 5}, rng);
  const auto grads = dfcn::instance_norm_backward(x, p, g);

  const auto unit = NormParams<double>::identity(3, p.eps);
  const TensorD xhat = dfcn::instance_norm_forward(x, unit);
  for (std::int64_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::int64_t k = 0; k < 20; ++k) s += g[static_cast<std::size_t>(c * 20 + k)] * xhat[static_cast<std::size_t>(c * 20 + k)];
    EXPECT_NEAR(grads.grad_gamma[static_cast<std::size_t>(c)], s, 1e-12);
  }

  auto loss = [&] { return fd::project(dfcn::instance_norm_forward(x, p), g); };
  EXPECT_LE(fd::max_rel_error(grads.grad_x.data(), fd::gradient(x.data(), loss)), 1e-6);
  EXPECT_LE(fd::max_rel_error(grads.grad_gamma.data(), fd::gradient(p.gamma.data(), loss)), 1e-6);
  EXPECT_LE(fd::max_rel_error(grads.grad_beta.data(), fd::gradient(p.beta.data(), loss)), 1e-6);

  const auto zero = dfcn::instance_norm_backward(x, p, TensorD(x.shape(), 0.0));
  for (double v : zero.grad_x.data()) EXPECT_EQ(v, 0.0);
  for (double v : zero.grad_gamma.data()) EXPECT_EQ(v, 0.0);
}

// ---- normalization-skip block ----

TEST(NormSkipBlock, IsNotAffineInvariant) {
  dfcn::Rng rng(31);
  const Tensor x = fd::random_f({2, 7, 7}, rng);
  Tensor ax = x;
  for (auto& v : ax.data()) v = 2.0f * v + 1.0f;
  const auto p = NormParams<float>::identity(2);
  const Tensor y0 = dfcn::norm_skip_block_forward(x, p);
  const Tensor y1 = dfcn::norm_skip_block_forward(ax, p);
  double diff = 0.0;
  for (std::size_t i = 0; i < y0.size(); ++i) diff = std::max(diff, static_cast<double>(std::abs(y0[i] - y1[i])));
  EXPECT_GT(diff, 0.1);
}

TEST(NormSkipBlock, ConstantPositiveChannelPassesThrough) {
  const Tensor x({1, 3, 3}, 2.5f);
  const Tensor y = dfcn::norm_skip_block_forward(x, NormParams<float>::identity(1));
  for (float v : y.data()) EXPECT_EQ(v, 2.5f);
}

TEST(NormSkipBlock, DeadZone) {
  // Every x <= 0 with IN(x) <= -x: beta pulls the normalized branch down far enough.
  const Tensor x({1, 1, 3}, std::vector<float>{-1.0f, -2.0f, -3.0f});
  auto p = NormParams<float>::identity(1);
  p.beta[0] = -10.0f;
  const Tensor y = dfcn::norm_skip_block_forward(x, p);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(NormSkipBlock, BackwardMatchesFiniteDifferencesInEveryMode) {
  for (auto mode : {dfcn::NormMode::instance_norm_skip, dfcn::NormMode::instance_norm, dfcn::NormMode::none}) {
    dfcn::Rng rng(16 + static_cast<int>(mode));
    TensorD x = fd::random({2, 5, 5}, rng);
    auto p = random_norm(2, rng);
    const TensorD g = fd::random({2, 5, 5}, rng);
    const TensorD y = dfcn::norm_skip_block_forward(x, p, mode);
    const auto grads = dfcn::norm_skip_block_backward(x, p, y, g, mode);
    auto loss = [&] { return fd::project(dfcn::norm_skip_block_forward(x, p, mode), g); };
    EXPECT_LE(fd::max_rel_error(grads.grad_x.data(), fd::gradient(x.data(), loss)), 1e-6);
    if (mode != dfcn::NormMode::none) {
      EXPECT_LE(fd::max_rel_error(grads.grad_gamma.data(), fd::gradient(p.gamma.data(), loss)), 1e-6);
      EXPECT_LE(fd::max_rel_error(grads.grad_beta.data(), fd::gradient(p.beta.data(), loss)), 1e-6);
    }
  }
}

// ---- relu, dropout, concat, softmax ----

TEST(Relu, DefinitionAndSubgradient) {
  const Tensor x({4}, std::vector<float>{-3.0f, 4.0f, 0.0f, 0.5f});
  EXPECT_EQ(dfcn::relu_forward(x), Tensor({4}, std::vector<float>{0.0f, 4.0f, 0.0f, 0.5f}));
  const Tensor g = dfcn::relu_backward(x, Tensor({4}, 1.0f));
  EXPECT_EQ(g, Tensor({4}, std::vector<float>{0.0f, 1.0f, 0.0f, 1.0f}));
}

TEST(Relu, FiniteDifferencesAwayFromZero) {
  dfcn::Rng rng(20);
  TensorD x = fd::random({2, 4, 4}, rng);
  for (auto& v : x.data()) {
    if (std::abs(v) < 0.01) v = 0.5;
  }
  const TensorD g = fd::random({2, 4, 4}, rng);
  auto loss = [&] { return fd::project(dfcn::relu_forward(x), g); };
  EXPECT_LE(fd::max_rel_error(dfcn::relu_backward(x, g).data(), fd::gradient(x.data(), loss)), 1e-6);
}

TEST(Dropout, DegenerateRatesAndEvalMode) {
  dfcn::Rng rng(21);
  const Tensor x = fd::random_f({3, 4, 4}, rng);
  const auto r0 = dfcn::dropout_forward(x, 0.0, dfcn::Mode::train, rng);
  EXPECT_EQ(r0.y, x);
  for (auto k : r0.keep.data()) EXPECT_EQ(k, 1);
  EXPECT_EQ(dfcn::dropout_forward(x, 0.7, dfcn::Mode::eval, rng).y, x);
  EXPECT_THROW(dfcn::dropout_forward(x, 1.0, dfcn::Mode::train, rng), dfcn::ParameterError);
  EXPECT_THROW(dfcn::dropout_forward(x, -0.1, dfcn::Mode::train, rng), dfcn::ParameterError);
}

TEST(Dropout, LawOfLargeNumbers) {
  dfcn::Rng rng(22);
  const Tensor x({1, 1000, 1000}, 1.0f);
  const auto r = dfcn::dropout_forward(x, 0.5, dfcn::Mode::train, rng);
  double sum = 0.0;
  std::int64_t kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sum += r.y[i];
    kept += r.keep[i];
    EXPECT_TRUE(r.y[i] == 0.0f || r.y[i] == 2.0f);
  }
  EXPECT_GE(sum / 1e6, 0.99);
  EXPECT_LE(sum / 1e6, 1.01);
  EXPECT_GE(static_cast<double>(kept) / 1e6, 0.498);
  EXPECT_LE(static_cast<double>(kept) / 1e6, 0.502);
}

TEST(Dropout, BackwardReplaysMask) {
  dfcn::Rng rng(23);
  const TensorD x = fd::random({2, 3, 3}, rng);
  const TensorD g = fd::random({2, 3, 3}, rng);
  const auto r = dfcn::dropout_forward(x, 0.25, dfcn::Mode::train, rng);
  const TensorD back = dfcn::dropout_backward(g, r.keep, 0.25);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_DOUBLE_EQ(back[i], r.keep[i] ? g[i] / 0.75 : 0.0);
    EXPECT_DOUBLE_EQ(r.y[i], r.keep[i] ? x[i] / 0.75 : 0.0);
  }
}

TEST(Concat, SingleTensorIsIdentity) {
  dfcn::Rng rng(24);
  const std::vector<Tensor> parts{fd::random_f({3, 4, 5}, rng)};
  EXPECT_EQ(dfcn::concat_channels<float>(parts), parts[0]);
}

TEST(Concat, InputPlusTenBlocks) {
  dfcn::Rng rng(25);
  std::vector<Tensor> parts{fd::random_f({1, 6, 6}, rng)};
  for (int i = 0; i < 10; ++i) parts.push_back(fd::random_f({32, 6, 6}, rng));
  const Tensor c = dfcn::concat_channels<float>(parts);
  EXPECT_EQ(c.dim(0), 321);
  EXPECT_EQ(c.at(0, 2, 3), parts[0].at(0, 2, 3));
  EXPECT_EQ(c.at(1 + 32 * 4 + 7, 5, 1), parts[5].at(7, 5, 1));

  std::vector<std::int64_t> channels{1};
  for (int i = 0; i < 10; ++i) channels.push_back(32);
  const auto back = dfcn::split_channels<float>(c, channels);
  ASSERT_EQ(back.size(), parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) EXPECT_EQ(back[i], parts[i]);
}

TEST(Concat, SpatialMismatch) {
  const std::vector<Tensor> parts{Tensor({1, 4, 4}, 0.0f), Tensor({1, 5, 4}, 0.0f)};
  EXPECT_THROW(dfcn::concat_channels<float>(parts), dfcn::ShapeError);
}

TEST(Softmax, UniformCases) {
  const Tensor zero = dfcn::softmax_channels(Tensor({6, 2, 2}, 0.0f));
  for (float v : zero.data()) EXPECT_FLOAT_EQ(v, 1.0f / 6.0f);
  const Tensor big = dfcn::softmax_channels(Tensor({6, 1, 3}, 1000.0f));
  for (float v : big.data()) EXPECT_FLOAT_EQ(v, 1.0f / 6.0f);
}

TEST(Softmax, SumsAndShiftInvariance) {
  dfcn::Rng rng(26);
  const Tensor x = fd::random_f({6, 5, 5}, rng, 3.0);
  Tensor shifted = x;
  for (auto& v : shifted.data()) v += 7.0f;
  const Tensor p = dfcn::softmax_channels(x);
  const Tensor q = dfcn::softmax_channels(shifted);
  for (std::int64_t px = 0; px < 25; ++px) {
    double s = 0.0;
    for (std::int64_t c = 0; c < 6; ++c) s += p[static_cast<std::size_t>(c * 25 + px)];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-6);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  dfcn::Rng rng(27);
  TensorD x = fd::random({6, 3, 3}, rng);
  const TensorD g = fd::random({6, 3, 3}, rng);
  const TensorD p = dfcn::softmax_channels(x);
  auto loss = [&] { return fd::project(dfcn::softmax_channels(x), g); };
  EXPECT_LE(fd::max_rel_error(dfcn::softmax_channels_backward(p, g).data(), fd::gradient(x.data(), loss)), 1e-6);
}

}  // namespace
