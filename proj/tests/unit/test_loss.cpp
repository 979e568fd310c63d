#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dfcn/loss_metrics.hpp"
#include "dfcn/ops.hpp"
#include "fd.hpp"
#include "oracles.hpp"

namespace {

using dfcn::ClassWeights;
using dfcn::ConfusionMatrix;
using dfcn::LabelMap;
using dfcn::LossConfig;
using dfcn::Mask;
using dfcn::TensorD;
constexpr std::uint8_t U = dfcn::kUnlabeled;

TensorD random_probs(std::int64_t c, std::int64_t h, std::int64_t w, dfcn::Rng& rng) {
  return dfcn::softmax_channels(fd::random({c, h, w}, rng));
}

// Reference loss written from the definition, pixel by pixel.
double reference_loss(const TensorD& probs, const LabelMap& labels, const Mask& roi, const ClassWeights& w,
                      double alpha) {
  const std::int64_t c = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
  double sup = 0.0, ent = 0.0;
  std::int64_t nl = 0, nu = 0;
  for (std::int64_t px = 0; px < hw; ++px) {
    if (!roi[static_cast<std::size_t>(px)]) continue;
    std::vector<double> p;
    for (std::int64_t k = 0; k < c; ++k) p.push_back(std::max(probs[static_cast<std::size_t>(k * hw + px)], 1e-7));
    const auto y = labels[static_cast<std::size_t>(px)];
    if (y == U) {
      double h = 0.0;
      for (double v : p) h -= v * std::log(v);
      ent += h;
      ++nu;
    } else {
      sup -= w.w[y] * std::log(p[y]);
      ++nl;
    }
  }
  const double s = nl ? sup / static_cast<double>(nl) : 0.0;
  const double wu = nu ? static_cast<double>(nl) / static_cast<double>(nu) : 0.0;
  return s + (nu ? alpha * wu * ent / static_cast<double>(nu) : 0.0);
}

TEST(ClassWeights, Examples) {
  const std::vector<std::int64_t> equal(6, 10);
  for (double v : dfcn::class_weights(equal).w) EXPECT_DOUBLE_EQ(v, 1.0);

  const std::vector<std::int64_t> two{30, 10, 0, 0, 0, 0};
  const auto w = dfcn::class_weights(two).w;
  EXPECT_NEAR(w[0], 40.0 / 60.0, 1e-12);
  EXPECT_NEAR(w[1], 2.0, 1e-12);
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(w[i], 0.0);

  EXPECT_THROW(dfcn::class_weights(std::vector<std::int64_t>(6, 0)), dfcn::DataError);
}

TEST(ClassWeights, NormalizationIdentity) {
  dfcn::Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::int64_t> counts(6);
    for (auto& n : counts) n = rng.bernoulli(0.2) ? 0 : static_cast<std::int64_t>(1 + rng.below(100000));
    counts[rng.below(6)] += 1;
    const auto w = dfcn::class_weights(counts).w;
    double weighted = 0.0;
    for (std::size_t i = 0; i < 6; ++i) weighted += w[i] * static_cast<double>(counts[i]);
    EXPECT_NEAR(weighted, static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::int64_t{0})), 1e-6);
  }
}

TEST(PixelLoss, Examples) {
  const ClassWeights w{std::vector<double>(6, 1.3)};
  const LossConfig cfg{0.1};
  const std::vector<double> onehot{0, 0, 1, 0, 0, 0};
  const std::vector<double> uniform(6, 1.0 / 6.0);
  EXPECT_EQ(dfcn::pixel_loss(onehot, 2, w, cfg, 1.0), 0.0);
  EXPECT_NEAR(dfcn::pixel_loss(uniform, U, w, LossConfig{1.0}, 1.0), std::log(6.0), 1e-6);
  EXPECT_NEAR(dfcn::pixel_loss(uniform, U, w, LossConfig{0.5}, 2.0), std::log(6.0), 1e-6);
  EXPECT_NEAR(dfcn::pixel_loss(onehot, U, w, cfg, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(dfcn::pixel_loss(uniform, 4, w, cfg, 1.0), 1.3 * std::log(6.0), 1e-12);
  EXPECT_THROW(dfcn::pixel_loss(uniform, 6, w, cfg, 1.0), dfcn::DataError);
}

TEST(ImageLoss, HandComputedMixedImage) {
  TensorD probs({6, 2, 2}, 1.0 / 6.0);
  const LabelMap labels({2, 2}, std::vector<std::uint8_t>{0, 3, U, U});
  const Mask roi({2, 2}, std::uint8_t{1});
  const ClassWeights w{std::vector<double>(6, 1.0)};
  const auto r = dfcn::image_loss(probs, labels, roi, w, LossConfig{0.1});
  EXPECT_EQ(r.labeled, 2);
  EXPECT_EQ(r.unlabeled, 2);
  EXPECT_DOUBLE_EQ(r.w_u, 1.0);
  EXPECT_NEAR(r.unsupervised, 0.1 * std::log(6.0), 1e-12);
  EXPECT_NEAR(r.supervised, std::log(6.0), 1e-12);
  EXPECT_NEAR(r.total, r.supervised + r.unsupervised, 1e-15);
  EXPECT_NEAR(r.mean_unlabeled_entropy, std::log(6.0), 1e-12);
}

TEST(ImageLoss, DegenerateCases) {
  dfcn::Rng rng(2);
  const TensorD probs = random_probs(6, 4, 4, rng);
  LabelMap labels({4, 4}, std::uint8_t{0});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 6);
  const Mask roi({4, 4}, std::uint8_t{1});
  const ClassWeights w{std::vector<double>(6, 1.0)};

  const auto all_labeled = dfcn::image_loss(probs, labels, roi, w, LossConfig{0.1});
  EXPECT_EQ(all_labeled.unsupervised, 0.0);
  EXPECT_EQ(all_labeled.total, all_labeled.supervised);

  labels[3] = labels[7] = labels[11] = U;
  const auto sup_only = dfcn::image_loss(probs, labels, roi, w, LossConfig{0.0});
  EXPECT_EQ(sup_only.unsupervised, 0.0);
  EXPECT_EQ(sup_only.total, sup_only.supervised);

  EXPECT_THROW(dfcn::image_loss(probs, labels, Mask({4, 4}, std::uint8_t{0}), w, LossConfig{0.1}), dfcn::DataError);
}

TEST(ImageLoss, MatchesReferenceAndIgnoresOutsideRoi) {
  dfcn::Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    TensorD probs = random_probs(6, 5, 6, rng);
    LabelMap labels({5, 6}, std::uint8_t{0});
    Mask roi({5, 6}, std::uint8_t{0});
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = rng.bernoulli(0.4) ? U : static_cast<std::uint8_t>(rng.below(6));
      roi[i] = rng.bernoulli(0.8) ? 1 : 0;
    }
    roi[0] = 1;
    labels[0] = 1;
    std::vector<double> wv(6);
    for (auto& v : wv) v = rng.uniform(0.2, 3.0);
    const ClassWeights w{wv};
    const double alpha = rng.uniform(0.0, 1.0);
    const double got = dfcn::image_loss(probs, labels, roi, w, LossConfig{alpha}).total;
    EXPECT_NEAR(got, reference_loss(probs, labels, roi, w, alpha), 1e-12);

    // Changing probabilities outside the roi has no effect.
    for (std::size_t i = 0; i < roi.size(); ++i) {
      if (!roi[i]) {
        for (std::int64_t k = 0; k < 6; ++k) probs[static_cast<std::size_t>(k * 30) + i] = k == 0 ? 1.0 : 0.0;
      }
    }
    EXPECT_NEAR(dfcn::image_loss(probs, labels, roi, w, LossConfig{alpha}).total, got, 1e-12);
  }
}

TEST(ImageLossBackward, MatchesFiniteDifferences) {
  dfcn::Rng rng(4);
  // Near-uniform probabilities keep the third derivative of -log p small at the FD step.
  TensorD probs = dfcn::softmax_channels(fd::random({6, 4, 4}, rng, 0.3));
  LabelMap labels({4, 4}, std::uint8_t{0});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0 ? U : static_cast<std::uint8_t>(i % 6);
  Mask roi({4, 4}, std::uint8_t{1});
  roi[5] = 0;
  const ClassWeights w{std::vector<double>{0.5, 1.0, 1.5, 2.0, 0.7, 1.1}};
  const LossConfig cfg{0.3};
  const TensorD g = dfcn::image_loss_backward(probs, labels, roi, w, cfg);
  auto loss = [&] { return dfcn::image_loss(probs, labels, roi, w, cfg).total; };
  EXPECT_LE(fd::max_rel_error(g.data(), fd::gradient(probs.data(), loss)), 1e-6);
}

TEST(ImageLossBackward, FusedLogitsPathMatchesFiniteDifferences) {
  dfcn::Rng rng(5);
  TensorD logits = fd::random({6, 3, 4}, rng);
  LabelMap labels({3, 4}, std::uint8_t{0});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 4 == 1 ? U : static_cast<std::uint8_t>((i * 5) % 6);
  const Mask roi({3, 4}, std::uint8_t{1});
  const ClassWeights w{std::vector<double>{1.0, 0.5, 2.0, 1.0, 1.5, 0.8}};
  const LossConfig cfg{0.1};
  const TensorD g =
      dfcn::image_loss_backward_logits(dfcn::softmax_channels(logits), labels, roi, w, cfg);
  auto loss = [&] { return dfcn::image_loss(dfcn::softmax_channels(logits), labels, roi, w, cfg).total; };
  EXPECT_LE(fd::max_rel_error(g.data(), fd::gradient(logits.data(), loss)), 1e-6);
}

TEST(ImageLossBackward, StationaryPoints) {
  const ClassWeights w{std::vector<double>(6, 1.0)};
  TensorD onehot({6, 1, 2}, 0.0);
  onehot[2 * 2 + 0] = 1.0;  // pixel 0 -> class 2
  onehot[2 * 4 + 1] = 1.0;  // pixel 1 -> class 4
  const LabelMap labels({1, 2}, std::vector<std::uint8_t>{2, U});
  const Mask roi({1, 2}, std::uint8_t{1});
  const TensorD g = dfcn::image_loss_backward_logits(onehot, labels, roi, w, LossConfig{0.1});
  for (double v : g.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Confusion, Examples) {
  dfcn::Rng rng(6);
  LabelMap truth({6, 7}, std::uint8_t{0});
  for (auto& v : truth.data()) v = static_cast<std::uint8_t>(rng.below(6));
  const auto same = dfcn::confusion_matrix(truth, truth, 6);
  for (int a = 0; a < 6; ++a) {
    for (int b = 0; b < 6; ++b) {
      if (a != b) EXPECT_EQ(same.at(a, b), 0);
    }
  }
  EXPECT_EQ(same.total(), 42);

  const LabelMap none({6, 7}, U);
  EXPECT_EQ(dfcn::confusion_matrix(truth, none, 6).total(), 0);
}

TEST(Confusion, MatchesDirectTally) {
  dfcn::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    LabelMap pred({5, 5}, std::uint8_t{0}), truth({5, 5}, std::uint8_t{0});
    Mask roi({5, 5}, std::uint8_t{0});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = static_cast<std::uint8_t>(rng.below(4));
      truth[i] = rng.bernoulli(0.3) ? U : static_cast<std::uint8_t>(rng.below(4));
      roi[i] = rng.bernoulli(0.7) ? 1 : 0;
    }
    std::vector<std::int64_t> tally(16, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (truth[i] != U && roi[i]) ++tally[truth[i] * 4u + pred[i]];
    }
    EXPECT_EQ(dfcn::confusion_matrix(pred, truth, 4, &roi).counts, tally);
  }
}

TEST(BalancedAccuracy, Examples) {
  ConfusionMatrix ident(6);
  for (int i = 0; i < 6; ++i) ident.at(i, i) = 10 + i;
  EXPECT_DOUBLE_EQ(dfcn::balanced_accuracy(ident), 1.0);

  ConfusionMatrix two(2);
  two.at(0, 0) = 8;
  two.at(1, 1) = 3;
  two.at(1, 0) = 3;
  EXPECT_DOUBLE_EQ(dfcn::balanced_accuracy(two), 0.75);

  ConfusionMatrix absent(3);
  absent.at(0, 0) = 4;
  absent.at(2, 0) = 2;
  absent.at(2, 2) = 2;
  EXPECT_DOUBLE_EQ(dfcn::balanced_accuracy(absent), 0.75);
  EXPECT_TRUE(std::isnan(dfcn::per_class_accuracy(absent)[1]));
}

TEST(BalancedAccuracy, RowScalingInvariance) {
  dfcn::Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    ConfusionMatrix m(6);
    for (auto& v : m.counts) v = static_cast<std::int64_t>(rng.below(50));
    const double before = dfcn::balanced_accuracy(m);
    const int row = static_cast<int>(rng.below(6));
    for (int j = 0; j < 6; ++j) m.at(row, j) *= 2;
    EXPECT_NEAR(dfcn::balanced_accuracy(m), before, 1e-12);
  }
}

}  // namespace
