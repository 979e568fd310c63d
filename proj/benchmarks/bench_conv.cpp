#include <benchmark/benchmark.h>

#include "dfcn/model.hpp"
#include "dfcn/ops.hpp"

namespace {

dfcn::Tensor random_tensor(dfcn::Shape shape, dfcn::Rng& rng, double scale) {
  dfcn::Tensor t(std::move(shape), 0.0f);
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

// Args: channels (in = out), spatial side, dilation.
void BM_DilatedConvForward(benchmark::State& state) {
  const auto c = state.range(0), side = state.range(1);
  dfcn::Rng rng(1);
  const auto x = random_tensor({c, side, side}, rng, 1.0);
  const dfcn::ConvParams<float> p{random_tensor({c, c, 3, 3}, rng, 0.1), random_tensor({c}, rng, 0.1),
                                  static_cast<int>(state.range(2))};
  for (auto _ : state) benchmark::DoNotOptimize(dfcn::dilated_conv2d_forward(x, p));
  state.SetItemsProcessed(state.iterations() * c * c * 9 * side * side);
}
BENCHMARK(BM_DilatedConvForward)->Args({16, 96, 1})->Args({16, 96, 8})->Args({32, 128, 1})->Args({32, 128, 13});

void BM_DilatedConvBackward(benchmark::State& state) {
  const auto c = state.range(0), side = state.range(1);
  dfcn::Rng rng(2);
  const auto x = random_tensor({c, side, side}, rng, 1.0);
  const auto g = random_tensor({c, side, side}, rng, 1.0);
  const dfcn::ConvParams<float> p{random_tensor({c, c, 3, 3}, rng, 0.1), random_tensor({c}, rng, 0.1),
                                  static_cast<int>(state.range(2))};
  for (auto _ : state) benchmark::DoNotOptimize(dfcn::dilated_conv2d_backward(x, p, g));
  state.SetItemsProcessed(state.iterations() * 2 * c * c * 9 * side * side);
}
BENCHMARK(BM_DilatedConvBackward)->Args({16, 96, 1})->Args({32, 128, 1})->Args({32, 128, 13});

void BM_Conv1x1Forward(benchmark::State& state) {
  const auto in = state.range(0), out = state.range(1), side = state.range(2);
  dfcn::Rng rng(3);
  const auto x = random_tensor({in, side, side}, rng, 1.0);
  const dfcn::ConvParams<float> p{random_tensor({out, in, 1, 1}, rng, 0.1), random_tensor({out}, rng, 0.1), 1};
  for (auto _ : state) benchmark::DoNotOptimize(dfcn::conv1x1_forward(x, p));
  state.SetItemsProcessed(state.iterations() * in * out * side * side);
}
BENCHMARK(BM_Conv1x1Forward)->Args({97, 128, 96})->Args({321, 128, 128});

void BM_NetworkTrainStep(benchmark::State& state) {
  dfcn::NetworkConfig cfg;
  cfg.kernels_per_layer = static_cast<int>(state.range(0));
  cfg.num_dilated_layers = static_cast<int>(state.range(1));
  const auto side = state.range(2);
  const auto net = dfcn::build(cfg, 1);
  dfcn::Rng rng(4);
  const auto x = random_tensor({1, side, side}, rng, 1.0);
  const dfcn::Tensor g({cfg.num_classes, side, side}, 1e-3f);
  for (auto _ : state) {
    const auto r = dfcn::forward(net, x, dfcn::Mode::train, rng);
    benchmark::DoNotOptimize(dfcn::backward_from_logits(net, r.cache, g));
  }
}
BENCHMARK(BM_NetworkTrainStep)->Args({16, 6, 96})->Args({32, 10, 128})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
