// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "shallowpi/ops.hpp"
#include "shallowpi/rewrite.hpp"

namespace {

using namespace shallowpi;

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

// Args: batch, channels, spatial size.
void BM_Conv2dForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const auto x = random_tensor({n, c, s, s}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Tensor(), 1, 1));
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(n * c * c * 9 * s * s),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForward)->Args({32, 16, 8})->Args({32, 32, 8})->Args({8, 64, 16})->Args({1, 64, 32});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  auto x = random_tensor({n, c, s, s}, 1);
  auto w = random_tensor({c, c, 3, 3}, 2);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = cross_entropy(global_avg_pool(conv2d(x, w, Tensor(), 1, 1)), std::vector<int>(n, 0));
    }
    tape.backward(loss);
    x.clear_grad();
    w.clear_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 16, 8})->Args({32, 32, 8});

void BM_MaskedRelu(benchmark::State& state) {
  const auto x = random_tensor({32, 32, 8, 8}, 1);
  auto mask = Tensor::zeros({32, 8, 8});
  auto d = mask.data();
  for (std::size_t i = 0; i < d.size(); i += 2) d[i] = 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(masked_relu(x, mask));
}
BENCHMARK(BM_MaskedRelu);

void BM_ComposeConvs(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  ConvParams a{random_tensor({c, c, 3, 3}, 1), random_tensor({c}, 2), 1, 1};
  ConvParams b{random_tensor({c, c, 3, 3}, 3), random_tensor({c}, 4), 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(compose_convs_exact(a, b));
}
BENCHMARK(BM_ComposeConvs)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
