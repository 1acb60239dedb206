// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "shallowpi/costmodel.hpp"
#include "shallowpi/data.hpp"
#include "shallowpi/netgraph.hpp"
#include "shallowpi/ops.hpp"
#include "shallowpi/rewrite.hpp"
#include "shallowpi/trainer.hpp"

namespace {

using namespace shallowpi;

Tensor blob_batch(int n, int size) {
  BlobOptions o;
  o.image_size = size;
  const auto d = make_blob_dataset(o, n, 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return d.batch(idx);
}

/// Eval forward of the default tiny network; arg 1 fuses the first group.
void BM_TinyForward(benchmark::State& state) {
  auto spec = build_tiny_net({16, 32}, {2, 2}, 8, 8);
  ParamStore params = init_params(spec, 1);
  if (state.range(0) == 1) {
    FusionPlan plan;
    plan.fuse_blocks = {"g0.b0", "g0.b1"};
    auto g = apply_gating(spec, params, plan, 2);
    auto f = finalize_fusion(g.spec, g.params, 1.0);
    spec = f.spec;
    params = f.params;
  }
  const auto masks = full_masks(spec);
  const auto x = blob_batch(128, 8);
  for (auto _ : state) benchmark::DoNotOptimize(forward(spec, params, x, masks));
  state.counters["MACs"] = static_cast<double>(count_macs(spec));
}
BENCHMARK(BM_TinyForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

/// One SGD step (forward, backward, update) of the default tiny network.
void BM_TinyTrainStep(benchmark::State& state) {
  const auto spec = build_tiny_net({16, 32}, {2, 2}, 8, 8);
  ParamStore params = init_params(spec, 1);
  params.set_requires_grad(true);
  Sgd opt(params.trainable_tensors(), SgdOptions{});
  const auto masks = full_masks(spec);
  const auto x = blob_batch(32, 8);
  const std::vector<int> labels(32, 1);
  ForwardOptions f;
  f.training = true;
  for (auto _ : state) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = cross_entropy(forward(spec, params, x, masks, f).logits_main, labels);
    }
    tape.backward(loss);
    opt.step(0.01);
    opt.zero_grad();
  }
}
BENCHMARK(BM_TinyTrainStep)->Unit(benchmark::kMillisecond);

void BM_ResNet18Forward(benchmark::State& state) {
  const auto spec = build_resnet18_cifar(10, 32);
  ParamStore params = init_params(spec, 1);
  const auto masks = full_masks(spec);
  const auto x = blob_batch(1, 32);
  for (auto _ : state) benchmark::DoNotOptimize(forward(spec, params, x, masks));
}
BENCHMARK(BM_ResNet18Forward)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace
