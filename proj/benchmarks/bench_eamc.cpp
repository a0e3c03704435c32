// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "moesim/eam.hpp"
#include "moesim/engine.hpp"
#include "moesim/policy.hpp"
#include "moesim/rng.hpp"
#include "moesim/workload.hpp"

namespace {

using namespace moesim;

Eam random_eam(const ModelShape& shape, EamKind kind, Rng& rng) {
  Eam eam(shape, kind, Phase::decode);
  for (std::uint32_t l = 0; l < shape.n_layers; ++l) {
    for (std::uint32_t k = 0; k < 4; ++k) {
      eam.set(l, static_cast<std::uint32_t>(rng.bounded(shape.n_experts_per_layer)),
              rng.bounded(32) + 1);
    }
  }
  return eam;
}

void BM_EamDistance(benchmark::State& state) {
  const ModelShape shape{12, 128, 1};
  Rng rng(7);
  const Eam a = random_eam(shape, EamKind::request, rng);
  const Eam b = random_eam(shape, EamKind::request, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eam_distance(a, b));
  }
}
BENCHMARK(BM_EamDistance);

void BM_EamcMatch(benchmark::State& state) {
  const ModelShape shape{12, 128, 1};
  Rng rng(7);
  Eamc eamc(shape, Phase::decode, static_cast<std::size_t>(state.range(0)));
  for (std::int64_t i = 0; i < state.range(0); ++i)
    eamc.insert(random_eam(shape, EamKind::request, rng));
  const Eam probe = random_eam(shape, EamKind::iteration, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eamc.match(probe));
  }
}
BENCHMARK(BM_EamcMatch)->Arg(1000)->Arg(10000);

void BM_PrefetchPriorities(benchmark::State& state) {
  const ModelShape shape{12, 128, 1};
  Rng rng(7);
  Eamc eamc(shape, Phase::decode, 256);
  for (int i = 0; i < 256; ++i) eamc.insert(random_eam(shape, EamKind::request, rng));
  const Eam probe = random_eam(shape, EamKind::iteration, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(prefetch_priorities(probe, eamc, 2));
  }
}
BENCHMARK(BM_PrefetchPriorities);

void BM_EngineRun(benchmark::State& state) {
  const ModelShape shape{12, 64, 1};
  WorkloadSpec w;
  w.shape = shape;
  w.n_groups = 8;
  w.group_fidelity = 0.9;
  w.reuse_skew = 1.2;
  w.prompt_len = DiscreteDist::constant(4);
  w.decode_len = DiscreteDist::constant(8);
  w.batch_size = 2;
  w.seed = 7;
  const auto traces = generate_corpus(w, 16);

  HardwareSpec hw;
  hw.expert_size_bytes = 32'000'000;
  hw.link_bandwidth_bytes_per_s = 32'000'000'000;
  hw.chunk_size_bytes = 16'000'000;
  hw.gpu_buffer_slots = 61;
  hw.n_gpus = 1;
  hw.expert_compute_ns = 1'000'000;
  hw.dense_layer_ns = 100'000;

  const PolicyKind kind = static_cast<PolicyKind>(state.range(0));
  std::uint64_t activations = 0;
  for (auto _ : state) {
    const SimReport r = run(traces, shape, hw, kind, EamcConfig::with_capacity(16));
    activations += r.activations;
    benchmark::DoNotOptimize(r.total_time_ns);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(activations));
  state.SetLabel(to_string(kind));
}
BENCHMARK(BM_EngineRun)
    ->Arg(static_cast<int>(PolicyKind::activation_aware))
    ->Arg(static_cast<int>(PolicyKind::on_demand))
    ->Arg(static_cast<int>(PolicyKind::ideal));

}  // namespace

BENCHMARK_MAIN();
