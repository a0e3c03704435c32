// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/bench.hpp"

#include <algorithm>
#include <chrono>
#include <vector>

#include "moesim/eam.hpp"
#include "moesim/rng.hpp"

namespace moesim {

namespace {

// Sparse random request EAM: a handful of active experts per row, token
// counts in [1, 32].
Eam random_request_eam(const ModelShape& shape, Rng& rng) {
  Eam eam(shape, EamKind::request, Phase::decode);
  const std::uint32_t active_per_row = std::min<std::uint32_t>(4, shape.n_experts_per_layer);
  for (std::uint32_t l = 0; l < shape.n_layers; ++l) {
    for (std::uint32_t k = 0; k < active_per_row; ++k) {
      const auto e = static_cast<std::uint32_t>(rng.bounded(shape.n_experts_per_layer));
      eam.set(l, e, rng.bounded(32) + 1);
    }
  }
  return eam;
}

}  // namespace

MatchBenchResult bench_match(std::size_t n_entries, const ModelShape& shape,
                             std::size_t n_queries, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 0x6265636Eull);  // arbitrary bench stream tag
  Eamc eamc(shape, Phase::decode, n_entries);
  for (std::size_t i = 0; i < n_entries; ++i) eamc.insert(random_request_eam(shape, rng));

  std::vector<Eam> probes;
  probes.reserve(n_queries);
  for (std::size_t q = 0; q < n_queries; ++q) probes.push_back(random_request_eam(shape, rng));

  MatchBenchResult result;
  result.n_entries = n_entries;
  result.n_queries = n_queries;

  std::vector<double> latencies_us;
  latencies_us.reserve(n_queries);
  for (const Eam& probe : probes) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto match = eamc.match(probe);
    const auto t1 = std::chrono::steady_clock::now();
    if (match) result.checksum += match->index + 1;
    latencies_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }

  double total = 0.0;
  for (double us : latencies_us) total += us;
  result.mean_us = total / static_cast<double>(latencies_us.size());
  std::sort(latencies_us.begin(), latencies_us.end());
  result.median_us = latencies_us[latencies_us.size() / 2];
  return result;
}

}  // namespace moesim
