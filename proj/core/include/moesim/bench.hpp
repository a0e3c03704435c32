// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "moesim/model.hpp"

namespace moesim {

struct MatchBenchResult {
  std::size_t n_entries = 0;
  std::size_t n_queries = 0;
  double mean_us = 0.0;
  double median_us = 0.0;
  std::uint64_t checksum = 0;  // keeps the matches observable
};

/// Fills a collection with random request-level EAMs and times nearest
/// neighbor queries against it (linear scan, as deployed).
MatchBenchResult bench_match(std::size_t n_entries, const ModelShape& shape,
                             std::size_t n_queries, std::uint64_t seed);

}  // namespace moesim
