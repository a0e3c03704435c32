// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "moesim/model.hpp"

namespace moesim {

/// Finite discrete distribution over positive integers, given as
/// (value, weight) pairs.
struct DiscreteDist {
  std::vector<std::pair<std::uint32_t, double>> pmf;

  void validate() const;
  /// Convenience single-point distribution.
  static DiscreteDist constant(std::uint32_t value) { return {{{value, 1.0}}}; }
  bool operator==(const DiscreteDist&) const = default;
};

/// Parameters of the synthetic routing-trace generator. Requests draw a
/// latent cross-layer expert group per sequence; tokens follow the group's
/// designated experts with probability group_fidelity and otherwise fall
/// back to a per-(request, layer) Zipf-weighted draw, which is what makes
/// expert reuse skewed within a request but roughly uniform across many
/// requests.
struct WorkloadSpec {
  ModelShape shape;
  std::uint32_t n_groups = 8;
  double group_fidelity = 0.9;
  double reuse_skew = 1.2;  // Zipf exponent, >= 0
  DiscreteDist prompt_len = DiscreteDist::constant(8);
  DiscreteDist decode_len = DiscreteDist::constant(16);
  std::uint32_t batch_size = 1;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const WorkloadSpec&) const = default;
};

/// Deterministic in (spec, request_index); the result always passes
/// validate_trace against spec.shape.
RequestTrace generate_trace(const WorkloadSpec& spec, std::uint64_t request_index);

std::vector<RequestTrace> generate_corpus(const WorkloadSpec& spec, std::uint64_t n_requests);

/// Distinct experts activated anywhere in the trace, over L*E.
double activation_ratio(const RequestTrace& trace, const ModelShape& shape);

struct TraceIngestError : std::runtime_error {
  TraceIngestError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_no(line) {}
  std::size_t line_no;
};

/// Reads the JSONL trace format and validates every request against
/// `shape`; the first bad line aborts with its line number.
std::vector<RequestTrace> ingest_traces(const std::filesystem::path& path,
                                        const ModelShape& shape);

}  // namespace moesim
