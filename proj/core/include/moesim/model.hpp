// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moesim {

/// Static shape of an MoE model: L layers, E experts per layer, top-k
/// experts selected per token per layer.
struct ModelShape {
  std::uint32_t n_layers = 0;
  std::uint32_t n_experts_per_layer = 0;
  std::uint32_t top_k = 1;

  void validate() const;
  std::uint64_t total_experts() const {
    return std::uint64_t{n_layers} * n_experts_per_layer;
  }
  bool operator==(const ModelShape&) const = default;
};

/// Identity of one expert: (layer, index within layer). Totally ordered
/// lexicographically; this ordering is the tie-breaker everywhere.
struct ExpertId {
  std::uint32_t layer_idx = 0;
  std::uint32_t expert_idx = 0;

  auto operator<=>(const ExpertId&) const = default;
  std::uint64_t flat(const ModelShape& shape) const {
    return std::uint64_t{layer_idx} * shape.n_experts_per_layer + expert_idx;
  }
};

struct ExpertAssignment {
  std::uint32_t expert_idx = 0;
  std::uint64_t token_count = 0;
  bool operator==(const ExpertAssignment&) const = default;
};

/// Routing outcome of one MoE layer in one forward iteration.
struct RoutingEvent {
  std::uint32_t layer_idx = 0;
  std::vector<ExpertAssignment> assignments;
  bool operator==(const RoutingEvent&) const = default;
};

/// One forward iteration: exactly one RoutingEvent per layer, layer order.
using IterationTrace = std::vector<RoutingEvent>;

/// Routing-only record of one request (a batch is aggregated into one
/// trace). Iteration 0 is the prefill pass; the rest are decode steps.
struct RequestTrace {
  std::string request_id;
  std::uint64_t prompt_tokens = 0;
  std::vector<IterationTrace> iterations;
  bool operator==(const RequestTrace&) const = default;
};

enum class TraceViolation {
  none,
  empty_iteration_list,
  layer_count_mismatch,
  expert_index_out_of_range,
  invalid_token_count,
};

const char* to_string(TraceViolation v);

struct ValidationResult {
  TraceViolation kind = TraceViolation::none;
  // Offending indices; -1 where not applicable.
  std::int64_t iteration = -1;
  std::int64_t layer = -1;
  std::string detail;

  bool ok() const { return kind == TraceViolation::none; }
};

/// Checks index ranges and per-iteration layer coverage against `shape`.
/// Pure; returns the first violation found (iteration order, then layer).
ValidationResult validate_trace(const RequestTrace& trace,
                                const ModelShape& shape);

struct TraceParseError : std::runtime_error {
  explicit TraceParseError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Thrown where an invalid trace cannot be reported as a value.
struct TraceValidationError : std::runtime_error {
  explicit TraceValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// JSON Lines codec. One request per line:
/// {"request_id":"...","prompt_tokens":N,
///  "iterations":[[[layer,[[expert,tokens],...]],...],...]}
/// Unknown fields are ignored on read.
std::string trace_to_jsonl(const RequestTrace& trace);
RequestTrace trace_from_jsonl(const std::string& line);

void write_traces_jsonl(const std::filesystem::path& path,
                        std::span<const RequestTrace> traces);
/// Raw read; no validation (see workload::ingest_traces for the checked
/// variant). Parse errors carry the 1-based line number.
std::vector<RequestTrace> read_traces_jsonl(const std::filesystem::path& path);

}  // namespace moesim
