// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moesim/eam.hpp"
#include "moesim/memsim.hpp"
#include "moesim/model.hpp"
#include "moesim/policy.hpp"

namespace moesim {

struct EamcConfig {
  std::size_t capacity = 32;
  std::optional<std::filesystem::path> decode_in, decode_out;
  std::optional<std::filesystem::path> prefill_in, prefill_out;

  static EamcConfig with_capacity(std::size_t n) {
    EamcConfig c;
    c.capacity = n;
    return c;
  }
};

/// Per-run metrics. Times are integer nanoseconds; the CSV layer renders
/// them as seconds.
struct SimReport {
  PolicyKind policy = PolicyKind::on_demand;
  std::uint64_t seed = 0;
  std::size_t eamc_capacity = 0;
  std::uint64_t n_requests = 0;

  SimTime total_time_ns = 0;
  std::vector<SimTime> per_gpu_compute_ns, per_gpu_blocking_ns, per_gpu_idle_ns;
  SimTime prefill_blocking_ns = 0;
  SimTime decode_blocking_ns = 0;

  std::vector<std::uint64_t> bytes_per_gpu_link;
  std::uint64_t bytes_ssd_link = 0;

  std::uint64_t activations = 0, hits = 0;
  std::uint64_t prefill_activations = 0, prefill_hits = 0;
  std::uint64_t decode_activations = 0, decode_hits = 0;

  std::vector<SimTime> decode_tpot_ns;  // one entry per decode iteration

  std::uint64_t prefetch_candidates_issued = 0;
  std::uint64_t prefetch_cancellations = 0;

  SimTime compute_time_ns() const;
  SimTime blocking_time_ns() const;
  SimTime idle_time_ns() const;
  std::uint64_t bytes_dram_gpu() const;
  double hit_rate() const;
  double prefill_hit_rate() const;
  double decode_hit_rate() const;
  SimTime decode_tpot_mean_ns() const;
  SimTime decode_tpot_max_ns() const;
};

/// Optional JSONL event sink for debugging runs.
class EventLog {
 public:
  explicit EventLog(const std::filesystem::path& path);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  void emit(SimTime t, const std::string& kind,
            std::initializer_list<std::pair<const char*, std::string>> fields);

 private:
  struct Impl;
  Impl* impl_;
};

/// Replays a validated trace set against the memory model under one
/// policy. Deterministic: identical inputs give identical reports.
SimReport run(std::span<const RequestTrace> traces, const ModelShape& shape,
              const HardwareSpec& hw, PolicyKind policy, const EamcConfig& eamc,
              EventLog* log = nullptr);

struct MatrixCell {
  PolicyKind policy = PolicyKind::on_demand;
  std::uint64_t seed = 0;
  std::size_t eamc_capacity = 0;
  HardwareSpec hardware;
};

struct MatrixResult {
  MatrixCell cell;
  std::optional<SimReport> report;
  std::string error;  // non-empty when the cell failed
};

/// Hands back the trace corpus for a seed; called once per distinct seed.
using TraceSource = std::function<std::vector<RequestTrace>(std::uint64_t seed)>;

/// Runs every cell independently; failures are recorded per cell and do
/// not abort the rest of the matrix.
std::vector<MatrixResult> run_matrix(std::span<const MatrixCell> cells,
                                     const ModelShape& shape, const TraceSource& traces,
                                     const EamcConfig& eamc_base);

}  // namespace moesim
