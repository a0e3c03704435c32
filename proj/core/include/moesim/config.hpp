// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "moesim/engine.hpp"
#include "moesim/memsim.hpp"
#include "moesim/model.hpp"
#include "moesim/policy.hpp"
#include "moesim/workload.hpp"

namespace moesim {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class SweepAxis : std::uint8_t { eamc_capacity, buffer_slots, bandwidth };

const char* to_string(SweepAxis a);
std::optional<SweepAxis> parse_sweep_axis(const std::string& name);

struct SweepSpec {
  SweepAxis axis = SweepAxis::eamc_capacity;
  std::vector<std::uint64_t> values;
  bool operator==(const SweepSpec&) const = default;
};

/// One simulation run, fully described. Flags may override individual
/// keys after the file is parsed.
struct RunConfig {
  ModelShape shape;
  HardwareSpec hardware;
  std::optional<WorkloadSpec> workload;  // exactly one of workload / trace_path
  std::optional<std::filesystem::path> trace_path;
  PolicyKind policy = PolicyKind::on_demand;
  bool policy_all = false;
  std::size_t eamc_capacity = 32;
  std::uint64_t seed = 0;
  std::uint64_t n_requests = 1;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> event_log;
  std::optional<std::filesystem::path> eamc_in, eamc_out;
  std::optional<std::filesystem::path> eamc_in_prefill, eamc_out_prefill;
  std::optional<SweepSpec> sweep;

  void validate() const;
  EamcConfig eamc_config() const;
  /// The corpus for this config: generated (workload) or ingested
  /// (trace_path), validated either way.
  std::vector<RequestTrace> materialize_traces() const;
  std::vector<RequestTrace> materialize_traces(std::uint64_t seed_override) const;
};

RunConfig parse_config_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical JSON; parse_config_json(dump_config(c)) reproduces c.
std::string dump_config(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace moesim
