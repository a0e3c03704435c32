// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "moesim/eam.hpp"
#include "moesim/model.hpp"

namespace moesim {

/// Floor added to normalized activation ratios so unseen experts keep a
/// strictly positive priority.
inline constexpr double kEpsilon = 1e-4;

/// Sentinel for on-demand fetches; strictly dominates every computed
/// priority, which all lie in (0, 1].
inline constexpr double kMaxPriority = std::numeric_limits<double>::infinity();

/// Matched entries within this distance of the best match are aggregated
/// when predicting future activations.
inline constexpr double kMatchWindow = 0.01;

enum class PolicyKind : std::uint8_t {
  activation_aware,
  dependency,
  model_tracing,
  on_demand,
  lru,
  lfu,
  ideal,
};

const char* to_string(PolicyKind k);
std::optional<PolicyKind> parse_policy(const std::string& name);
std::span<const PolicyKind> all_policies();

struct PrefetchCandidate {
  ExpertId expert;
  double priority = 0.0;
  bool operator==(const PrefetchCandidate&) const = default;
};

/// Priority queue of fetch requests keyed by expert. Resubmitting an
/// expert overwrites its previous priority; dequeue order is priority
/// descending with (layer, expert) ascending on ties.
class TransferQueue {
 public:
  void submit(const ExpertId& expert, double priority);
  bool cancel(const ExpertId& expert);
  std::size_t cancel_all();
  std::optional<PrefetchCandidate> pop();
  std::optional<PrefetchCandidate> peek() const;
  bool contains(const ExpertId& expert) const { return by_expert_.contains(expert); }
  std::optional<double> priority_of(const ExpertId& expert) const;
  std::size_t size() const { return by_expert_.size(); }
  bool empty() const { return by_expert_.empty(); }

  struct Order {
    bool operator()(const PrefetchCandidate& a, const PrefetchCandidate& b) const {
      if (a.priority != b.priority) return a.priority > b.priority;
      return a.expert < b.expert;
    }
  };
  using const_iterator = std::set<PrefetchCandidate, Order>::const_iterator;
  const_iterator begin() const { return ordered_.begin(); }
  const_iterator end() const { return ordered_.end(); }

 private:
  std::set<PrefetchCandidate, Order> ordered_;
  std::map<ExpertId, double> by_expert_;
};

/// Multi-layer prefetch priorities for every expert in layers beyond
/// `current_layer`: the matched historical EAMs are aggregated, each
/// future row is normalized to activation ratios, and layer proximity
/// (1 - (i - l)/L) scales the result. Empty collection yields no
/// candidates. Output is sorted by priority descending.
std::vector<PrefetchCandidate> prefetch_priorities(const Eam& cur_eam, const Eamc& eamc,
                                                   std::uint32_t current_layer);

/// Request-EAM cache priority: (count/row_sum + EPSILON) * (1 - layer/L),
/// with ratio 0 on an all-zero row. Earlier layers outrank later ones at
/// equal ratios.
double cache_priority(const Eam& request_eam, const ExpertId& expert);

/// What the victim picker is allowed to see of one buffer slot.
struct SlotView {
  std::size_t slot = 0;
  ExpertId occupant;
  bool prefetch_protected = false;
  bool pinned = false;  // executing or awaiting execution in this layer
};

/// Lowest-cache-priority unprotected, unpinned slot; ties go to the
/// smaller ExpertId. nullopt when every slot is protected.
std::optional<std::size_t> select_eviction_victim(std::span<const SlotView> slots,
                                                  const Eam& request_eam);

enum class ResetEvent : std::uint8_t { executed, determined_unused, displaced_from_topk };

class GpuBuffer;  // memsim

/// Clears prefetch protection and re-prices the slot from the request
/// EAM. The expert must occupy a slot.
void priority_reset_on_event(GpuBuffer& buffer, const ExpertId& expert, ResetEvent event,
                             const Eam& request_eam);

enum class EvictionRule : std::uint8_t {
  cache_priority,  // request-EAM pricing (activation-aware)
  recency,         // LRU
  frequency,       // LFU
  model_counts,    // lifetime model-level counts
  belady,          // farthest next use
};

struct BaselinePlan {
  std::vector<PrefetchCandidate> candidates;
  EvictionRule eviction = EvictionRule::recency;
};

/// Everything a baseline is permitted to see.
struct BaselineContext {
  ModelShape shape;
  std::uint32_t current_layer = 0;
  const RoutingEvent* current_event = nullptr;            // on_demand
  std::span<const std::uint64_t> lifetime_counts = {};    // model_tracing, L*E row-major
};

/// Prefetch candidates plus the eviction rule for the baseline policies.
/// The on-demand family plans no prefetches; their fetches are the
/// engine's MAX_PRIORITY path at dispatch.
BaselinePlan baseline_plan(PolicyKind kind, const BaselineContext& ctx);

EvictionRule eviction_rule_for(PolicyKind kind);

/// Future-use positions per expert over a fixed replay order; backs the
/// Belady eviction rule.
class FutureUseIndex {
 public:
  void add_use(const ExpertId& expert, std::uint64_t position);
  /// First use strictly after `position`; nullopt = never used again.
  std::optional<std::uint64_t> next_use_after(const ExpertId& expert,
                                              std::uint64_t position) const;

 private:
  std::map<ExpertId, std::vector<std::uint64_t>> uses_;
};

}  // namespace moesim
