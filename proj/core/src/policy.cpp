// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/policy.hpp"

#include <algorithm>
#include <array>

#include "moesim/memsim.hpp"

namespace moesim {

namespace {
constexpr std::array<PolicyKind, 7> kAllPolicies = {
    PolicyKind::activation_aware, PolicyKind::dependency, PolicyKind::model_tracing,
    PolicyKind::on_demand,        PolicyKind::lru,        PolicyKind::lfu,
    PolicyKind::ideal,
};
}

const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::activation_aware: return "activation_aware";
    case PolicyKind::dependency: return "dependency";
    case PolicyKind::model_tracing: return "model_tracing";
    case PolicyKind::on_demand: return "on_demand";
    case PolicyKind::lru: return "lru";
    case PolicyKind::lfu: return "lfu";
    case PolicyKind::ideal: return "ideal";
  }
  return "unknown";
}

std::optional<PolicyKind> parse_policy(const std::string& name) {
  for (PolicyKind k : kAllPolicies) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

std::span<const PolicyKind> all_policies() { return kAllPolicies; }

void TransferQueue::submit(const ExpertId& expert, double priority) {
  const auto it = by_expert_.find(expert);
  if (it != by_expert_.end()) {
    ordered_.erase({expert, it->second});
    it->second = priority;
  } else {
    by_expert_.emplace(expert, priority);
  }
  ordered_.insert({expert, priority});
}

bool TransferQueue::cancel(const ExpertId& expert) {
  const auto it = by_expert_.find(expert);
  if (it == by_expert_.end()) return false;
  ordered_.erase({expert, it->second});
  by_expert_.erase(it);
  return true;
}

std::size_t TransferQueue::cancel_all() {
  const std::size_t n = by_expert_.size();
  ordered_.clear();
  by_expert_.clear();
  return n;
}

std::optional<PrefetchCandidate> TransferQueue::pop() {
  if (ordered_.empty()) return std::nullopt;
  const PrefetchCandidate top = *ordered_.begin();
  ordered_.erase(ordered_.begin());
  by_expert_.erase(top.expert);
  return top;
}

std::optional<PrefetchCandidate> TransferQueue::peek() const {
  if (ordered_.empty()) return std::nullopt;
  return *ordered_.begin();
}

std::optional<double> TransferQueue::priority_of(const ExpertId& expert) const {
  const auto it = by_expert_.find(expert);
  if (it == by_expert_.end()) return std::nullopt;
  return it->second;
}

std::vector<PrefetchCandidate> prefetch_priorities(const Eam& cur_eam, const Eamc& eamc,
                                                   std::uint32_t current_layer) {
  const ModelShape& shape = cur_eam.shape();
  if (current_layer >= shape.n_layers)
    throw std::out_of_range("prefetch_priorities: current_layer out of range");
  if (eamc.empty()) return {};

  const std::vector<EamcMatch> matches = eamc.match_within(cur_eam, kMatchWindow);

  // Aggregate the matched EAMs cell-wise.
  const std::uint32_t experts = shape.n_experts_per_layer;
  std::vector<std::uint64_t> agg(shape.total_experts(), 0);
  for (const EamcMatch& m : matches) {
    const Eam& entry = eamc.entry(m.index);
    std::span<const std::uint64_t> counts = entry.counts();
    for (std::size_t i = 0; i < agg.size(); ++i) agg[i] += counts[i];
  }

  std::vector<PrefetchCandidate> out;
  out.reserve(std::size_t{shape.n_layers - current_layer - 1} * experts);
  for (std::uint32_t i = current_layer + 1; i < shape.n_layers; ++i) {
    std::uint64_t row_sum = 0;
    const std::size_t base = std::size_t{i} * experts;
    for (std::uint32_t j = 0; j < experts; ++j) row_sum += agg[base + j];
    const double proximity =
        1.0 - static_cast<double>(i - current_layer) / static_cast<double>(shape.n_layers);
    for (std::uint32_t j = 0; j < experts; ++j) {
      const double ratio =
          row_sum == 0 ? 0.0
                       : static_cast<double>(agg[base + j]) / static_cast<double>(row_sum);
      out.push_back({ExpertId{i, j}, (ratio + kEpsilon) * proximity});
    }
  }
  std::sort(out.begin(), out.end(), [](const PrefetchCandidate& a, const PrefetchCandidate& b) {
    if (a.priority != b.priority) return a.priority > b.priority;
    return a.expert < b.expert;
  });
  return out;
}

double cache_priority(const Eam& request_eam, const ExpertId& expert) {
  const ModelShape& shape = request_eam.shape();
  if (expert.layer_idx >= shape.n_layers || expert.expert_idx >= shape.n_experts_per_layer)
    throw std::out_of_range("cache_priority: expert out of range");
  const std::uint64_t row_sum = request_eam.row_sum(expert.layer_idx);
  const double ratio =
      row_sum == 0
          ? 0.0
          : static_cast<double>(request_eam.at(expert.layer_idx, expert.expert_idx)) /
                static_cast<double>(row_sum);
  const double layer_weight =
      1.0 - static_cast<double>(expert.layer_idx) / static_cast<double>(shape.n_layers);
  return (ratio + kEpsilon) * layer_weight;
}

std::optional<std::size_t> select_eviction_victim(std::span<const SlotView> slots,
                                                  const Eam& request_eam) {
  std::optional<std::size_t> victim;
  double victim_priority = 0.0;
  ExpertId victim_id;
  for (const SlotView& s : slots) {
    if (s.prefetch_protected || s.pinned) continue;
    const double p = cache_priority(request_eam, s.occupant);
    if (!victim || p < victim_priority ||
        (p == victim_priority && s.occupant < victim_id)) {
      victim = s.slot;
      victim_priority = p;
      victim_id = s.occupant;
    }
  }
  return victim;
}

void priority_reset_on_event(GpuBuffer& buffer, const ExpertId& expert, ResetEvent /*event*/,
                             const Eam& request_eam) {
  const auto slot = buffer.slot_of(expert);
  if (!slot) throw std::logic_error("priority_reset_on_event: expert not in buffer");
  buffer.set_protected(*slot, false);
  buffer.set_priority(*slot, cache_priority(request_eam, expert));
}

EvictionRule eviction_rule_for(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::activation_aware: return EvictionRule::cache_priority;
    case PolicyKind::model_tracing: return EvictionRule::model_counts;
    case PolicyKind::lfu: return EvictionRule::frequency;
    case PolicyKind::ideal: return EvictionRule::belady;
    case PolicyKind::dependency:
    case PolicyKind::on_demand:
    case PolicyKind::lru: return EvictionRule::recency;
  }
  return EvictionRule::recency;
}

BaselinePlan baseline_plan(PolicyKind kind, const BaselineContext& ctx) {
  BaselinePlan plan;
  plan.eviction = eviction_rule_for(kind);
  const std::uint32_t next = ctx.current_layer + 1;
  if (next >= ctx.shape.n_layers) return plan;
  const std::uint32_t experts = ctx.shape.n_experts_per_layer;

  switch (kind) {
    case PolicyKind::dependency: {
      // Every next-layer expert is a dependency of the current one.
      plan.candidates.reserve(experts);
      for (std::uint32_t j = 0; j < experts; ++j) {
        plan.candidates.push_back({ExpertId{next, j}, 0.5});
      }
      break;
    }
    case PolicyKind::model_tracing: {
      // Next-layer experts ranked by lifetime usage counts.
      std::uint64_t total = 0;
      const std::size_t base = std::size_t{next} * experts;
      for (std::uint32_t j = 0; j < experts; ++j) total += ctx.lifetime_counts[base + j];
      plan.candidates.reserve(experts);
      for (std::uint32_t j = 0; j < experts; ++j) {
        const double pri = static_cast<double>(ctx.lifetime_counts[base + j] + 1) /
                           static_cast<double>(total + experts);
        plan.candidates.push_back({ExpertId{next, j}, pri});
      }
      std::sort(plan.candidates.begin(), plan.candidates.end(),
                [](const PrefetchCandidate& a, const PrefetchCandidate& b) {
                  if (a.priority != b.priority) return a.priority > b.priority;
                  return a.expert < b.expert;
                });
      break;
    }
    case PolicyKind::on_demand:
    case PolicyKind::lru:
    case PolicyKind::lfu:
    case PolicyKind::ideal:
      // No speculative prefetching; routed experts are fetched at
      // MAX_PRIORITY when dispatch reveals them.
      break;
    case PolicyKind::activation_aware:
      throw std::invalid_argument("baseline_plan: activation_aware uses prefetch_priorities");
  }
  return plan;
}

void FutureUseIndex::add_use(const ExpertId& expert, std::uint64_t position) {
  uses_[expert].push_back(position);
}

std::optional<std::uint64_t> FutureUseIndex::next_use_after(const ExpertId& expert,
                                                            std::uint64_t position) const {
  const auto it = uses_.find(expert);
  if (it == uses_.end()) return std::nullopt;
  const std::vector<std::uint64_t>& v = it->second;
  const auto pos = std::upper_bound(v.begin(), v.end(), position);
  if (pos == v.end()) return std::nullopt;
  return *pos;
}

}  // namespace moesim
