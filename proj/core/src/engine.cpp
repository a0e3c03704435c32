// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/engine.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace moesim {

SimTime SimReport::compute_time_ns() const {
  SimTime s = 0;
  for (SimTime t : per_gpu_compute_ns) s += t;
  return s;
}
SimTime SimReport::blocking_time_ns() const {
  SimTime s = 0;
  for (SimTime t : per_gpu_blocking_ns) s += t;
  return s;
}
SimTime SimReport::idle_time_ns() const {
  SimTime s = 0;
  for (SimTime t : per_gpu_idle_ns) s += t;
  return s;
}
std::uint64_t SimReport::bytes_dram_gpu() const {
  std::uint64_t s = 0;
  for (std::uint64_t b : bytes_per_gpu_link) s += b;
  return s;
}
double SimReport::hit_rate() const {
  return activations == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(activations);
}
double SimReport::prefill_hit_rate() const {
  return prefill_activations == 0
             ? 0.0
             : static_cast<double>(prefill_hits) / static_cast<double>(prefill_activations);
}
double SimReport::decode_hit_rate() const {
  return decode_activations == 0
             ? 0.0
             : static_cast<double>(decode_hits) / static_cast<double>(decode_activations);
}
SimTime SimReport::decode_tpot_mean_ns() const {
  if (decode_tpot_ns.empty()) return 0;
  SimTime s = 0;
  for (SimTime t : decode_tpot_ns) s += t;
  return s / static_cast<SimTime>(decode_tpot_ns.size());
}
SimTime SimReport::decode_tpot_max_ns() const {
  SimTime m = 0;
  for (SimTime t : decode_tpot_ns) m = std::max(m, t);
  return m;
}

struct EventLog::Impl {
  std::ofstream out;
};

EventLog::EventLog(const std::filesystem::path& path) : impl_(new Impl) {
  impl_->out.open(path);
  if (!impl_->out) {
    delete impl_;
    throw std::runtime_error("cannot open event log: " + path.string());
  }
}

EventLog::~EventLog() { delete impl_; }

namespace {

void append_json_escaped(std::string& out, const std::string& value) {
  for (const char c : value) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
}

}  // namespace

void EventLog::emit(SimTime t, const std::string& kind,
                    std::initializer_list<std::pair<const char*, std::string>> fields) {
  std::string line = "{\"t\":" + std::to_string(t) + ",\"event\":\"" + kind + '"';
  for (const auto& [key, value] : fields) {
    line += ",\"";
    line += key;
    line += "\":\"";
    append_json_escaped(line, value);
    line += '"';
  }
  line += "}\n";
  impl_->out << line;
}

namespace {

std::string id_str(const ExpertId& e) {
  return std::to_string(e.layer_idx) + ":" + std::to_string(e.expert_idx);
}

// Cell-wise addition across phases; the cache accumulator spans the whole
// request while Eam::accumulate is deliberately phase-checked.
void add_counts(Eam& dst, const Eam& src) {
  const ModelShape& s = dst.shape();
  for (std::uint32_t l = 0; l < s.n_layers; ++l) {
    for (std::uint32_t e = 0; e < s.n_experts_per_layer; ++e) {
      const std::uint64_t c = src.at(l, e);
      if (c != 0) dst.set(l, e, dst.at(l, e) + c);
    }
  }
}

bool policy_cancels(PolicyKind kind) {
  return kind == PolicyKind::activation_aware || kind == PolicyKind::model_tracing;
}

bool policy_prefetches(PolicyKind kind) {
  return kind == PolicyKind::activation_aware || kind == PolicyKind::dependency ||
         kind == PolicyKind::model_tracing;
}

struct Activation {
  ExpertId expert;
  std::uint64_t tokens = 0;
  std::uint64_t position = 0;
};

// Execution (and on-demand fetch) order within a layer: token count
// descending, ExpertId ascending on ties.
std::vector<Activation> layer_activations(const RoutingEvent& ev) {
  std::vector<Activation> acts;
  acts.reserve(ev.assignments.size());
  for (const ExpertAssignment& a : ev.assignments) {
    acts.push_back({ExpertId{ev.layer_idx, a.expert_idx}, a.token_count, 0});
  }
  std::sort(acts.begin(), acts.end(), [](const Activation& a, const Activation& b) {
    if (a.tokens != b.tokens) return a.tokens > b.tokens;
    return a.expert < b.expert;
  });
  return acts;
}

class Engine {
 public:
  Engine(const ModelShape& shape, const HardwareSpec& hw, PolicyKind kind,
         const EamcConfig& eamc, EventLog* log)
      : shape_(shape),
        hw_(hw),
        kind_(kind),
        log_(log),
        mem_(hw),
        eamc_prefill_(load_or_make(eamc, Phase::prefill, shape)),
        eamc_decode_(load_or_make(eamc, Phase::decode, shape)),
        eamc_cfg_(eamc),
        lifetime_counts_(shape.total_experts(), 0),
        request_cache_eam_(shape, EamKind::request, Phase::prefill),
        cur_iter_eam_(shape, EamKind::iteration, Phase::prefill) {
    shape_.validate();
    cursor_.assign(hw_.n_gpus, 0);
    report_.per_gpu_compute_ns.assign(hw_.n_gpus, 0);
    report_.per_gpu_blocking_ns.assign(hw_.n_gpus, 0);
    report_.per_gpu_idle_ns.assign(hw_.n_gpus, 0);
    report_.bytes_per_gpu_link.assign(hw_.n_gpus, 0);
    report_.policy = kind;
    report_.eamc_capacity = eamc.capacity;
  }

  SimReport run(std::span<const RequestTrace> traces) {
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const ValidationResult v = validate_trace(traces[i], shape_);
      if (!v.ok()) {
        throw TraceValidationError("trace " + std::to_string(i) + " (" + traces[i].request_id +
                                   ") invalid: " + v.detail);
      }
    }
    if (kind_ == PolicyKind::ideal) build_future_index(traces);

    report_.n_requests = traces.size();
    for (const RequestTrace& trace : traces) replay_request(trace);

    barrier();  // settle the final timeline
    report_.total_time_ns = cursor_.empty() ? 0 : cursor_[0];
    for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
      report_.bytes_per_gpu_link[g] = mem_.gpu_link(g).bytes_charged();
    }
    if (mem_.ssd_enabled()) report_.bytes_ssd_link = mem_.ssd_link().bytes_charged();

    if (eamc_cfg_.prefill_out) eamc_prefill_.save(*eamc_cfg_.prefill_out);
    if (eamc_cfg_.decode_out) eamc_decode_.save(*eamc_cfg_.decode_out);
    return report_;
  }

 private:
  static Eamc load_or_make(const EamcConfig& cfg, Phase phase, const ModelShape& shape) {
    const auto& in = phase == Phase::prefill ? cfg.prefill_in : cfg.decode_in;
    if (in) return Eamc::load(*in, shape);
    return Eamc(shape, phase, cfg.capacity);
  }

  void build_future_index(std::span<const RequestTrace> traces) {
    std::uint64_t pos = 0;
    for (const RequestTrace& trace : traces) {
      for (const IterationTrace& iter : trace.iterations) {
        for (const RoutingEvent& ev : iter) {
          for (const Activation& a : layer_activations(ev)) future_.add_use(a.expert, pos++);
        }
      }
    }
  }

  // ---- timeline -------------------------------------------------------

  void barrier() {
    SimTime t = 0;
    for (SimTime c : cursor_) t = std::max(t, c);
    for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
      report_.per_gpu_idle_ns[g] += t - cursor_[g];
      cursor_[g] = t;
    }
    advance_to(t);
  }

  std::optional<SimTime> earliest_completion() const {
    std::optional<SimTime> best;
    for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
      const auto t = mem_.gpu_link(g).next_completion_time();
      if (t && (!best || *t < *best)) best = t;
    }
    if (mem_.ssd_enabled()) {
      const auto t = mem_.ssd_link().next_completion_time();
      if (t && (!best || *t < *best)) best = t;
    }
    return best;
  }

  /// Processes transfer completions chronologically up to `t`, starting
  /// newly runnable transfers at the moment they become possible.
  void advance_to(SimTime t) {
    for (;;) {
      const auto next = earliest_completion();
      if (next && *next <= t) {
        drain_completions_at(*next);
        try_start_all(*next);
        continue;
      }
      if (try_start_all(t)) continue;
      break;
    }
  }

  void drain_completions_at(SimTime t) {
    for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
      for (const TransferCompletion& c : mem_.gpu_link(g).advance(t)) commit_completion(c);
    }
    if (mem_.ssd_enabled()) {
      for (const TransferCompletion& c : mem_.ssd_link().advance(t)) commit_completion(c);
    }
  }

  void commit_completion(const TransferCompletion& c) {
    if (c.transfer.dest == Tier::gpu) {
      mem_.buffer(c.transfer.dest_gpu).complete_transfer(c.transfer.expert);
      if (log_)
        log_->emit(c.completed_at, "transfer_complete",
                   {{"expert", id_str(c.transfer.expert)},
                    {"gpu", std::to_string(c.transfer.dest_gpu)}});
    } else {
      // SSD -> DRAM leg done; the DRAM copy stays and the expert is
      // re-enqueued for its DRAM -> GPU hop unless a fresher submission
      // already covers it.
      mem_.mark_dram_resident(c.transfer.expert);
      const auto it = awaiting_dram_.find(c.transfer.expert);
      if (it != awaiting_dram_.end()) {
        if (!queue_.contains(c.transfer.expert)) queue_.submit(c.transfer.expert, it->second);
        awaiting_dram_.erase(it);
      }
      if (log_)
        log_->emit(c.completed_at, "ssd_stage_complete", {{"expert", id_str(c.transfer.expert)}});
    }
  }

  bool try_start_all(SimTime now) {
    bool any = false;
    for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
      while (try_start_for_gpu(g, now)) any = true;
    }
    return any;
  }

  /// Picks the highest-priority startable candidate headed for GPU `g`
  /// and begins its transfer (or its SSD staging leg). One call starts at
  /// most one transfer.
  bool try_start_for_gpu(std::uint32_t g, SimTime now) {
  restart:
    const bool gpu_link_free = !mem_.gpu_link(g).busy();
    if (!gpu_link_free && !mem_.ssd_enabled()) {
      // A busy link only matters to on-demand fetches, which may preempt
      // the transfer in flight; anything else has to wait regardless.
      const auto top = queue_.peek();
      if (!top || top->priority != kMaxPriority) return false;
    }
    for (const PrefetchCandidate& c : queue_) {
      if (hw_.gpu_for(c.expert) != g) continue;
      if (mem_.buffer(g).slot_of(c.expert)) {
        // Already resident or in flight; the request is satisfied.
        queue_.cancel(c.expert);
        goto restart;
      }
      if (awaiting_dram_.contains(c.expert)) continue;  // SSD leg under way
      if (!mem_.dram_resident(c.expert)) {
        if (!mem_.ssd_enabled())
          throw std::logic_error("expert missing from DRAM with the SSD tier off");
        if (mem_.ssd_link().busy()) {
          if (preempt_for_on_demand(mem_.ssd_link(), c, now)) goto restart;
          continue;
        }
        Transfer t{c.expert, Tier::ssd, Tier::dram, 0, hw_.expert_size_bytes, c.priority};
        awaiting_dram_.emplace(c.expert, c.priority);
        mem_.ssd_link().enqueue(t, now);
        queue_.cancel(c.expert);
        if (log_) log_->emit(now, "ssd_stage_start", {{"expert", id_str(c.expert)}});
        return true;
      }
      if (!gpu_link_free) {
        if (preempt_for_on_demand(mem_.gpu_link(g), c, now)) goto restart;
        continue;
      }
      const auto slot = acquire_slot(g, c, now);
      if (!slot) {
        if (c.priority == kMaxPriority) continue;
        // Lower-priority candidates cannot beat the same victims.
        break;
      }
      mem_.buffer(g).begin_transfer(*slot, c.expert, /*protect=*/true, kMaxPriority);
      Transfer t{c.expert, Tier::dram, Tier::gpu, g, hw_.expert_size_bytes, c.priority};
      mem_.gpu_link(g).enqueue(t, now);
      if (c.priority != kMaxPriority) ++report_.prefetch_candidates_issued;
      if (log_)
        log_->emit(now, "transfer_start",
                   {{"expert", id_str(c.expert)}, {"gpu", std::to_string(g)}});
      queue_.cancel(c.expert);
      return true;
    }
    return false;
  }

  // ---- slot management ------------------------------------------------

  std::vector<SlotView> victim_views(std::uint32_t g) const {
    std::vector<SlotView> views;
    const GpuBuffer& buf = mem_.buffer(g);
    for (std::size_t i = 0; i < buf.n_slots(); ++i) {
      const Slot& s = buf.slot(i);
      if (s.residency != Residency::resident) continue;  // never evict mid-transfer
      views.push_back({i, *s.occupant, s.prefetch_protected,
                       s.executing || pending_exec_.contains(*s.occupant)});
    }
    return views;
  }

  std::optional<std::size_t> pick_victim(std::uint32_t g) const {
    const std::vector<SlotView> views = victim_views(g);
    if (eviction_rule_for(kind_) == EvictionRule::cache_priority) {
      return select_eviction_victim(views, request_cache_eam_);
    }
    std::optional<std::size_t> victim;
    // Smaller key evicts first; Belady negates so the farthest next use
    // wins. "Never used again" sorts ahead of everything.
    long double victim_key = 0;
    ExpertId victim_id;
    for (const SlotView& v : views) {
      if (v.prefetch_protected || v.pinned) continue;
      long double key = 0;
      switch (eviction_rule_for(kind_)) {
        case EvictionRule::recency: {
          const auto it = last_use_.find(v.occupant);
          key = it == last_use_.end() ? -1.0L : static_cast<long double>(it->second);
          break;
        }
        case EvictionRule::frequency: {
          const auto it = use_count_.find(v.occupant);
          key = it == use_count_.end() ? 0.0L : static_cast<long double>(it->second);
          break;
        }
        case EvictionRule::model_counts:
          key = static_cast<long double>(lifetime_counts_[v.occupant.flat(shape_)]);
          break;
        case EvictionRule::belady: {
          const auto next = future_.next_use_after(v.occupant, current_pos_);
          key = next ? -static_cast<long double>(*next)
                     : -static_cast<long double>(std::numeric_limits<std::uint64_t>::max());
          break;
        }
        case EvictionRule::cache_priority: break;  // handled above
      }
      if (!victim || key < victim_key || (key == victim_key && v.occupant < victim_id)) {
        victim = v.slot;
        victim_key = key;
        victim_id = v.occupant;
      }
    }
    return victim;
  }

  void evict_slot(std::uint32_t g, std::size_t slot, SimTime now) {
    const Slot& s = mem_.buffer(g).slot(slot);
    if (log_)
      log_->emit(now, "evict",
                 {{"expert", id_str(*s.occupant)},
                  {"gpu", std::to_string(g)},
                  {"priority", std::to_string(s.cache_priority)}});
    mem_.buffer(g).evict(slot);
  }

  std::optional<std::size_t> acquire_slot(std::uint32_t g, const PrefetchCandidate& c,
                                          SimTime now) {
    GpuBuffer& buf = mem_.buffer(g);
    if (const auto free = buf.find_free()) return free;

    const auto victim = pick_victim(g);
    if (victim) {
      // Buffer-slot contention: a speculative prefetch only displaces a
      // cached expert it outranks on the policy's own priority scale.
      // On-demand fetches always win; dependency prefetching replaces
      // unconditionally, which is exactly what makes it churn.
      if (c.priority != kMaxPriority) {
        const ExpertId victim_expert = *buf.slot(*victim).occupant;
        if (kind_ == PolicyKind::activation_aware) {
          const double victim_p = cache_priority(request_cache_eam_, victim_expert);
          if (victim_p >= c.priority) return std::nullopt;
        } else if (kind_ == PolicyKind::model_tracing) {
          if (lifetime_counts_[victim_expert.flat(shape_)] >=
              lifetime_counts_[c.expert.flat(shape_)])
            return std::nullopt;
        }
      }
      evict_slot(g, *victim, now);
      return victim;
    }
    if (c.priority != kMaxPriority) return std::nullopt;
    return force_slot_for_on_demand(g, now);
  }

  /// Every slot is protected or pinned but the routed expert must land
  /// now: displace the least valuable protected prefetch (its slot is no
  /// longer among the top-K worth keeping), then fall back to unexecuted
  /// same-layer residents.
  std::optional<std::size_t> force_slot_for_on_demand(std::uint32_t g, SimTime now) {
    GpuBuffer& buf = mem_.buffer(g);
    std::optional<std::size_t> chosen;
    double chosen_p = 0.0;
    bool chosen_transferring = false;
    for (std::size_t i = 0; i < buf.n_slots(); ++i) {
      const Slot& s = buf.slot(i);
      if (!s.occupant || s.executing) continue;
      if (pending_exec_.contains(*s.occupant)) continue;
      if (!s.prefetch_protected) continue;
      const double p = cache_priority(request_cache_eam_, *s.occupant);
      if (!chosen || p < chosen_p) {
        chosen = i;
        chosen_p = p;
        chosen_transferring = s.residency == Residency::transferring;
      }
    }
    if (chosen) {
      const ExpertId displaced = *buf.slot(*chosen).occupant;
      if (chosen_transferring) {
        cancel_transfer_everywhere(displaced, g, now);
      } else {
        priority_reset_on_event(buf, displaced, ResetEvent::displaced_from_topk,
                                request_cache_eam_);
        evict_slot(g, *chosen, now);
      }
      return chosen;
    }
    // Last resort: evict a not-yet-executed expert of the current layer;
    // it will be refetched on demand at its own turn.
    for (std::size_t i = 0; i < buf.n_slots(); ++i) {
      const Slot& s = buf.slot(i);
      if (!s.occupant || s.executing || s.residency != Residency::resident) continue;
      if (!pending_exec_.contains(*s.occupant)) continue;
      priority_reset_on_event(buf, *s.occupant, ResetEvent::displaced_from_topk,
                              request_cache_eam_);
      evict_slot(g, i, now);
      return i;
    }
    throw std::logic_error("on-demand fetch cannot obtain a buffer slot");
  }

  /// An on-demand fetch interrupts an in-flight speculative prefetch at
  /// the next chunk boundary instead of waiting out the whole transfer;
  /// the preempted expert goes back into the queue at its old priority.
  bool preempt_for_on_demand(Link& link, const PrefetchCandidate& c, SimTime now) {
    if (c.priority != kMaxPriority) return false;
    const Transfer* in_flight = link.in_flight();
    if (!in_flight || in_flight->priority == kMaxPriority) return false;
    const Transfer preempted = *in_flight;
    link.cancel(preempted.expert, now);
    ++report_.prefetch_cancellations;
    if (preempted.dest == Tier::gpu) {
      mem_.buffer(preempted.dest_gpu).cancel_transfer(preempted.expert);
    } else {
      awaiting_dram_.erase(preempted.expert);
    }
    if (!queue_.contains(preempted.expert)) queue_.submit(preempted.expert, preempted.priority);
    if (log_)
      log_->emit(now, "transfer_preempt", {{"expert", id_str(preempted.expert)}});
    return true;
  }

  void cancel_transfer_everywhere(const ExpertId& e, std::uint32_t g, SimTime now) {
    const CancelOutcome out = mem_.gpu_link(g).cancel(e, now);
    if (out != CancelOutcome::not_found) {
      mem_.buffer(g).cancel_transfer(e);
      ++report_.prefetch_cancellations;
      if (log_)
        log_->emit(now, "transfer_cancel",
                   {{"expert", id_str(e)}, {"gpu", std::to_string(g)}});
    }
  }

  // ---- replay ----------------------------------------------------------

  void replay_request(const RequestTrace& trace) {
    request_cache_eam_.reset();
    Eam prefill_accum(shape_, EamKind::request, Phase::prefill);
    Eam decode_accum(shape_, EamKind::request, Phase::decode);
    bool any_decode = false;

    for (std::size_t it = 0; it < trace.iterations.size(); ++it) {
      const Phase phase = it == 0 ? Phase::prefill : Phase::decode;
      cur_iter_eam_ = Eam(shape_, EamKind::iteration, phase);
      barrier();
      const SimTime iter_start = cursor_[0];

      for (std::uint32_t l = 0; l < shape_.n_layers; ++l) {
        replay_layer(trace.iterations[it][l], phase);
      }

      barrier();
      const SimTime iter_end = cursor_[0];
      if (phase == Phase::decode) {
        report_.decode_tpot_ns.push_back(iter_end - iter_start);
        decode_accum.accumulate(cur_iter_eam_);
        any_decode = true;
      } else {
        prefill_accum.accumulate(cur_iter_eam_);
      }
      add_counts(request_cache_eam_, cur_iter_eam_);
      if (log_)
        log_->emit(iter_end, "iteration_end",
                   {{"request", trace.request_id}, {"iteration", std::to_string(it)}});
    }

    if (kind_ == PolicyKind::activation_aware) {
      eamc_prefill_.insert(std::move(prefill_accum));
      if (any_decode) eamc_decode_.insert(std::move(decode_accum));
    }
  }

  void replay_layer(const RoutingEvent& ev, Phase phase) {
    barrier();
    // Dense (attention + router) work, in parallel on every GPU.
    for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
      cursor_[g] += hw_.dense_layer_ns;
      report_.per_gpu_compute_ns[g] += hw_.dense_layer_ns;
    }
    const SimTime dispatch = cursor_[0];

    std::vector<Activation> acts = layer_activations(ev);
    for (Activation& a : acts) a.position = next_pos_++;

    cur_iter_eam_.record(ev);
    routed_now_.clear();
    pending_exec_.clear();
    for (const Activation& a : acts) {
      routed_now_.insert(a.expert);
      pending_exec_.insert(a.expert);
      lifetime_counts_[a.expert.flat(shape_)] += 1;
    }

    sample_hits(acts, phase, dispatch);
    resolve_unrouted_prefetches(ev.layer_idx, dispatch);
    recompute_prefetch(ev.layer_idx, phase, dispatch);
    advance_to(dispatch);
    execute_layer(acts, phase);
    pending_exec_.clear();
  }

  void sample_hits(const std::vector<Activation>& acts, Phase phase, SimTime dispatch) {
    for (const Activation& a : acts) {
      const std::uint32_t g = hw_.gpu_for(a.expert);
      const LookupResult r = mem_.lookup(g, a.expert, dispatch);
      const bool hit = r.status == Residency::resident;
      ++report_.activations;
      report_.hits += hit;
      if (phase == Phase::prefill) {
        ++report_.prefill_activations;
        report_.prefill_hits += hit;
      } else {
        ++report_.decode_activations;
        report_.decode_hits += hit;
      }
      if (log_)
        log_->emit(dispatch, hit ? "hit" : "miss", {{"expert", id_str(a.expert)}});
    }
  }

  /// Priority-update scenario (ii): prefetched experts of this layer that
  /// the router skipped lose protection; cancelling policies also cut
  /// their in-flight transfers at the next chunk boundary.
  void resolve_unrouted_prefetches(std::uint32_t layer, SimTime now) {
    for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
      GpuBuffer& buf = mem_.buffer(g);
      std::vector<ExpertId> unused;
      for (std::size_t i = 0; i < buf.n_slots(); ++i) {
        const Slot& s = buf.slot(i);
        if (!s.occupant || !s.prefetch_protected) continue;
        if (s.occupant->layer_idx != layer) continue;
        if (routed_now_.contains(*s.occupant)) continue;
        unused.push_back(*s.occupant);
      }
      for (const ExpertId& e : unused) {
        const Slot& s = buf.slot(*buf.slot_of(e));
        if (s.residency == Residency::transferring) {
          if (policy_cancels(kind_)) {
            cancel_transfer_everywhere(e, g, now);
          } else {
            buf.set_protected(*buf.slot_of(e), false);
            buf.set_priority(*buf.slot_of(e), cache_priority(request_cache_eam_, e));
          }
        } else {
          priority_reset_on_event(buf, e, ResetEvent::determined_unused, request_cache_eam_);
        }
      }
    }
  }

  void recompute_prefetch(std::uint32_t layer, Phase phase, SimTime now) {
    if (!policy_prefetches(kind_)) return;

    std::vector<PrefetchCandidate> candidates;
    if (kind_ == PolicyKind::activation_aware) {
      report_.prefetch_cancellations += queue_.cancel_all();
      const Eamc& eamc = phase == Phase::prefill ? eamc_prefill_ : eamc_decode_;
      candidates = prefetch_priorities(cur_iter_eam_, eamc, layer);
      // Spending bandwidth on zero-evidence experts only churns the
      // buffer; keep the floor entries out of the fetch queue.
      std::erase_if(candidates, [this, layer](const PrefetchCandidate& c) {
        const double proximity = 1.0 -
                                 static_cast<double>(c.expert.layer_idx - layer) /
                                     static_cast<double>(shape_.n_layers);
        return c.priority <= kEpsilon * proximity * (1.0 + 1e-9);
      });
    } else {
      BaselineContext ctx;
      ctx.shape = shape_;
      ctx.current_layer = layer;
      ctx.lifetime_counts = lifetime_counts_;
      if (kind_ == PolicyKind::model_tracing)
        report_.prefetch_cancellations += queue_.cancel_all();
      candidates = baseline_plan(kind_, ctx).candidates;
    }
    for (const PrefetchCandidate& c : candidates) queue_.submit(c.expert, c.priority);
    advance_to(now);
  }

  void execute_layer(const std::vector<Activation>& acts, Phase phase) {
    for (const Activation& a : acts) {
      const std::uint32_t g = hw_.gpu_for(a.expert);
      current_pos_ = a.position;
      SimTime cursor = cursor_[g];
      advance_to(cursor);

      GpuBuffer& buf = mem_.buffer(g);
      auto slot = buf.slot_of(a.expert);
      const bool resident = slot && buf.slot(*slot).residency == Residency::resident;
      if (!resident) {
        // On-demand: jump the whole prefetch queue and stall until ready.
        queue_.submit(a.expert, kMaxPriority);
        advance_to(cursor);
        const SimTime ready = wait_until_resident(g, a.expert, cursor);
        const SimTime blocked = ready - cursor;
        report_.per_gpu_blocking_ns[g] += blocked;
        if (phase == Phase::prefill) {
          report_.prefill_blocking_ns += blocked;
        } else {
          report_.decode_blocking_ns += blocked;
        }
        if (log_ && blocked > 0)
          log_->emit(ready, "wait_end",
                     {{"expert", id_str(a.expert)}, {"blocked_ns", std::to_string(blocked)}});
        cursor = ready;
        slot = buf.slot_of(a.expert);
      }

      buf.set_executing(*slot, true);
      cursor += hw_.expert_compute_ns;
      report_.per_gpu_compute_ns[g] += hw_.expert_compute_ns;
      cursor_[g] = cursor;
      buf.set_executing(*slot, false);

      pending_exec_.erase(a.expert);
      priority_reset_on_event(buf, a.expert, ResetEvent::executed, request_cache_eam_);
      last_use_[a.expert] = a.position;
      use_count_[a.expert] += 1;
      advance_to(cursor);
    }
  }

  SimTime wait_until_resident(std::uint32_t g, const ExpertId& e, SimTime from) {
    SimTime t = from;
    advance_to(t);
    for (;;) {
      const auto slot = mem_.buffer(g).slot_of(e);
      if (slot && mem_.buffer(g).slot(*slot).residency == Residency::resident) return t;
      const auto next = earliest_completion();
      if (!next) {
        throw std::logic_error("stalled waiting for expert " + id_str(e) +
                               " with no transfer pending");
      }
      advance_to(*next);
      t = std::max(t, *next);
    }
  }

  // ---- members ---------------------------------------------------------

  ModelShape shape_;
  HardwareSpec hw_;
  PolicyKind kind_;
  EventLog* log_;

  MemoryHierarchy mem_;
  TransferQueue queue_;
  Eamc eamc_prefill_;
  Eamc eamc_decode_;
  EamcConfig eamc_cfg_;

  std::vector<std::uint64_t> lifetime_counts_;
  std::map<ExpertId, std::uint64_t> last_use_;
  std::map<ExpertId, std::uint64_t> use_count_;
  FutureUseIndex future_;
  std::uint64_t next_pos_ = 0;
  std::uint64_t current_pos_ = 0;

  Eam request_cache_eam_;
  Eam cur_iter_eam_;
  std::set<ExpertId> routed_now_;
  std::set<ExpertId> pending_exec_;
  std::map<ExpertId, double> awaiting_dram_;

  std::vector<SimTime> cursor_;
  SimReport report_;
};

}  // namespace

SimReport run(std::span<const RequestTrace> traces, const ModelShape& shape,
              const HardwareSpec& hw, PolicyKind policy, const EamcConfig& eamc,
              EventLog* log) {
  Engine engine(shape, hw, policy, eamc, log);
  return engine.run(traces);
}

std::vector<MatrixResult> run_matrix(std::span<const MatrixCell> cells,
                                     const ModelShape& shape, const TraceSource& traces,
                                     const EamcConfig& eamc_base) {
  std::vector<MatrixResult> results;
  results.reserve(cells.size());
  std::map<std::uint64_t, std::vector<RequestTrace>> corpus_by_seed;
  for (const MatrixCell& cell : cells) {
    MatrixResult r;
    r.cell = cell;
    try {
      auto it = corpus_by_seed.find(cell.seed);
      if (it == corpus_by_seed.end()) {
        it = corpus_by_seed.emplace(cell.seed, traces(cell.seed)).first;
      }
      EamcConfig cfg = eamc_base;
      cfg.capacity = cell.eamc_capacity;
      SimReport report = run(it->second, shape, cell.hardware, cell.policy, cfg);
      report.seed = cell.seed;
      r.report = std::move(report);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace moesim
