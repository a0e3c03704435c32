// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "moesim/model.hpp"

namespace moesim {

/// Simulated time in integer nanoseconds. All rates are converted up
/// front so event ordering never depends on float rounding.
using SimTime = std::int64_t;

inline constexpr SimTime kNsPerSecond = 1'000'000'000;

/// Abstract memory hierarchy parameters. Latencies are already converted
/// to nanoseconds here; the config layer owns the seconds-based surface.
struct HardwareSpec {
  std::uint64_t expert_size_bytes = 0;
  std::uint64_t link_bandwidth_bytes_per_s = 0;  // each DRAM->GPU link
  std::optional<std::uint64_t> ssd_bandwidth_bytes_per_s;  // SSD->DRAM; absent = tier off
  std::uint64_t chunk_size_bytes = 0;
  std::uint32_t gpu_buffer_slots = 0;
  std::uint32_t n_gpus = 1;
  SimTime expert_compute_ns = 0;  // one expert execution
  SimTime dense_layer_ns = 0;     // resident non-expert work, once per layer

  void validate() const;
  /// Hash placement of experts onto GPUs.
  std::uint32_t gpu_for(const ExpertId& e) const { return e.expert_idx % n_gpus; }
  bool operator==(const HardwareSpec&) const = default;
};

enum class Tier : std::uint8_t { ssd, dram, gpu };

struct Transfer {
  ExpertId expert;
  Tier source = Tier::dram;
  Tier dest = Tier::gpu;
  std::uint32_t dest_gpu = 0;  // meaningful when dest == gpu
  std::uint64_t bytes_total = 0;
  double priority = 0.0;
};

struct TransferCompletion {
  Transfer transfer;
  SimTime completed_at = 0;
  std::uint64_t bytes_charged = 0;
};

enum class CancelOutcome : std::uint8_t { not_found, dequeued, cut_at_chunk };

/// One serialized transfer channel. Exactly one transfer is in flight at
/// any instant; the rest wait in FIFO order. Progress is observable at
/// whole-chunk granularity and cancellation of the in-flight transfer cuts
/// at the next chunk boundary, charging those bytes to the link.
class Link {
 public:
  Link(std::uint64_t bandwidth_bytes_per_s, std::uint64_t chunk_size_bytes);

  /// Time to move `bytes` at link bandwidth, rounded up to whole ns.
  SimTime duration_for(std::uint64_t bytes) const;

  void enqueue(Transfer t, SimTime now);

  /// Completes every transfer that finishes at or before `until`,
  /// timestamped; later transfers start back-to-back.
  std::vector<TransferCompletion> advance(SimTime until);

  /// Requires advance(now) to have been called first.
  CancelOutcome cancel(const ExpertId& expert, SimTime now);

  std::optional<SimTime> next_completion_time() const;
  bool busy() const { return !queue_.empty(); }
  std::size_t queued_count() const { return queue_.empty() ? 0 : queue_.size() - 1; }
  const Transfer* in_flight() const { return queue_.empty() ? nullptr : &queue_.front(); }
  bool holds(const ExpertId& expert) const;

  /// Chunk-floored bytes moved so far for `expert` if it sits on this
  /// link (0 while still queued behind the head).
  std::optional<std::uint64_t> progress_bytes(const ExpertId& expert, SimTime now) const;

  std::uint64_t bytes_charged() const { return bytes_charged_; }

 private:
  std::uint64_t chunk_ceil(std::uint64_t bytes, std::uint64_t total) const;
  std::uint64_t chunk_floor(std::uint64_t bytes) const;
  std::uint64_t raw_bytes_at(SimTime now) const;  // head transfer, uncapped by chunks

  std::uint64_t bandwidth_;
  std::uint64_t chunk_;
  std::deque<Transfer> queue_;  // front = in flight
  SimTime head_start_ = 0;      // when the front transfer began
  SimTime free_at_ = 0;         // link idle boundary after the last completion/cut
  std::uint64_t bytes_charged_ = 0;
};

enum class Residency : std::uint8_t { empty, transferring, resident };

struct ProtectedSlotError : std::runtime_error {
  explicit ProtectedSlotError(const std::string& what) : std::runtime_error(what) {}
};
struct ExecutingExpertError : std::runtime_error {
  explicit ExecutingExpertError(const std::string& what) : std::runtime_error(what) {}
};

struct Slot {
  std::optional<ExpertId> occupant;
  Residency residency = Residency::empty;
  double cache_priority = 0.0;
  bool prefetch_protected = false;  // not-yet-consumed prefetch target
  bool executing = false;
};

/// Fixed number of expert slots with per-slot residency state. Transitions
/// are empty -> transferring -> resident -> empty; cancellation is the one
/// path that returns a transferring slot to empty.
class GpuBuffer {
 public:
  explicit GpuBuffer(std::uint32_t n_slots);

  std::size_t n_slots() const { return slots_.size(); }
  const Slot& slot(std::size_t i) const { return slots_[i]; }
  std::optional<std::size_t> slot_of(const ExpertId& e) const;
  std::optional<std::size_t> find_free() const;
  std::size_t occupied() const { return index_.size(); }

  std::size_t begin_transfer(std::size_t slot, const ExpertId& e, bool protect, double priority);
  void complete_transfer(const ExpertId& e);
  void cancel_transfer(const ExpertId& e);

  /// Frees a resident slot. Protected or executing occupants signal a
  /// policy bug and abort the run.
  void evict(std::size_t slot);

  void set_protected(std::size_t slot, bool value);
  void set_priority(std::size_t slot, double value);
  void set_executing(std::size_t slot, bool value);

 private:
  Slot& occupied_slot(const ExpertId& e, const char* op);

  std::vector<Slot> slots_;
  std::map<ExpertId, std::size_t> index_;
};

struct LookupResult {
  Residency status = Residency::empty;
  double fraction = 0.0;  // bytes_done / expert_size while transferring
};

/// GPU buffers + per-GPU DRAM->GPU links + the optional SSD->DRAM link,
/// owned by one simulation run.
class MemoryHierarchy {
 public:
  explicit MemoryHierarchy(const HardwareSpec& hw);

  const HardwareSpec& hw() const { return hw_; }
  std::uint32_t n_gpus() const { return hw_.n_gpus; }
  GpuBuffer& buffer(std::uint32_t gpu) { return buffers_[gpu]; }
  const GpuBuffer& buffer(std::uint32_t gpu) const { return buffers_[gpu]; }
  Link& gpu_link(std::uint32_t gpu) { return gpu_links_[gpu]; }
  const Link& gpu_link(std::uint32_t gpu) const { return gpu_links_[gpu]; }
  bool ssd_enabled() const { return ssd_link_.has_value(); }
  Link& ssd_link() { return *ssd_link_; }
  const Link& ssd_link() const { return *ssd_link_; }

  /// With the SSD tier off every expert is DRAM-resident from the start.
  bool dram_resident(const ExpertId& e) const;
  void mark_dram_resident(const ExpertId& e);

  LookupResult lookup(std::uint32_t gpu, const ExpertId& e, SimTime now) const;

 private:
  HardwareSpec hw_;
  std::vector<GpuBuffer> buffers_;
  std::vector<Link> gpu_links_;
  std::optional<Link> ssd_link_;
  std::set<ExpertId> dram_;  // used only when the SSD tier is on
};

}  // namespace moesim
