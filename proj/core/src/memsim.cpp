// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/memsim.hpp"

#include <algorithm>

namespace moesim {

void HardwareSpec::validate() const {
  if (expert_size_bytes == 0) throw std::invalid_argument("HardwareSpec: expert_size_bytes must be > 0");
  if (link_bandwidth_bytes_per_s == 0)
    throw std::invalid_argument("HardwareSpec: link_bandwidth_bytes_per_s must be > 0");
  if (ssd_bandwidth_bytes_per_s && *ssd_bandwidth_bytes_per_s == 0)
    throw std::invalid_argument("HardwareSpec: ssd_bandwidth_bytes_per_s must be > 0");
  if (chunk_size_bytes == 0) throw std::invalid_argument("HardwareSpec: chunk_size_bytes must be > 0");
  if (gpu_buffer_slots == 0) throw std::invalid_argument("HardwareSpec: gpu_buffer_slots must be > 0");
  if (n_gpus == 0) throw std::invalid_argument("HardwareSpec: n_gpus must be > 0");
  if (expert_compute_ns <= 0) throw std::invalid_argument("HardwareSpec: expert_compute_ns must be > 0");
  if (dense_layer_ns <= 0) throw std::invalid_argument("HardwareSpec: dense_layer_ns must be > 0");
}

Link::Link(std::uint64_t bandwidth_bytes_per_s, std::uint64_t chunk_size_bytes)
    : bandwidth_(bandwidth_bytes_per_s), chunk_(chunk_size_bytes) {
  if (bandwidth_ == 0 || chunk_ == 0)
    throw std::invalid_argument("Link: bandwidth and chunk size must be > 0");
}

SimTime Link::duration_for(std::uint64_t bytes) const {
  const unsigned __int128 num =
      static_cast<unsigned __int128>(bytes) * static_cast<unsigned __int128>(kNsPerSecond);
  const unsigned __int128 t = (num + bandwidth_ - 1) / bandwidth_;
  return static_cast<SimTime>(t);
}

std::uint64_t Link::chunk_ceil(std::uint64_t bytes, std::uint64_t total) const {
  const std::uint64_t rounded = ((bytes + chunk_ - 1) / chunk_) * chunk_;
  return std::min(rounded, total);
}

std::uint64_t Link::chunk_floor(std::uint64_t bytes) const { return (bytes / chunk_) * chunk_; }

std::uint64_t Link::raw_bytes_at(SimTime now) const {
  if (queue_.empty() || now <= head_start_) return 0;
  const unsigned __int128 moved = static_cast<unsigned __int128>(now - head_start_) *
                                  static_cast<unsigned __int128>(bandwidth_) / kNsPerSecond;
  return static_cast<std::uint64_t>(
      std::min<unsigned __int128>(moved, queue_.front().bytes_total));
}

void Link::enqueue(Transfer t, SimTime now) {
  if (queue_.empty()) {
    head_start_ = std::max(now, free_at_);
  }
  queue_.push_back(std::move(t));
}

std::vector<TransferCompletion> Link::advance(SimTime until) {
  std::vector<TransferCompletion> done;
  while (!queue_.empty()) {
    const Transfer& head = queue_.front();
    const SimTime finish = head_start_ + duration_for(head.bytes_total);
    if (finish > until) break;
    bytes_charged_ += head.bytes_total;
    done.push_back({head, finish, head.bytes_total});
    queue_.pop_front();
    free_at_ = finish;
    head_start_ = finish;  // next transfer starts back-to-back
  }
  return done;
}

CancelOutcome Link::cancel(const ExpertId& expert, SimTime now) {
  if (queue_.empty()) return CancelOutcome::not_found;
  if (queue_.front().expert == expert) {
    const Transfer head = queue_.front();
    // The chunk in flight cannot be interrupted: charge up to the next
    // chunk boundary and keep the link busy until that boundary passes.
    const std::uint64_t charged = chunk_ceil(raw_bytes_at(now), head.bytes_total);
    bytes_charged_ += charged;
    queue_.pop_front();
    free_at_ = head_start_ + duration_for(charged);
    head_start_ = free_at_;
    return CancelOutcome::cut_at_chunk;
  }
  for (auto it = queue_.begin() + 1; it != queue_.end(); ++it) {
    if (it->expert == expert) {
      queue_.erase(it);
      return CancelOutcome::dequeued;
    }
  }
  return CancelOutcome::not_found;
}

std::optional<SimTime> Link::next_completion_time() const {
  if (queue_.empty()) return std::nullopt;
  return head_start_ + duration_for(queue_.front().bytes_total);
}

bool Link::holds(const ExpertId& expert) const {
  for (const Transfer& t : queue_) {
    if (t.expert == expert) return true;
  }
  return false;
}

std::optional<std::uint64_t> Link::progress_bytes(const ExpertId& expert, SimTime now) const {
  for (std::size_t i = 0; i < queue_.size(); ++i) {
    if (queue_[i].expert == expert) {
      if (i != 0) return 0;
      return chunk_floor(raw_bytes_at(now));
    }
  }
  return std::nullopt;
}

GpuBuffer::GpuBuffer(std::uint32_t n_slots) : slots_(n_slots) {
  if (n_slots == 0) throw std::invalid_argument("GpuBuffer: need at least one slot");
}

std::optional<std::size_t> GpuBuffer::slot_of(const ExpertId& e) const {
  const auto it = index_.find(e);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> GpuBuffer::find_free() const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].residency == Residency::empty) return i;
  }
  return std::nullopt;
}

std::size_t GpuBuffer::begin_transfer(std::size_t slot, const ExpertId& e, bool protect,
                                      double priority) {
  Slot& s = slots_.at(slot);
  if (s.residency != Residency::empty)
    throw std::logic_error("GpuBuffer::begin_transfer: slot not empty");
  if (index_.contains(e))
    throw std::logic_error("GpuBuffer::begin_transfer: expert already placed");
  s.occupant = e;
  s.residency = Residency::transferring;
  s.prefetch_protected = protect;
  s.cache_priority = priority;
  s.executing = false;
  index_[e] = slot;
  return slot;
}

Slot& GpuBuffer::occupied_slot(const ExpertId& e, const char* op) {
  const auto it = index_.find(e);
  if (it == index_.end()) throw std::logic_error(std::string(op) + ": expert not in buffer");
  return slots_[it->second];
}

void GpuBuffer::complete_transfer(const ExpertId& e) {
  Slot& s = occupied_slot(e, "GpuBuffer::complete_transfer");
  if (s.residency != Residency::transferring)
    throw std::logic_error("GpuBuffer::complete_transfer: slot not transferring");
  s.residency = Residency::resident;
}

void GpuBuffer::cancel_transfer(const ExpertId& e) {
  const auto it = index_.find(e);
  if (it == index_.end())
    throw std::logic_error("GpuBuffer::cancel_transfer: expert not in buffer");
  Slot& s = slots_[it->second];
  if (s.residency != Residency::transferring)
    throw std::logic_error("GpuBuffer::cancel_transfer: slot not transferring");
  s = Slot{};
  index_.erase(it);
}

void GpuBuffer::evict(std::size_t slot) {
  Slot& s = slots_.at(slot);
  if (s.residency == Residency::empty)
    throw std::logic_error("GpuBuffer::evict: slot already empty");
  if (s.residency == Residency::transferring)
    throw std::logic_error("GpuBuffer::evict: cancel transfers instead of evicting them");
  if (s.prefetch_protected)
    throw ProtectedSlotError("evicting a protected prefetch slot");
  if (s.executing) throw ExecutingExpertError("evicting the expert currently executing");
  index_.erase(*s.occupant);
  s = Slot{};
}

void GpuBuffer::set_protected(std::size_t slot, bool value) {
  slots_.at(slot).prefetch_protected = value;
}
void GpuBuffer::set_priority(std::size_t slot, double value) {
  slots_.at(slot).cache_priority = value;
}
void GpuBuffer::set_executing(std::size_t slot, bool value) {
  slots_.at(slot).executing = value;
}

MemoryHierarchy::MemoryHierarchy(const HardwareSpec& hw) : hw_(hw) {
  hw_.validate();
  buffers_.reserve(hw_.n_gpus);
  gpu_links_.reserve(hw_.n_gpus);
  for (std::uint32_t g = 0; g < hw_.n_gpus; ++g) {
    buffers_.emplace_back(hw_.gpu_buffer_slots);
    gpu_links_.emplace_back(hw_.link_bandwidth_bytes_per_s, hw_.chunk_size_bytes);
  }
  if (hw_.ssd_bandwidth_bytes_per_s) {
    ssd_link_.emplace(*hw_.ssd_bandwidth_bytes_per_s, hw_.chunk_size_bytes);
  }
}

bool MemoryHierarchy::dram_resident(const ExpertId& e) const {
  if (!ssd_enabled()) return true;
  return dram_.contains(e);
}

void MemoryHierarchy::mark_dram_resident(const ExpertId& e) {
  if (ssd_enabled()) dram_.insert(e);
}

LookupResult MemoryHierarchy::lookup(std::uint32_t gpu, const ExpertId& e, SimTime now) const {
  const auto slot = buffers_[gpu].slot_of(e);
  if (!slot) return {Residency::empty, 0.0};
  const Slot& s = buffers_[gpu].slot(*slot);
  if (s.residency == Residency::resident) return {Residency::resident, 1.0};
  const auto bytes = gpu_links_[gpu].progress_bytes(e, now);
  const double fraction = bytes ? static_cast<double>(*bytes) /
                                      static_cast<double>(hw_.expert_size_bytes)
                                : 0.0;
  return {Residency::transferring, fraction};
}

}  // namespace moesim
