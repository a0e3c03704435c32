// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "moesim/model.hpp"

namespace moesim {

enum class EamKind : std::uint8_t { iteration, request };
enum class Phase : std::uint8_t { prefill, decode };

const char* to_string(EamKind k);
const char* to_string(Phase p);

/// Expert Activation Matrix: an L x E grid of per-expert token counts.
/// Counts stay integral; normalization happens only inside the distance
/// and priority computations.
class Eam {
 public:
  Eam(ModelShape shape, EamKind kind, Phase phase);

  const ModelShape& shape() const { return shape_; }
  EamKind kind() const { return kind_; }
  Phase phase() const { return phase_; }

  std::uint64_t at(std::uint32_t layer, std::uint32_t expert) const;
  std::uint64_t row_sum(std::uint32_t layer) const;
  std::span<const std::uint64_t> row(std::uint32_t layer) const;
  std::span<const std::uint64_t> counts() const { return counts_; }

  /// Adds the event's token counts into row `event.layer_idx`. Rejects
  /// out-of-range indices without touching any cell.
  void record(const RoutingEvent& event);

  /// Element-wise sum of `other` into this matrix. Shapes and phases must
  /// agree.
  void accumulate(const Eam& other);

  void reset();
  void set(std::uint32_t layer, std::uint32_t expert, std::uint64_t count);

  bool operator==(const Eam&) const = default;

 private:
  ModelShape shape_;
  EamKind kind_;
  Phase phase_;
  std::vector<std::uint64_t> counts_;  // row-major L x E
};

/// Mean-cosine distance over row-normalized rows, in [0, 1]; 0 means every
/// layer's activation ratios agree. Two all-zero rows count as identical;
/// a zero row against a nonzero one contributes zero similarity.
double eam_distance(const Eam& a, const Eam& b);

struct EamcSnapshotError : std::runtime_error {
  explicit EamcSnapshotError(const std::string& what) : std::runtime_error(what) {}
};

struct EamcMatch {
  std::size_t index = 0;      // slot position within the collection
  std::uint64_t seq = 0;      // insertion sequence number
  double distance = 0.0;
};

/// Fixed-capacity collection of historical request-level EAMs. Insertion
/// at capacity evicts the stored entry nearest to the newcomer; lookups
/// are linear scans. Ties in either direction go to the oldest entry.
class Eamc {
 public:
  Eamc(ModelShape shape, Phase phase, std::size_t capacity);

  const ModelShape& shape() const { return shape_; }
  Phase phase() const { return phase_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const Eam& entry(std::size_t index) const { return entries_[index].eam; }
  std::uint64_t entry_seq(std::size_t index) const { return entries_[index].seq; }

  /// Nearest entry to `probe` (smallest eam_distance); empty collection
  /// yields nullopt.
  std::optional<EamcMatch> match(const Eam& probe) const;

  /// Every entry within `window` of the best distance, nearest first.
  std::vector<EamcMatch> match_within(const Eam& probe, double window) const;

  /// Returns the evicted entry when the collection was full.
  std::optional<Eam> insert(Eam eam);

  void save(const std::filesystem::path& path) const;
  static Eamc load(const std::filesystem::path& path);
  static Eamc load(const std::filesystem::path& path, const ModelShape& expected);

 private:
  struct Entry {
    Eam eam;
    std::uint64_t seq;
  };

  void check_probe(const Eam& probe) const;

  ModelShape shape_;
  Phase phase_;
  std::size_t capacity_;
  std::uint64_t next_seq_ = 0;
  std::vector<Entry> entries_;
};

/// Sphere-covering guidance for the collection size: 2LE entries reach a
/// 0.75 trace-similarity floor, ceil(LE*ln(LE)/2) reaches 0.98. Only those
/// two levels are defined.
std::uint64_t eamc_capacity_bound(const ModelShape& shape, double similarity);

}  // namespace moesim
