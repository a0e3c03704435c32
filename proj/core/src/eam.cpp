// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/eam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace moesim {

const char* to_string(EamKind k) {
  return k == EamKind::iteration ? "iteration" : "request";
}
const char* to_string(Phase p) { return p == Phase::prefill ? "prefill" : "decode"; }

Eam::Eam(ModelShape shape, EamKind kind, Phase phase)
    : shape_(shape), kind_(kind), phase_(phase) {
  shape_.validate();
  counts_.assign(shape_.total_experts(), 0);
}

std::uint64_t Eam::at(std::uint32_t layer, std::uint32_t expert) const {
  return counts_[std::uint64_t{layer} * shape_.n_experts_per_layer + expert];
}

std::uint64_t Eam::row_sum(std::uint32_t layer) const {
  std::uint64_t s = 0;
  for (std::uint64_t c : row(layer)) s += c;
  return s;
}

std::span<const std::uint64_t> Eam::row(std::uint32_t layer) const {
  const std::size_t e = shape_.n_experts_per_layer;
  return {counts_.data() + std::size_t{layer} * e, e};
}

void Eam::record(const RoutingEvent& event) {
  if (event.layer_idx >= shape_.n_layers)
    throw std::out_of_range("Eam::record: layer index out of range");
  for (const ExpertAssignment& a : event.assignments) {
    if (a.expert_idx >= shape_.n_experts_per_layer)
      throw std::out_of_range("Eam::record: expert index out of range");
  }
  const std::uint64_t base = std::uint64_t{event.layer_idx} * shape_.n_experts_per_layer;
  for (const ExpertAssignment& a : event.assignments) {
    counts_[base + a.expert_idx] += a.token_count;
  }
}

void Eam::accumulate(const Eam& other) {
  if (!(shape_ == other.shape_))
    throw std::invalid_argument("Eam::accumulate: shape mismatch");
  if (phase_ != other.phase_)
    throw std::invalid_argument("Eam::accumulate: phase mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void Eam::reset() { counts_.assign(counts_.size(), 0); }

void Eam::set(std::uint32_t layer, std::uint32_t expert, std::uint64_t count) {
  if (layer >= shape_.n_layers || expert >= shape_.n_experts_per_layer)
    throw std::out_of_range("Eam::set: index out of range");
  counts_[std::uint64_t{layer} * shape_.n_experts_per_layer + expert] = count;
}

namespace {

// Cosine similarity of two non-negative count rows with the degenerate-row
// convention: both zero -> 1, exactly one zero -> 0. Row normalization by
// the sum cancels inside the cosine, so raw counts are used directly.
double row_similarity(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double eam_distance(const Eam& a, const Eam& b) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument("eam_distance: shape mismatch");
  const std::uint32_t layers = a.shape().n_layers;
  double sim = 0.0;
  for (std::uint32_t l = 0; l < layers; ++l) {
    sim += row_similarity(a.row(l), b.row(l));
  }
  double d = 1.0 - sim / layers;
  // Clamp float fuzz at the boundaries.
  if (d < 0.0) d = 0.0;
  if (d > 1.0) d = 1.0;
  return d;
}

Eamc::Eamc(ModelShape shape, Phase phase, std::size_t capacity)
    : shape_(shape), phase_(phase), capacity_(capacity) {
  shape_.validate();
  if (capacity_ < 1) throw std::invalid_argument("Eamc: capacity must be >= 1");
  entries_.reserve(capacity_);
}

void Eamc::check_probe(const Eam& probe) const {
  if (!(probe.shape() == shape_))
    throw std::invalid_argument("Eamc: probe shape mismatch");
}

std::optional<EamcMatch> Eamc::match(const Eam& probe) const {
  check_probe(probe);
  std::optional<EamcMatch> best;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const double d = eam_distance(entries_[i].eam, probe);
    if (!best || d < best->distance ||
        (d == best->distance && entries_[i].seq < best->seq)) {
      best = EamcMatch{i, entries_[i].seq, d};
    }
  }
  return best;
}

std::vector<EamcMatch> Eamc::match_within(const Eam& probe, double window) const {
  check_probe(probe);
  std::vector<EamcMatch> all;
  all.reserve(entries_.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const double d = eam_distance(entries_[i].eam, probe);
    best = std::min(best, d);
    all.push_back({i, entries_[i].seq, d});
  }
  std::vector<EamcMatch> out;
  for (const EamcMatch& m : all) {
    if (m.distance <= best + window) out.push_back(m);
  }
  std::sort(out.begin(), out.end(), [](const EamcMatch& a, const EamcMatch& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.seq < b.seq;
  });
  return out;
}

std::optional<Eam> Eamc::insert(Eam eam) {
  if (!(eam.shape() == shape_))
    throw std::invalid_argument("Eamc::insert: shape mismatch");
  if (eam.kind() != EamKind::request)
    throw std::invalid_argument("Eamc::insert: only request-level EAMs are stored");
  if (eam.phase() != phase_)
    throw std::invalid_argument("Eamc::insert: phase mismatch");

  if (entries_.size() < capacity_) {
    entries_.push_back({std::move(eam), next_seq_++});
    return std::nullopt;
  }
  // Full: evict the stored entry nearest to the incoming one (oldest on
  // ties) and put the newcomer in its slot.
  std::size_t victim = 0;
  double victim_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const double d = eam_distance(entries_[i].eam, eam);
    if (d < victim_d || (d == victim_d && entries_[i].seq < entries_[victim].seq)) {
      victim = i;
      victim_d = d;
    }
  }
  Eam evicted = std::move(entries_[victim].eam);
  entries_[victim] = {std::move(eam), next_seq_++};
  return evicted;
}

namespace {
constexpr int kSnapshotVersion = 1;
}

void Eamc::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["version"] = kSnapshotVersion;
  j["shape"] = {{"n_layers", shape_.n_layers},
                {"n_experts_per_layer", shape_.n_experts_per_layer},
                {"top_k", shape_.top_k}};
  j["phase"] = to_string(phase_);
  j["capacity"] = capacity_;
  j["next_seq"] = next_seq_;
  nlohmann::json jentries = nlohmann::json::array();
  for (const Entry& e : entries_) {
    nlohmann::json row_major = nlohmann::json::array();
    for (std::uint64_t c : e.eam.counts()) row_major.push_back(c);
    jentries.push_back({{"seq", e.seq}, {"counts", std::move(row_major)}});
  }
  j["entries"] = std::move(jentries);

  std::ofstream out(path);
  if (!out) throw EamcSnapshotError("cannot open for writing: " + path.string());
  out << j.dump() << '\n';
  if (!out) throw EamcSnapshotError("write failed: " + path.string());
}

Eamc Eamc::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EamcSnapshotError("cannot open for reading: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw EamcSnapshotError(std::string("corrupt snapshot: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != kSnapshotVersion)
      throw EamcSnapshotError("unsupported snapshot version");
    ModelShape shape{j.at("shape").at("n_layers").get<std::uint32_t>(),
                     j.at("shape").at("n_experts_per_layer").get<std::uint32_t>(),
                     j.at("shape").at("top_k").get<std::uint32_t>()};
    const std::string phase_str = j.at("phase").get<std::string>();
    Phase phase;
    if (phase_str == "prefill") phase = Phase::prefill;
    else if (phase_str == "decode") phase = Phase::decode;
    else throw EamcSnapshotError("unknown phase: " + phase_str);

    Eamc eamc(shape, phase, j.at("capacity").get<std::size_t>());
    for (const auto& je : j.at("entries")) {
      Eam eam(shape, EamKind::request, phase);
      const auto& counts = je.at("counts");
      if (counts.size() != shape.total_experts())
        throw EamcSnapshotError("entry count array does not match shape");
      std::size_t i = 0;
      for (std::uint32_t l = 0; l < shape.n_layers; ++l) {
        for (std::uint32_t e = 0; e < shape.n_experts_per_layer; ++e) {
          eam.set(l, e, counts.at(i++).get<std::uint64_t>());
        }
      }
      if (eamc.entries_.size() >= eamc.capacity_)
        throw EamcSnapshotError("snapshot holds more entries than its capacity");
      eamc.entries_.push_back({std::move(eam), je.at("seq").get<std::uint64_t>()});
    }
    eamc.next_seq_ = j.at("next_seq").get<std::uint64_t>();
    return eamc;
  } catch (const nlohmann::json::exception& e) {
    throw EamcSnapshotError(std::string("corrupt snapshot: ") + e.what());
  }
}

Eamc Eamc::load(const std::filesystem::path& path, const ModelShape& expected) {
  Eamc eamc = load(path);
  if (!(eamc.shape() == expected))
    throw EamcSnapshotError("snapshot shape does not match the configured model shape");
  return eamc;
}

std::uint64_t eamc_capacity_bound(const ModelShape& shape, double similarity) {
  shape.validate();
  const double le = static_cast<double>(shape.total_experts());
  if (similarity == 0.75) {
    return 2 * shape.total_experts();
  }
  if (similarity == 0.98) {
    return static_cast<std::uint64_t>(std::ceil(0.5 * le * std::log(le)));
  }
  throw std::invalid_argument("eamc_capacity_bound: supported similarity levels are 0.75 and 0.98");
}

}  // namespace moesim
