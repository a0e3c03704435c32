// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "moesim/rng.hpp"

namespace moesim {

WeightedSampler::WeightedSampler(std::span<const double> weights) {
  cdf_.reserve(weights.size());
  double acc = 0.0;
  for (double w : weights) {
    acc += w;
    cdf_.push_back(acc);
  }
  if (cdf_.empty() || acc <= 0.0)
    throw std::invalid_argument("WeightedSampler: weights must be non-empty and positive");
  for (double& c : cdf_) c /= acc;
  cdf_.back() = 1.0;
}

std::size_t WeightedSampler::sample(Rng& rng) const {
  const double u = rng.next_double();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return static_cast<std::size_t>(std::min<std::ptrdiff_t>(
      it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
}

std::vector<std::uint32_t> random_permutation(std::uint32_t n, Rng& rng) {
  std::vector<std::uint32_t> p(n);
  for (std::uint32_t i = 0; i < n; ++i) p[i] = i;
  for (std::uint32_t i = n; i > 1; --i) {
    const std::uint32_t j = static_cast<std::uint32_t>(rng.bounded(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

void DiscreteDist::validate() const {
  if (pmf.empty()) throw std::invalid_argument("DiscreteDist: empty support");
  for (const auto& [value, weight] : pmf) {
    if (value < 1) throw std::invalid_argument("DiscreteDist: support values must be >= 1");
    if (!(weight > 0.0)) throw std::invalid_argument("DiscreteDist: weights must be > 0");
  }
}

void WorkloadSpec::validate() const {
  shape.validate();
  if (n_groups < 1) throw std::invalid_argument("WorkloadSpec: n_groups must be >= 1");
  if (group_fidelity < 0.0 || group_fidelity > 1.0)
    throw std::invalid_argument("WorkloadSpec: group_fidelity must lie in [0, 1]");
  if (reuse_skew < 0.0) throw std::invalid_argument("WorkloadSpec: reuse_skew must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("WorkloadSpec: batch_size must be >= 1");
  prompt_len.validate();
  decode_len.validate();
}

namespace {

constexpr std::uint64_t kGroupStreamTag = 0xFFFFFFFFFFFF0001ull;

std::uint32_t sample_dist(const DiscreteDist& dist, Rng& rng) {
  std::vector<double> weights;
  weights.reserve(dist.pmf.size());
  for (const auto& [value, weight] : dist.pmf) weights.push_back(weight);
  const WeightedSampler sampler(weights);
  return dist.pmf[sampler.sample(rng)].first;
}

// Designated experts per (group, layer): top_k distinct indices, derived
// from the workload seed alone so the group structure is stable across the
// whole corpus.
std::vector<std::vector<std::vector<std::uint32_t>>> build_groups(const WorkloadSpec& spec) {
  Rng rng = Rng::stream(spec.seed, kGroupStreamTag);
  const std::uint32_t e = spec.shape.n_experts_per_layer;
  std::vector<std::vector<std::vector<std::uint32_t>>> groups(spec.n_groups);
  for (std::uint32_t g = 0; g < spec.n_groups; ++g) {
    groups[g].resize(spec.shape.n_layers);
    for (std::uint32_t l = 0; l < spec.shape.n_layers; ++l) {
      std::vector<std::uint32_t>& designated = groups[g][l];
      while (designated.size() < spec.shape.top_k) {
        const auto cand = static_cast<std::uint32_t>(rng.bounded(e));
        if (std::find(designated.begin(), designated.end(), cand) == designated.end())
          designated.push_back(cand);
      }
      std::sort(designated.begin(), designated.end());
    }
  }
  return groups;
}

// Draw top_k distinct experts from a Zipf(reuse_skew) distribution laid
// over a per-(request, layer) permutation of expert indices.
void draw_zipf_topk(const WeightedSampler& sampler,
                    const std::vector<std::uint32_t>& perm, std::uint32_t k, Rng& rng,
                    std::vector<std::uint32_t>& out) {
  out.clear();
  int attempts = 0;
  while (out.size() < k) {
    const std::size_t rank = sampler.sample(rng);
    const std::uint32_t expert = perm[rank];
    if (std::find(out.begin(), out.end(), expert) == out.end()) {
      out.push_back(expert);
    } else if (++attempts > 64) {
      // Heavily skewed tails can make rejection slow; fall through the
      // rank order for the remaining picks.
      for (std::uint32_t r = 0; r < perm.size() && out.size() < k; ++r) {
        if (std::find(out.begin(), out.end(), perm[r]) == out.end()) out.push_back(perm[r]);
      }
    }
  }
}

}  // namespace

RequestTrace generate_trace(const WorkloadSpec& spec, std::uint64_t request_index) {
  spec.validate();
  const std::uint32_t layers = spec.shape.n_layers;
  const std::uint32_t experts = spec.shape.n_experts_per_layer;
  const std::uint32_t k = spec.shape.top_k;

  const auto groups = build_groups(spec);
  Rng rng = Rng::stream(spec.seed, request_index);

  // Zipf weights over ranks; the permutation below decides which expert
  // holds which rank for this request.
  std::vector<double> zipf(experts);
  for (std::uint32_t r = 0; r < experts; ++r)
    zipf[r] = std::pow(static_cast<double>(r + 1), -spec.reuse_skew);
  const WeightedSampler zipf_sampler(zipf);

  std::vector<std::vector<std::uint32_t>> layer_perm(layers);
  for (std::uint32_t l = 0; l < layers; ++l) layer_perm[l] = random_permutation(experts, rng);

  // Group popularity follows the same skew exponent as expert reuse, so
  // a few activation patterns dominate the corpus while individual
  // requests stay strongly grouped.
  std::vector<double> group_weights(spec.n_groups);
  for (std::uint32_t g = 0; g < spec.n_groups; ++g)
    group_weights[g] = std::pow(static_cast<double>(g + 1), -spec.reuse_skew);
  const WeightedSampler group_sampler(group_weights);

  std::vector<std::uint32_t> seq_group(spec.batch_size);
  for (std::uint32_t s = 0; s < spec.batch_size; ++s)
    seq_group[s] = static_cast<std::uint32_t>(group_sampler.sample(rng));

  const std::uint32_t prompt_len = sample_dist(spec.prompt_len, rng);
  const std::uint32_t decode_len = sample_dist(spec.decode_len, rng);

  RequestTrace trace;
  trace.request_id = "r" + std::to_string(request_index);
  trace.prompt_tokens = std::uint64_t{prompt_len} * spec.batch_size;

  std::vector<std::uint32_t> picks;
  std::vector<std::uint64_t> counts(experts);
  const auto route_iteration = [&](std::uint32_t tokens_per_sequence) {
    IterationTrace iter;
    iter.reserve(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
      std::fill(counts.begin(), counts.end(), 0);
      for (std::uint32_t s = 0; s < spec.batch_size; ++s) {
        for (std::uint32_t t = 0; t < tokens_per_sequence; ++t) {
          if (rng.bernoulli(spec.group_fidelity)) {
            for (std::uint32_t e : groups[seq_group[s]][l]) counts[e] += 1;
          } else {
            draw_zipf_topk(zipf_sampler, layer_perm[l], k, rng, picks);
            for (std::uint32_t e : picks) counts[e] += 1;
          }
        }
      }
      RoutingEvent ev;
      ev.layer_idx = l;
      for (std::uint32_t e = 0; e < experts; ++e) {
        if (counts[e] > 0) ev.assignments.push_back({e, counts[e]});
      }
      iter.push_back(std::move(ev));
    }
    return iter;
  };

  trace.iterations.push_back(route_iteration(prompt_len));
  for (std::uint32_t d = 0; d < decode_len; ++d) trace.iterations.push_back(route_iteration(1));
  return trace;
}

std::vector<RequestTrace> generate_corpus(const WorkloadSpec& spec, std::uint64_t n_requests) {
  std::vector<RequestTrace> corpus;
  corpus.reserve(n_requests);
  for (std::uint64_t i = 0; i < n_requests; ++i) corpus.push_back(generate_trace(spec, i));
  return corpus;
}

double activation_ratio(const RequestTrace& trace, const ModelShape& shape) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> distinct;
  for (const IterationTrace& iter : trace.iterations) {
    for (const RoutingEvent& ev : iter) {
      for (const ExpertAssignment& a : ev.assignments) distinct.insert({ev.layer_idx, a.expert_idx});
    }
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(shape.total_experts());
}

std::vector<RequestTrace> ingest_traces(const std::filesystem::path& path,
                                        const ModelShape& shape) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<RequestTrace> traces;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    RequestTrace trace;
    try {
      trace = trace_from_jsonl(line);
    } catch (const TraceParseError& e) {
      throw TraceIngestError(line_no, e.what());
    }
    const ValidationResult result = validate_trace(trace, shape);
    if (!result.ok()) {
      throw TraceIngestError(line_no, std::string(to_string(result.kind)) + ": " + result.detail);
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

}  // namespace moesim
