// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/engine.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "moesim/report.hpp"
#include "moesim/workload.hpp"

using namespace moesim;

namespace {

HardwareSpec unit_hw(std::uint32_t slots, std::uint32_t n_gpus = 1) {
  HardwareSpec hw;
  hw.expert_size_bytes = 32'000'000;               // 32 MB
  hw.link_bandwidth_bytes_per_s = 32'000'000'000;  // 1 ms per expert
  hw.chunk_size_bytes = 16'000'000;
  hw.gpu_buffer_slots = slots;
  hw.n_gpus = n_gpus;
  hw.expert_compute_ns = 1'000'000;
  hw.dense_layer_ns = 100'000;
  return hw;
}

// One-iteration trace routing one expert per layer.
RequestTrace path_trace(const std::string& id, const std::vector<std::uint32_t>& experts) {
  RequestTrace t;
  t.request_id = id;
  t.prompt_tokens = 1;
  IterationTrace iter;
  for (std::uint32_t l = 0; l < experts.size(); ++l) {
    iter.push_back(RoutingEvent{l, {{experts[l], 1}}});
  }
  t.iterations.push_back(std::move(iter));
  return t;
}

std::uint64_t distinct_experts(std::span<const RequestTrace> traces) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> d;
  for (const RequestTrace& t : traces)
    for (const IterationTrace& iter : t.iterations)
      for (const RoutingEvent& ev : iter)
        for (const ExpertAssignment& a : ev.assignments) d.insert({ev.layer_idx, a.expert_idx});
  return d.size();
}

bool reports_equal(const SimReport& a, const SimReport& b, const ModelShape& shape,
                   const HardwareSpec& hw) {
  return report_csv_row(a, shape, hw) == report_csv_row(b, shape, hw) &&
         a.decode_tpot_ns == b.decode_tpot_ns &&
         a.per_gpu_blocking_ns == b.per_gpu_blocking_ns;
}

}  // namespace

TEST_CASE("empty trace set produces an all-zero report") {
  const ModelShape shape{2, 2, 1};
  const SimReport r = run({}, shape, unit_hw(4), PolicyKind::on_demand, EamcConfig{});
  CHECK(r.total_time_ns == 0);
  CHECK(r.activations == 0);
  CHECK(r.hits == 0);
  CHECK(r.blocking_time_ns() == 0);
  CHECK(r.bytes_dram_gpu() == 0);
  CHECK(r.decode_tpot_ns.empty());
}

TEST_CASE("on-demand with a big buffer blocks only on first touches, exactly") {
  WorkloadSpec spec;
  spec.shape = {4, 8, 1};
  spec.n_groups = 2;
  spec.group_fidelity = 1.0;  // decode reuses exactly the prefill experts
  spec.prompt_len = DiscreteDist::constant(4);
  spec.decode_len = DiscreteDist::constant(6);
  spec.batch_size = 1;
  spec.seed = 3;
  const auto traces = generate_corpus(spec, 5);

  const HardwareSpec hw = unit_hw(32);  // >= L*E slots
  const SimReport r = run(traces, spec.shape, hw, PolicyKind::on_demand, EamcConfig{});

  const std::uint64_t n_distinct = distinct_experts(traces);
  const SimTime fetch = 1'000'000;  // 32 MB at 32 GB/s
  CHECK(r.blocking_time_ns() == static_cast<SimTime>(n_distinct) * fetch);
  // Everything fits, so every activation after the first touch hits.
  CHECK(r.hits == r.activations - n_distinct);
  CHECK(r.decode_hit_rate() == doctest::Approx(1.0));
  CHECK(r.bytes_dram_gpu() == n_distinct * hw.expert_size_bytes);
}

TEST_CASE("prefetching scenario: dependency blocks on late layers, a seeded "
          "collection readies them") {
  const ModelShape shape{4, 2, 1};
  // The request follows experts 0,0,1,1 down the layers.
  const std::vector<RequestTrace> traces{path_trace("p", {0, 0, 1, 1})};

  // A historical prefill EAM with the same path, saved as a snapshot the
  // engine preloads.
  const auto snapshot = std::filesystem::temp_directory_path() / "moesim_fig_eamc.json";
  {
    Eamc eamc(shape, Phase::prefill, 4);
    Eam entry(shape, EamKind::request, Phase::prefill);
    entry.record(RoutingEvent{0, {{0, 1}}});
    entry.record(RoutingEvent{1, {{0, 1}}});
    entry.record(RoutingEvent{2, {{1, 1}}});
    entry.record(RoutingEvent{3, {{1, 1}}});
    eamc.insert(std::move(entry));
    eamc.save(snapshot);
  }

  EamcConfig seeded;
  seeded.capacity = 4;
  seeded.prefill_in = snapshot;

  const auto log_path = std::filesystem::temp_directory_path() / "moesim_fig_events.jsonl";
  const auto outcome_of = [&log_path](const std::string& expert) {
    std::ifstream in(log_path);
    std::string line;
    while (std::getline(in, line)) {
      const bool hit = line.find("\"event\":\"hit\"") != std::string::npos;
      const bool miss = line.find("\"event\":\"miss\"") != std::string::npos;
      if ((hit || miss) && line.find("\"expert\":\"" + expert + "\"") != std::string::npos) {
        return hit ? std::string("hit") : std::string("miss");
      }
    }
    return std::string("absent");
  };

  SimReport dep, aa;
  {
    EventLog log(log_path);
    dep = run(traces, shape, unit_hw(8), PolicyKind::dependency,
              EamcConfig::with_capacity(4), &log);
  }
  // Dependency only sees one layer ahead and fetches both next-layer
  // experts blindly: the late-layer routed experts are still in flight
  // when dispatch reaches them.
  CHECK(outcome_of("2:1") == "miss");
  CHECK(outcome_of("3:1") == "miss");
  {
    EventLog log(log_path);
    aa = run(traces, shape, unit_hw(8), PolicyKind::activation_aware, seeded, &log);
  }
  // With the matching history the late-layer experts are ready before use.
  CHECK(outcome_of("2:1") == "hit");
  CHECK(outcome_of("3:1") == "hit");

  // The activation-aware run misses only the very first expert and its
  // single block is that expert's full fetch.
  CHECK(aa.hits == 3);
  CHECK(aa.blocking_time_ns() == 1'000'000);
  CHECK(dep.hits < aa.hits);
  CHECK(dep.blocking_time_ns() > aa.blocking_time_ns());

  std::filesystem::remove(snapshot);
  std::filesystem::remove(log_path);
}

TEST_CASE("an expert mid-transfer at dispatch counts as a miss but blocks less") {
  // Layer 0 routes expert 0; layer 1 routes expert 1, twice over.
  const ModelShape shape{2, 2, 1};
  RequestTrace t;
  t.request_id = "partial";
  t.prompt_tokens = 1;
  t.iterations.push_back({RoutingEvent{0, {{0, 1}}}, RoutingEvent{1, {{1, 1}}}});
  t.iterations.push_back({RoutingEvent{0, {{0, 1}}}, RoutingEvent{1, {{1, 1}}}});
  const std::vector<RequestTrace> traces{t};

  // Dependency prefetches (1, 1) when layer 0 dispatches; the transfer is
  // under way but unfinished at layer-1 dispatch.
  const SimReport dep =
      run(traces, shape, unit_hw(4), PolicyKind::dependency, EamcConfig::with_capacity(2));
  CHECK(dep.prefill_hits == 0);  // first iteration: both dispatches miss
  CHECK(dep.decode_hits == 2);   // second iteration: both cached
  // Layer-0 miss blocks a full fetch; the layer-1 miss only the remainder.
  CHECK(dep.prefill_blocking_ns > 1'000'000);
  CHECK(dep.prefill_blocking_ns < 2'000'000);
}

TEST_CASE("runs are deterministic") {
  WorkloadSpec spec;
  spec.shape = {4, 8, 1};
  spec.n_groups = 3;
  spec.group_fidelity = 0.85;
  spec.prompt_len = DiscreteDist::constant(5);
  spec.decode_len = DiscreteDist::constant(7);
  spec.seed = 21;
  const auto traces = generate_corpus(spec, 10);
  const HardwareSpec hw = unit_hw(5);
  for (PolicyKind k : all_policies()) {
    const SimReport a = run(traces, spec.shape, hw, k, EamcConfig::with_capacity(8));
    const SimReport b = run(traces, spec.shape, hw, k, EamcConfig::with_capacity(8));
    CHECK(reports_equal(a, b, spec.shape, hw));
  }
}

TEST_CASE("per-GPU accounting: compute + blocking + idle equals total time") {
  WorkloadSpec spec;
  spec.shape = {3, 8, 1};
  spec.n_groups = 2;
  spec.group_fidelity = 0.8;
  spec.prompt_len = DiscreteDist::constant(6);
  spec.decode_len = DiscreteDist::constant(5);
  spec.batch_size = 4;
  spec.seed = 31;
  const auto traces = generate_corpus(spec, 6);

  for (std::uint32_t n_gpus : {1u, 2u}) {
    const HardwareSpec hw = unit_hw(6, n_gpus);
    for (PolicyKind k : {PolicyKind::on_demand, PolicyKind::activation_aware,
                         PolicyKind::dependency, PolicyKind::ideal}) {
      const SimReport r = run(traces, spec.shape, hw, k, EamcConfig::with_capacity(4));
      REQUIRE(r.per_gpu_compute_ns.size() == n_gpus);
      for (std::uint32_t g = 0; g < n_gpus; ++g) {
        CHECK(r.per_gpu_compute_ns[g] + r.per_gpu_blocking_ns[g] + r.per_gpu_idle_ns[g] ==
              r.total_time_ns);
      }
      CHECK(r.hit_rate() >= 0.0);
      CHECK(r.hit_rate() <= 1.0);
    }
  }
}

TEST_CASE("routing replay is policy independent") {
  WorkloadSpec spec;
  spec.shape = {3, 6, 1};
  spec.n_groups = 2;
  spec.prompt_len = DiscreteDist::constant(4);
  spec.decode_len = DiscreteDist::constant(4);
  spec.seed = 41;
  const auto traces = generate_corpus(spec, 5);
  const HardwareSpec hw = unit_hw(4);
  std::optional<std::uint64_t> activations;
  for (PolicyKind k : all_policies()) {
    const SimReport r = run(traces, spec.shape, hw, k, EamcConfig::with_capacity(4));
    if (!activations) activations = r.activations;
    CHECK(r.activations == *activations);
    CHECK(r.decode_tpot_ns.size() == 5 * 4);
  }
}

TEST_CASE("multi-gpu: experts hash onto their own links and buffers") {
  const ModelShape shape{2, 4, 1};
  // Experts 0 and 2 hash to GPU 0; experts 1 and 3 to GPU 1.
  RequestTrace t;
  t.request_id = "mg";
  t.prompt_tokens = 1;
  t.iterations.push_back(
      {RoutingEvent{0, {{0, 1}, {1, 1}}}, RoutingEvent{1, {{2, 1}, {3, 1}}}});
  const std::vector<RequestTrace> traces{t};

  const HardwareSpec hw = unit_hw(4, 2);
  const SimReport r = run(traces, shape, hw, PolicyKind::on_demand, EamcConfig{});
  REQUIRE(r.bytes_per_gpu_link.size() == 2);
  CHECK(r.bytes_per_gpu_link[0] == 2 * hw.expert_size_bytes);
  CHECK(r.bytes_per_gpu_link[1] == 2 * hw.expert_size_bytes);
  // The two GPUs fetch and execute their layer expert in parallel, so the
  // per-layer critical path is one fetch plus one execution.
  CHECK(r.total_time_ns == 2 * (100'000 + 1'000'000 + 1'000'000));
}

TEST_CASE("ssd tier: evicted experts stay in DRAM and skip the ssd hop") {
  const ModelShape shape{1, 2, 1};
  HardwareSpec hw = unit_hw(1);
  hw.ssd_bandwidth_bytes_per_s = 8'000'000'000;  // 4 ms per expert stage

  // Three single-layer iterations: expert 0, expert 1 (evicts 0 from the
  // one-slot buffer), expert 0 again (DRAM copy kept, no new ssd traffic).
  RequestTrace t;
  t.request_id = "tiers";
  t.prompt_tokens = 1;
  t.iterations.push_back({RoutingEvent{0, {{0, 1}}}});
  t.iterations.push_back({RoutingEvent{0, {{1, 1}}}});
  t.iterations.push_back({RoutingEvent{0, {{0, 1}}}});
  const std::vector<RequestTrace> traces{t};

  const SimReport r = run(traces, shape, hw, PolicyKind::on_demand, EamcConfig::with_capacity(2));
  CHECK(r.bytes_ssd_link == 2 * hw.expert_size_bytes);    // staged once each
  CHECK(r.bytes_dram_gpu() == 3 * hw.expert_size_bytes);  // fetched three times
  // First two fetches pay both hops; the refetch only the DRAM->GPU hop.
  const SimTime ssd_hop = 4'000'000, gpu_hop = 1'000'000;
  CHECK(r.blocking_time_ns() == 2 * (ssd_hop + gpu_hop) + gpu_hop);
}

TEST_CASE("ssd tier under prefetching policies: staged once, consistent accounting") {
  WorkloadSpec spec;
  spec.shape = {4, 8, 2};  // top-2 routing
  spec.n_groups = 3;
  spec.group_fidelity = 0.85;
  spec.prompt_len = DiscreteDist::constant(4);
  spec.decode_len = DiscreteDist::constant(6);
  spec.batch_size = 2;
  spec.seed = 51;
  const auto traces = generate_corpus(spec, 8);

  HardwareSpec flat = unit_hw(6);
  HardwareSpec tiered = flat;
  tiered.ssd_bandwidth_bytes_per_s = 8'000'000'000;

  for (PolicyKind k : {PolicyKind::activation_aware, PolicyKind::model_tracing,
                       PolicyKind::on_demand}) {
    const SimReport a = run(traces, spec.shape, tiered, k, EamcConfig::with_capacity(8));
    const SimReport b = run(traces, spec.shape, tiered, k, EamcConfig::with_capacity(8));
    CHECK(reports_equal(a, b, spec.shape, tiered));

    for (std::uint32_t g = 0; g < 1; ++g) {
      CHECK(a.per_gpu_compute_ns[g] + a.per_gpu_blocking_ns[g] + a.per_gpu_idle_ns[g] ==
            a.total_time_ns);
    }
    CHECK(a.bytes_ssd_link > 0);

    // The staging hop makes everything strictly slower than the flat
    // hierarchy on the same trace set.
    const SimReport flat_run = run(traces, spec.shape, flat, k, EamcConfig::with_capacity(8));
    CHECK(a.blocking_time_ns() >= flat_run.blocking_time_ns());
    CHECK(a.total_time_ns >= flat_run.total_time_ns);
  }
}

TEST_CASE("run_matrix: single cell equals a direct run and repeats are identical") {
  WorkloadSpec spec;
  spec.shape = {3, 4, 1};
  spec.n_groups = 2;
  spec.prompt_len = DiscreteDist::constant(3);
  spec.decode_len = DiscreteDist::constant(4);
  spec.seed = 0;  // overridden per cell
  const HardwareSpec hw = unit_hw(4);

  const TraceSource source = [&spec](std::uint64_t seed) {
    WorkloadSpec s = spec;
    s.seed = seed;
    return generate_corpus(s, 4);
  };

  const std::vector<MatrixCell> cells{{PolicyKind::lru, 7, 4, hw}};
  const auto results = run_matrix(cells, spec.shape, source, EamcConfig{});
  REQUIRE(results.size() == 1);
  REQUIRE(results[0].report.has_value());
  CHECK(results[0].error.empty());

  SimReport direct = run(source(7), spec.shape, hw, PolicyKind::lru, EamcConfig::with_capacity(4));
  direct.seed = 7;
  CHECK(reports_equal(*results[0].report, direct, spec.shape, hw));

  const auto again = run_matrix(cells, spec.shape, source, EamcConfig{});
  CHECK(reports_equal(*results[0].report, *again[0].report, spec.shape, hw));
}

TEST_CASE("run_matrix records per-cell failures without aborting") {
  const ModelShape shape{2, 2, 1};
  const TraceSource source = [](std::uint64_t seed) {
    std::vector<RequestTrace> traces{path_trace("ok", {0, 1})};
    if (seed == 13) {
      traces[0].iterations[0][1].assignments[0].expert_idx = 9;  // out of range
    }
    return traces;
  };
  const HardwareSpec hw = unit_hw(4);
  const std::vector<MatrixCell> cells{
      {PolicyKind::on_demand, 13, 2, hw},
      {PolicyKind::on_demand, 1, 2, hw},
  };
  const auto results = run_matrix(cells, shape, source, EamcConfig{});
  REQUIRE(results.size() == 2);
  CHECK(!results[0].report.has_value());
  CHECK(results[0].error.find("invalid") != std::string::npos);
  CHECK(results[1].report.has_value());
  CHECK(results[1].error.empty());
}

TEST_CASE("csv rows carry exactly the header's field count, error rows included") {
  const ModelShape shape{2, 2, 1};
  const auto count_fields = [](const std::string& s) {
    std::size_t n = 1;
    for (char c : s) n += c == ',';
    return n;
  };
  const std::size_t expected = count_fields(report_csv_header());

  const std::vector<RequestTrace> traces{path_trace("row", {0, 1})};
  const HardwareSpec hw = unit_hw(2);
  SimReport ok = run(traces, shape, hw, PolicyKind::on_demand, EamcConfig{});
  CHECK(count_fields(report_csv_row(ok, shape, hw)) == expected);

  MatrixResult failed;
  failed.cell = {PolicyKind::on_demand, 1, 2, hw};
  failed.error = "boom, with comma and\nnewline";
  const std::string row = matrix_csv_row(failed, shape);
  CHECK(count_fields(row) == expected);
  CHECK(row.find('\n') == std::string::npos);
}

TEST_CASE("event log captures hits, misses, transfers, and evictions") {
  const auto path = std::filesystem::temp_directory_path() / "moesim_events.jsonl";
  const ModelShape shape{2, 2, 1};
  // Two experts through a one-slot buffer force an eviction.
  RequestTrace t;
  t.request_id = "log";
  t.prompt_tokens = 1;
  t.iterations.push_back({RoutingEvent{0, {{0, 1}}}, RoutingEvent{1, {{1, 1}}}});
  const std::vector<RequestTrace> traces{t};
  {
    EventLog log(path);
    run(traces, shape, unit_hw(1), PolicyKind::lru, EamcConfig::with_capacity(2), &log);
  }
  std::ifstream in(path);
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  CHECK(text.find("\"event\":\"miss\"") != std::string::npos);
  CHECK(text.find("\"event\":\"transfer_start\"") != std::string::npos);
  CHECK(text.find("\"event\":\"transfer_complete\"") != std::string::npos);
  CHECK(text.find("\"event\":\"evict\"") != std::string::npos);
  CHECK(text.find("\"event\":\"iteration_end\"") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("eamc snapshots persist across runs through the engine") {
  const auto out = std::filesystem::temp_directory_path() / "moesim_run_eamc.json";
  WorkloadSpec spec;
  spec.shape = {3, 4, 1};
  spec.n_groups = 2;
  spec.prompt_len = DiscreteDist::constant(3);
  spec.decode_len = DiscreteDist::constant(4);
  spec.seed = 5;
  const auto traces = generate_corpus(spec, 6);
  const HardwareSpec hw = unit_hw(4);

  EamcConfig save_cfg;
  save_cfg.capacity = 8;
  save_cfg.decode_out = out;
  run(traces, spec.shape, hw, PolicyKind::activation_aware, save_cfg);

  const Eamc reloaded = Eamc::load(out, spec.shape);
  CHECK(reloaded.size() == 6);  // one decode EAM per request
  CHECK(reloaded.phase() == Phase::decode);

  // A warm-started run behaves deterministically with the snapshot.
  EamcConfig warm;
  warm.capacity = 8;
  warm.decode_in = out;
  const SimReport a = run(traces, spec.shape, hw, PolicyKind::activation_aware, warm);
  const SimReport b = run(traces, spec.shape, hw, PolicyKind::activation_aware, warm);
  CHECK(reports_equal(a, b, spec.shape, hw));
  std::filesystem::remove(out);
}
