// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/config.hpp"

#include "doctest.h"

using namespace moesim;

namespace {

const char* kMinimal = R"({
  "shape": {"n_layers": 4, "n_experts_per_layer": 8, "top_k": 1},
  "hardware": {
    "expert_size_bytes": 32000000,
    "link_bandwidth_bytes_per_s": 32000000000,
    "chunk_size_bytes": 16000000,
    "gpu_buffer_slots": 6,
    "expert_compute_latency_s": 0.001,
    "dense_layer_latency_s": 0.0001
  },
  "workload": {"n_groups": 2, "prompt_len": [[4, 1.0]], "decode_len": [[6, 1.0]]},
  "policy": "on_demand",
  "seed": 42,
  "n_requests": 3
})";

}  // namespace

TEST_CASE("minimal config parses with defaults") {
  const RunConfig c = parse_config_json(kMinimal);
  CHECK(c.shape.n_layers == 4);
  CHECK(c.hardware.expert_compute_ns == 1'000'000);
  CHECK(c.hardware.dense_layer_ns == 100'000);
  CHECK(c.hardware.n_gpus == 1);
  CHECK(!c.hardware.ssd_bandwidth_bytes_per_s.has_value());
  REQUIRE(c.workload.has_value());
  CHECK(c.workload->n_groups == 2);
  CHECK(c.workload->group_fidelity == 0.9);
  CHECK(c.workload->seed == 42);
  CHECK(c.policy == PolicyKind::on_demand);
  CHECK(!c.policy_all);
  CHECK(c.eamc_capacity == 32);
  CHECK(c.n_requests == 3);
}

TEST_CASE("config errors name the offending key") {
  CHECK_THROWS_WITH_AS(parse_config_json("{}"), doctest::Contains("shape"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_json(R"({"shape": {"n_layers": 2}})"),
                       doctest::Contains("n_experts_per_layer"), ConfigError);
  CHECK_THROWS_AS(parse_config_json("not json"), ConfigError);

  std::string bad_policy = kMinimal;
  bad_policy.replace(bad_policy.find("on_demand"), 9, "bogus_pol");
  CHECK_THROWS_WITH_AS(parse_config_json(bad_policy), doctest::Contains("policy"), ConfigError);
}

TEST_CASE("exactly one of workload and trace_path") {
  std::string both = kMinimal;
  both.insert(both.rfind('}'), R"(, "trace_path": "t.jsonl")");
  CHECK_THROWS_AS(parse_config_json(both), ConfigError);

  const char* trace_only = R"({
    "shape": {"n_layers": 2, "n_experts_per_layer": 2},
    "hardware": {"expert_size_bytes": 1000, "link_bandwidth_bytes_per_s": 1000000,
                 "chunk_size_bytes": 500, "gpu_buffer_slots": 2,
                 "expert_compute_latency_s": 0.001, "dense_layer_latency_s": 0.001},
    "trace_path": "t.jsonl"
  })";
  const RunConfig c = parse_config_json(trace_only);
  CHECK(c.trace_path == std::filesystem::path("t.jsonl"));
  CHECK(!c.workload.has_value());
}

TEST_CASE("policy 'all' and sweep axes parse") {
  std::string text = kMinimal;
  text.replace(text.find("on_demand"), 9, "all");
  text.insert(text.rfind('}'), R"(, "sweep": {"axis": "eamc_capacity", "values": [1, 2, 4]})");
  const RunConfig c = parse_config_json(text);
  CHECK(c.policy_all);
  REQUIRE(c.sweep.has_value());
  CHECK(c.sweep->axis == SweepAxis::eamc_capacity);
  CHECK(c.sweep->values == std::vector<std::uint64_t>{1, 2, 4});

  std::string bad_axis = text;
  bad_axis.replace(bad_axis.find("eamc_capacity"), 13, "warp_factor99");
  CHECK_THROWS_WITH_AS(parse_config_json(bad_axis), doctest::Contains("axis"), ConfigError);
}

TEST_CASE("dump and reparse reproduce the config") {
  std::string text = kMinimal;
  text.insert(text.rfind('}'),
              R"(, "sweep": {"axis": "bandwidth", "values": [1000, 2000]},
                 "out": "report.csv", "eamc_in": "snap.json")");
  const RunConfig c = parse_config_json(text);
  const std::string dumped = dump_config(c);
  const RunConfig back = parse_config_json(dumped);
  CHECK(back == c);
  CHECK(dump_config(back) == dumped);
}

TEST_CASE("materialized traces are deterministic and validated") {
  const RunConfig c = parse_config_json(kMinimal);
  const auto a = c.materialize_traces();
  const auto b = c.materialize_traces();
  CHECK(a == b);
  CHECK(a.size() == 3);
  for (const RequestTrace& t : a) CHECK(validate_trace(t, c.shape).ok());
  // Seed override changes the corpus.
  CHECK(!(c.materialize_traces(43) == a));
}

TEST_CASE("eamc_config carries the snapshot paths") {
  std::string text = kMinimal;
  text.insert(text.rfind('}'),
              R"(, "eamc_in": "a.json", "eamc_out": "b.json", "eamc_out_prefill": "c.json")");
  const RunConfig c = parse_config_json(text);
  const EamcConfig ec = c.eamc_config();
  CHECK(ec.capacity == 32);
  CHECK(ec.decode_in == std::filesystem::path("a.json"));
  CHECK(ec.decode_out == std::filesystem::path("b.json"));
  CHECK(ec.prefill_out == std::filesystem::path("c.json"));
  CHECK(!ec.prefill_in.has_value());
}
