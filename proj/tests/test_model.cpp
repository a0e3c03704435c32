// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/model.hpp"

#include <filesystem>
#include <fstream>

#include "doctest.h"

using namespace moesim;

namespace {

RequestTrace two_layer_trace() {
  RequestTrace t;
  t.request_id = "r0";
  t.prompt_tokens = 3;
  t.iterations = {{
      RoutingEvent{0, {{0, 2}, {1, 1}}},
      RoutingEvent{1, {{1, 3}}},
  }};
  return t;
}

}  // namespace

TEST_CASE("validate_trace accepts a well-formed trace") {
  const ModelShape shape{2, 2, 1};
  const RequestTrace t = two_layer_trace();
  CHECK(validate_trace(t, shape).ok());
}

TEST_CASE("validate_trace flags an expert index at E") {
  const ModelShape shape{2, 2, 1};
  RequestTrace t = two_layer_trace();
  t.iterations[0][1].assignments.push_back({2, 1});  // expert_idx == E
  const ValidationResult r = validate_trace(t, shape);
  CHECK(r.kind == TraceViolation::expert_index_out_of_range);
  CHECK(r.iteration == 0);
  CHECK(r.layer == 1);
}

TEST_CASE("validate_trace flags a missing layer") {
  const ModelShape shape{2, 2, 1};
  RequestTrace t = two_layer_trace();
  t.iterations[0].pop_back();
  const ValidationResult r = validate_trace(t, shape);
  CHECK(r.kind == TraceViolation::layer_count_mismatch);
  CHECK(r.iteration == 0);
}

TEST_CASE("validate_trace flags out-of-order layers") {
  const ModelShape shape{2, 2, 1};
  RequestTrace t = two_layer_trace();
  std::swap(t.iterations[0][0], t.iterations[0][1]);
  CHECK(validate_trace(t, shape).kind == TraceViolation::layer_count_mismatch);
}

TEST_CASE("validate_trace flags an empty iteration list") {
  const ModelShape shape{2, 2, 1};
  RequestTrace t = two_layer_trace();
  t.iterations.clear();
  CHECK(validate_trace(t, shape).kind == TraceViolation::empty_iteration_list);
}

TEST_CASE("validate_trace flags zero token counts") {
  const ModelShape shape{2, 2, 1};
  RequestTrace t = two_layer_trace();
  t.iterations[0][0].assignments[0].token_count = 0;
  CHECK(validate_trace(t, shape).kind == TraceViolation::invalid_token_count);
}

TEST_CASE("validate_trace is pure") {
  const ModelShape shape{2, 2, 1};
  RequestTrace t = two_layer_trace();
  t.iterations[0].pop_back();
  const ValidationResult a = validate_trace(t, shape);
  const ValidationResult b = validate_trace(t, shape);
  CHECK(a.kind == b.kind);
  CHECK(a.iteration == b.iteration);
  CHECK(a.detail == b.detail);
}

TEST_CASE("ModelShape validation") {
  CHECK_THROWS_AS((ModelShape{0, 2, 1}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((ModelShape{2, 0, 1}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((ModelShape{2, 2, 0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((ModelShape{2, 2, 3}).validate(), std::invalid_argument);
  CHECK_NOTHROW((ModelShape{2, 2, 2}).validate());
}

TEST_CASE("ExpertId ordering is (layer, expert) lexicographic") {
  CHECK(ExpertId{0, 5} < ExpertId{1, 0});
  CHECK(ExpertId{1, 0} < ExpertId{1, 1});
  CHECK(ExpertId{1, 1} == ExpertId{1, 1});
}

TEST_CASE("trace JSONL uses the documented field names") {
  const RequestTrace t = two_layer_trace();
  const std::string line = trace_to_jsonl(t);
  CHECK(line.find("\"request_id\"") != std::string::npos);
  CHECK(line.find("\"prompt_tokens\"") != std::string::npos);
  CHECK(line.find("\"iterations\"") != std::string::npos);
  CHECK(trace_from_jsonl(line) == t);
}

TEST_CASE("trace JSONL ignores unknown fields") {
  const std::string line =
      R"({"request_id":"x","prompt_tokens":1,"iterations":[[[0,[[0,1]]]]],"extra":42})";
  const RequestTrace t = trace_from_jsonl(line);
  CHECK(t.request_id == "x");
  CHECK(t.iterations.size() == 1);
}

TEST_CASE("trace JSONL rejects malformed input") {
  CHECK_THROWS_AS(trace_from_jsonl("{not json"), TraceParseError);
  CHECK_THROWS_AS(trace_from_jsonl(R"({"request_id":"x"})"), TraceParseError);
}

TEST_CASE("trace file round-trip preserves traces and line errors carry numbers") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "moesim_test_traces.jsonl";
  std::vector<RequestTrace> traces{two_layer_trace(), two_layer_trace()};
  traces[1].request_id = "r1";
  write_traces_jsonl(path, traces);
  CHECK(read_traces_jsonl(path) == traces);

  std::ofstream out(path, std::ios::app);
  out << "{broken\n";
  out.close();
  try {
    read_traces_jsonl(path);
    FAIL("expected TraceParseError");
  } catch (const TraceParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::filesystem::remove(path);
}
