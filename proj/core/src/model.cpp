// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/model.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace moesim {

void ModelShape::validate() const {
  if (n_layers < 1) throw std::invalid_argument("ModelShape: n_layers must be >= 1");
  if (n_experts_per_layer < 1)
    throw std::invalid_argument("ModelShape: n_experts_per_layer must be >= 1");
  if (top_k < 1 || top_k > n_experts_per_layer)
    throw std::invalid_argument("ModelShape: top_k must be in [1, n_experts_per_layer]");
}

const char* to_string(TraceViolation v) {
  switch (v) {
    case TraceViolation::none: return "none";
    case TraceViolation::empty_iteration_list: return "EmptyIterationList";
    case TraceViolation::layer_count_mismatch: return "LayerCountMismatch";
    case TraceViolation::expert_index_out_of_range: return "ExpertIndexOutOfRange";
    case TraceViolation::invalid_token_count: return "InvalidTokenCount";
  }
  return "unknown";
}

ValidationResult validate_trace(const RequestTrace& trace,
                                const ModelShape& shape) {
  if (trace.iterations.empty()) {
    return {TraceViolation::empty_iteration_list, -1, -1,
            "request '" + trace.request_id + "' has no iterations"};
  }
  for (std::size_t it = 0; it < trace.iterations.size(); ++it) {
    const IterationTrace& iter = trace.iterations[it];
    if (iter.size() != shape.n_layers) {
      std::ostringstream os;
      os << "iteration " << it << " has " << iter.size() << " routing events, expected "
         << shape.n_layers;
      return {TraceViolation::layer_count_mismatch, static_cast<std::int64_t>(it), -1, os.str()};
    }
    for (std::uint32_t l = 0; l < shape.n_layers; ++l) {
      const RoutingEvent& ev = iter[l];
      if (ev.layer_idx != l) {
        std::ostringstream os;
        os << "iteration " << it << " position " << l << " carries layer " << ev.layer_idx;
        return {TraceViolation::layer_count_mismatch, static_cast<std::int64_t>(it), l, os.str()};
      }
      for (const ExpertAssignment& a : ev.assignments) {
        if (a.expert_idx >= shape.n_experts_per_layer) {
          std::ostringstream os;
          os << "iteration " << it << " layer " << l << " routes expert " << a.expert_idx
             << " outside [0, " << shape.n_experts_per_layer << ")";
          return {TraceViolation::expert_index_out_of_range, static_cast<std::int64_t>(it), l,
                  os.str()};
        }
        if (a.token_count < 1) {
          std::ostringstream os;
          os << "iteration " << it << " layer " << l << " expert " << a.expert_idx
             << " has zero token count";
          return {TraceViolation::invalid_token_count, static_cast<std::int64_t>(it), l, os.str()};
        }
      }
    }
  }
  return {};
}

std::string trace_to_jsonl(const RequestTrace& trace) {
  nlohmann::json iters = nlohmann::json::array();
  for (const IterationTrace& iter : trace.iterations) {
    nlohmann::json jiter = nlohmann::json::array();
    for (const RoutingEvent& ev : iter) {
      nlohmann::json assigns = nlohmann::json::array();
      for (const ExpertAssignment& a : ev.assignments) {
        assigns.push_back({a.expert_idx, a.token_count});
      }
      jiter.push_back({ev.layer_idx, std::move(assigns)});
    }
    iters.push_back(std::move(jiter));
  }
  nlohmann::json j{{"request_id", trace.request_id},
                   {"prompt_tokens", trace.prompt_tokens},
                   {"iterations", std::move(iters)}};
  return j.dump();
}

RequestTrace trace_from_jsonl(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw TraceParseError(std::string("bad JSON: ") + e.what());
  }
  try {
    RequestTrace t;
    t.request_id = j.at("request_id").get<std::string>();
    t.prompt_tokens = j.at("prompt_tokens").get<std::uint64_t>();
    for (const auto& jiter : j.at("iterations")) {
      IterationTrace iter;
      for (const auto& jev : jiter) {
        RoutingEvent ev;
        ev.layer_idx = jev.at(0).get<std::uint32_t>();
        for (const auto& ja : jev.at(1)) {
          ev.assignments.push_back(
              {ja.at(0).get<std::uint32_t>(), ja.at(1).get<std::uint64_t>()});
        }
        iter.push_back(std::move(ev));
      }
      t.iterations.push_back(std::move(iter));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw TraceParseError(std::string("bad trace structure: ") + e.what());
  }
}

void write_traces_jsonl(const std::filesystem::path& path,
                        std::span<const RequestTrace> traces) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const RequestTrace& t : traces) {
    out << trace_to_jsonl(t) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<RequestTrace> read_traces_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<RequestTrace> traces;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      traces.push_back(trace_from_jsonl(line));
    } catch (const TraceParseError& e) {
      throw TraceParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return traces;
}

}  // namespace moesim
