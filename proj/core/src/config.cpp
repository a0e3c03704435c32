// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace moesim {

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::eamc_capacity: return "eamc_capacity";
    case SweepAxis::buffer_slots: return "buffer_slots";
    case SweepAxis::bandwidth: return "bandwidth";
  }
  return "unknown";
}

std::optional<SweepAxis> parse_sweep_axis(const std::string& name) {
  if (name == "eamc_capacity") return SweepAxis::eamc_capacity;
  if (name == "buffer_slots") return SweepAxis::buffer_slots;
  if (name == "bandwidth") return SweepAxis::bandwidth;
  return std::nullopt;
}

void RunConfig::validate() const {
  try {
    shape.validate();
    hardware.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (workload.has_value() == trace_path.has_value())
    throw ConfigError("exactly one of 'workload' and 'trace_path' must be set");
  if (workload) {
    if (!(workload->shape == shape))
      throw ConfigError("workload shape must match the top-level 'shape'");
    try {
      workload->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("workload: ") + e.what());
    }
  }
  if (eamc_capacity < 1) throw ConfigError("'eamc_capacity' must be >= 1");
  if (sweep && sweep->values.empty()) throw ConfigError("'sweep.values' must be non-empty");
}

EamcConfig RunConfig::eamc_config() const {
  EamcConfig cfg;
  cfg.capacity = eamc_capacity;
  cfg.decode_in = eamc_in;
  cfg.decode_out = eamc_out;
  cfg.prefill_in = eamc_in_prefill;
  cfg.prefill_out = eamc_out_prefill;
  return cfg;
}

std::vector<RequestTrace> RunConfig::materialize_traces() const {
  return materialize_traces(seed);
}

std::vector<RequestTrace> RunConfig::materialize_traces(std::uint64_t seed_override) const {
  if (trace_path) return ingest_traces(*trace_path, shape);
  WorkloadSpec spec = *workload;
  spec.seed = seed_override;
  return generate_corpus(spec, n_requests);
}

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw ConfigError("config key '" + key + "': " + why);
}

template <typename T>
T get_required(const Json& j, const std::string& key) {
  if (!j.contains(key)) bad_key(key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    bad_key(key, e.what());
  }
}

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    bad_key(key, e.what());
  }
}

std::optional<std::filesystem::path> get_path(const Json& j, const std::string& key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  try {
    return std::filesystem::path(j.at(key).get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    bad_key(key, e.what());
  }
}

SimTime seconds_to_ns(double s, const std::string& key) {
  if (!(s > 0.0) || !std::isfinite(s)) bad_key(key, "must be a positive number of seconds");
  if (s > 1e9) bad_key(key, "unreasonably large latency");
  return static_cast<SimTime>(std::llround(s * 1e9));
}

DiscreteDist parse_dist(const Json& j, const std::string& key) {
  DiscreteDist d;
  if (!j.is_array()) bad_key(key, "expected [[value, weight], ...]");
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2) bad_key(key, "expected [value, weight] pairs");
    try {
      d.pmf.emplace_back(pair.at(0).get<std::uint32_t>(), pair.at(1).get<double>());
    } catch (const nlohmann::json::exception& e) {
      bad_key(key, e.what());
    }
  }
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    bad_key(key, e.what());
  }
  return d;
}

Json dist_to_json(const DiscreteDist& d) {
  Json j = Json::array();
  for (const auto& [value, weight] : d.pmf) j.push_back({value, weight});
  return j;
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig c;
  const Json& js = j.contains("shape") ? j.at("shape") : throw ConfigError("config key 'shape': missing");
  c.shape.n_layers = get_required<std::uint32_t>(js, "n_layers");
  c.shape.n_experts_per_layer = get_required<std::uint32_t>(js, "n_experts_per_layer");
  c.shape.top_k = get_or<std::uint32_t>(js, "top_k", 1);

  if (!j.contains("hardware")) throw ConfigError("config key 'hardware': missing");
  const Json& jh = j.at("hardware");
  c.hardware.expert_size_bytes = get_required<std::uint64_t>(jh, "expert_size_bytes");
  c.hardware.link_bandwidth_bytes_per_s =
      get_required<std::uint64_t>(jh, "link_bandwidth_bytes_per_s");
  if (jh.contains("ssd_bandwidth_bytes_per_s") && !jh.at("ssd_bandwidth_bytes_per_s").is_null())
    c.hardware.ssd_bandwidth_bytes_per_s =
        jh.at("ssd_bandwidth_bytes_per_s").get<std::uint64_t>();
  c.hardware.chunk_size_bytes = get_required<std::uint64_t>(jh, "chunk_size_bytes");
  c.hardware.gpu_buffer_slots = get_required<std::uint32_t>(jh, "gpu_buffer_slots");
  c.hardware.n_gpus = get_or<std::uint32_t>(jh, "n_gpus", 1);
  c.hardware.expert_compute_ns =
      seconds_to_ns(get_required<double>(jh, "expert_compute_latency_s"),
                    "hardware.expert_compute_latency_s");
  c.hardware.dense_layer_ns = seconds_to_ns(
      get_required<double>(jh, "dense_layer_latency_s"), "hardware.dense_layer_latency_s");

  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.n_requests = get_or<std::uint64_t>(j, "n_requests", 1);

  if (j.contains("workload") && !j.at("workload").is_null()) {
    const Json& jw = j.at("workload");
    WorkloadSpec w;
    w.shape = c.shape;
    w.n_groups = get_or<std::uint32_t>(jw, "n_groups", 8);
    w.group_fidelity = get_or<double>(jw, "group_fidelity", 0.9);
    w.reuse_skew = get_or<double>(jw, "reuse_skew", 1.2);
    if (jw.contains("prompt_len")) w.prompt_len = parse_dist(jw.at("prompt_len"), "workload.prompt_len");
    if (jw.contains("decode_len")) w.decode_len = parse_dist(jw.at("decode_len"), "workload.decode_len");
    w.batch_size = get_or<std::uint32_t>(jw, "batch_size", 1);
    w.seed = c.seed;
    c.workload = std::move(w);
  }
  c.trace_path = get_path(j, "trace_path");

  const std::string policy_name = get_or<std::string>(j, "policy", "on_demand");
  if (policy_name == "all") {
    c.policy_all = true;
  } else if (const auto k = parse_policy(policy_name)) {
    c.policy = *k;
  } else {
    bad_key("policy", "unknown policy '" + policy_name + "'");
  }

  c.eamc_capacity = get_or<std::size_t>(j, "eamc_capacity", 32);
  c.out = get_path(j, "out");
  c.event_log = get_path(j, "event_log");
  c.eamc_in = get_path(j, "eamc_in");
  c.eamc_out = get_path(j, "eamc_out");
  c.eamc_in_prefill = get_path(j, "eamc_in_prefill");
  c.eamc_out_prefill = get_path(j, "eamc_out_prefill");

  if (j.contains("sweep") && !j.at("sweep").is_null()) {
    const Json& jw = j.at("sweep");
    SweepSpec s;
    const std::string axis = get_required<std::string>(jw, "axis");
    const auto parsed = parse_sweep_axis(axis);
    if (!parsed) bad_key("sweep.axis", "unknown axis '" + axis + "'");
    s.axis = *parsed;
    s.values = get_required<std::vector<std::uint64_t>>(jw, "values");
    c.sweep = std::move(s);
  }

  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_json(buf.str());
}

std::string dump_config(const RunConfig& c) {
  Json j;
  j["shape"] = {{"n_layers", c.shape.n_layers},
                {"n_experts_per_layer", c.shape.n_experts_per_layer},
                {"top_k", c.shape.top_k}};
  Json jh;
  jh["expert_size_bytes"] = c.hardware.expert_size_bytes;
  jh["link_bandwidth_bytes_per_s"] = c.hardware.link_bandwidth_bytes_per_s;
  if (c.hardware.ssd_bandwidth_bytes_per_s)
    jh["ssd_bandwidth_bytes_per_s"] = *c.hardware.ssd_bandwidth_bytes_per_s;
  else
    jh["ssd_bandwidth_bytes_per_s"] = nullptr;
  jh["chunk_size_bytes"] = c.hardware.chunk_size_bytes;
  jh["gpu_buffer_slots"] = c.hardware.gpu_buffer_slots;
  jh["n_gpus"] = c.hardware.n_gpus;
  jh["expert_compute_latency_s"] = static_cast<double>(c.hardware.expert_compute_ns) / 1e9;
  jh["dense_layer_latency_s"] = static_cast<double>(c.hardware.dense_layer_ns) / 1e9;
  j["hardware"] = std::move(jh);

  if (c.workload) {
    Json jw;
    jw["n_groups"] = c.workload->n_groups;
    jw["group_fidelity"] = c.workload->group_fidelity;
    jw["reuse_skew"] = c.workload->reuse_skew;
    jw["prompt_len"] = dist_to_json(c.workload->prompt_len);
    jw["decode_len"] = dist_to_json(c.workload->decode_len);
    jw["batch_size"] = c.workload->batch_size;
    j["workload"] = std::move(jw);
  } else {
    j["workload"] = nullptr;
  }
  j["trace_path"] = c.trace_path ? Json(c.trace_path->string()) : Json(nullptr);
  j["policy"] = c.policy_all ? "all" : to_string(c.policy);
  j["eamc_capacity"] = c.eamc_capacity;
  j["seed"] = c.seed;
  j["n_requests"] = c.n_requests;
  j["out"] = c.out ? Json(c.out->string()) : Json(nullptr);
  j["event_log"] = c.event_log ? Json(c.event_log->string()) : Json(nullptr);
  j["eamc_in"] = c.eamc_in ? Json(c.eamc_in->string()) : Json(nullptr);
  j["eamc_out"] = c.eamc_out ? Json(c.eamc_out->string()) : Json(nullptr);
  j["eamc_in_prefill"] = c.eamc_in_prefill ? Json(c.eamc_in_prefill->string()) : Json(nullptr);
  j["eamc_out_prefill"] =
      c.eamc_out_prefill ? Json(c.eamc_out_prefill->string()) : Json(nullptr);
  if (c.sweep) {
    j["sweep"] = {{"axis", to_string(c.sweep->axis)}, {"values", c.sweep->values}};
  } else {
    j["sweep"] = nullptr;
  }
  return j.dump(2);
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.shape == b.shape && a.hardware == b.hardware && a.workload == b.workload &&
         a.trace_path == b.trace_path && a.policy == b.policy && a.policy_all == b.policy_all &&
         a.eamc_capacity == b.eamc_capacity && a.seed == b.seed && a.n_requests == b.n_requests &&
         a.out == b.out && a.event_log == b.event_log && a.eamc_in == b.eamc_in &&
         a.eamc_out == b.eamc_out && a.eamc_in_prefill == b.eamc_in_prefill &&
         a.eamc_out_prefill == b.eamc_out_prefill && a.sweep == b.sweep;
}

}  // namespace moesim
