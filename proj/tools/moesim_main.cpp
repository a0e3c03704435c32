// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moesim/bench.hpp"
#include "moesim/config.hpp"
#include "moesim/eam.hpp"
#include "moesim/engine.hpp"
#include "moesim/report.hpp"
#include "moesim/workload.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;
constexpr int kExitPolicyContract = 4;

struct CommonFlags {
  std::string config_path;
  std::string trace;
  std::string policy;
  std::uint64_t seed = 0;
  std::string out;
  std::string event_log;
  bool dump_config = false;
};

/// Applies flag overrides on top of the config file; `cmd` tells which
/// flags were actually given.
moesim::RunConfig effective_config(const CommonFlags& flags, const CLI::App& cmd) {
  moesim::RunConfig config = moesim::load_config(flags.config_path);
  if (cmd.count("--trace") > 0) {
    config.trace_path = flags.trace;
    config.workload.reset();
  }
  if (cmd.count("--policy") > 0) {
    if (flags.policy == "all") {
      config.policy_all = true;
    } else if (const auto kind = moesim::parse_policy(flags.policy)) {
      config.policy = *kind;
      config.policy_all = false;
    } else {
      throw moesim::ConfigError("unknown policy '" + flags.policy + "'");
    }
  }
  if (cmd.count("--seed") > 0) {
    config.seed = flags.seed;
    if (config.workload) config.workload->seed = flags.seed;
  }
  if (cmd.count("--out") > 0) config.out = flags.out;
  if (cmd.count("--event-log") > 0) config.event_log = flags.event_log;
  config.validate();
  return config;
}

int cmd_generate(const CommonFlags& flags, const CLI::App& cmd, std::uint64_t n_override) {
  moesim::RunConfig config = effective_config(flags, cmd);
  if (cmd.count("--n-requests") > 0) config.n_requests = n_override;
  if (flags.dump_config) {
    std::cout << moesim::dump_config(config) << '\n';
    return kExitOk;
  }
  if (!config.workload)
    throw moesim::ConfigError("generate needs a 'workload' section, not 'trace_path'");
  if (!config.out) throw moesim::ConfigError("generate needs an output path ('out' or --out)");
  const auto traces = config.materialize_traces();
  moesim::write_traces_jsonl(*config.out, traces);
  std::cout << "wrote " << traces.size() << " traces to " << config.out->string() << '\n';
  return kExitOk;
}

void print_or_write_csv(const moesim::RunConfig& config,
                        const std::vector<moesim::MatrixResult>& results) {
  if (config.out) {
    moesim::write_reports_csv(*config.out, config.shape, results);
    std::cout << "wrote " << results.size() << " rows to " << config.out->string() << '\n';
  } else {
    std::cout << moesim::report_csv_header() << '\n';
    for (const auto& r : results) std::cout << moesim::matrix_csv_row(r, config.shape) << '\n';
  }
}

int cmd_simulate(const CommonFlags& flags, const CLI::App& cmd) {
  moesim::RunConfig config = effective_config(flags, cmd);
  if (flags.dump_config) {
    std::cout << moesim::dump_config(config) << '\n';
    return kExitOk;
  }
  const auto traces = config.materialize_traces();

  std::vector<moesim::PolicyKind> kinds;
  if (config.policy_all) {
    kinds.assign(moesim::all_policies().begin(), moesim::all_policies().end());
  } else {
    kinds.push_back(config.policy);
  }

  std::optional<moesim::EventLog> log;
  if (config.event_log) {
    if (kinds.size() > 1) {
      std::cerr << "note: --event-log records the first policy only\n";
    }
    log.emplace(*config.event_log);
  }

  std::vector<moesim::MatrixResult> results;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    moesim::SimReport report =
        moesim::run(traces, config.shape, config.hardware, kinds[i], config.eamc_config(),
                    i == 0 && log ? &*log : nullptr);
    report.seed = config.seed;
    moesim::MatrixResult r;
    r.cell = {kinds[i], config.seed, config.eamc_capacity, config.hardware};
    r.report = std::move(report);
    results.push_back(std::move(r));
  }
  print_or_write_csv(config, results);
  return kExitOk;
}

int cmd_sweep(const CommonFlags& flags, const CLI::App& cmd, const std::string& axis_flag,
              const std::vector<std::uint64_t>& values_flag) {
  moesim::RunConfig config = effective_config(flags, cmd);
  if (cmd.count("--axis") > 0) {
    moesim::SweepSpec spec;
    const auto axis = moesim::parse_sweep_axis(axis_flag);
    if (!axis) throw moesim::ConfigError("unknown sweep axis '" + axis_flag + "'");
    spec.axis = *axis;
    spec.values = values_flag.empty() && config.sweep ? config.sweep->values : values_flag;
    config.sweep = spec;
  } else if (!values_flag.empty() && config.sweep) {
    config.sweep->values = values_flag;
  }
  if (flags.dump_config) {
    std::cout << moesim::dump_config(config) << '\n';
    return kExitOk;
  }
  if (!config.sweep || config.sweep->values.empty())
    throw moesim::ConfigError("sweep needs an axis and values (config 'sweep' or --axis/--values)");

  std::vector<moesim::PolicyKind> kinds;
  if (config.policy_all) {
    kinds.assign(moesim::all_policies().begin(), moesim::all_policies().end());
  } else {
    kinds.push_back(config.policy);
  }

  std::vector<moesim::MatrixCell> cells;
  for (const std::uint64_t value : config.sweep->values) {
    for (const moesim::PolicyKind kind : kinds) {
      moesim::MatrixCell cell{kind, config.seed, config.eamc_capacity, config.hardware};
      switch (config.sweep->axis) {
        case moesim::SweepAxis::eamc_capacity:
          cell.eamc_capacity = static_cast<std::size_t>(value);
          break;
        case moesim::SweepAxis::buffer_slots:
          cell.hardware.gpu_buffer_slots = static_cast<std::uint32_t>(value);
          break;
        case moesim::SweepAxis::bandwidth:
          cell.hardware.link_bandwidth_bytes_per_s = value;
          break;
      }
      cells.push_back(cell);
    }
  }

  const auto results = moesim::run_matrix(
      cells, config.shape,
      [&config](std::uint64_t seed) { return config.materialize_traces(seed); },
      config.eamc_config());
  print_or_write_csv(config, results);
  return kExitOk;
}

int cmd_bench_match(std::size_t entries, std::uint32_t layers, std::uint32_t experts,
                    std::size_t queries, std::uint64_t seed) {
  const moesim::ModelShape shape{layers, experts, 1};
  const auto r = moesim::bench_match(entries, shape, queries, seed);
  std::printf("entries=%zu shape=%ux%u queries=%zu mean_us=%.3f median_us=%.3f\n", r.n_entries,
              layers, experts, r.n_queries, r.mean_us, r.median_us);
  return kExitOk;
}

moesim::Eam request_level_eam(const moesim::RequestTrace& trace, const moesim::ModelShape& shape,
                              moesim::Phase phase) {
  moesim::Eam eam(shape, moesim::EamKind::request, phase);
  const std::size_t begin = phase == moesim::Phase::prefill ? 0 : 1;
  const std::size_t end = phase == moesim::Phase::prefill ? 1 : trace.iterations.size();
  for (std::size_t it = begin; it < end && it < trace.iterations.size(); ++it) {
    for (const moesim::RoutingEvent& ev : trace.iterations[it]) eam.record(ev);
  }
  return eam;
}

int cmd_eamc_save(const CommonFlags& flags, const CLI::App& cmd, const std::string& phase_name) {
  moesim::RunConfig config = effective_config(flags, cmd);
  if (!config.trace_path)
    throw moesim::ConfigError("eamc save builds from a trace file; pass --trace");
  if (!config.out) throw moesim::ConfigError("eamc save needs an output path (--out)");
  const moesim::Phase phase =
      phase_name == "prefill" ? moesim::Phase::prefill : moesim::Phase::decode;

  const auto traces = moesim::ingest_traces(*config.trace_path, config.shape);
  moesim::Eamc eamc(config.shape, phase, config.eamc_capacity);
  for (const auto& trace : traces) {
    if (phase == moesim::Phase::decode && trace.iterations.size() < 2) continue;
    eamc.insert(request_level_eam(trace, config.shape, phase));
  }
  eamc.save(*config.out);
  std::cout << "saved " << eamc.size() << "/" << eamc.capacity() << " " << phase_name
            << " entries to " << config.out->string() << '\n';
  return kExitOk;
}

int cmd_eamc_load(const std::string& in, const std::string& config_path,
                  const std::string& out) {
  moesim::Eamc eamc = !config_path.empty()
                          ? moesim::Eamc::load(in, moesim::load_config(config_path).shape)
                          : moesim::Eamc::load(in);
  std::cout << "loaded " << eamc.size() << "/" << eamc.capacity() << " entries, shape "
            << eamc.shape().n_layers << "x" << eamc.shape().n_experts_per_layer << ", phase "
            << moesim::to_string(eamc.phase()) << '\n';
  if (!out.empty()) eamc.save(out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trace-driven simulator for activation-aware MoE expert offloading"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string axis_flag;
  std::vector<std::uint64_t> values_flag;
  std::uint64_t n_requests_override = 0;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "JSON config file")->required();
    cmd->add_option("--trace", flags.trace, "trace JSONL path (overrides config workload)");
    cmd->add_option("--policy", flags.policy, "policy name or 'all'");
    cmd->add_option("--seed", flags.seed, "seed override");
    cmd->add_option("--out", flags.out, "output path");
    cmd->add_option("--event-log", flags.event_log, "per-event JSONL log path");
    cmd->add_flag("--dump-config", flags.dump_config, "print the effective config and exit");
  };

  auto* generate = app.add_subcommand("generate", "synthesize a routing-trace corpus");
  add_common(generate);
  generate->add_option("-n,--n-requests", n_requests_override,
                       "number of requests (overrides config)");

  auto* simulate = app.add_subcommand("simulate", "replay traces under a policy");
  add_common(simulate);

  auto* sweep = app.add_subcommand("sweep", "run a parameter sweep matrix");
  add_common(sweep);
  sweep->add_option("--axis", axis_flag, "sweep axis: eamc_capacity | buffer_slots | bandwidth");
  sweep->add_option("--values", values_flag, "axis values")->delimiter(',');

  std::size_t bench_entries = 1000, bench_queries = 1000;
  std::uint32_t bench_layers = 12, bench_experts = 128;
  std::uint64_t bench_seed = 0;
  auto* bench = app.add_subcommand("bench-match", "time nearest-neighbor EAMC queries");
  bench->add_option("--entries", bench_entries, "collection size");
  bench->add_option("--layers", bench_layers, "model layers");
  bench->add_option("--experts", bench_experts, "experts per layer");
  bench->add_option("--queries", bench_queries, "number of timed queries");
  bench->add_option("--seed", bench_seed, "rng seed");

  auto* eamc = app.add_subcommand("eamc", "collection snapshot utilities");
  eamc->require_subcommand(1);
  auto* eamc_save = eamc->add_subcommand("save", "build a snapshot from a trace file");
  add_common(eamc_save);
  std::string eamc_phase = "decode";
  eamc_save->add_option("--phase", eamc_phase, "prefill | decode")
      ->check(CLI::IsMember({"prefill", "decode"}));
  auto* eamc_load = eamc->add_subcommand("load", "inspect (and optionally re-save) a snapshot");
  std::string eamc_in, eamc_cfg, eamc_out_path;
  eamc_load->add_option("--in", eamc_in, "snapshot path")->required();
  eamc_load->add_option("--config", eamc_cfg, "config whose shape the snapshot must match");
  eamc_load->add_option("--out", eamc_out_path, "re-save destination");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (generate->parsed()) return cmd_generate(flags, *generate, n_requests_override);
    if (simulate->parsed()) return cmd_simulate(flags, *simulate);
    if (sweep->parsed()) return cmd_sweep(flags, *sweep, axis_flag, values_flag);
    if (bench->parsed())
      return cmd_bench_match(bench_entries, bench_layers, bench_experts, bench_queries,
                             bench_seed);
    if (eamc_save->parsed()) return cmd_eamc_save(flags, *eamc_save, eamc_phase);
    if (eamc_load->parsed()) return cmd_eamc_load(eamc_in, eamc_cfg, eamc_out_path);
  } catch (const moesim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const moesim::TraceIngestError& e) {
    std::cerr << "trace error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const moesim::TraceValidationError& e) {
    std::cerr << "trace error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const moesim::TraceParseError& e) {
    std::cerr << "trace error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const moesim::ProtectedSlotError& e) {
    std::cerr << "policy contract violation: " << e.what() << '\n';
    return kExitPolicyContract;
  } catch (const moesim::ExecutingExpertError& e) {
    std::cerr << "policy contract violation: " << e.what() << '\n';
    return kExitPolicyContract;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::logic_error& e) {
    std::cerr << "policy contract violation: " << e.what() << '\n';
    return kExitPolicyContract;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
