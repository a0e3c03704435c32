// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#include "moesim/report.hpp"

#include <cstdio>
#include <fstream>

namespace moesim {

std::string ns_to_seconds(SimTime ns) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%lld.%09lld", static_cast<long long>(ns / kNsPerSecond),
                static_cast<long long>(ns % kNsPerSecond));
  return buf;
}

namespace {
std::string fmt_rate(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", r);
  return buf;
}
}  // namespace

std::string report_csv_header() {
  return "policy,seed,eamc_capacity,n_requests,n_layers,n_experts,top_k,gpu_buffer_slots,"
         "n_gpus,total_time_s,compute_time_s,blocking_time_s,idle_time_s,prefill_blocking_s,"
         "decode_blocking_s,bytes_dram_gpu,bytes_ssd_dram,activations,hits,hit_rate,"
         "prefill_hit_rate,decode_hit_rate,decode_iterations,decode_tpot_mean_s,"
         "decode_tpot_max_s,prefetch_candidates_issued,prefetch_cancellations,status,error";
}

std::string report_csv_row(const SimReport& r, const ModelShape& shape,
                           const HardwareSpec& hw) {
  std::string row;
  row += to_string(r.policy);
  row += ',' + std::to_string(r.seed);
  row += ',' + std::to_string(r.eamc_capacity);
  row += ',' + std::to_string(r.n_requests);
  row += ',' + std::to_string(shape.n_layers);
  row += ',' + std::to_string(shape.n_experts_per_layer);
  row += ',' + std::to_string(shape.top_k);
  row += ',' + std::to_string(hw.gpu_buffer_slots);
  row += ',' + std::to_string(hw.n_gpus);
  row += ',' + ns_to_seconds(r.total_time_ns);
  row += ',' + ns_to_seconds(r.compute_time_ns());
  row += ',' + ns_to_seconds(r.blocking_time_ns());
  row += ',' + ns_to_seconds(r.idle_time_ns());
  row += ',' + ns_to_seconds(r.prefill_blocking_ns);
  row += ',' + ns_to_seconds(r.decode_blocking_ns);
  row += ',' + std::to_string(r.bytes_dram_gpu());
  row += ',' + std::to_string(r.bytes_ssd_link);
  row += ',' + std::to_string(r.activations);
  row += ',' + std::to_string(r.hits);
  row += ',' + fmt_rate(r.hit_rate());
  row += ',' + fmt_rate(r.prefill_hit_rate());
  row += ',' + fmt_rate(r.decode_hit_rate());
  row += ',' + std::to_string(r.decode_tpot_ns.size());
  row += ',' + ns_to_seconds(r.decode_tpot_mean_ns());
  row += ',' + ns_to_seconds(r.decode_tpot_max_ns());
  row += ',' + std::to_string(r.prefetch_candidates_issued);
  row += ',' + std::to_string(r.prefetch_cancellations);
  row += ",ok,";
  return row;
}

std::string matrix_csv_row(const MatrixResult& result, const ModelShape& shape) {
  if (result.report) {
    return report_csv_row(*result.report, shape, result.cell.hardware);
  }
  std::string row;
  row += to_string(result.cell.policy);
  row += ',' + std::to_string(result.cell.seed);
  row += ',' + std::to_string(result.cell.eamc_capacity);
  row += ",0";
  row += ',' + std::to_string(shape.n_layers);
  row += ',' + std::to_string(shape.n_experts_per_layer);
  row += ',' + std::to_string(shape.top_k);
  row += ',' + std::to_string(result.cell.hardware.gpu_buffer_slots);
  row += ',' + std::to_string(result.cell.hardware.n_gpus);
  // Blank metric columns (total_time_s through prefetch_cancellations).
  for (int i = 0; i < 18; ++i) row += ",";
  std::string err = result.error;
  for (char& c : err) {
    if (c == ',' || c == '\n') c = ';';
  }
  row += ",error," + err;
  return row;
}

void write_reports_csv(const std::filesystem::path& path, const ModelShape& shape,
                       std::span<const MatrixResult> results) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << report_csv_header() << '\n';
  for (const MatrixResult& r : results) {
    out << matrix_csv_row(r, shape) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace moesim
