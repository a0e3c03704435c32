// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "moesim/engine.hpp"

namespace moesim {

/// Frozen CSV column order; documented in the README and relied on by
/// downstream plotting scripts.
std::string report_csv_header();

std::string report_csv_row(const SimReport& report, const ModelShape& shape,
                           const HardwareSpec& hw);

/// Error cells keep the run matrix rectangular: metrics blank, status and
/// error filled in.
std::string matrix_csv_row(const MatrixResult& result, const ModelShape& shape);

void write_reports_csv(const std::filesystem::path& path, const ModelShape& shape,
                       std::span<const MatrixResult> results);

/// Renders integer nanoseconds as seconds with all nine decimals, exactly.
std::string ns_to_seconds(SimTime ns);

}  // namespace moesim
