// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "dcp/config.hpp"
#include "dcp/pipeline.hpp"

namespace dcp {

/// Records are single-line JSON with sorted keys, so identical inputs yield
/// byte-identical lines. Wall-clock data lives under the "timing" key only;
/// strip it before hashing or comparing runs.
constexpr int kReportSchemaVersion = 1;

std::string make_train_record(const Config& cfg, double final_loss, double train_error,
                              double test_error, int epochs, double wall_seconds);

std::string make_prune_record(const Config& cfg, const DcpReport& report);

std::string make_eval_record(const Config& cfg, const std::string& checkpoint,
                             const EvalMetrics& metrics, double error_gap, bool has_gap,
                             double wall_seconds);

std::string make_complexity_record(const std::string& arch, std::int64_t params,
                                   std::int64_t flops);

/// Appends one line to the report file (creating it if needed). An empty
/// path is a no-op, letting callers print to stdout only.
void append_report_line(const std::string& path, const std::string& line);

}  // namespace dcp
