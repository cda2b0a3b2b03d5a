// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/report.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "dcp/errors.hpp"
#include "dcp/network.hpp"

namespace dcp {

namespace {

nlohmann::json config_snapshot(const Config& cfg) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : cfg.entries()) out[k] = v;
  return out;
}

}  // namespace

std::string make_train_record(const Config& cfg, double final_loss, double train_error,
                              double test_error, int epochs, double wall_seconds) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["kind"] = "train";
  j["config"] = config_snapshot(cfg);
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.get_int("seed", 0);
  j["epochs"] = epochs;
  j["final_loss"] = final_loss;
  j["train_error"] = train_error;
  j["test_error"] = test_error;
  j["timing"] = {{"wall_seconds", wall_seconds}};
  return j.dump();
}

std::string make_prune_record(const Config& cfg, const DcpReport& report) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["kind"] = "prune";
  j["config"] = config_snapshot(cfg);
  j["config_hash"] = cfg.hash();
  j["seed"] = report.seed;
  j["strategy"] = report.strategy;

  nlohmann::json layers = nlohmann::json::array();
  for (const auto& rec : report.layers) {
    layers.push_back({{"layer", rec.layer},
                      {"channels", rec.channels},
                      {"kept", rec.kept},
                      {"l20", rec.l20},
                      {"loss_first", rec.loss_first},
                      {"loss_last", rec.loss_last},
                      {"iterations", rec.iterations}});
  }
  j["layers"] = layers;

  j["params_before"] = report.params_before;
  j["params_after"] = report.params_after;
  j["param_reduction"] = report.params_after > 0
                             ? static_cast<double>(report.params_before) /
                                   static_cast<double>(report.params_after)
                             : 0.0;
  j["flops_before"] = report.flops_before;
  j["flops_after"] = report.flops_after;
  j["flop_reduction"] = report.flops_after > 0
                            ? static_cast<double>(report.flops_before) /
                                  static_cast<double>(report.flops_after)
                            : 0.0;
  j["flops_convention"] = flops_convention();
  j["error_before"] = report.error_before;
  j["error_after"] = report.error_after;
  j["error_gap"] = report.error_after - report.error_before;
  j["timing"] = {{"wall_seconds", report.wall_seconds}};
  return j.dump();
}

std::string make_eval_record(const Config& cfg, const std::string& checkpoint,
                             const EvalMetrics& metrics, double error_gap, bool has_gap,
                             double wall_seconds) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["kind"] = "eval";
  j["config"] = config_snapshot(cfg);
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.get_int("seed", 0);
  j["checkpoint"] = checkpoint;
  j["samples"] = metrics.count;
  j["top1_error"] = metrics.top1_error;
  if (metrics.has_top5) j["top5_error"] = metrics.top5_error;
  if (has_gap) j["error_gap"] = error_gap;
  j["timing"] = {{"wall_seconds", wall_seconds}};
  return j.dump();
}

std::string make_complexity_record(const std::string& arch, std::int64_t params,
                                   std::int64_t flops) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["kind"] = "complexity";
  j["arch"] = arch;
  j["params"] = params;
  j["flops"] = flops;
  j["flops_convention"] = flops_convention();
  return j.dump();
}

void append_report_line(const std::string& path, const std::string& line) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot open report file for append: " + path);
  out << line << "\n";
}

}  // namespace dcp
