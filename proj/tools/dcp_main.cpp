// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: train a baseline, prune it, evaluate a
// checkpoint, report model complexity. One command per process; every
// record is emitted as a single JSON line on stdout and appended to the
// report file when `report.path` is set.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "dcp/checkpoint.hpp"
#include "dcp/config.hpp"
#include "dcp/dataset.hpp"
#include "dcp/errors.hpp"
#include "dcp/network.hpp"
#include "dcp/pipeline.hpp"
#include "dcp/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommandLine {
  std::string command;
  std::string config_path;
  std::string checkpoint_path;
  std::string out_path;
  dcp::Config config;
};

void usage(std::ostream& os) {
  os << "usage: dcp <command> [options]\n"
        "\n"
        "commands:\n"
        "  train        train a baseline model and save a checkpoint\n"
        "  prune        run channel pruning on a checkpoint\n"
        "  eval         evaluate a checkpoint on the configured test split\n"
        "  complexity   report parameter and FLOP counts of a checkpoint\n"
        "\n"
        "options:\n"
        "  --config FILE        flat key = value config file\n"
        "  --checkpoint FILE    input checkpoint (prune/eval/complexity; train resume)\n"
        "  --out FILE           output checkpoint path (train/prune)\n"
        "  --<key> VALUE        override any config key, e.g. --prune.lambda 0.5\n"
        "\n"
        "The DCP_DATA_DIR environment variable overrides data.dir.\n";
}

CommandLine parse_args(int argc, char** argv) {
  CommandLine cl;
  if (argc < 2) throw dcp::ConfigError("missing command");
  cl.command = argv[1];

  std::vector<std::pair<std::string, std::string>> overrides;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) {
      throw dcp::ConfigError("unexpected argument '" + arg + "'");
    }
    arg = arg.substr(2);
    std::string value;
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      value = arg.substr(eq + 1);
      arg = arg.substr(0, eq);
    } else {
      if (i + 1 >= argc) throw dcp::ConfigError("flag --" + arg + " expects a value");
      value = argv[++i];
    }
    if (arg == "config") {
      cl.config_path = value;
    } else if (arg == "checkpoint") {
      cl.checkpoint_path = value;
    } else if (arg == "out") {
      cl.out_path = value;
    } else {
      overrides.emplace_back(arg, value);
    }
  }

  if (!cl.config_path.empty()) cl.config = dcp::Config::from_file(cl.config_path);
  for (const auto& [k, v] : overrides) cl.config.set(k, v);
  return cl;
}

std::string data_dir(const dcp::Config& cfg) {
  if (const char* env = std::getenv("DCP_DATA_DIR"); env != nullptr && env[0] != '\0') {
    return env;
  }
  return cfg.get_string("data.dir", "");
}

struct DataPair {
  dcp::Dataset train;
  dcp::Dataset test;
};

DataPair load_data(const dcp::Config& cfg) {
  const std::string kind = cfg.get_string("data.kind", "gaussian-blobs");
  if (kind == "cifar10") {
    const std::string dir = data_dir(cfg);
    if (dir.empty()) {
      throw dcp::ConfigError("data.kind = cifar10 requires data.dir (or DCP_DATA_DIR)");
    }
    return {dcp::load_cifar10(dir, "train"), dcp::load_cifar10(dir, "test")};
  }

  dcp::SyntheticSpec spec;
  if (kind == "gaussian-blobs") {
    spec.kind = dcp::SyntheticKind::GaussianBlobs;
  } else if (kind == "informative-channel") {
    spec.kind = dcp::SyntheticKind::InformativeChannel;
  } else {
    throw dcp::ConfigError("unknown data.kind '" + kind + "'");
  }
  spec.classes = static_cast<int>(cfg.get_int("model.classes", 10));
  spec.channels = static_cast<int>(cfg.get_int("model.in_channels", 3));
  spec.image_size = static_cast<int>(cfg.get_int("model.image_size", 8));
  spec.informative = static_cast<int>(cfg.get_int("data.informative", 2));
  spec.signal = cfg.get_double("data.signal", 1.0);
  spec.noise = cfg.get_double("data.noise", 0.25);
  spec.distractor = cfg.get_double("data.distractor", 0.0);
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));

  spec.count = cfg.get_int("data.train_n", 512);
  dcp::Dataset train = dcp::make_synthetic(spec);
  spec.count = cfg.get_int("data.test_n", 256);
  spec.seed += 0x9e3779b9u;  // disjoint draw for the held-out split
  dcp::Dataset test = dcp::make_synthetic(spec);
  test.split = "test";
  return {std::move(train), std::move(test)};
}

dcp::PruneConfig prune_config(const dcp::Config& cfg) {
  dcp::PruneConfig pc;
  pc.lambda = cfg.get_double("prune.lambda", 1.0);
  pc.epsilon = cfg.get_double("prune.epsilon", 0.01);
  pc.keep_ratio = cfg.get_double("prune.keep_ratio", 0.7);
  const std::string stop = cfg.get_string("prune.stop", "budget");
  if (stop == "budget") {
    pc.stop = dcp::StopMode::Budget;
  } else if (stop == "tolerance") {
    pc.stop = dcp::StopMode::Tolerance;
  } else if (stop == "whichever-first") {
    pc.stop = dcp::StopMode::WhicheverFirst;
  } else {
    throw dcp::ConfigError("prune.stop must be budget | tolerance | whichever-first, got '" +
                           stop + "'");
  }
  pc.heads = static_cast<int>(cfg.get_int("prune.heads", 0));
  pc.strategy = dcp::strategy_from_string(cfg.get_string("prune.strategy", "dcp"));
  pc.select_gamma = cfg.get_double("prune.gamma", 0.01);
  pc.select_steps = static_cast<int>(cfg.get_int("prune.inner_steps", 20));
  pc.select_batch = static_cast<int>(cfg.get_int("prune.batch", 64));
  pc.subset = cfg.get_int("prune.subset", 1000);
  pc.finetune_epochs = static_cast<int>(cfg.get_int("prune.finetune_epochs", 2));
  pc.finetune_lr = cfg.get_double("prune.finetune_lr", 0.01);
  pc.finetune_decay = cfg.get_double("prune.finetune_decay", 1.0);
  pc.momentum = cfg.get_double("train.momentum", 0.9);
  pc.weight_decay = cfg.get_double("train.weight_decay", 1e-4);
  pc.finetune_batch = static_cast<int>(cfg.get_int("train.batch", 64));
  pc.final_finetune_epochs = static_cast<int>(cfg.get_int("prune.final_finetune_epochs", 4));
  pc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  return pc;
}

dcp::NetworkDef build_from_config(const dcp::Config& cfg) {
  const std::string kind = cfg.get_string("data.kind", "gaussian-blobs");
  const int classes = static_cast<int>(cfg.get_int("model.classes", 10));
  int in_channels = static_cast<int>(cfg.get_int("model.in_channels", 3));
  int image_size = static_cast<int>(cfg.get_int("model.image_size", 8));
  if (kind == "cifar10") {
    in_channels = 3;
    image_size = 32;
  }
  return dcp::build_architecture(cfg.get_string("model.arch", "toy-cnn"), classes, in_channels,
                                 image_size, static_cast<std::uint64_t>(cfg.get_int("seed", 0)));
}

int cmd_train(const CommandLine& cl) {
  const auto t0 = std::chrono::steady_clock::now();
  DataPair data = load_data(cl.config);

  dcp::NetworkDef net;
  int start_epoch = 0;
  if (!cl.checkpoint_path.empty()) {
    dcp::LoadedCheckpoint loaded = dcp::load_checkpoint(cl.checkpoint_path);
    net = std::move(loaded.net);
    start_epoch = loaded.meta.epoch;
    const std::string arch = cl.config.get_string("model.arch", net.arch);
    if (arch != net.arch) {
      throw dcp::ConfigError("checkpoint architecture '" + net.arch +
                             "' does not match config model.arch '" + arch + "'");
    }
  } else {
    net = build_from_config(cl.config);
  }

  dcp::TrainConfig tc;
  tc.epochs = static_cast<int>(cl.config.get_int("train.epochs", 10));
  tc.lr = cl.config.get_double("train.lr", 0.05);
  tc.lr_decay = cl.config.get_double("train.lr_decay", 1.0);
  tc.momentum = cl.config.get_double("train.momentum", 0.9);
  tc.weight_decay = cl.config.get_double("train.weight_decay", 1e-4);
  tc.batch = static_cast<int>(cl.config.get_int("train.batch", 64));
  tc.seed = static_cast<std::uint64_t>(cl.config.get_int("seed", 0)) + start_epoch;

  const double final_loss = dcp::train_baseline(net, data.train, tc);
  const dcp::EvalMetrics train_metrics = dcp::evaluate(net, data.train);
  const dcp::EvalMetrics test_metrics = dcp::evaluate(net, data.test);

  const std::string out = cl.out_path.empty() ? "baseline.ckpt" : cl.out_path;
  dcp::CheckpointMeta meta;
  meta.seed = static_cast<std::uint64_t>(cl.config.get_int("seed", 0));
  meta.config_hash = cl.config.hash();
  meta.epoch = start_epoch + tc.epochs;
  dcp::save_checkpoint(net, out, meta);

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string record = dcp::make_train_record(
      cl.config, final_loss, train_metrics.top1_error, test_metrics.top1_error, meta.epoch, wall);
  std::cout << record << "\n";
  dcp::append_report_line(cl.config.get_string("report.path", ""), record);
  return kExitOk;
}

int cmd_prune(const CommandLine& cl) {
  if (cl.checkpoint_path.empty()) throw dcp::ConfigError("prune requires --checkpoint");
  dcp::LoadedCheckpoint loaded = dcp::load_checkpoint(cl.checkpoint_path);

  const std::string arch = cl.config.get_string("model.arch", loaded.net.arch);
  if (arch != loaded.net.arch) {
    throw dcp::ConfigError("checkpoint architecture '" + loaded.net.arch +
                           "' does not match config model.arch '" + arch + "'");
  }

  DataPair data = load_data(cl.config);
  dcp::PruneConfig pc = prune_config(cl.config);
  dcp::DcpReport report = dcp::run_dcp(loaded.net, data.train, data.test, pc);

  dcp::NetworkDef compacted = dcp::compact(loaded.net);
  const std::string out = cl.out_path.empty() ? "pruned.ckpt" : cl.out_path;
  dcp::CheckpointMeta meta;
  meta.seed = pc.seed;
  meta.config_hash = cl.config.hash();
  meta.epoch = loaded.meta.epoch;
  dcp::save_checkpoint(compacted, out, meta);

  const std::string record = dcp::make_prune_record(cl.config, report);
  std::cout << record << "\n";
  dcp::append_report_line(cl.config.get_string("report.path", ""), record);
  return kExitOk;
}

int cmd_eval(const CommandLine& cl) {
  if (cl.checkpoint_path.empty()) throw dcp::ConfigError("eval requires --checkpoint");
  const auto t0 = std::chrono::steady_clock::now();
  dcp::LoadedCheckpoint loaded = dcp::load_checkpoint(cl.checkpoint_path);

  DataPair data = load_data(cl.config);
  if (data.test.num_classes != loaded.net.num_classes) {
    throw dcp::ConfigError("dataset has " + std::to_string(data.test.num_classes) +
                           " classes but the checkpoint expects " +
                           std::to_string(loaded.net.num_classes));
  }
  dcp::EvalMetrics metrics = dcp::evaluate(loaded.net, data.test);

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string record =
      dcp::make_eval_record(cl.config, cl.checkpoint_path, metrics, 0.0, false, wall);
  std::cout << record << "\n";
  dcp::append_report_line(cl.config.get_string("report.path", ""), record);
  return kExitOk;
}

int cmd_complexity(const CommandLine& cl) {
  if (cl.checkpoint_path.empty()) throw dcp::ConfigError("complexity requires --checkpoint");
  dcp::LoadedCheckpoint loaded = dcp::load_checkpoint(cl.checkpoint_path);
  const std::string record = dcp::make_complexity_record(
      loaded.net.arch, dcp::count_params(loaded.net), dcp::count_flops(loaded.net));
  std::cout << record << "\n";
  dcp::append_report_line(cl.config.get_string("report.path", ""), record);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    CommandLine cl = parse_args(argc, argv);
    if (cl.command == "train") return cmd_train(cl);
    if (cl.command == "prune") return cmd_prune(cl);
    if (cl.command == "eval") return cmd_eval(cl);
    if (cl.command == "complexity") return cmd_complexity(cl);
    if (cl.command == "help" || cl.command == "--help" || cl.command == "-h") {
      usage(std::cout);
      return kExitOk;
    }
    throw dcp::ConfigError("unknown command '" + cl.command + "'");
  } catch (const dcp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dcp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const dcp::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const dcp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
