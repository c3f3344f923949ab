// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// fusetrack generate|train|eval|ablate|sensitivity|report|pipeline|config

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fusetrack/errors.hpp"
#include "fusetrack/experiment.hpp"
#include "fusetrack/worker_pool.hpp"

namespace fs = std::filesystem;
using namespace fusetrack;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config JSON (default: built-in desk preset)");
  cmd->add_option("--seed", c.seed, "Master seed override");
  cmd->add_option("--out", c.out, "Output root; each command writes a new run-id subdirectory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::desk() : ExperimentConfig::load(c.config);
  if (c.seed) cfg.apply_seed(*c.seed);
  cfg.validate();
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FuseTrack: vision-IMU fusion for 3D hand tracking"};
  app.require_subcommand(1);

  Common common;
  std::string data, method = "fused", checkpoint, resume, fused_ckpt, vision_ckpt, ablate_mode, run_dir;

  auto* gen = app.add_subcommand("generate", "Generate the synthetic paired dataset");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "Train a fused or vision-only model");
  add_common(train, common);
  train->add_option("--data", data, "Dataset directory from generate")->required();
  train->add_option("--method", method, "fused | vision")->check(CLI::IsMember({"fused", "vision", "imu", "ekf"}));
  train->add_option("--resume", resume, "Continue from a checkpoint of an earlier train run");

  auto* eval = app.add_subcommand("eval", "Evaluate a method on the eval split");
  add_common(eval, common);
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--method", method, "fused | vision | imu | ekf")
      ->check(CLI::IsMember({"fused", "vision", "imu", "ekf"}));
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint (vision-only model for ekf)");

  auto* ablate = app.add_subcommand("ablate", "Sensor-group x finger MKPE.T gap grid");
  add_common(ablate, common);
  ablate->add_option("--data", data, "Dataset directory")->required();
  ablate->add_option("--fused", fused_ckpt, "Fused checkpoint")->required();
  ablate->add_option("--vision", vision_ckpt, "Vision-only checkpoint")->required();
  ablate->add_option("--ablate-mode", ablate_mode, "eval | train")->check(CLI::IsMember({"eval", "train"}));

  auto* sens = app.add_subcommand("sensitivity", "IMU noise and time-shift sweeps");
  add_common(sens, common);
  sens->add_option("--data", data, "Dataset directory")->required();
  sens->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();

  auto* report = app.add_subcommand("report", "Consolidate eval runs under a directory");
  report->add_option("--run", run_dir, "Directory holding eval-* runs")->required();
  report->add_option("--out", common.out, "Output root");

  std::string preset = "desk";
  auto* show = app.add_subcommand("config", "Print a preset experiment config as JSON");
  show->add_option("--preset", preset, "desk | paper_scale")->check(CLI::IsMember({"desk", "paper_scale"}));

  auto* pipeline = app.add_subcommand("pipeline", "generate, train fused + vision, eval all methods, ablate, sensitivity, report");
  add_common(pipeline, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const fs::path out = common.out;
    if (*show) {
      std::cout << (preset == "desk" ? ExperimentConfig::desk() : ExperimentConfig::paper_scale()).to_json() << "\n";
    } else if (*gen) {
      std::cout << cmd_generate(resolve(common), out).string() << "\n";
    } else if (*train) {
      std::optional<fs::path> from;
      if (!resume.empty()) from = resume;
      const auto r = cmd_train(resolve(common), data, method_from_name(method), out, from);
      std::cout << r.run_dir.string() << "\n";
    } else if (*eval) {
      std::optional<fs::path> ckpt;
      if (!checkpoint.empty()) ckpt = checkpoint;
      std::cout << cmd_eval(resolve(common), data, method_from_name(method), ckpt, out).string() << "\n";
    } else if (*ablate) {
      ExperimentConfig cfg = resolve(common);
      if (!ablate_mode.empty()) cfg.ablate_mode = ablate_mode;
      std::cout << cmd_ablate(cfg, data, fused_ckpt, vision_ckpt, out).string() << "\n";
    } else if (*sens) {
      std::cout << cmd_sensitivity(resolve(common), data, checkpoint, out).string() << "\n";
    } else if (*report) {
      std::cout << cmd_report(run_dir, out).string() << "\n";
    } else if (*pipeline) {
      const auto t0 = std::chrono::steady_clock::now();
      std::fprintf(stderr, "workers: %d\n", worker_count());
      const PipelineRun run = cmd_pipeline(resolve(common), out, [&](const char* what, const fs::path& p) {
        std::fprintf(stderr, "[%7.1fs] %s -> %s\n", seconds_since(t0), what, p.string().c_str());
      });
      std::cout << run.root.string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
