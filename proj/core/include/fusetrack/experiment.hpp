// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment protocol: dataset generation, training, evaluation, sensor-group
// ablation, sensitivity sweeps and consolidated reports. Every command writes
// into a fresh run-id subdirectory of the output root and returns its path.

#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fusetrack/dataset.hpp"
#include "fusetrack/ekf.hpp"
#include "fusetrack/fusion_model.hpp"
#include "fusetrack/imu_tracker.hpp"
#include "fusetrack/metrics.hpp"
#include "fusetrack/signal_pipeline.hpp"

namespace fusetrack {

enum class Method { kFused, kVision, kImu, kEkf };
const char* method_name(Method m);
Method method_from_name(const std::string& name);  // ConfigError on unknown

struct SweepConfig {
  std::vector<double> noise_scales{0.0, 0.5, 1.0, 1.5, 2.0};
  std::vector<double> shifts{-0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4};
  int stride = 6;  // frame stride of the sweep evaluation set
};

struct ExperimentConfig {
  std::string name = "desk";
  std::uint64_t seed = 1;  // master seed; drives dataset, model and training seeds
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  int train_stride = 3;
  int eval_stride = 2;
  SweepConfig sweep;
  std::string ablate_mode = "eval";  // "eval" or "train"
  EkfConfig ekf;
  ImuTrackerConfig imu_tracker;

  void validate() const;  // ConfigError
  void apply_seed(std::uint64_t master);
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);

  // 60 sequences of 10 s, d = 64, 12 epochs of batch 16 at lr 2e-3.
  static ExperimentConfig desk();
  // Training values of the original protocol (40 epochs, batch 48, lr
  // 7.89e-4, decay at 30) on a larger synthetic set. Not sized for a laptop.
  static ExperimentConfig paper_scale();
};

// out_root/<command>-<hash of inputs>[-n]; never reuses an existing directory.
std::filesystem::path make_run_dir(const std::filesystem::path& out_root, const std::string& command,
                                   const std::string& fingerprint);

// ---- in-memory building blocks ------------------------------------------

std::vector<AlignedSample> build_samples(std::span<const CaptureSequence> sequences, const ChannelMap& map,
                                         const PipelineConfig& pipeline, int threads);

struct EvalRecord {
  SampleMetrics metrics;
  FusionOutput output;
};

struct EvalResult {
  Method method = Method::kFused;
  std::vector<EvalRecord> records;
  std::vector<std::pair<std::string, double>> aggregate;
  bool has_global = true;
};

// Network methods on prepared samples, batched over a worker pool.
EvalResult evaluate_network(const FusionModel& model, Method method, std::span<const AlignedSample> samples,
                            std::span<const SensorMask> masks = {}, int threads = 1);

// Classical baselines over whole sequences, scored at the frames present in
// `samples`. The EKF consumes the vision-only landmark stream of `vision`.
EvalResult evaluate_imu_tracker(std::span<const CaptureSequence> sequences, std::span<const AlignedSample> samples,
                                const HandSkeleton& skeleton, const SensorLayout& layout,
                                const ImuTrackerConfig& config, int threads = 1);
EvalResult evaluate_ekf(std::span<const CaptureSequence> sequences, std::span<const AlignedSample> samples,
                        const FusionModel& vision, const EkfConfig& config, int threads = 1);

// Mean root-transformed error over each finger's landmarks.
std::array<double, 5> finger_mkpe_t(const EvalResult& result, const HandSkeleton& skeleton);

// Per finger: mean a_vis mass on its sensors over frames where most of its
// landmarks are hidden, and over frames where all are visible.
struct AttentionStats {
  std::array<double, 5> occluded_mass{};
  std::array<double, 5> visible_mass{};
  std::array<int, 5> occluded_count{};
  std::array<int, 5> visible_count{};
  double mean_difference = 0.0;  // over fingers with both kinds of frames
  int paired_fingers = 0;
};
AttentionStats attention_stats(const EvalResult& fused, const HandSkeleton& skeleton, const SensorLayout& layout);

// ---- ablation / sensitivity ----------------------------------------------

using AblationGrid = std::array<std::array<double, 5>, 6>;  // [sensor group][finger] MKPE.T gap

struct AblationResult {
  AblationGrid gap{};
  std::array<double, kNumRegimes> regime_gap{};
  int diagonal_hits = 0;  // fingers whose smallest gap lies on their own group
};

// `train_group` (used by ablate_mode "train") returns a fused model trained
// with only the given sensor group; null means evaluation-time masking.
AblationResult ablate_sensors(const FusionModel& fused, const FusionModel& vision,
                              std::span<const AlignedSample> samples, int threads,
                              const std::function<const FusionModel*(int group)>& train_group = {});

struct SweepPoint {
  double value = 0.0;
  double mkpe = 0.0;
  double mkpe_t = 0.0;
};
struct SensitivityResult {
  std::vector<SweepPoint> noise;
  std::vector<SweepPoint> shift;
};
// Throws ConfigError for a shift outside +-kMaxTimeShift.
SensitivityResult sensitivity(const FusionModel& model, Method method, std::span<const CaptureSequence> sequences,
                              const SweepConfig& sweep, std::uint64_t seed, int threads);

// ---- commands (file in, files out) ----------------------------------------

std::filesystem::path cmd_generate(const ExperimentConfig& config, const std::filesystem::path& out_root);

struct TrainOutcome {
  std::filesystem::path run_dir;
  std::vector<StepLog> log;
};
// `resume` continues from a checkpoint written by an earlier cmd_train.
TrainOutcome cmd_train(const ExperimentConfig& config, const std::filesystem::path& data_dir, Method method,
                       const std::filesystem::path& out_root,
                       const std::optional<std::filesystem::path>& resume = std::nullopt);

// `checkpoint` is the fused/vision model (vision-only model for kEkf).
std::filesystem::path cmd_eval(const ExperimentConfig& config, const std::filesystem::path& data_dir, Method method,
                               const std::optional<std::filesystem::path>& checkpoint,
                               const std::filesystem::path& out_root);

std::filesystem::path cmd_ablate(const ExperimentConfig& config, const std::filesystem::path& data_dir,
                                 const std::filesystem::path& fused_checkpoint,
                                 const std::filesystem::path& vision_checkpoint,
                                 const std::filesystem::path& out_root);

std::filesystem::path cmd_sensitivity(const ExperimentConfig& config, const std::filesystem::path& data_dir,
                                      const std::filesystem::path& checkpoint, const std::filesystem::path& out_root);

// Consolidates every eval-* directory under `run_dir`. Throws IoError when
// there is none.
std::filesystem::path cmd_report(const std::filesystem::path& run_dir, const std::filesystem::path& out_root);

struct PipelineRun {
  std::filesystem::path root;
  std::filesystem::path dataset;
  std::filesystem::path fused_checkpoint;
  std::filesystem::path vision_checkpoint;
  std::array<std::filesystem::path, 4> eval;  // indexed by Method
  std::filesystem::path ablate;
  std::filesystem::path sensitivity;
  std::filesystem::path report;
};
// generate, train fused + vision, eval all methods, ablate, sensitivity and
// report under one pipeline-<hash> directory. `progress(step, path)` runs
// after every step.
PipelineRun cmd_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_root,
                         const std::function<void(const char*, const std::filesystem::path&)>& progress = {});

// Loads a checkpoint written by cmd_train into a freshly built model.
std::unique_ptr<FusionModel> load_model(const std::filesystem::path& checkpoint, const HandSkeleton& skeleton,
                                        const SensorLayout& layout, Method* method = nullptr);

// ---- report files ----------------------------------------------------------

// Per-sample rows followed by a "mean" footer. Columns that need a global
// wrist estimate are left out when the method has none.
std::string metrics_csv(const EvalResult& result);
std::string summary_json(const EvalResult& result, const HandSkeleton& skeleton, const SensorLayout& layout);

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const SvgSeries> series);

}  // namespace fusetrack
