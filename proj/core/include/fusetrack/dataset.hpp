// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic paired capture sequences (egocentric raster + glove IMU + ground
// truth) and their on-disk layout: manifest.json plus one AVHT blob per
// sequence.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fusetrack/kinematics.hpp"
#include "fusetrack/motion.hpp"
#include "fusetrack/render.hpp"
#include "fusetrack/sensor_sim.hpp"

namespace fusetrack {

enum class Regime { kOpenHand = 0, kPartialGrasp = 1, kFullGrasp = 2 };
inline constexpr int kNumRegimes = 3;

const char* regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct OcclusionInterval {
  double start = 0.0;
  double end = 0.0;
  LandmarkSet landmarks;
};

class OcclusionSchedule {
 public:
  OcclusionSchedule() = default;
  // Throws ValidationError when an interval leaves [0, duration].
  OcclusionSchedule(std::vector<OcclusionInterval> intervals, double duration);

  const std::vector<OcclusionInterval>& intervals() const { return intervals_; }
  // Union of the intervals active at t (start inclusive, end exclusive).
  LandmarkSet occluded_at(double t) const;

 private:
  std::vector<OcclusionInterval> intervals_;
};

struct Frame {
  double timestamp = 0.0;
  std::vector<double> raster;
  std::array<bool, kNumLandmarks> visible{};
  HandPose gt;
};

struct CaptureSequence {
  int index = 0;
  std::uint64_t seed = 0;
  Regime regime = Regime::kOpenHand;
  std::string split = "train";
  double duration = 0.0;
  double speed = 1.0;
  CameraModel camera;
  NoiseModel noise;
  std::vector<Keyframe> keyframes;  // after time warping
  OcclusionSchedule occlusion;
  std::vector<Frame> frames;
  ImuStream imu;
};

struct DatasetConfig {
  int num_sequences = 60;
  double duration = 10.0;
  double frame_rate = kFrameRateHz;
  double imu_rate = kImuRateHz;
  int raster_size = 32;
  std::array<double, kNumRegimes> regime_fractions{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double eval_fraction = 0.2;
  NoiseModel noise;
  std::uint64_t seed = 20260101;
  double speed_min = 1.0;  // fast-motion time warp
  double speed_max = 3.0;
  double keyframe_interval_min = 0.7;
  double keyframe_interval_max = 1.5;
  double camera_jitter_rotation = 0.03;  // rad
  double camera_jitter_translation = 0.01;  // m

  // Throws ConfigError on invalid fields.
  void validate() const;
  std::string to_json() const;
  static DatasetConfig from_json(const std::string& text);
};

// Regime per sequence index; counts per regime follow the fractions exactly
// (largest remainder) and regimes are interleaved over the index range.
std::vector<Regime> assign_regimes(const DatasetConfig& config);
std::vector<std::string> assign_splits(const DatasetConfig& config);

// Random keyframed motion honoring the skeleton's couplings and joint limits.
MotionScript random_motion(const HandSkeleton& skeleton, double duration, double interval_min,
                           double interval_max, std::uint64_t seed);

CaptureSequence generate_sequence(const DatasetConfig& config, const HandSkeleton& skeleton,
                                  const SensorLayout& layout, int index);
std::vector<CaptureSequence> generate_dataset(const DatasetConfig& config, const HandSkeleton& skeleton,
                                              const SensorLayout& layout, int threads = 1);

void write_sequence(const std::filesystem::path& path, const CaptureSequence& seq);
CaptureSequence read_sequence(const std::filesystem::path& path);

// Writes manifest.json and seq_XXXX.avht files into `dir` (created).
void write_dataset(const std::filesystem::path& dir, const DatasetConfig& config,
                   const std::vector<CaptureSequence>& sequences);

struct DatasetManifest {
  DatasetConfig config;
  struct Entry {
    int index;
    std::uint64_t seed;
    Regime regime;
    std::string split;
    std::string file;
  };
  std::vector<Entry> sequences;
};

DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<CaptureSequence> load_dataset(const std::filesystem::path& dir, const std::string& split = "");

}  // namespace fusetrack
