// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-rate alignment of 60 Hz frames with 200 Hz glove IMU, gravity
// estimation, 14 x 23 x 3 window extraction and sensitivity perturbations.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fusetrack/dataset.hpp"
#include "fusetrack/sensor_sim.hpp"

namespace fusetrack {

inline constexpr int kWindowLength = 14;
inline constexpr int kNumChannels = 23;
inline constexpr int kWindowSize = kWindowLength * kNumChannels * 3;

enum class ChannelKind { kGravity, kGyro };

struct Channel {
  int sensor = 0;
  ChannelKind kind = ChannelKind::kGravity;
  bool operator==(const Channel&) const = default;
};

struct ChannelMap {
  std::array<Channel, kNumChannels> channels{};

  // 12 gravity channels (sensor order) followed by 11 gyro channels that skip
  // the hand-back sensor.
  static ChannelMap default_map(const SensorLayout& layout);
  // Parses ["gravity:wrist", "gyro:index_prox", ...].
  static ChannelMap from_names(std::span<const std::string> names, const SensorLayout& layout);
  // Channels that belong to `sensor`.
  std::vector<int> channels_of(int sensor) const;
};

struct ImuWindow {
  std::array<double, kWindowSize> data{};  // [timestep][channel][xyz]
  double frame_timestamp = 0.0;
  ChannelMap channel_map;

  double& at(int t, int c, int k) { return data[(t * kNumChannels + c) * 3 + k]; }
  double at(int t, int c, int k) const { return data[(t * kNumChannels + c) * 3 + k]; }
  Vec3 vec(int t, int c) const { return {at(t, c, 0), at(t, c, 1), at(t, c, 2)}; }
};

struct AlignedSample {
  ImuWindow window;
  std::vector<double> raster;
  int raster_size = 0;
  std::array<bool, kNumLandmarks> visible{};
  HandPose gt;
  Regime regime = Regime::kOpenHand;
  int sequence = 0;
  int frame = 0;
};

// Nearest timestamp; ties go to the earlier sample. Throws on an empty stream.
std::size_t align_frame(double frame_ts, std::span<const double> imu_timestamps);

// Per-sensor gravity direction (unit, sensor frame, pointing "up" like the
// static accelerometer reading) at every IMU sample.
struct GravityTracks {
  std::size_t num_samples = 0;
  std::vector<Vec3> direction;  // [sample * kNumSensors + sensor]

  const Vec3& at(std::size_t i, int sensor) const { return direction[i * kNumSensors + sensor]; }
};

inline constexpr double kDefaultGravityGain = 0.02;

// Complementary filter: rotate the previous estimate by the gyro increment,
// then blend toward normalize(accel) with `gain` per sample. Initialized
// from the first usable accelerometer sample.
std::vector<Vec3> estimate_gravity(std::span<const ImuSample> history, double gain = kDefaultGravityGain);
GravityTracks estimate_gravity_tracks(const ImuStream& stream, double gain = kDefaultGravityGain);

// The 14 samples ending at `aligned_index` (inclusive) or ending just before
// it (exclusive). Throws WarmupError when history is too short.
ImuWindow extract_window(std::size_t aligned_index, const ImuStream& stream, const GravityTracks& gravity,
                         const ChannelMap& channel_map, bool inclusive = true);

// Gaussian perturbation: gyro channels get sigma = scale * gyro floor; gravity
// channels are treated as accel / 9.81, perturbed with scale * accel floor and
// re-normalized. scale == 0 returns the window unchanged.
ImuWindow inject_noise(const ImuWindow& window, double scale, std::uint64_t seed, const NoiseModel& floor = {});

inline constexpr double kMaxTimeShift = 0.4;

struct FrameAlignment {
  std::size_t frame = 0;
  std::size_t imu_index = 0;
};

// Frame/IMU index pairs with the IMU window centered on frame_ts + dt. Frames
// whose window lacks history (or runs past the stream end) are skipped.
std::vector<FrameAlignment> shift_alignment(const std::vector<double>& frame_timestamps, const ImuStream& stream,
                                            double dt, bool inclusive = true, double max_shift = kMaxTimeShift);

struct AugmentParams {
  double noise_sigma = 0.0;  // unit-scale raster (10/255 matches sigma = 10 on 0-255)
  double gamma = 1.0;
};

std::vector<double> augment_observation(std::span<const double> raster, const AugmentParams& params,
                                        std::uint64_t seed);

struct PipelineConfig {
  bool window_inclusive = true;
  double time_shift = 0.0;
  double noise_scale = 0.0;
  std::uint64_t seed = 0;
  double gravity_gain = kDefaultGravityGain;
  NoiseModel noise_floor;
  int frame_stride = 1;  // keep every n-th frame
};

std::vector<AlignedSample> process_sequence(const CaptureSequence& seq, const ChannelMap& channel_map,
                                            const PipelineConfig& config);

// AVHT shard of aligned samples (windows, rasters, visibility, ground truth).
void write_aligned_shard(const std::filesystem::path& path, std::span<const AlignedSample> samples);
std::vector<AlignedSample> read_aligned_shard(const std::filesystem::path& path, const SensorLayout& layout);

}  // namespace fusetrack
