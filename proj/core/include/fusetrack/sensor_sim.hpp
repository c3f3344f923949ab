// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Strapdown IMU synthesis from a motion script.

#pragma once

#include <cstdint>
#include <vector>

#include "fusetrack/kinematics.hpp"
#include "fusetrack/motion.hpp"

namespace fusetrack {

inline constexpr double kGravity = 9.81;
inline const Vec3 kGravityWorld{0.0, 0.0, -kGravity};
inline constexpr double kImuRateHz = 200.0;
inline constexpr double kFrameRateHz = 60.0;

struct NoiseModel {
  double gyro_sigma = 0.005;       // rad/s, white
  double accel_sigma = 0.05;       // m/s^2, white
  double gyro_bias_sigma = 0.002;  // rad/s, constant per sensor and sequence

  static NoiseModel zero() { return {0.0, 0.0, 0.0}; }
};

struct ImuSample {
  double timestamp = 0.0;
  int sensor_id = 0;
  Vec3 gyro = Vec3::Zero();   // rad/s, sensor frame
  Vec3 accel = Vec3::Zero();  // specific force, m/s^2, sensor frame
};

// Dense multi-sensor stream: sample i of sensor k lives at i * kNumSensors + k.
struct ImuStream {
  double rate_hz = kImuRateHz;
  std::size_t num_samples = 0;
  std::vector<Vec3> gyro;
  std::vector<Vec3> accel;

  double timestamp(std::size_t i) const { return static_cast<double>(i) / rate_hz; }
  const Vec3& gyro_at(std::size_t i, int sensor) const { return gyro[i * kNumSensors + sensor]; }
  const Vec3& accel_at(std::size_t i, int sensor) const { return accel[i * kNumSensors + sensor]; }
  std::vector<double> timestamps() const;
  // Samples of one sensor, in time order.
  std::vector<ImuSample> sensor_samples(int sensor) const;
};

// Samples every 1/rate_hz from t = 0 to the script duration.
ImuStream simulate_imu_stream(const MotionScript& script, const HandSkeleton& skeleton, const SensorLayout& layout,
                              const NoiseModel& noise, std::uint64_t seed, double rate_hz = kImuRateHz);

// Flat list ordered by (timestamp, sensor).
std::vector<ImuSample> simulate_imu(const MotionScript& script, const HandSkeleton& skeleton,
                                    const SensorLayout& layout, const NoiseModel& noise, std::uint64_t seed);

// Noise-free world-frame state of one sensor at time t.
struct SensorState {
  RigidTransform frame;
  Vec3 omega_world = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
};
std::vector<SensorState> sensor_states(const MotionScript& script, const HandSkeleton& skeleton,
                                       const SensorLayout& layout, double t);

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace fusetrack
