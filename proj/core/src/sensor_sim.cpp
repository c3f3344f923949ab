// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/sensor_sim.hpp"

#include <cmath>
#include <random>

#include "fusetrack/errors.hpp"

namespace fusetrack {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<double> ImuStream::timestamps() const {
  std::vector<double> out(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) out[i] = timestamp(i);
  return out;
}

std::vector<ImuSample> ImuStream::sensor_samples(int sensor) const {
  std::vector<ImuSample> out(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) {
    out[i] = {timestamp(i), sensor, gyro_at(i, sensor), accel_at(i, sensor)};
  }
  return out;
}

std::vector<SensorState> sensor_states(const MotionScript& script, const HandSkeleton& skeleton,
                                       const SensorLayout& layout, double t) {
  const PoseKinematics k = script.sample_kinematics(t);
  const auto motion = segment_motion(skeleton, k.pose.phi, k.phi_dot, k.phi_ddot, k.root);
  std::vector<SensorState> out(kNumSensors);
  for (int s = 0; s < kNumSensors; ++s) {
    const SensorSite& site = layout.sensors()[s];
    const SegmentMotion& m = motion[site.segment];
    out[s].frame = m.frame.compose({site.mount_rotation, site.mount_offset});
    out[s].omega_world = m.omega;
    out[s].velocity = point_velocity(m, site.mount_offset);
    out[s].acceleration = point_acceleration(m, site.mount_offset);
  }
  return out;
}

ImuStream simulate_imu_stream(const MotionScript& script, const HandSkeleton& skeleton, const SensorLayout& layout,
                              const NoiseModel& noise, std::uint64_t seed, double rate_hz) {
  if (!(rate_hz > 0.0)) throw ValidationError("IMU rate must be positive");
  ImuStream stream;
  stream.rate_hz = rate_hz;
  // Guard against 10.0 * 200 landing a hair under 2000.
  stream.num_samples = static_cast<std::size_t>(std::floor(script.duration() * rate_hz + 1e-9)) + 1;
  stream.gyro.resize(stream.num_samples * kNumSensors);
  stream.accel.resize(stream.num_samples * kNumSensors);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<Vec3, kNumSensors> gyro_bias;
  for (auto& b : gyro_bias) {
    b = Vec3(normal(rng), normal(rng), normal(rng)) * noise.gyro_bias_sigma;
  }

  for (std::size_t i = 0; i < stream.num_samples; ++i) {
    const double t = std::min(stream.timestamp(i), script.duration());
    const auto states = sensor_states(script, skeleton, layout, t);
    for (int s = 0; s < kNumSensors; ++s) {
      const Mat3& r = states[s].frame.rotation;
      Vec3 gyro = r.transpose() * states[s].omega_world;
      Vec3 accel = r.transpose() * (states[s].acceleration - kGravityWorld);
      gyro += gyro_bias[s] + Vec3(normal(rng), normal(rng), normal(rng)) * noise.gyro_sigma;
      accel += Vec3(normal(rng), normal(rng), normal(rng)) * noise.accel_sigma;
      stream.gyro[i * kNumSensors + s] = gyro;
      stream.accel[i * kNumSensors + s] = accel;
    }
  }
  return stream;
}

std::vector<ImuSample> simulate_imu(const MotionScript& script, const HandSkeleton& skeleton,
                                    const SensorLayout& layout, const NoiseModel& noise, std::uint64_t seed) {
  const ImuStream stream = simulate_imu_stream(script, skeleton, layout, noise, seed);
  std::vector<ImuSample> out;
  out.reserve(stream.num_samples * kNumSensors);
  for (std::size_t i = 0; i < stream.num_samples; ++i) {
    for (int s = 0; s < kNumSensors; ++s) {
      out.push_back({stream.timestamp(i), s, stream.gyro_at(i, s), stream.accel_at(i, s)});
    }
  }
  return out;
}

}  // namespace fusetrack
