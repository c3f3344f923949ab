// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Orientation-only IMU tracker: per-sensor gyro integration with a weak
// gravity correction, then joint angles fitted to the relative sensor
// orientations. Wrist translation is not observable and is never reported.

#pragma once

#include <array>
#include <vector>

#include "fusetrack/dataset.hpp"
#include "fusetrack/kinematics.hpp"
#include "fusetrack/sensor_sim.hpp"

namespace fusetrack {

struct ImuTrackerConfig {
  double tilt_gain = 0.002;       // per sample, applied only when quasi-static
  double static_band = 0.5;       // m/s^2 around 9.81 accepted as quasi-static
  double coupling_weight = 1.0;   // residual weight of phi[dep] - ratio * phi[drv]
  int iterations = 4;
  double fd_step = 1e-6;
};

// Integrates one sensor's orientation: R <- R exp([w] dt) with the midpoint
// rate, then nudges the tilt toward the measured specific force.
class OrientationFilter {
 public:
  OrientationFilter(const Mat3& initial, const ImuTrackerConfig& config) : r_(initial), config_(config) {}
  void step(const Vec3& gyro_prev, const Vec3& gyro, const Vec3& accel, double dt);
  const Mat3& rotation() const { return r_; }

 private:
  Mat3 r_;
  ImuTrackerConfig config_;
};

// Solves (phi, wrist rotation) so the model sensor orientations match the
// measured ones. Warm-started from `guess`; translation is copied through.
HandPose fit_sensor_orientations(const HandSkeleton& skeleton, const SensorLayout& layout,
                                 const std::array<Mat3, kNumSensors>& measured, const HandPose& guess,
                                 const ImuTrackerConfig& config);

struct ImuTrackResult {
  std::vector<HandPose> poses;  // one per requested timestamp
  bool translation_valid = false;
};

// Tracks from `initial` (pose at t = 0) over the stream and reports a pose at
// each of `timestamps`. Throws ValidationError on an empty stream.
ImuTrackResult imu_only_tracker(const ImuStream& stream, const HandSkeleton& skeleton, const SensorLayout& layout,
                                const HandPose& initial, const std::vector<double>& timestamps,
                                const ImuTrackerConfig& config = {});

// Convenience overload over a capture, initialized from the first frame.
ImuTrackResult imu_only_tracker(const CaptureSequence& seq, const HandSkeleton& skeleton, const SensorLayout& layout,
                                const ImuTrackerConfig& config = {});

}  // namespace fusetrack
