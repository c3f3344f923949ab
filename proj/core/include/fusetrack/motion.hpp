// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "fusetrack/kinematics.hpp"

namespace fusetrack {

// Natural cubic spline through (t_i, y_i); C2, with analytic derivatives.
class CubicSpline {
 public:
  CubicSpline() = default;
  CubicSpline(std::vector<double> knots, std::vector<double> values);

  double value(double t) const;
  double first_derivative(double t) const;
  double second_derivative(double t) const;

 private:
  std::size_t segment(double t) const;

  std::vector<double> t_;
  std::vector<double> y_;
  std::vector<double> m_;  // second derivatives at the knots
};

struct Keyframe {
  double time = 0.0;
  HandPose pose;
};

// Pose and its time derivatives at one instant.
struct PoseKinematics {
  HandPose pose;
  Phi phi_dot = Phi::Zero();
  Phi phi_ddot = Phi::Zero();
  RootMotion root;
};

// Keyframed hand motion. Angles and wrist translation use natural cubic
// splines; the wrist rotation is splined in unwrapped Z-Y-X Euler angles so
// the trajectory is twice differentiable (needed for accelerometer synthesis).
class MotionScript {
 public:
  // First keyframe must be at t = 0; times strictly increasing; >= 2 frames.
  MotionScript(std::vector<Keyframe> keyframes, const HandSkeleton& skeleton);

  double duration() const { return keyframes_.back().time; }
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }

  HandPose sample_pose(double t) const;
  PoseKinematics sample_kinematics(double t) const;

  // Same keyframes played `speed` times faster.
  MotionScript time_warped(double speed, const HandSkeleton& skeleton) const;

 private:
  void check_time(double t) const;

  std::vector<Keyframe> keyframes_;
  std::array<CubicSpline, kNumDofs> phi_;
  std::array<CubicSpline, 3> euler_zyx_;
  std::array<CubicSpline, 3> translation_;
};

// R = Rz(a) * Ry(b) * Rx(c); angles returned as (a, b, c).
Vec3 euler_zyx_from_rotation(const Mat3& r);
Mat3 rotation_from_euler_zyx(const Vec3& abc);

}  // namespace fusetrack
