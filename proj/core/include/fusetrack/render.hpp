// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Low-resolution monochrome egocentric observations: skeleton capsules
// rasterized through a pinhole camera, with per-landmark visibility.

#pragma once

#include <bitset>
#include <optional>
#include <vector>

#include "fusetrack/kinematics.hpp"

namespace fusetrack {

using LandmarkSet = std::bitset<kNumLandmarks>;

struct CameraModel {
  int width = 32;
  int height = 32;
  double fx = 55.0;
  double fy = 55.0;
  double cx = 16.0;  // pixel (i, j) is centered at (u, v) = (i, j)
  double cy = 16.0;
  double near_plane = 0.05;
  // Columns are the camera x (right), y (down), z (forward) axes in world.
  RigidTransform world_from_camera;

  // Head-mounted view tilted 30 degrees down toward a hand ~0.45 m away.
  static CameraModel egocentric(int width, int height);

  Vec3 to_camera(const Vec3& world) const;
  // Pixel coordinates, or nullopt when behind the near plane.
  std::optional<Eigen::Vector2d> project(const Vec3& world) const;
};

// Nominal hand placement that centers the palm in the egocentric view.
RigidTransform nominal_wrist_pose();

struct RenderStyle {
  double bone_radius = 0.009;   // meters
  double joint_radius = 0.011;  // meters
  double reference_depth = 0.45;  // brightness falls off as (reference/depth)^2
};

struct Observation {
  int width = 0;
  int height = 0;
  std::vector<double> raster;  // row-major height x width, values in [0, 1]
  std::array<bool, kNumLandmarks> visible{};
};

Observation render_observation(const HandSkeleton& skeleton, const HandPose& pose, const CameraModel& camera,
                               const LandmarkSet& occluded, const RenderStyle& style = {});

Observation render_landmarks(const HandSkeleton& skeleton, const JointSet21& landmarks, const CameraModel& camera,
                             const LandmarkSet& occluded, const RenderStyle& style = {});

}  // namespace fusetrack
