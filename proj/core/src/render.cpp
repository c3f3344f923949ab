// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fusetrack {

CameraModel CameraModel::egocentric(int width, int height) {
  CameraModel c;
  c.width = width;
  c.height = height;
  c.fx = 1.72 * width;
  c.fy = 1.72 * width;
  c.cx = width / 2.0;
  c.cy = height / 2.0;
  const double pitch = 30.0 * std::numbers::pi / 180.0;
  const Vec3 z(std::cos(pitch), 0.0, -std::sin(pitch));
  const Vec3 x(0.0, -1.0, 0.0);
  const Vec3 y = z.cross(x);
  c.world_from_camera.rotation.col(0) = x;
  c.world_from_camera.rotation.col(1) = y;
  c.world_from_camera.rotation.col(2) = z;
  c.world_from_camera.translation = Vec3::Zero();
  return c;
}

Vec3 CameraModel::to_camera(const Vec3& world) const {
  return world_from_camera.rotation.transpose() * (world - world_from_camera.translation);
}

std::optional<Eigen::Vector2d> CameraModel::project(const Vec3& world) const {
  const Vec3 p = to_camera(world);
  if (p.z() <= near_plane) return std::nullopt;
  return Eigen::Vector2d(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
}

RigidTransform nominal_wrist_pose() {
  // Palm center 0.45 m along the default optical axis, fingers pointing away
  // from the viewer, back of the hand up.
  return {Mat3::Identity(), Vec3(0.33, 0.0, -0.225)};
}

namespace {

struct Disc {
  Eigen::Vector2d center;
  double radius;
  double shade;
};

struct Capsule {
  Eigen::Vector2d a, b;
  double radius;
  double shade_a, shade_b;
};

double shade_for(double depth, const RenderStyle& style) {
  const double s = style.reference_depth / depth;
  return std::min(1.0, s * s);
}

}  // namespace

Observation render_landmarks(const HandSkeleton& skeleton, const JointSet21& landmarks, const CameraModel& camera,
                             const LandmarkSet& occluded, const RenderStyle& style) {
  Observation obs;
  obs.width = camera.width;
  obs.height = camera.height;
  obs.raster.assign(static_cast<std::size_t>(camera.width) * camera.height, 0.0);

  std::array<std::optional<Eigen::Vector2d>, kNumLandmarks> pix;
  std::array<double, kNumLandmarks> depth{};
  for (int l = 0; l < kNumLandmarks; ++l) {
    depth[l] = camera.to_camera(landmarks[l]).z();
    pix[l] = camera.project(landmarks[l]);
    const bool inside = pix[l] && (*pix[l])[0] >= -0.5 && (*pix[l])[0] <= camera.width - 0.5 &&
                        (*pix[l])[1] >= -0.5 && (*pix[l])[1] <= camera.height - 0.5;
    obs.visible[l] = !occluded[l] && inside;
  }

  std::vector<Disc> discs;
  std::vector<Capsule> capsules;
  for (int l = 0; l < kNumLandmarks; ++l) {
    if (occluded[l] || !pix[l]) continue;
    discs.push_back({*pix[l], camera.fx * style.joint_radius / depth[l], shade_for(depth[l], style)});
  }
  for (auto [a, b] : skeleton.bones()) {
    if (occluded[a] || occluded[b] || !pix[a] || !pix[b]) continue;
    const double r = camera.fx * style.bone_radius / (0.5 * (depth[a] + depth[b]));
    capsules.push_back({*pix[a], *pix[b], r, shade_for(depth[a], style), shade_for(depth[b], style)});
  }

  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const Eigen::Vector2d p(u, v);
      double value = 0.0;
      for (const auto& d : discs) {
        const double cover = std::clamp(d.radius + 0.5 - (p - d.center).norm(), 0.0, 1.0);
        value = std::max(value, cover * d.shade);
      }
      for (const auto& c : capsules) {
        const Eigen::Vector2d ab = c.b - c.a;
        const double len2 = ab.squaredNorm();
        const double s = len2 > 0.0 ? std::clamp((p - c.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const double dist = (p - (c.a + s * ab)).norm();
        const double cover = std::clamp(c.radius + 0.5 - dist, 0.0, 1.0);
        value = std::max(value, cover * ((1.0 - s) * c.shade_a + s * c.shade_b));
      }
      obs.raster[static_cast<std::size_t>(v) * camera.width + u] = value;
    }
  }
  return obs;
}

Observation render_observation(const HandSkeleton& skeleton, const HandPose& pose, const CameraModel& camera,
                               const LandmarkSet& occluded, const RenderStyle& style) {
  return render_landmarks(skeleton, forward_kinematics(skeleton, pose), camera, occluded, style);
}

}  // namespace fusetrack
