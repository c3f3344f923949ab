// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Articulated 22-DoF hand: skeleton definition, forward kinematics, per-segment
// frames and motion, and the sensor-site graph used by the attention prior.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace fusetrack {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kNumDofs = 22;
inline constexpr int kNumLandmarks = 21;
inline constexpr int kNumFingertips = 5;
inline constexpr int kNumSensors = 12;

using Phi = Eigen::Matrix<double, kNumDofs, 1>;
using JointSet21 = std::array<Vec3, kNumLandmarks>;

enum class DofKind { kFlexion, kAbduction };

struct DofSpec {
  std::string name;
  int segment = 0;
  Vec3 axis = Vec3::UnitY();  // unit axis in the segment's rest frame
  DofKind kind = DofKind::kFlexion;
};

struct SegmentSpec {
  std::string name;
  int parent = -1;
  Vec3 rest_offset = Vec3::Zero();        // origin in the parent frame
  Mat3 rest_rotation = Mat3::Identity();  // fixed rotation applied before the DoFs
  std::vector<int> dofs;                  // applied left to right
};

struct LandmarkSpec {
  std::string name;
  int segment = 0;
  Vec3 offset = Vec3::Zero();
};

struct JointLimits {
  double flexion_min = -0.26;
  double flexion_max = 1.92;
  double abduction_min = -0.35;
  double abduction_max = 0.35;
};

// phi[dependent] = ratio * phi[driver]; used by the motion generator and the
// IMU-only tracker to resolve PIP/DIP splits that a single sensor cannot see.
struct DofCoupling {
  int driver = 0;
  int dependent = 0;
  double ratio = 0.0;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform compose(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
};

class HandSkeleton {
 public:
  static HandSkeleton from_json_text(const std::string& text);
  static HandSkeleton from_file(const std::filesystem::path& path);
  // Skeleton shipped in configs/skeleton.json (compiled-in copy).
  static const HandSkeleton& default_right_hand();

  const std::vector<SegmentSpec>& segments() const { return segments_; }
  const std::vector<DofSpec>& dofs() const { return dofs_; }
  const std::vector<LandmarkSpec>& landmarks() const { return landmarks_; }
  const std::array<int, kNumFingertips>& fingertips() const { return fingertips_; }
  const std::vector<std::pair<int, int>>& bones() const { return bones_; }
  const std::vector<DofCoupling>& couplings() const { return couplings_; }
  const JointLimits& limits() const { return limits_; }

  int segment_index(const std::string& name) const;
  int dof_index(const std::string& name) const;
  // True if `segment` is `ancestor` or lies below it in the tree.
  bool is_descendant(int segment, int ancestor) const;
  // Landmarks grouped per digit (thumb, index, middle, ring, pinky); wrist excluded.
  const std::array<std::vector<int>, 5>& finger_landmarks() const { return finger_landmarks_; }

  std::pair<double, double> limits_for(int dof) const;

 private:
  void validate() const;

  std::vector<SegmentSpec> segments_;
  std::vector<DofSpec> dofs_;
  std::vector<LandmarkSpec> landmarks_;
  std::array<int, kNumFingertips> fingertips_{};
  std::vector<std::pair<int, int>> bones_;
  std::vector<DofCoupling> couplings_;
  std::array<std::vector<int>, 5> finger_landmarks_;
  JointLimits limits_;
};

struct HandPose {
  Phi phi = Phi::Zero();
  Mat3 wrist_rotation = Mat3::Identity();
  Vec3 wrist_translation = Vec3::Zero();

  // Throws ValidationError on a non-SO(3) rotation (tol 1e-9) or, when
  // `check_limits` is set, an angle outside the skeleton's joint limits.
  void validate(const HandSkeleton& skeleton, bool check_limits = false) const;
};

// Rotation of `angle` radians about unit `axis`.
Mat3 axis_angle(const Vec3& axis, double angle);
Mat3 skew(const Vec3& v);
bool is_rotation(const Mat3& r, double tol = 1e-9);

// World transform of every segment.
std::vector<RigidTransform> segment_frames(const HandSkeleton& skeleton, const HandPose& pose);

JointSet21 forward_kinematics(const HandSkeleton& skeleton, const HandPose& pose);

// Landmarks in the wrist frame (identity root) and their Jacobian with respect
// to phi; row 3*l + c is coordinate c of landmark l.
struct LocalFk {
  JointSet21 points;
  Eigen::Matrix<double, 3 * kNumLandmarks, kNumDofs> jacobian;
};
LocalFk local_fk_with_jacobian(const HandSkeleton& skeleton, const Phi& phi);

// Angular/linear velocity and acceleration of every segment frame, in world
// coordinates. The root's motion is supplied by the caller.
struct SegmentMotion {
  RigidTransform frame;
  Vec3 omega = Vec3::Zero();
  Vec3 omega_dot = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();      // of the segment origin
  Vec3 acceleration = Vec3::Zero();  // of the segment origin
};

struct RootMotion {
  RigidTransform frame;
  Vec3 omega = Vec3::Zero();
  Vec3 omega_dot = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
};

std::vector<SegmentMotion> segment_motion(const HandSkeleton& skeleton, const Phi& phi,
                                          const Phi& phi_dot, const Phi& phi_ddot,
                                          const RootMotion& root);

// Velocity/acceleration of a point rigidly attached at `local` in the segment.
Vec3 point_velocity(const SegmentMotion& m, const Vec3& local);
Vec3 point_acceleration(const SegmentMotion& m, const Vec3& local);

struct SensorSite {
  std::string name;
  int segment = 0;
  Mat3 mount_rotation = Mat3::Identity();
  Vec3 mount_offset = Vec3::Zero();
};

class SensorLayout {
 public:
  static SensorLayout from_json_text(const std::string& text, const HandSkeleton& skeleton);
  static SensorLayout from_file(const std::filesystem::path& path, const HandSkeleton& skeleton);
  static const SensorLayout& default_layout();

  SensorLayout(std::vector<SensorSite> sensors, std::vector<std::pair<int, int>> edges,
               int vision_anchor, int vision_extra_hops);

  const std::vector<SensorSite>& sensors() const { return sensors_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  int vision_anchor() const { return vision_anchor_; }
  int vision_extra_hops() const { return vision_extra_hops_; }
  int sensor_index(const std::string& name) const;

  // Sensor groups used by the ablation grid: thumb, index, middle, ring,
  // pinky, back/wrist.
  std::array<std::vector<int>, 6> sensor_groups(const HandSkeleton& skeleton) const;

  RigidTransform sensor_frame(const std::vector<RigidTransform>& segment_frames, int sensor) const;

 private:
  std::vector<SensorSite> sensors_;
  std::vector<std::pair<int, int>> edges_;
  int vision_anchor_ = 0;
  int vision_extra_hops_ = 1;
};

using GeodesicMatrix = Eigen::Matrix<int, kNumSensors + 1, kNumSensors + 1>;

// Hop counts between tokens [vision, sensor 0..11]. Vision distance to sensor
// k is hop(anchor, k) + extra_hops. Throws ValidationError if disconnected.
GeodesicMatrix sensor_geodesic_matrix(const SensorLayout& layout);

}  // namespace fusetrack
