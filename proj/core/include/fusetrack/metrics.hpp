// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Keypoint, alignment, point-set and angle metrics. Inputs are in meters and
// radians; reported values are in millimeters, percent and degrees.

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "fusetrack/dataset.hpp"
#include "fusetrack/kinematics.hpp"

namespace fusetrack {

double mkpe(const JointSet21& pred, const JointSet21& gt);
// Throws ValidationError on an index outside [0, 21) or a repeated index.
double fingertip_mkpe(const JointSet21& pred, const JointSet21& gt, std::span<const int> fingertips);

// FK of the predicted angles under the ground-truth wrist transform.
JointSet21 root_transform(const HandPose& pred, const HandPose& gt, const HandSkeleton& skeleton);

inline constexpr double kPckMaxMm = 50.0;
// Trapezoidal area under the fraction-of-errors <= threshold curve for
// thresholds 0, 1, ..., 50 mm, in percent. Throws on an empty list.
double pck_auc(std::span<const double> errors_mm);
double pck_auc(const JointSet21& pred, const JointSet21& gt);

// Similarity (rotation, translation, uniform scale) aligning pred to gt.
// Throws ValidationError for fewer than 3 points or a collinear cloud.
struct Similarity {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};
Similarity procrustes_fit(std::span<const Vec3> pred, std::span<const Vec3> gt);
std::vector<Vec3> procrustes_align(std::span<const Vec3> pred, std::span<const Vec3> gt);

double pa_mpjpe(std::span<const Vec3> pred, std::span<const Vec3> gt);
inline double pa_mpvpe(std::span<const Vec3> pred, std::span<const Vec3> gt) { return pa_mpjpe(pred, gt); }

// Points spaced evenly by rest-pose arc length along the skeleton bones; a
// fixed surrogate for mesh vertices.
struct BoneSample {
  int from = 0;
  int to = 0;
  double fraction = 0.0;
};
inline constexpr int kSurfacePoints = 100;
std::vector<BoneSample> bone_samples(const HandSkeleton& skeleton, int count = kSurfacePoints);
std::vector<Vec3> surface_points(const JointSet21& landmarks, std::span<const BoneSample> samples);

// Harmonic mean of precision and recall at tau (mm); 0 when both are 0.
double f_score(std::span<const Vec3> pred, std::span<const Vec3> gt, double tau_mm);

std::array<double, kNumDofs> joint_angle_errors(const Phi& pred, const Phi& gt);

// Percent of errors <= each threshold. Throws on an empty error list.
std::vector<double> error_cdf(std::span<const double> errors, std::span<const double> thresholds);

struct SampleMetrics {
  int sequence = 0;
  int frame = 0;
  Regime regime = Regime::kOpenHand;
  bool has_global = true;  // false when the wrist translation is not estimated
  double mkpe = 0.0;
  double f_mkpe = 0.0;
  double mkpe_t = 0.0;
  double f_mkpe_t = 0.0;
  double pck_auc = 0.0;
  double pck_auc_t = 0.0;
  double pa_mpjpe = 0.0;
  double pa_mpvpe = 0.0;
  double f5 = 0.0;
  double f15 = 0.0;
  std::array<double, kNumDofs> angle_error_deg{};
  std::array<double, kNumLandmarks> landmark_error_t_mm{};  // root-transformed
  std::array<bool, kNumLandmarks> visible{};
};

struct MetricContext {
  const HandSkeleton* skeleton;
  std::vector<BoneSample> surface;

  explicit MetricContext(const HandSkeleton& s) : skeleton(&s), surface(bone_samples(s)) {}
};

SampleMetrics evaluate_sample(const MetricContext& ctx, const HandPose& pred, bool translation_valid,
                              const HandPose& gt, const std::array<bool, kNumLandmarks>& visible);

// Mean over samples of every scalar metric, keyed by report name (mm, %, deg).
// Global metrics are omitted when any sample lacks them. Also reports
// "occluded_MKPE.T": the mean root-transformed error over landmarks hidden
// from the camera, and "occluded_frame_fraction".
std::vector<std::pair<std::string, double>> aggregate_metrics(std::span<const SampleMetrics> samples);

}  // namespace fusetrack
