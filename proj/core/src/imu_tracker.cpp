// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/imu_tracker.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>

#include "fusetrack/errors.hpp"

namespace fusetrack {

namespace {

Mat3 exp_so3(const Vec3& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

Vec3 log_so3(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

constexpr int kParams = kNumDofs + 3;

std::array<Mat3, kNumSensors> model_orientations(const HandSkeleton& skeleton, const SensorLayout& layout,
                                                  const HandPose& pose) {
  const auto frames = segment_frames(skeleton, pose);
  std::array<Mat3, kNumSensors> out;
  for (int k = 0; k < kNumSensors; ++k) out[k] = layout.sensor_frame(frames, k).rotation;
  return out;
}

Eigen::VectorXd residual(const HandSkeleton& skeleton, const SensorLayout& layout,
                         const std::array<Mat3, kNumSensors>& measured, const HandPose& pose, double coupling_weight) {
  const auto model = model_orientations(skeleton, layout, pose);
  const auto& couplings = skeleton.couplings();
  Eigen::VectorXd r(3 * kNumSensors + static_cast<Eigen::Index>(couplings.size()));
  for (int k = 0; k < kNumSensors; ++k) r.segment<3>(3 * k) = log_so3(model[k].transpose() * measured[k]);
  for (std::size_t c = 0; c < couplings.size(); ++c) {
    r[3 * kNumSensors + static_cast<Eigen::Index>(c)] =
        coupling_weight * (pose.phi[couplings[c].dependent] - couplings[c].ratio * pose.phi[couplings[c].driver]);
  }
  return r;
}

HandPose perturb(const HandPose& pose, const Eigen::VectorXd& dx) {
  HandPose p = pose;
  p.phi += dx.head<kNumDofs>();
  p.wrist_rotation = exp_so3(dx.tail<3>()) * pose.wrist_rotation;
  return p;
}

}  // namespace

void OrientationFilter::step(const Vec3& gyro_prev, const Vec3& gyro, const Vec3& accel, double dt) {
  r_ = r_ * exp_so3(0.5 * (gyro_prev + gyro) * dt);
  const double norm = accel.norm();
  if (config_.tilt_gain > 0.0 && std::abs(norm - kGravity) < config_.static_band) {
    const Vec3 up = r_.transpose() * Vec3::UnitZ();
    const Vec3 measured = accel / norm;
    r_ = r_ * exp_so3(config_.tilt_gain * measured.cross(up));
  }
  r_ = orthonormalize(r_);
}

HandPose fit_sensor_orientations(const HandSkeleton& skeleton, const SensorLayout& layout,
                                 const std::array<Mat3, kNumSensors>& measured, const HandPose& guess,
                                 const ImuTrackerConfig& config) {
  HandPose pose = guess;
  const double h = config.fd_step;
  for (int it = 0; it < config.iterations; ++it) {
    const Eigen::VectorXd r0 = residual(skeleton, layout, measured, pose, config.coupling_weight);
    Eigen::MatrixXd j(r0.size(), kParams);
    for (int p = 0; p < kParams; ++p) {
      Eigen::VectorXd dx = Eigen::VectorXd::Zero(kParams);
      dx[p] = h;
      const Eigen::VectorXd rp = residual(skeleton, layout, measured, perturb(pose, dx), config.coupling_weight);
      const Eigen::VectorXd rm = residual(skeleton, layout, measured, perturb(pose, -dx), config.coupling_weight);
      j.col(p) = (rp - rm) / (2.0 * h);
    }
    // Small damping keeps DoFs no sensor constrains at their warm start.
    Eigen::MatrixXd jtj = j.transpose() * j;
    jtj.diagonal().array() += 1e-9;
    const Eigen::VectorXd step = jtj.ldlt().solve(-j.transpose() * r0);
    pose = perturb(pose, step);
    if (step.norm() < 1e-12) break;
  }
  pose.wrist_rotation = orthonormalize(pose.wrist_rotation);
  return pose;
}

ImuTrackResult imu_only_tracker(const ImuStream& stream, const HandSkeleton& skeleton, const SensorLayout& layout,
                                const HandPose& initial, const std::vector<double>& timestamps,
                                const ImuTrackerConfig& config) {
  if (stream.num_samples == 0) throw ValidationError("imu_only_tracker needs a non-empty stream");
  initial.validate(skeleton);
  const auto start = model_orientations(skeleton, layout, initial);
  std::vector<OrientationFilter> filters;
  for (int k = 0; k < kNumSensors; ++k) filters.emplace_back(start[k], config);

  ImuTrackResult out;
  out.poses.reserve(timestamps.size());
  HandPose current = initial;
  std::size_t i = 0;  // last integrated sample
  for (double t : timestamps) {
    while (i + 1 < stream.num_samples && stream.timestamp(i + 1) <= t + 1e-12) {
      const double dt = stream.timestamp(i + 1) - stream.timestamp(i);
      for (int k = 0; k < kNumSensors; ++k) {
        filters[k].step(stream.gyro_at(i, k), stream.gyro_at(i + 1, k), stream.accel_at(i + 1, k), dt);
      }
      ++i;
    }
    std::array<Mat3, kNumSensors> measured;
    for (int k = 0; k < kNumSensors; ++k) measured[k] = filters[k].rotation();
    current = fit_sensor_orientations(skeleton, layout, measured, current, config);
    current.wrist_translation = initial.wrist_translation;
    out.poses.push_back(current);
  }
  return out;
}

ImuTrackResult imu_only_tracker(const CaptureSequence& seq, const HandSkeleton& skeleton, const SensorLayout& layout,
                                const ImuTrackerConfig& config) {
  if (seq.frames.empty()) throw ValidationError("imu_only_tracker needs a calibrated initial pose");
  std::vector<double> ts;
  ts.reserve(seq.frames.size());
  for (const auto& f : seq.frames) ts.push_back(f.timestamp);
  return imu_only_tracker(seq.imu, skeleton, layout, seq.frames.front().gt, ts, config);
}

}  // namespace fusetrack
