// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/ekf.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <cmath>

#include "fusetrack/errors.hpp"

namespace fusetrack {

KalmanUpdate kalman_update(const Eigen::MatrixXd& p, const Eigen::VectorXd& innovation, const Eigen::MatrixXd& h,
                           const Eigen::MatrixXd& r) {
  const Eigen::MatrixXd s = h * p * h.transpose() + r;
  const Eigen::MatrixXd k = p * h.transpose() * s.inverse();
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(p.rows(), p.cols()) - k * h;
  return {k * innovation, ikh * p * ikh.transpose() + k * r * k.transpose(), k};
}

namespace {

Mat3 exp_so3(const Vec3& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

}  // namespace

HandEkf::HandEkf(const HandSkeleton& skeleton, const SensorLayout& layout, EkfConfig config, const HandPose& initial)
    : skeleton_(&skeleton),
      layout_(&layout),
      config_(config),
      phi_(initial.phi),
      rotation_(initial.wrist_rotation),
      position_(initial.wrist_translation),
      p_(Eigen::MatrixXd::Zero(kDim, kDim)) {
  auto set = [&](int start, int n, double sigma) {
    for (int i = 0; i < n; ++i) p_(start + i, start + i) = sigma * sigma;
  };
  set(kPhi, kNumDofs, config_.init_angle_sigma);
  set(kPhiDot, kNumDofs, config_.init_rate_sigma);
  set(kTheta, 3, config_.init_angle_sigma);
  set(kOmega, 3, config_.init_rate_sigma);
  set(kPos, 3, config_.init_position_sigma);
  set(kVel, 3, config_.init_velocity_sigma);
}

void HandEkf::predict(double dt) {
  if (!(dt > 0.0)) throw ValidationError("ekf_predict needs dt > 0");
  phi_ += phi_dot_ * dt;
  rotation_ = exp_so3(omega_ * dt) * rotation_;
  position_ += velocity_ * dt;

  Eigen::MatrixXd f = Eigen::MatrixXd::Identity(kDim, kDim);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(kDim, kDim);
  auto couple = [&](int x, int xdot, int n, double qc, double q_level) {
    for (int i = 0; i < n; ++i) {
      f(x + i, xdot + i) = dt;
      q(x + i, x + i) = qc * dt * dt * dt / 3.0 + q_level * dt;
      q(x + i, xdot + i) = qc * dt * dt / 2.0;
      q(xdot + i, x + i) = qc * dt * dt / 2.0;
      q(xdot + i, xdot + i) = qc * dt;
    }
  };
  couple(kPhi, kPhiDot, kNumDofs, config_.q_angle_rate, config_.q_angle);
  couple(kTheta, kOmega, 3, config_.q_wrist_rate, 0.0);
  couple(kPos, kVel, 3, config_.q_accel, 0.0);
  p_ = f * p_ * f.transpose() + q;
  finish_covariance();
}

JointSet21 HandEkf::landmarks_for(const Phi& phi, const Mat3& rotation, const Vec3& translation) const {
  HandPose pose;
  pose.phi = phi;
  pose.wrist_rotation = rotation;
  pose.wrist_translation = translation;
  return forward_kinematics(*skeleton_, pose);
}

int HandEkf::update_vision(const JointSet21& z, const std::array<bool, kNumLandmarks>& visible) {
  std::vector<int> used;
  for (int l = 0; l < kNumLandmarks; ++l) {
    if (visible[l]) used.push_back(l);
  }
  if (used.empty()) return 0;

  const JointSet21 predicted = landmarks_for(phi_, rotation_, position_);
  // Central differences of every landmark w.r.t. angles and orientation error.
  Eigen::MatrixXd h_full = Eigen::MatrixXd::Zero(3 * kNumLandmarks, kDim);
  const double eps = config_.fd_step;
  for (int d = 0; d < kNumDofs; ++d) {
    Phi plus = phi_;
    Phi minus = phi_;
    plus[d] += eps;
    minus[d] -= eps;
    const JointSet21 a = landmarks_for(plus, rotation_, position_);
    const JointSet21 b = landmarks_for(minus, rotation_, position_);
    for (int l = 0; l < kNumLandmarks; ++l) h_full.block<3, 1>(3 * l, kPhi + d) = (a[l] - b[l]) / (2.0 * eps);
  }
  for (int k = 0; k < 3; ++k) {
    const Vec3 e = Vec3::Unit(k) * eps;
    const JointSet21 a = landmarks_for(phi_, exp_so3(e) * rotation_, position_);
    const JointSet21 b = landmarks_for(phi_, exp_so3(-e) * rotation_, position_);
    for (int l = 0; l < kNumLandmarks; ++l) h_full.block<3, 1>(3 * l, kTheta + k) = (a[l] - b[l]) / (2.0 * eps);
  }
  for (int l = 0; l < kNumLandmarks; ++l) h_full.block<3, 3>(3 * l, kPos).setIdentity();

  const double r = config_.landmark_sigma * config_.landmark_sigma;
  std::vector<int> gated;
  for (int l : used) {
    const Eigen::MatrixXd hl = h_full.middleRows(3 * l, 3);
    const Eigen::Matrix3d s = hl * p_ * hl.transpose() + r * Eigen::Matrix3d::Identity();
    const Vec3 y = z[l] - predicted[l];
    bool ok = true;
    for (int c = 0; c < 3; ++c) ok = ok && std::abs(y[c]) <= config_.gate_sigma * std::sqrt(s(c, c));
    if (ok) gated.push_back(l);
  }
  if (gated.empty()) return 0;

  const int m = 3 * static_cast<int>(gated.size());
  Eigen::MatrixXd h(m, kDim);
  Eigen::VectorXd y(m);
  for (std::size_t i = 0; i < gated.size(); ++i) {
    const int l = gated[i];
    h.middleRows(3 * static_cast<Eigen::Index>(i), 3) = h_full.middleRows(3 * l, 3);
    y.segment<3>(3 * static_cast<Eigen::Index>(i)) = z[l] - predicted[l];
  }
  const KalmanUpdate u = kalman_update(p_, y, h, r * Eigen::MatrixXd::Identity(m, m));
  p_ = u.covariance;
  apply(u.correction);
  finish_covariance();
  return static_cast<int>(gated.size());
}

std::vector<Vec3> HandEkf::predicted_gyro() const {
  HandPose pose = this->pose();
  RootMotion root;
  root.frame = {pose.wrist_rotation, pose.wrist_translation};
  root.omega = omega_;
  const auto motion = segment_motion(*skeleton_, phi_, phi_dot_, Phi::Zero(), root);
  std::vector<RigidTransform> frames;
  for (const auto& m : motion) frames.push_back(m.frame);
  std::vector<Vec3> out;
  for (int k = 0; k < kNumSensors; ++k) {
    const int seg = layout_->sensors()[k].segment;
    out.push_back(layout_->sensor_frame(frames, k).rotation.transpose() * motion[seg].omega);
  }
  return out;
}

void HandEkf::update_gyro(std::span<const Vec3> gyro) {
  if (gyro.size() != kNumSensors) throw ValidationError("update_gyro needs one reading per sensor");
  // Sensor rates are linear in (phi_dot, omega): columns from unit inputs.
  HandPose pose = this->pose();
  RootMotion root;
  root.frame = {pose.wrist_rotation, pose.wrist_translation};
  const Phi zero = Phi::Zero();
  std::vector<RigidTransform> frames;
  for (const auto& m : segment_motion(*skeleton_, phi_, zero, zero, root)) frames.push_back(m.frame);
  std::vector<Mat3> sensor_rot;
  for (int k = 0; k < kNumSensors; ++k) sensor_rot.push_back(layout_->sensor_frame(frames, k).rotation);

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3 * kNumSensors, kDim);
  auto fill_column = [&](int col, const Phi& rates, const Vec3& omega) {
    RootMotion r = root;
    r.omega = omega;
    const auto motion = segment_motion(*skeleton_, phi_, rates, zero, r);
    for (int k = 0; k < kNumSensors; ++k) {
      h.block<3, 1>(3 * k, col) = sensor_rot[k].transpose() * motion[layout_->sensors()[k].segment].omega;
    }
  };
  for (int d = 0; d < kNumDofs; ++d) fill_column(kPhiDot + d, Phi::Unit(d), Vec3::Zero());
  for (int k = 0; k < 3; ++k) fill_column(kOmega + k, zero, Vec3::Unit(k));

  Eigen::VectorXd state_rates(kDim);
  state_rates.setZero();
  state_rates.segment<kNumDofs>(kPhiDot) = phi_dot_;
  state_rates.segment<3>(kOmega) = omega_;
  const Eigen::VectorXd predicted = h * state_rates;
  Eigen::VectorXd y(3 * kNumSensors);
  for (int k = 0; k < kNumSensors; ++k) y.segment<3>(3 * k) = gyro[k] - predicted.segment<3>(3 * k);
  const double r = config_.gyro_sigma * config_.gyro_sigma;
  const KalmanUpdate u = kalman_update(p_, y, h, r * Eigen::MatrixXd::Identity(3 * kNumSensors, 3 * kNumSensors));
  p_ = u.covariance;
  apply(u.correction);
  finish_covariance();
}

void HandEkf::update_couplings() {
  const auto& couplings = skeleton_->couplings();
  if (couplings.empty() || config_.coupling_sigma <= 0.0) return;
  const int m = 2 * static_cast<int>(couplings.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m, kDim);
  Eigen::VectorXd y(m);
  for (std::size_t i = 0; i < couplings.size(); ++i) {
    const auto& c = couplings[i];
    const Eigen::Index row = 2 * static_cast<Eigen::Index>(i);
    h(row, kPhi + c.dependent) = 1.0;
    h(row, kPhi + c.driver) = -c.ratio;
    h(row + 1, kPhiDot + c.dependent) = 1.0;
    h(row + 1, kPhiDot + c.driver) = -c.ratio;
    y[row] = -(phi_[c.dependent] - c.ratio * phi_[c.driver]);
    y[row + 1] = -(phi_dot_[c.dependent] - c.ratio * phi_dot_[c.driver]);
  }
  const double r = config_.coupling_sigma * config_.coupling_sigma;
  const KalmanUpdate u = kalman_update(p_, y, h, r * Eigen::MatrixXd::Identity(m, m));
  p_ = u.covariance;
  apply(u.correction);
  finish_covariance();
}

void HandEkf::apply(const Eigen::VectorXd& dx) {
  phi_ += dx.segment<kNumDofs>(kPhi);
  phi_dot_ += dx.segment<kNumDofs>(kPhiDot);
  rotation_ = exp_so3(dx.segment<3>(kTheta)) * rotation_;
  omega_ += dx.segment<3>(kOmega);
  position_ += dx.segment<3>(kPos);
  velocity_ += dx.segment<3>(kVel);
  // Re-orthonormalize against accumulated round-off.
  Eigen::JacobiSVD<Mat3> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  rotation_ = svd.matrixU() * svd.matrixV().transpose();
}

void HandEkf::finish_covariance() {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p_, Eigen::EigenvaluesOnly);
  min_eig_ = std::min(min_eig_, es.eigenvalues().minCoeff());
  p_ = 0.5 * (p_ + p_.transpose());
}

HandPose HandEkf::pose() const {
  HandPose p;
  p.phi = phi_;
  p.wrist_rotation = rotation_;
  p.wrist_translation = position_;
  return p;
}

std::vector<HandPose> run_ekf(const CaptureSequence& seq, std::span<const JointSet21> measurements,
                              const HandSkeleton& skeleton, const SensorLayout& layout, const EkfConfig& config,
                              bool use_vision, std::span<const std::array<bool, kNumLandmarks>> visibility) {
  if (seq.frames.empty()) return {};
  if (use_vision && measurements.size() != seq.frames.size()) {
    throw ValidationError("one landmark measurement per frame required");
  }
  if (!visibility.empty() && visibility.size() != seq.frames.size()) {
    throw ValidationError("one visibility mask per frame required");
  }
  HandEkf ekf(skeleton, layout, config, seq.frames.front().gt);
  std::vector<HandPose> out;
  out.reserve(seq.frames.size());
  double now = seq.frames.front().timestamp;
  std::size_t imu = 0;
  while (imu < seq.imu.num_samples && seq.imu.timestamp(imu) <= now) ++imu;
  std::vector<Vec3> gyro(kNumSensors);
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const double tf = seq.frames[f].timestamp;
    while (imu < seq.imu.num_samples && seq.imu.timestamp(imu) <= tf) {
      const double ti = seq.imu.timestamp(imu);
      if (ti > now) {
        ekf.predict(ti - now);
        now = ti;
      }
      for (int k = 0; k < kNumSensors; ++k) gyro[k] = seq.imu.gyro_at(imu, k);
      ekf.update_gyro(gyro);
      ++imu;
    }
    if (tf > now) {
      ekf.predict(tf - now);
      now = tf;
    }
    ekf.update_couplings();
    if (use_vision) ekf.update_vision(measurements[f], visibility.empty() ? seq.frames[f].visible : visibility[f]);
    out.push_back(ekf.pose());
  }
  return out;
}

}  // namespace fusetrack
