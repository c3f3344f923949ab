// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Post-hoc EKF over the articulated hand: constant-velocity joint angles,
// wrist orientation and position, corrected by per-sensor gyro rates and by
// visible 3-D landmarks.

#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "fusetrack/dataset.hpp"
#include "fusetrack/kinematics.hpp"

namespace fusetrack {

struct KalmanUpdate {
  Eigen::VectorXd correction;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd gain;
};

// Joseph-form update for innovation y = z - h(x).
KalmanUpdate kalman_update(const Eigen::MatrixXd& p, const Eigen::VectorXd& innovation, const Eigen::MatrixXd& h,
                           const Eigen::MatrixXd& r);

struct EkfConfig {
  double q_angle = 1e-4;        // rad^2/s, random walk on each angle
  double q_angle_rate = 50.0;   // rad^2/s^3, white angular acceleration per joint
  double q_wrist_rate = 20.0;   // rad^2/s^3, white angular acceleration of the wrist
  double q_accel = 2.0;         // m^2/s^5, white linear acceleration of the wrist
  double landmark_sigma = 0.003;  // m
  double gyro_sigma = 0.005;      // rad/s
  double coupling_sigma = 0.01;  // rad, pseudo-measurement on coupled DoFs; <= 0 disables
  double gate_sigma = 6.0;
  double fd_step = 1e-6;
  double init_angle_sigma = 0.02;
  double init_rate_sigma = 0.5;
  double init_position_sigma = 0.005;
  double init_velocity_sigma = 0.1;
};

class HandEkf {
 public:
  static constexpr int kPhi = 0;
  static constexpr int kPhiDot = kNumDofs;
  static constexpr int kTheta = 2 * kNumDofs;
  static constexpr int kOmega = kTheta + 3;
  static constexpr int kPos = kOmega + 3;
  static constexpr int kVel = kPos + 3;
  static constexpr int kDim = kVel + 3;

  HandEkf(const HandSkeleton& skeleton, const SensorLayout& layout, EkfConfig config, const HandPose& initial);

  // Constant-velocity propagation; throws ValidationError for dt <= 0.
  void predict(double dt);
  // Uses visible landmarks only; innovations beyond gate_sigma are dropped.
  // Returns the number of landmarks used (0 = no-op).
  int update_vision(const JointSet21& landmarks, const std::array<bool, kNumLandmarks>& visible);
  // One gyro reading per sensor (sensor frame).
  void update_gyro(std::span<const Vec3> gyro);
  // Pulls coupled DoFs (angles and rates) toward the skeleton's ratios.
  void update_couplings();

  HandPose pose() const;
  const Phi& phi_dot() const { return phi_dot_; }
  const Vec3& wrist_omega() const { return omega_; }
  const Eigen::MatrixXd& covariance() const { return p_; }
  // Smallest covariance eigenvalue seen right before symmetrization.
  double min_eigenvalue_seen() const { return min_eig_; }

  // Predicted gyro per sensor for the current state.
  std::vector<Vec3> predicted_gyro() const;

 private:
  JointSet21 landmarks_for(const Phi& phi, const Mat3& rotation, const Vec3& translation) const;
  void apply(const Eigen::VectorXd& dx);
  void finish_covariance();

  const HandSkeleton* skeleton_;
  const SensorLayout* layout_;
  EkfConfig config_;
  Phi phi_;
  Phi phi_dot_ = Phi::Zero();
  Mat3 rotation_;
  Vec3 omega_ = Vec3::Zero();
  Vec3 position_;
  Vec3 velocity_ = Vec3::Zero();
  Eigen::MatrixXd p_;
  double min_eig_ = 0.0;
};

// Runs the filter over a sequence: gyro updates at the IMU rate and landmark
// updates at every frame (skipped when `use_vision` is false). Returns one
// pose per frame. `measurements` holds the per-frame landmark stream;
// `visibility` (default: the frames' camera visibility) selects the
// landmarks each update may use.
std::vector<HandPose> run_ekf(const CaptureSequence& seq, std::span<const JointSet21> measurements,
                              const HandSkeleton& skeleton, const SensorLayout& layout, const EkfConfig& config,
                              bool use_vision = true,
                              std::span<const std::array<bool, kNumLandmarks>> visibility = {});

}  // namespace fusetrack
