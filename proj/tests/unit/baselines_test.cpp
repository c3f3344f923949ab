// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fusetrack/dataset.hpp"
#include "fusetrack/ekf.hpp"
#include "fusetrack/errors.hpp"
#include "fusetrack/imu_tracker.hpp"
#include "fusetrack/metrics.hpp"
#include "test_support.hpp"

using namespace fusetrack;

namespace {

const HandSkeleton& skel() { return HandSkeleton::default_right_hand(); }
const SensorLayout& layout() { return SensorLayout::default_layout(); }

std::array<bool, kNumLandmarks> all_visible() {
  std::array<bool, kNumLandmarks> v{};
  v.fill(true);
  return v;
}

CaptureSequence noiseless_sequence(double duration, std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.num_sequences = 1;
  cfg.duration = duration;
  cfg.noise = NoiseModel::zero();
  cfg.speed_min = 1.0;
  cfg.speed_max = 1.0;
  cfg.raster_size = 8;
  cfg.seed = seed;
  return generate_sequence(cfg, skel(), layout(), 0);
}

double mkpe_t(const HandPose& pred, const HandPose& gt) {
  return mkpe(root_transform(pred, gt, skel()), forward_kinematics(skel(), gt));
}

double max_pose_change(const HandPose& a, const HandPose& b) {
  return std::max({(a.phi - b.phi).cwiseAbs().maxCoeff(), (a.wrist_rotation - b.wrist_rotation).cwiseAbs().maxCoeff(),
                   (a.wrist_translation - b.wrist_translation).cwiseAbs().maxCoeff()});
}

HandPose rest_pose() {
  std::mt19937_64 rng(17);
  HandPose p = fusetrack::testing::random_pose(skel(), rng);
  p.wrist_translation = Vec3(0.0, 0.0, 0.4);
  for (const auto& c : skel().couplings()) p.phi[c.dependent] = c.ratio * p.phi[c.driver];
  return p;
}

}  // namespace

TEST_CASE("kalman update arithmetic") {
  const Eigen::MatrixXd p = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd r = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd y(1);
  y << 2.0;
  const KalmanUpdate u = kalman_update(p, y, h, r);
  CHECK(u.gain(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(u.correction(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(u.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  // Two states, one observed: K = P H^T / (H P H^T + R).
  Eigen::MatrixXd p2(2, 2);
  p2 << 4.0, 1.0, 1.0, 2.0;
  Eigen::MatrixXd h2(1, 2);
  h2 << 1.0, 0.0;
  const Eigen::MatrixXd r2 = Eigen::MatrixXd::Constant(1, 1, 1.0);
  const KalmanUpdate u2 = kalman_update(p2, y, h2, r2);
  CHECK(u2.gain(0, 0) == doctest::Approx(4.0 / 5.0));
  CHECK(u2.gain(1, 0) == doctest::Approx(1.0 / 5.0));
  CHECK(u2.covariance(0, 0) == doctest::Approx(4.0 - 16.0 / 5.0));
  CHECK(u2.covariance(1, 1) == doctest::Approx(2.0 - 1.0 / 5.0));
  CHECK(u2.covariance(0, 1) == doctest::Approx(u2.covariance(1, 0)));
}

TEST_CASE("predict is a semigroup with constant rates") {
  const HandPose start = rest_pose();
  HandEkf once(skel(), layout(), {}, start);
  HandEkf twice(skel(), layout(), {}, start);
  const Eigen::MatrixXd p0 = once.covariance();
  once.predict(0.01);
  twice.predict(0.005);
  twice.predict(0.005);
  CHECK((once.covariance() - twice.covariance()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(max_pose_change(once.pose(), start) < 1e-15);
  CHECK(once.covariance().trace() > p0.trace());
  CHECK_THROWS_AS(once.predict(0.0), ValidationError);
  CHECK_THROWS_AS(once.predict(-0.1), ValidationError);
}

TEST_CASE("predict advances angles by their rates") {
  const HandPose start = rest_pose();
  HandEkf ekf(skel(), layout(), {}, start);
  // Give the filter nonzero joint rates through one gyro update.
  std::vector<Vec3> gyro = ekf.predicted_gyro();
  gyro[layout().sensor_index("index_dist")] += Vec3(0.0, 0.5, 0.0);
  ekf.update_gyro(gyro);
  const Phi rate = ekf.phi_dot();
  REQUIRE(rate.norm() > 1e-3);
  const Phi phi0 = ekf.pose().phi;
  ekf.predict(0.02);
  CHECK((ekf.pose().phi - (phi0 + 0.02 * rate)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ekf.phi_dot() - rate).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("zero-innovation vision update keeps the mean and shrinks covariance") {
  const HandPose start = rest_pose();
  HandEkf ekf(skel(), layout(), {}, start);
  ekf.predict(0.05);
  const HandPose before = ekf.pose();
  const double trace = ekf.covariance().trace();
  const int used = ekf.update_vision(forward_kinematics(skel(), before), all_visible());
  CHECK(used == kNumLandmarks);
  CHECK(max_pose_change(ekf.pose(), before) < 1e-9);
  CHECK(ekf.covariance().trace() <= trace);

  std::array<bool, kNumLandmarks> none{};
  const Eigen::MatrixXd p = ekf.covariance();
  CHECK(ekf.update_vision(forward_kinematics(skel(), before), none) == 0);
  CHECK(ekf.covariance() == p);
}

TEST_CASE("vision updates never grow the covariance trace") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.002);
  HandEkf ekf(skel(), layout(), {}, rest_pose());
  for (int i = 0; i < 20; ++i) {
    ekf.predict(1.0 / 60.0);
    JointSet21 z = forward_kinematics(skel(), ekf.pose());
    for (auto& p : z) p += Vec3(n(rng), n(rng), n(rng));
    auto vis = all_visible();
    vis[static_cast<std::size_t>(i % kNumLandmarks)] = false;
    const double trace = ekf.covariance().trace();
    ekf.update_vision(z, vis);
    CHECK(ekf.covariance().trace() <= trace + 1e-15);
  }
}

TEST_CASE("gyro update") {
  HandEkf ekf(skel(), layout(), {}, rest_pose());
  std::vector<Vec3> gyro = ekf.predicted_gyro();
  for (auto& w : gyro) w += Vec3(0.2, -0.3, 0.1);
  ekf.update_gyro(gyro);
  REQUIRE(ekf.phi_dot().norm() > 1e-3);

  SUBCASE("matching readings leave the state unchanged") {
    const HandPose before = ekf.pose();
    const Phi rate = ekf.phi_dot();
    const Vec3 omega = ekf.wrist_omega();
    ekf.update_gyro(ekf.predicted_gyro());
    CHECK(max_pose_change(ekf.pose(), before) < 1e-12);
    CHECK((ekf.phi_dot() - rate).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ekf.wrist_omega() - omega).norm() < 1e-12);
  }
  SUBCASE("zero readings drive the rates to zero") {
    const std::vector<Vec3> zero(kNumSensors, Vec3::Zero());
    double last = ekf.phi_dot().norm() + ekf.wrist_omega().norm();
    for (int i = 0; i < 200; ++i) {
      ekf.predict(0.005);
      ekf.update_gyro(zero);
      const double now = ekf.phi_dot().norm() + ekf.wrist_omega().norm();
      CHECK(now <= last + 1e-12);
      last = now;
    }
    CHECK(last < 1e-3);
  }
}

TEST_CASE("covariance stays positive semi-definite") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.01);
  std::normal_distribution<double> lm(0.0, 0.003);
  const HandPose start = rest_pose();
  HandEkf ekf(skel(), layout(), {}, start);
  const JointSet21 truth = forward_kinematics(skel(), start);
  for (int step = 0; step < 10000; ++step) {
    ekf.predict(0.005);
    std::vector<Vec3> gyro(kNumSensors);
    for (auto& w : gyro) w = Vec3(n(rng), n(rng), n(rng));
    ekf.update_gyro(gyro);
    if (step % 10 == 0) {
      ekf.update_couplings();
      JointSet21 z = truth;
      for (auto& p : z) p += Vec3(lm(rng), lm(rng), lm(rng));
      ekf.update_vision(z, all_visible());
    }
  }
  CHECK(ekf.min_eigenvalue_seen() >= -1e-10);
  const Eigen::MatrixXd& p = ekf.covariance();
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p).eigenvalues().minCoeff() >= -1e-10);
  CHECK(mkpe_t(ekf.pose(), start) < 5.0);
}

TEST_CASE("noiseless EKF tracks ground truth") {
  const CaptureSequence seq = noiseless_sequence(30.0, 11);
  std::vector<JointSet21> z;
  for (const auto& f : seq.frames) z.push_back(forward_kinematics(skel(), f.gt));
  const std::vector<std::array<bool, kNumLandmarks>> vis(seq.frames.size(), all_visible());
  const auto poses = run_ekf(seq, z, skel(), layout(), {}, true, vis);
  REQUIRE(poses.size() == seq.frames.size());
  double worst_after_1s = 0.0;
  for (std::size_t f = 0; f < poses.size(); ++f) {
    REQUIRE(poses[f].phi.allFinite());
    if (seq.frames[f].timestamp >= 1.0) worst_after_1s = std::max(worst_after_1s, mkpe_t(poses[f], seq.frames[f].gt));
  }
  CHECK(worst_after_1s < 2.0);
}

TEST_CASE("EKF without vision matches the IMU tracker in root-relative error") {
  const CaptureSequence seq = noiseless_sequence(2.0, 12);
  const auto ekf = run_ekf(seq, {}, skel(), layout(), {}, false);
  const auto imu = imu_only_tracker(seq, skel(), layout());
  CHECK_FALSE(imu.translation_valid);
  double e_ekf = 0.0, e_imu = 0.0;
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    e_ekf += mkpe_t(ekf[f], seq.frames[f].gt);
    e_imu += mkpe_t(imu.poses[f], seq.frames[f].gt);
  }
  const double n = static_cast<double>(seq.frames.size());
  MESSAGE("no-vision EKF MKPE.T " << e_ekf / n << " mm, IMU tracker " << e_imu / n << " mm");
  CHECK(e_ekf / n <= 1.2 * (e_imu / n));
}

TEST_CASE("IMU tracker holds a static pose") {
  const HandPose p = rest_pose();
  const MotionScript still({{0.0, p}, {10.0, p}}, skel());
  const ImuStream stream = simulate_imu_stream(still, skel(), layout(), NoiseModel::zero(), 1);
  std::vector<double> ts;
  for (int k = 0; k <= 10; ++k) ts.push_back(static_cast<double>(k));
  const auto track = imu_only_tracker(stream, skel(), layout(), p, ts);
  REQUIRE(track.poses.size() == ts.size());
  CHECK_FALSE(track.translation_valid);
  const double drift_deg = (track.poses.back().phi - p.phi).cwiseAbs().maxCoeff() * 180.0 / std::numbers::pi;
  CHECK(drift_deg < 1.0);
  const Mat3 dr = track.poses.back().wrist_rotation.transpose() * p.wrist_rotation;
  CHECK(Eigen::AngleAxisd(dr).angle() * 180.0 / std::numbers::pi < 1.0);
  CHECK_THROWS_AS(imu_only_tracker(ImuStream{}, skel(), layout(), p, ts), ValidationError);
}

TEST_CASE("IMU tracker follows a noiseless articulated script") {
  const CaptureSequence seq = noiseless_sequence(2.0, 13);
  const auto track = imu_only_tracker(seq, skel(), layout());
  REQUIRE(track.poses.size() == seq.frames.size());
  double worst = 0.0;
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const JointSet21 a = root_transform(track.poses[f], seq.frames[f].gt, skel());
    const JointSet21 b = forward_kinematics(skel(), seq.frames[f].gt);
    worst = std::max(worst, 1000.0 * fusetrack::testing::max_deviation(a, b));
  }
  CHECK(worst < 3.0);
}
