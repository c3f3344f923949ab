// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fusetrack/errors.hpp"

namespace fusetrack {

CubicSpline::CubicSpline(std::vector<double> knots, std::vector<double> values)
    : t_(std::move(knots)), y_(std::move(values)) {
  const std::size_t n = t_.size();
  if (n < 2 || y_.size() != n) throw ValidationError("spline needs >= 2 knots with matching values");
  m_.assign(n, 0.0);
  if (n == 2) return;

  // Tridiagonal system for interior second derivatives (Thomas algorithm).
  const std::size_t k = n - 2;
  std::vector<double> diag(k), upper(k), rhs(k);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = t_[i] - t_[i - 1];
    const double h1 = t_[i + 1] - t_[i];
    diag[i - 1] = 2.0 * (h0 + h1);
    upper[i - 1] = h1;
    rhs[i - 1] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
  }
  for (std::size_t i = 1; i < k; ++i) {
    const double lower = t_[i + 1] - t_[i];  // h_{i} equals upper of previous row
    const double w = lower / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  m_[k] = rhs[k - 1] / diag[k - 1];
  for (std::size_t i = k - 1; i >= 1; --i) {
    m_[i] = (rhs[i - 1] - upper[i - 1] * m_[i + 1]) / diag[i - 1];
  }
}

std::size_t CubicSpline::segment(double t) const {
  auto it = std::upper_bound(t_.begin(), t_.end(), t);
  std::size_t i = it == t_.begin() ? 0 : static_cast<std::size_t>(it - t_.begin()) - 1;
  return std::min(i, t_.size() - 2);
}

double CubicSpline::value(double t) const {
  const std::size_t i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double a = (t_[i + 1] - t) / h;
  const double b = (t - t_[i]) / h;
  return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
}

double CubicSpline::first_derivative(double t) const {
  const std::size_t i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double a = (t_[i + 1] - t) / h;
  const double b = (t - t_[i]) / h;
  return (y_[i + 1] - y_[i]) / h + (-(3.0 * a * a - 1.0) * m_[i] + (3.0 * b * b - 1.0) * m_[i + 1]) * h / 6.0;
}

double CubicSpline::second_derivative(double t) const {
  const std::size_t i = segment(t);
  const double h = t_[i + 1] - t_[i];
  const double a = (t_[i + 1] - t) / h;
  const double b = (t - t_[i]) / h;
  return a * m_[i] + b * m_[i + 1];
}

Vec3 euler_zyx_from_rotation(const Mat3& r) {
  const double b = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double a = std::atan2(r(1, 0), r(0, 0));
  const double c = std::atan2(r(2, 1), r(2, 2));
  return {a, b, c};
}

Mat3 rotation_from_euler_zyx(const Vec3& abc) {
  return axis_angle(Vec3::UnitZ(), abc[0]) * axis_angle(Vec3::UnitY(), abc[1]) * axis_angle(Vec3::UnitX(), abc[2]);
}

MotionScript::MotionScript(std::vector<Keyframe> keyframes, const HandSkeleton& skeleton)
    : keyframes_(std::move(keyframes)) {
  if (keyframes_.size() < 2) throw ValidationError("motion script needs at least 2 keyframes");
  if (keyframes_.front().time != 0.0) throw ValidationError("motion script must start at t = 0");
  for (std::size_t i = 1; i < keyframes_.size(); ++i) {
    if (!(keyframes_[i].time > keyframes_[i - 1].time)) {
      throw ValidationError("keyframe times must be strictly increasing");
    }
  }
  for (const auto& k : keyframes_) k.pose.validate(skeleton);

  const std::size_t n = keyframes_.size();
  std::vector<double> times(n);
  for (std::size_t i = 0; i < n; ++i) times[i] = keyframes_[i].time;

  for (int d = 0; d < kNumDofs; ++d) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = keyframes_[i].pose.phi[d];
    phi_[d] = CubicSpline(times, std::move(v));
  }

  std::array<std::vector<double>, 3> euler, trans;
  Vec3 prev = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 e = euler_zyx_from_rotation(keyframes_[i].pose.wrist_rotation);
    if (i > 0) {
      // Unwrap yaw and roll so consecutive keyframes take the short way round.
      for (int k : {0, 2}) {
        while (e[k] - prev[k] > std::numbers::pi) e[k] -= 2.0 * std::numbers::pi;
        while (e[k] - prev[k] < -std::numbers::pi) e[k] += 2.0 * std::numbers::pi;
      }
    }
    prev = e;
    for (int k = 0; k < 3; ++k) {
      euler[k].push_back(e[k]);
      trans[k].push_back(keyframes_[i].pose.wrist_translation[k]);
    }
  }
  for (int k = 0; k < 3; ++k) {
    euler_zyx_[k] = CubicSpline(times, std::move(euler[k]));
    translation_[k] = CubicSpline(times, std::move(trans[k]));
  }
}

void MotionScript::check_time(double t) const {
  if (!(t >= 0.0 && t <= duration())) {
    throw ValidationError("sample time " + std::to_string(t) + " outside [0, " + std::to_string(duration()) + "]");
  }
}

HandPose MotionScript::sample_pose(double t) const {
  check_time(t);
  // Exact keyframe hits return the stored pose untouched.
  for (const auto& k : keyframes_) {
    if (k.time == t) return k.pose;
  }
  HandPose p;
  for (int d = 0; d < kNumDofs; ++d) p.phi[d] = phi_[d].value(t);
  Vec3 e;
  for (int k = 0; k < 3; ++k) {
    e[k] = euler_zyx_[k].value(t);
    p.wrist_translation[k] = translation_[k].value(t);
  }
  p.wrist_rotation = rotation_from_euler_zyx(e);
  return p;
}

PoseKinematics MotionScript::sample_kinematics(double t) const {
  check_time(t);
  PoseKinematics out;
  out.pose = sample_pose(t);
  for (int d = 0; d < kNumDofs; ++d) {
    out.phi_dot[d] = phi_[d].first_derivative(t);
    out.phi_ddot[d] = phi_[d].second_derivative(t);
  }
  Vec3 e, de, dde;
  for (int k = 0; k < 3; ++k) {
    e[k] = euler_zyx_[k].value(t);
    de[k] = euler_zyx_[k].first_derivative(t);
    dde[k] = euler_zyx_[k].second_derivative(t);
    out.root.velocity[k] = translation_[k].first_derivative(t);
    out.root.acceleration[k] = translation_[k].second_derivative(t);
  }

  // Euler angles as a chain of three world-anchored hinges: z, then y, then x.
  const Vec3 axes[3] = {Vec3::UnitZ(), Vec3::UnitY(), Vec3::UnitX()};
  Mat3 r = Mat3::Identity();
  Vec3 omega = Vec3::Zero();
  Vec3 omega_dot = Vec3::Zero();
  for (int k = 0; k < 3; ++k) {
    const Vec3 axis = r * axes[k];
    omega_dot += axis * dde[k] + omega.cross(axis * de[k]);
    omega += axis * de[k];
    r = r * axis_angle(axes[k], e[k]);
  }
  out.root.frame = {out.pose.wrist_rotation, out.pose.wrist_translation};
  out.root.omega = omega;
  out.root.omega_dot = omega_dot;
  return out;
}

MotionScript MotionScript::time_warped(double speed, const HandSkeleton& skeleton) const {
  if (!(speed > 0.0)) throw ValidationError("time warp speed must be positive");
  std::vector<Keyframe> k = keyframes_;
  for (auto& f : k) f.time /= speed;
  return MotionScript(std::move(k), skeleton);
}

}  // namespace fusetrack
