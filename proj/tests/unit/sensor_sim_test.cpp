// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Geometry>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "fusetrack/container.hpp"
#include "fusetrack/dataset.hpp"
#include "fusetrack/errors.hpp"
#include "fusetrack/motion.hpp"
#include "fusetrack/render.hpp"
#include "fusetrack/sensor_sim.hpp"
#include "test_support.hpp"

using namespace fusetrack;
namespace fs = std::filesystem;

namespace {

const HandSkeleton& skel() { return HandSkeleton::default_right_hand(); }
const SensorLayout& layout() { return SensorLayout::default_layout(); }

HandPose nominal_pose() {
  HandPose p;
  const RigidTransform w = nominal_wrist_pose();
  p.wrist_rotation = w.rotation;
  p.wrist_translation = w.translation;
  return p;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fusetrack_sim_" + name);
  fs::remove_all(p);
  return p;
}

// q <- q * exp(w dt / 2) with the midpoint rate.
Eigen::Quaterniond integrate(const Eigen::Quaterniond& q, const Vec3& w0, const Vec3& w1, double dt) {
  const Vec3 w = 0.5 * (w0 + w1);
  const double angle = w.norm() * dt;
  if (angle < 1e-15) return q;
  return (q * Eigen::Quaterniond(Eigen::AngleAxisd(angle, w.normalized()))).normalized();
}

}  // namespace

TEST_CASE("cubic spline against the closed-form natural spline") {
  const std::vector<double> t{0.0, 0.4, 1.0};
  const std::vector<double> y{0.1, 0.7, 0.2};
  const CubicSpline s(t, y);
  const double h0 = t[1] - t[0], h1 = t[2] - t[1];
  const double m1 = 6.0 * ((y[2] - y[1]) / h1 - (y[1] - y[0]) / h0) / (2.0 * (h0 + h1));
  auto oracle = [&](double x) {
    if (x <= t[1]) {
      return m1 * std::pow(x - t[0], 3) / (6 * h0) + y[0] / h0 * (t[1] - x) + (y[1] / h0 - m1 * h0 / 6) * (x - t[0]);
    }
    return m1 * std::pow(t[2] - x, 3) / (6 * h1) + (y[1] / h1 - m1 * h1 / 6) * (t[2] - x) + y[2] / h1 * (x - t[1]);
  };
  for (double x = 0.0; x <= 1.0; x += 0.05) CHECK(s.value(x) == doctest::Approx(oracle(x)).epsilon(1e-12));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(s.value(t[i]) == doctest::Approx(y[i]).epsilon(1e-14));
  CHECK(std::abs(s.second_derivative(0.0)) < 1e-12);
  CHECK(std::abs(s.second_derivative(1.0)) < 1e-12);
}

TEST_CASE("motion script sampling") {
  HandPose a, b;
  const int dof = skel().dof_index("middle_pip");
  a.phi[dof] = 0.2;
  b.phi[dof] = 1.0;
  b.wrist_translation = Vec3(0.1, 0.0, 0.0);
  const MotionScript lin({{0.0, a}, {2.0, b}}, skel());
  CHECK(lin.sample_pose(0.0).phi[dof] == a.phi[dof]);
  CHECK(lin.sample_pose(2.0).phi[dof] == doctest::Approx(b.phi[dof]).epsilon(1e-14));
  CHECK(lin.sample_pose(1.0).phi[dof] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(lin.sample_pose(1.0).wrist_translation.x() == doctest::Approx(0.05).epsilon(1e-12));

  const MotionScript still({{0.0, a}, {1.0, a}, {3.0, a}}, skel());
  for (double t = 0.0; t <= 3.0; t += 0.1) CHECK((still.sample_pose(t).phi - a.phi).norm() < 1e-15);

  CHECK_THROWS_AS(lin.sample_pose(-0.1), ValidationError);
  CHECK_THROWS_AS(lin.sample_pose(2.1), ValidationError);
  CHECK_THROWS(MotionScript({{0.0, a}}, skel()));
  CHECK_THROWS(MotionScript({{0.0, a}, {1.0, b}, {1.0, a}}, skel()));
}

TEST_CASE("static pose reads gravity only") {
  const HandPose p = nominal_pose();
  const MotionScript still({{0.0, p}, {1.0, p}}, skel());
  const ImuStream s = simulate_imu_stream(still, skel(), layout(), NoiseModel::zero(), 1);
  CHECK(s.num_samples == 201);
  for (std::size_t i = 0; i < s.num_samples; ++i) {
    for (int k = 0; k < kNumSensors; ++k) {
      CHECK(s.gyro_at(i, k).norm() < 1e-12);
      CHECK(std::abs(s.accel_at(i, k).norm() - 9.81) < 1e-6);
    }
  }
}

TEST_CASE("constant yaw rate about world z") {
  const double w = 0.8;
  std::vector<Keyframe> kf;
  for (int i = 0; i <= 4; ++i) {
    HandPose p;
    p.wrist_rotation = axis_angle(Vec3::UnitZ(), w * 0.5 * i);
    kf.push_back({0.5 * i, p});
  }
  const MotionScript script(kf, skel());
  const auto samples = simulate_imu(script, skel(), layout(), NoiseModel::zero(), 2);
  const int back = layout().sensor_index("hand_back");
  for (const auto& s : samples) {
    if (s.sensor_id != back) continue;
    const auto st = sensor_states(script, skel(), layout(), s.timestamp)[back];
    CHECK((s.gyro - st.frame.rotation.transpose() * Vec3(0, 0, w)).norm() < 1e-9);
    CHECK(s.gyro.norm() == doctest::Approx(w).epsilon(1e-9));
  }
}

TEST_CASE("integrated gyro reproduces sensor orientations") {
  const MotionScript script = random_motion(skel(), 2.0, 0.7, 1.5, 99);
  const ImuStream s = simulate_imu_stream(script, skel(), layout(), NoiseModel::zero(), 3);
  double worst = 0.0;
  for (int k = 0; k < kNumSensors; ++k) {
    Eigen::Quaterniond q(sensor_states(script, skel(), layout(), 0.0)[k].frame.rotation);
    for (std::size_t i = 1; i < s.num_samples; ++i) {
      q = integrate(q, s.gyro_at(i - 1, k), s.gyro_at(i, k), 1.0 / s.rate_hz);
      const Eigen::Quaterniond truth(sensor_states(script, skel(), layout(), s.timestamp(i))[k].frame.rotation);
      worst = std::max(worst, q.angularDistance(truth));
    }
  }
  CHECK(worst * 180.0 / std::numbers::pi < 0.5);
}

TEST_CASE("double-integrated specific force reproduces sensor positions") {
  const MotionScript script = random_motion(skel(), 1.0, 0.5, 0.8, 5);
  const ImuStream s = simulate_imu_stream(script, skel(), layout(), NoiseModel::zero(), 4);
  const double dt = 1.0 / s.rate_hz;
  double worst = 0.0;
  for (int k = 0; k < kNumSensors; ++k) {
    const auto s0 = sensor_states(script, skel(), layout(), 0.0)[k];
    Vec3 p = s0.frame.translation, v = s0.velocity;
    auto world_accel = [&](std::size_t i) {
      const Mat3 r = sensor_states(script, skel(), layout(), s.timestamp(i))[k].frame.rotation;
      return Vec3(r * s.accel_at(i, k) + kGravityWorld);
    };
    Vec3 a_prev = world_accel(0);
    for (std::size_t i = 1; i < s.num_samples; ++i) {
      const Vec3 a = world_accel(i);
      const Vec3 v_next = v + 0.5 * (a_prev + a) * dt;
      p += 0.5 * (v + v_next) * dt;
      v = v_next;
      a_prev = a;
    }
    const Vec3 truth = sensor_states(script, skel(), layout(), s.timestamp(s.num_samples - 1))[k].frame.translation;
    worst = std::max(worst, (p - truth).norm());
  }
  CHECK(worst < 0.005);
}

TEST_CASE("noise is reproducible per seed") {
  const MotionScript script = random_motion(skel(), 0.5, 0.2, 0.3, 1);
  const auto a = simulate_imu_stream(script, skel(), layout(), NoiseModel{}, 7);
  const auto b = simulate_imu_stream(script, skel(), layout(), NoiseModel{}, 7);
  const auto c = simulate_imu_stream(script, skel(), layout(), NoiseModel{}, 8);
  CHECK(a.gyro == b.gyro);
  CHECK(a.accel == b.accel);
  CHECK(a.gyro != c.gyro);
}

TEST_CASE("pinhole projection") {
  const CameraModel cam = CameraModel::egocentric(32, 32);
  const auto center = cam.project(cam.world_from_camera.apply(Vec3(0, 0, 0.4)));
  REQUIRE(center.has_value());
  CHECK((*center - Eigen::Vector2d(16.0, 16.0)).norm() < 1e-12);
  const Vec3 pc(0.03, -0.02, 0.5);
  const auto px = cam.project(cam.world_from_camera.apply(pc));
  REQUIRE(px.has_value());
  CHECK(px->x() == doctest::Approx(cam.fx * pc.x() / pc.z() + cam.cx).epsilon(1e-12));
  CHECK(px->y() == doctest::Approx(cam.fy * pc.y() / pc.z() + cam.cy).epsilon(1e-12));
  CHECK_FALSE(cam.project(cam.world_from_camera.apply(Vec3(0, 0, -0.2))).has_value());
}

TEST_CASE("rendering and visibility") {
  const CameraModel cam = CameraModel::egocentric(32, 32);
  const HandPose p = nominal_pose();
  const Observation all = render_observation(skel(), p, cam, {});
  for (bool v : all.visible) CHECK(v);
  double total = 0.0;
  for (double x : all.raster) {
    CHECK((x >= 0.0 && x <= 1.0));
    total += x;
  }
  CHECK(total > 0.0);

  LandmarkSet every;
  every.set();
  const Observation none = render_observation(skel(), p, cam, every);
  for (bool v : none.visible) CHECK_FALSE(v);
  for (double x : none.raster) CHECK(x == 0.0);

  HandPose behind = p;
  behind.wrist_translation = cam.world_from_camera.apply(Vec3(0, 0, -0.3));
  const Observation back = render_observation(skel(), behind, cam, {});
  for (bool v : back.visible) CHECK_FALSE(v);
  for (double x : back.raster) CHECK(x == 0.0);

  std::mt19937_64 rng(4);
  LandmarkSet occ;
  for (int step = 0; step < 21; ++step) {
    const Observation before = render_observation(skel(), p, cam, occ);
    occ.set(std::uniform_int_distribution<int>(0, 20)(rng));
    const Observation after = render_observation(skel(), p, cam, occ);
    for (int l = 0; l < kNumLandmarks; ++l) {
      if (!before.visible[l]) CHECK_FALSE(after.visible[l]);
      if (occ.test(l)) CHECK_FALSE(after.visible[l]);
    }
  }
}

TEST_CASE("container round trip and header layout") {
  Container c;
  const std::vector<double> a{1.5, -2.0, 3.25, 4.0, 5.0, 6.0};
  c.put_f32("x", {2, 3}, std::span<const double>(a));
  c.put_f64("y", {3}, std::span<const double>(a.data(), 3));
  const std::vector<std::int32_t> ints{7, -8};
  c.put_i32("z", {2}, ints);
  c.put_text("meta", "{\"k\": 1}");
  const auto bytes = c.serialize();

  CHECK(std::memcmp(bytes.data(), "AVHT", 4) == 0);
  auto u32 = [&](std::size_t o) {
    return std::uint32_t(bytes[o]) | std::uint32_t(bytes[o + 1]) << 8 | std::uint32_t(bytes[o + 2]) << 16 |
           std::uint32_t(bytes[o + 3]) << 24;
  };
  CHECK(u32(4) == 1);
  CHECK(u32(8) == 4);
  CHECK(u32(12) == 1);
  CHECK(bytes[16] == 'x');
  CHECK(u32(17) == static_cast<std::uint32_t>(DType::kF32));
  CHECK(u32(21) == 2);

  const Container d = Container::deserialize(bytes);
  CHECK(d.get_f64("x") == a);
  CHECK(d.get_f64("y") == std::vector<double>(a.begin(), a.begin() + 3));
  CHECK(d.get_i32("z") == ints);
  CHECK(d.get_text("meta") == "{\"k\": 1}");
  CHECK(d.record("x").dims == std::vector<std::uint64_t>{2, 3});
  CHECK(d.serialize() == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Container::deserialize(bad), IoError);
}

TEST_CASE("regime counts follow the fractions") {
  DatasetConfig cfg;
  auto count = [](const std::vector<Regime>& r, Regime x) { return std::count(r.begin(), r.end(), x); };
  const auto r = assign_regimes(cfg);
  CHECK(r.size() == 60);
  for (int i = 0; i < kNumRegimes; ++i) CHECK(count(r, Regime(i)) == 20);

  cfg.num_sequences = 10;
  cfg.regime_fractions = {0.5, 0.3, 0.2};
  const auto r2 = assign_regimes(cfg);
  CHECK(count(r2, Regime::kOpenHand) == 5);
  CHECK(count(r2, Regime::kPartialGrasp) == 3);
  CHECK(count(r2, Regime::kFullGrasp) == 2);
}

TEST_CASE("dataset generation is deterministic") {
  DatasetConfig cfg;
  cfg.num_sequences = 3;
  cfg.duration = 1.0;
  const auto a = generate_dataset(cfg, skel(), layout(), 1);
  const auto b = generate_dataset(cfg, skel(), layout(), 3);
  const fs::path da = scratch("a"), db = scratch("b");
  write_dataset(da, cfg, a);
  write_dataset(db, cfg, b);
  for (const auto& e : fs::directory_iterator(da)) CHECK(slurp(e.path()) == slurp(db / e.path().filename()));

  const auto loaded = load_dataset(da);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[1].frames.size() == a[1].frames.size());
  for (std::size_t i = 1; i < loaded[1].frames.size(); ++i) {
    CHECK(std::abs(loaded[1].frames[i].timestamp - loaded[1].frames[i - 1].timestamp - 1.0 / 60.0) < 1e-9);
  }
  for (std::size_t i = 0; i < loaded[1].imu.num_samples; ++i) {
    CHECK(std::abs(loaded[1].imu.timestamp(i) - i / 200.0) < 1e-12);
  }
  CHECK(loaded[1].frames[7].gt.phi == a[1].frames[7].gt.phi);

  cfg.num_sequences = 0;
  const fs::path de = scratch("empty");
  write_dataset(de, cfg, generate_dataset(cfg, skel(), layout()));
  CHECK(read_manifest(de).sequences.empty());
  CHECK(load_dataset(de).empty());

  fs::remove_all(da);
  fs::remove_all(db);
  fs::remove_all(de);
}

TEST_CASE("invalid dataset config") {
  DatasetConfig cfg;
  cfg.num_sequences = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.regime_fractions = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("occlusion schedule bounds") {
  LandmarkSet s;
  s.set(3);
  CHECK_THROWS_AS(OcclusionSchedule({{0.5, 2.0, s}}, 1.0), ValidationError);
  const OcclusionSchedule ok({{0.2, 0.6, s}}, 1.0);
  CHECK(ok.occluded_at(0.2).test(3));
  CHECK_FALSE(ok.occluded_at(0.6).test(3));
}
