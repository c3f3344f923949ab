// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fusetrack/dataset.hpp"
#include "fusetrack/errors.hpp"
#include "fusetrack/fusion_model.hpp"
#include "test_support.hpp"

using namespace fusetrack;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

const HandSkeleton& skel() { return HandSkeleton::default_right_hand(); }
const SensorLayout& layout() { return SensorLayout::default_layout(); }

ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 8;
  c.imu_embed = 6;
  c.imu_heads = 2;
  c.imu_layers = 1;
  c.imu_ffn = 8;
  c.heads = 2;
  c.raster_size = 8;
  c.conv_channels = {2, 3, 4};
  c.head_hidden = 8;
  return c;
}

const std::vector<AlignedSample>& samples() {
  static const std::vector<AlignedSample> s = [] {
    DatasetConfig cfg;
    cfg.num_sequences = 2;
    cfg.duration = 1.0;
    cfg.raster_size = 8;
    cfg.seed = 99;
    std::vector<AlignedSample> out;
    for (int i = 0; i < cfg.num_sequences; ++i) {
      const auto seq = generate_sequence(cfg, skel(), layout(), i);
      auto part = process_sequence(seq, ChannelMap::default_map(layout()), PipelineConfig{});
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }();
  return s;
}

FusionModel make_model(ModelConfig c = tiny_config()) {
  return FusionModel(std::move(c), skel(), layout(), ChannelMap::default_map(layout()));
}

std::vector<const AlignedSample*> batch_of(std::initializer_list<int> idx) {
  std::vector<const AlignedSample*> b;
  for (int i : idx) b.push_back(&samples()[static_cast<std::size_t>(i)]);
  return b;
}

double total_loss(const FusionModel& m, std::span<const AlignedSample* const> batch, FusionMode mode) {
  Tape t;
  return m.loss(t, m.forward(t, batch, mode), batch).scalar();
}

double entropy(const Eigen::RowVectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

// a_vis for one sample whose sensor tokens are all equal.
Eigen::RowVectorXd tied_a_vis(FusionModel& m, double alpha) {
  m.params().get("fusion.level1.alpha").value(0, 0) = alpha;
  std::mt19937_64 rng(4);
  const Matrix v = fusetrack::testing::random_matrix(1, m.config().d, rng, 1.0);
  const Matrix s = fusetrack::testing::random_matrix(1, m.config().d, rng, 1.0);
  Tape t;
  Matrix a_vis;
  m.level1_fusion(t, t.constant(v), t.constant(s.replicate(kNumSensors, 1)), &a_vis);
  return a_vis.row(0);
}

}  // namespace

TEST_CASE("imu encoder shape and per-channel independence") {
  const FusionModel m = make_model();
  ImuWindow a = samples()[0].window;
  ImuWindow b = samples()[5].window;
  const int c = 7;
  for (int step = 0; step < kWindowLength; ++step) {
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = static_cast<std::size_t>((step * kNumChannels + c) * 3 + k);
      b.data[i] = a.data[i];
    }
  }
  Tape t;
  const std::vector<const ImuWindow*> w{&a, &b};
  const Var f = m.imu_encoder(t, w);
  CHECK(f.rows() == 2 * kNumChannels);
  CHECK(f.cols() == m.config().d);
  CHECK((f.value().row(c) - f.value().row(kNumChannels + c)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((f.value().row(c + 1) - f.value().row(kNumChannels + c + 1)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("vision encoder") {
  ModelConfig c = tiny_config();
  c.coord_channels = false;
  FusionModel m = make_model(c);
  m.params().get("vision_encoder.proj.bias").value.setZero();
  const std::vector<double> zero(64, 0.0);
  const std::vector<const std::vector<double>*> r{&zero, &samples()[0].raster};
  Tape t;
  const Var f = m.vision_encoder(t, r);
  CHECK(f.rows() == 2);
  CHECK(f.cols() == c.d);
  CHECK(f.value().row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(f.value().row(1).cwiseAbs().maxCoeff() > 0.0);

  const std::vector<double> wrong(63, 0.0);
  const std::vector<const std::vector<double>*> bad{&wrong};
  Tape t2;
  CHECK_THROWS(m.vision_encoder(t2, bad));
}

TEST_CASE("sensor tokens average each sensor's channels") {
  FusionModel m = make_model();
  const int d = m.config().d;
  std::mt19937_64 rng(2);
  const Matrix f = fusetrack::testing::random_matrix(kNumChannels, d, rng, 1.0);
  Tape t;
  const Var tokens = m.sensor_tokens(t, t.constant(f));
  REQUIRE(tokens.rows() == kNumSensors);
  const Matrix& w = m.params().get("fusion.token_proj.weight").value;
  const Matrix& bias = m.params().get("fusion.token_proj.bias").value;
  const Matrix& embed = m.params().get("fusion.sensor_embed").value;
  const ChannelMap map = ChannelMap::default_map(layout());
  for (int k = 0; k < kNumSensors; ++k) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
    int n = 0;
    for (int c = 0; c < kNumChannels; ++c) {
      if (map.channels[c].sensor == k) {
        mean += f.row(c);
        ++n;
      }
    }
    CHECK(n == (k == layout().sensor_index("hand_back") ? 1 : 2));
    const Eigen::RowVectorXd expect = (mean / n) * w + bias.row(0) + embed.row(k);
    CHECK((tokens.value().row(k) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("level one attention and the kinematic mask") {
  FusionModel m = make_model();

  const Eigen::RowVectorXd uniform = tied_a_vis(m, 0.0);
  for (int k = 0; k < kNumSensors; ++k) CHECK(uniform[k] == doctest::Approx(1.0 / 12.0).epsilon(1e-12));

  // Tied tokens leave only the mask in the logits.
  const GeodesicMatrix g = sensor_geodesic_matrix(layout());
  const Eigen::RowVectorXd strong = tied_a_vis(m, 10.0);
  Eigen::RowVectorXd oracle(kNumSensors);
  for (int k = 0; k < kNumSensors; ++k) oracle[k] = std::exp(-10.0 * g(0, k + 1));
  oracle /= oracle.sum();
  CHECK((strong - oracle).cwiseAbs().maxCoeff() < 1e-9);
  const int back = layout().sensor_index("hand_back");
  CHECK(strong[back] >= 0.95);
  CHECK(strong.sum() == doctest::Approx(1.0).epsilon(1e-12));

  double last = std::numeric_limits<double>::infinity();
  for (double alpha : {0.0, 1.0, 5.0, 10.0}) {
    const double h = entropy(tied_a_vis(m, alpha));
    CHECK(h <= last + 1e-12);
    last = h;
  }

  // With identical vision and sensor tokens every column ties when alpha = 0.
  m.params().get("fusion.level1.alpha").value(0, 0) = 0.0;
  const Matrix v = Matrix::Constant(1, m.config().d, 0.3);
  Tape t;
  Matrix a_vis;
  const Var z = m.level1_fusion(t, t.constant(v), t.constant(v.replicate(kNumSensors, 1)), &a_vis);
  CHECK(z.rows() == kNumSensors + 1);
  for (int k = 0; k < kNumSensors; ++k) CHECK(a_vis(0, k) == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("level two fusion with identity projections") {
  FusionModel m = make_model();
  const int d = m.config().d;
  for (const char* p : {"query", "key", "value", "output"}) {
    m.params().get(std::string("fusion.level2.attn.") + p + ".weight").value = Matrix::Identity(d, d);
    m.params().get(std::string("fusion.level2.attn.") + p + ".bias").value.setZero();
  }
  std::mt19937_64 rng(3);
  const Matrix v = fusetrack::testing::random_matrix(1, d, rng, 1.0);
  Tape t;
  const Var h = m.level2_fusion(t, t.constant(v.replicate(kNumSensors + 1, 1)));
  REQUIRE(h.rows() == 1);
  CHECK((h.value() - v).cwiseAbs().maxCoeff() < 1e-12);

  // Two distinct tokens: vision token a, sensor mean b, scalar softmax by hand.
  Matrix z(kNumSensors + 1, d);
  const Eigen::RowVectorXd a = fusetrack::testing::random_matrix(1, d, rng, 0.5).row(0);
  const Eigen::RowVectorXd b = fusetrack::testing::random_matrix(1, d, rng, 0.5).row(0);
  z.row(0) = a;
  for (int k = 1; k <= kNumSensors; ++k) z.row(k) = b;
  Tape t2;
  const Var h2 = m.level2_fusion(t2, t2.constant(z));
  const int heads = m.config().heads, dk = d / heads;
  Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(d);
  for (const Eigen::RowVectorXd* q : {&a, &b}) {
    for (int hd = 0; hd < heads; ++hd) {
      const double sa = q->segment(hd * dk, dk).dot(a.segment(hd * dk, dk)) / std::sqrt(dk);
      const double sb = q->segment(hd * dk, dk).dot(b.segment(hd * dk, dk)) / std::sqrt(dk);
      const double wa = 1.0 / (1.0 + std::exp(sb - sa));
      expect.segment(hd * dk, dk) += 0.5 * (wa * a.segment(hd * dk, dk) + (1.0 - wa) * b.segment(hd * dk, dk));
    }
  }
  CHECK((h2.value().row(0) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("head outputs") {
  const FusionModel m = make_model();
  std::mt19937_64 rng(5);
  Tape t;
  const auto heads = m.ume_head(t, t.constant(fusetrack::testing::random_matrix(16, m.config().d, rng, 20.0)));
  CHECK(heads.sigma.value().minCoeff() > 0.0);
  CHECK(heads.sigma.value().minCoeff() >= m.config().sigma_floor);
  for (Eigen::Index r = 0; r < 16; ++r) {
    Mat3 rot;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) rot(i, k) = heads.rotation.value()(r, 3 * i + k);
    CHECK((rot.transpose() * rot - Mat3::Identity()).norm() < 1e-9);
    CHECK(rot.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    for (int k = 0; k < kNumDofs; ++k) {
      const auto [lo, hi] = skel().limits_for(k);
      const double margin = 0.1 * (hi - lo);
      CHECK(heads.phi.value()(r, k) > lo - margin);
      CHECK(heads.phi.value()(r, k) < hi + margin);
    }
  }
}

TEST_CASE("modes") {
  const FusionModel m = make_model();
  const auto fused = m.predict(batch_of({0, 1, 2}), FusionMode::kFused);
  for (const auto& o : fused) {
    CHECK(o.translation_valid);
    CHECK(o.a_vis_valid);
    double sum = 0.0;
    for (double a : o.a_vis) sum += a;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    for (double s : o.sigma) CHECK(s > 0.0);
    for (int k = 0; k < kNumSensors; ++k) CHECK(o.activated[k] == (o.a_vis[k] >= m.config().activation_threshold));
  }

  // Same raster, different IMU windows.
  AlignedSample a = samples()[3];
  AlignedSample b = samples()[40];
  b.raster = a.raster;
  const std::vector<const AlignedSample*> pair{&a, &b};
  const auto vis = m.predict(pair, FusionMode::kVisionOnly);
  CHECK_FALSE(vis[0].a_vis_valid);
  CHECK((vis[0].pose.phi - vis[1].pose.phi).cwiseAbs().maxCoeff() == 0.0);
  CHECK((vis[0].pose.wrist_translation - vis[1].pose.wrist_translation).norm() < 1e-12);
  const auto fused_pair = m.predict(pair, FusionMode::kFused);
  CHECK((fused_pair[0].pose.phi - fused_pair[1].pose.phi).cwiseAbs().maxCoeff() > 0.0);

  const auto imu = m.predict(batch_of({0}), FusionMode::kImuOnly);
  CHECK_FALSE(imu[0].translation_valid);

  SensorMask none{};
  const std::vector<SensorMask> masks{none};
  const auto masked = m.predict(batch_of({3}), FusionMode::kFused, masks);
  const auto vision_only = m.predict(batch_of({3}), FusionMode::kVisionOnly);
  CHECK((masked[0].pose.phi - vision_only[0].pose.phi).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_FALSE(masked[0].a_vis_valid);
  CHECK_THROWS_AS(m.predict({}, FusionMode::kFused), ValidationError);
}

TEST_CASE("joint angle loss arithmetic") {
  const FusionModel m = make_model();
  Phi gt = Phi::Constant(0.2);
  Phi pred = gt;
  pred[5] += 0.1;
  Tape t;
  CHECK(ad::mse(t.constant(pred.transpose()), gt.transpose()).scalar() == doctest::Approx(0.01 / 22.0).epsilon(1e-12));

  ModelConfig c0 = tiny_config();
  c0.lambda_angle = 0.0;
  ModelConfig c2 = tiny_config();
  c2.lambda_angle = 2.0;
  const FusionModel m0 = make_model(c0), m2 = make_model(c2);
  const auto batch = batch_of({1, 2, 3});
  Tape t0;
  const auto f0 = m0.forward(t0, batch, FusionMode::kFused);
  double sq = 0.0;
  for (Eigen::Index s = 0; s < 3; ++s)
    for (int k = 0; k < kNumDofs; ++k) {
      const double e = f0.heads.phi.value()(s, k) - batch[static_cast<std::size_t>(s)]->gt.phi[k];
      sq += e * e;
    }
  const double angle = sq / (3.0 * kNumDofs);
  const double l0 = m0.loss(t0, f0, batch).scalar();
  CHECK(total_loss(m2, batch, FusionMode::kFused) == doctest::Approx(l0 + 2.0 * angle).epsilon(1e-12));
}

TEST_CASE("end-to-end gradient check") {
  for (FusionMode mode : {FusionMode::kFused, FusionMode::kImuOnly}) {
    FusionModel m = make_model();
    m.init_output_bias(samples());
    const auto batch = batch_of({4, 30});
    const auto g = fusetrack::testing::model_grad_check(m, batch, mode);
    CHECK(g.probes > 100);
    CHECK(g.worst < 1e-4);
  }
}

TEST_CASE("fifty steps halve the loss on a fixed batch") {
  FusionModel m = make_model();
  m.init_output_bias(samples());
  ad::Adam opt;
  const auto batch = batch_of({0, 7, 14, 21, 28, 35, 42, 49});
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    const double l = train_step(m, opt, batch, FusionMode::kFused, opt.config().lr);
    if (step == 0) first = l;
  }
  last = total_loss(m, batch, FusionMode::kFused);
  MESSAGE("loss " << first << " -> " << last);
  CHECK(first - last >= 0.5 * std::abs(first));
  CHECK(m.alpha() >= 0.0);
}
