// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "fusetrack/ekf.hpp"
#include "fusetrack/fusion_model.hpp"
#include "fusetrack/metrics.hpp"

using namespace fusetrack;

namespace {

HandPose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  HandPose p;
  for (int d = 0; d < kNumDofs; ++d) p.phi[d] = u(rng);
  p.wrist_rotation = axis_angle(Vec3(u(rng), u(rng), 1.0).normalized(), u(rng));
  p.wrist_translation = Vec3(u(rng), u(rng), u(rng));
  return p;
}

const std::vector<AlignedSample>& samples() {
  static const std::vector<AlignedSample> s = [] {
    DatasetConfig dc;
    dc.num_sequences = 1;
    dc.duration = 2.0;
    const auto seq = generate_sequence(dc, HandSkeleton::default_right_hand(), SensorLayout::default_layout(), 0);
    return process_sequence(seq, ChannelMap::default_map(SensorLayout::default_layout()), {});
  }();
  return s;
}

void BM_ForwardKinematics(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto& sk = HandSkeleton::default_right_hand();
  const HandPose p = random_pose(rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward_kinematics(sk, p));
}
BENCHMARK(BM_ForwardKinematics);

void BM_LocalFkJacobian(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto& sk = HandSkeleton::default_right_hand();
  const HandPose p = random_pose(rng);
  for (auto _ : state) benchmark::DoNotOptimize(local_fk_with_jacobian(sk, p.phi));
}
BENCHMARK(BM_LocalFkJacobian);

void BM_TapeMatmul(benchmark::State& state) {
  const auto n = state.range(0);
  const ad::Matrix a = ad::Matrix::Random(n, n);
  const ad::Matrix b = ad::Matrix::Random(n, n);
  for (auto _ : state) {
    ad::Tape t;
    const ad::Var x = t.variable(a);
    const ad::Var y = t.variable(b);
    const ad::Var z = ad::sum_all(ad::matmul(x, y));
    t.backward(z);
    benchmark::DoNotOptimize(x.grad().data());
  }
}
BENCHMARK(BM_TapeMatmul)->Arg(32)->Arg(64)->Arg(128);

void BM_ModelForward(benchmark::State& state) {
  const auto& sk = HandSkeleton::default_right_hand();
  const auto& lay = SensorLayout::default_layout();
  FusionModel model(ModelConfig{}, sk, lay, ChannelMap::default_map(lay));
  std::vector<const AlignedSample*> batch;
  for (int i = 0; i < state.range(0); ++i) batch.push_back(&samples()[static_cast<std::size_t>(i)]);
  const auto mode = state.range(1) == 0 ? FusionMode::kFused : FusionMode::kVisionOnly;
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(batch, mode));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelForward)->Args({8, 0})->Args({8, 1})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto& sk = HandSkeleton::default_right_hand();
  const auto& lay = SensorLayout::default_layout();
  FusionModel model(ModelConfig{}, sk, lay, ChannelMap::default_map(lay));
  ad::Adam opt;
  std::vector<const AlignedSample*> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(&samples()[static_cast<std::size_t>(i)]);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, opt, batch, FusionMode::kFused, 1e-4));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_EkfGyroUpdate(benchmark::State& state) {
  const auto& sk = HandSkeleton::default_right_hand();
  const auto& lay = SensorLayout::default_layout();
  HandEkf ekf(sk, lay, EkfConfig{}, samples().front().gt);
  const std::vector<Vec3> gyro(kNumSensors, Vec3::Zero());
  for (auto _ : state) {
    ekf.predict(0.005);
    ekf.update_gyro(gyro);
  }
}
BENCHMARK(BM_EkfGyroUpdate);

void BM_PaMpjpe(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto& sk = HandSkeleton::default_right_hand();
  const JointSet21 a = forward_kinematics(sk, random_pose(rng));
  const JointSet21 b = forward_kinematics(sk, random_pose(rng));
  for (auto _ : state) benchmark::DoNotOptimize(pa_mpjpe(a, b));
}
BENCHMARK(BM_PaMpjpe);

}  // namespace
BENCHMARK_MAIN();
