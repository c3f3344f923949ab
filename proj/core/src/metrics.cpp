// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/metrics.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "fusetrack/errors.hpp"

namespace fusetrack {

double mkpe(const JointSet21& pred, const JointSet21& gt) {
  double sum = 0.0;
  for (int l = 0; l < kNumLandmarks; ++l) sum += (pred[l] - gt[l]).norm();
  return 1000.0 * sum / kNumLandmarks;
}

double fingertip_mkpe(const JointSet21& pred, const JointSet21& gt, std::span<const int> fingertips) {
  if (fingertips.empty()) throw ValidationError("fingertip list is empty");
  std::set<int> seen;
  double sum = 0.0;
  for (int i : fingertips) {
    if (i < 0 || i >= kNumLandmarks || !seen.insert(i).second) {
      throw ValidationError("bad fingertip index " + std::to_string(i));
    }
    sum += (pred[i] - gt[i]).norm();
  }
  return 1000.0 * sum / static_cast<double>(fingertips.size());
}

JointSet21 root_transform(const HandPose& pred, const HandPose& gt, const HandSkeleton& skeleton) {
  HandPose p = pred;
  p.wrist_rotation = gt.wrist_rotation;
  p.wrist_translation = gt.wrist_translation;
  return forward_kinematics(skeleton, p);
}

double pck_auc(std::span<const double> errors_mm) {
  if (errors_mm.empty()) throw ValidationError("pck_auc needs at least one error");
  const int steps = static_cast<int>(kPckMaxMm);
  std::vector<double> frac(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    const auto n = std::count_if(errors_mm.begin(), errors_mm.end(), [k](double e) { return e <= k; });
    frac[static_cast<std::size_t>(k)] = static_cast<double>(n) / static_cast<double>(errors_mm.size());
  }
  double area = 0.0;
  for (int k = 0; k < steps; ++k) area += 0.5 * (frac[k] + frac[k + 1]);
  return 100.0 * area / steps;
}

double pck_auc(const JointSet21& pred, const JointSet21& gt) {
  std::array<double, kNumLandmarks> e{};
  for (int l = 0; l < kNumLandmarks; ++l) e[l] = 1000.0 * (pred[l] - gt[l]).norm();
  return pck_auc(e);
}

Similarity procrustes_fit(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.size() != gt.size()) throw ValidationError("procrustes: point counts differ");
  if (pred.size() < 3) throw ValidationError("procrustes needs at least 3 points");
  const double n = static_cast<double>(pred.size());
  Vec3 mp = Vec3::Zero();
  Vec3 mg = Vec3::Zero();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mg += gt[i];
  }
  mp /= n;
  mg /= n;
  Mat3 cov = Mat3::Zero();
  Mat3 spread = Mat3::Zero();
  double var_p = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 p = pred[i] - mp;
    cov += (gt[i] - mg) * p.transpose();
    spread += p * p.transpose();
    var_p += p.squaredNorm();
  }
  const Eigen::JacobiSVD<Mat3> shape(spread);
  const auto sv = shape.singularValues();
  if (sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0]) throw ValidationError("procrustes: degenerate (collinear) point set");

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  Similarity s;
  s.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  s.scale = (svd.singularValues().asDiagonal() * d).trace() / var_p;
  s.translation = mg - s.scale * (s.rotation * mp);
  return s;
}

std::vector<Vec3> procrustes_align(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  const Similarity s = procrustes_fit(pred, gt);
  std::vector<Vec3> out;
  out.reserve(pred.size());
  for (const Vec3& p : pred) out.push_back(s.apply(p));
  return out;
}

double pa_mpjpe(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  const auto aligned = procrustes_align(pred, gt);
  double sum = 0.0;
  for (std::size_t i = 0; i < aligned.size(); ++i) sum += (aligned[i] - gt[i]).norm();
  return 1000.0 * sum / static_cast<double>(aligned.size());
}

std::vector<BoneSample> bone_samples(const HandSkeleton& skeleton, int count) {
  if (count < 1) throw ValidationError("bone_samples needs a positive count");
  const JointSet21 rest = forward_kinematics(skeleton, HandPose{});
  std::vector<double> cumulative;
  double total = 0.0;
  for (auto [a, b] : skeleton.bones()) {
    total += (rest[b] - rest[a]).norm();
    cumulative.push_back(total);
  }
  std::vector<BoneSample> out;
  std::size_t bone = 0;
  for (int i = 0; i < count; ++i) {
    const double s = (i + 0.5) * total / count;
    while (bone + 1 < cumulative.size() && cumulative[bone] < s) ++bone;
    const auto [a, b] = skeleton.bones()[bone];
    const double start = bone == 0 ? 0.0 : cumulative[bone - 1];
    const double len = cumulative[bone] - start;
    out.push_back({a, b, len > 0.0 ? (s - start) / len : 0.0});
  }
  return out;
}

std::vector<Vec3> surface_points(const JointSet21& landmarks, std::span<const BoneSample> samples) {
  std::vector<Vec3> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back((1.0 - s.fraction) * landmarks[s.from] + s.fraction * landmarks[s.to]);
  return out;
}

double f_score(std::span<const Vec3> pred, std::span<const Vec3> gt, double tau_mm) {
  if (pred.empty() || gt.empty()) throw ValidationError("f_score needs non-empty point sets");
  const double tau = tau_mm / 1000.0;
  auto within = [tau](const Vec3& p, std::span<const Vec3> set) {
    return std::any_of(set.begin(), set.end(), [&](const Vec3& q) { return (p - q).norm() <= tau; });
  };
  const double precision = static_cast<double>(std::count_if(pred.begin(), pred.end(), [&](const Vec3& p) {
                             return within(p, gt);
                           })) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(std::count_if(gt.begin(), gt.end(), [&](const Vec3& p) {
                          return within(p, pred);
                        })) / static_cast<double>(gt.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::array<double, kNumDofs> joint_angle_errors(const Phi& pred, const Phi& gt) {
  std::array<double, kNumDofs> out{};
  for (int i = 0; i < kNumDofs; ++i) out[i] = std::abs(pred[i] - gt[i]) * 180.0 / std::numbers::pi;
  return out;
}

std::vector<double> error_cdf(std::span<const double> errors, std::span<const double> thresholds) {
  if (errors.empty()) throw ValidationError("error_cdf needs at least one error");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (double th : thresholds) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), th) - sorted.begin();
    out.push_back(100.0 * static_cast<double>(n) / static_cast<double>(sorted.size()));
  }
  return out;
}

SampleMetrics evaluate_sample(const MetricContext& ctx, const HandPose& pred, bool translation_valid,
                              const HandPose& gt, const std::array<bool, kNumLandmarks>& visible) {
  const HandSkeleton& sk = *ctx.skeleton;
  const JointSet21 gt_lm = forward_kinematics(sk, gt);
  const JointSet21 pred_t = root_transform(pred, gt, sk);
  SampleMetrics m;
  m.has_global = translation_valid;
  if (translation_valid) {
    const JointSet21 pred_lm = forward_kinematics(sk, pred);
    m.mkpe = mkpe(pred_lm, gt_lm);
    m.f_mkpe = fingertip_mkpe(pred_lm, gt_lm, sk.fingertips());
    m.pck_auc = pck_auc(pred_lm, gt_lm);
  }
  m.mkpe_t = mkpe(pred_t, gt_lm);
  m.f_mkpe_t = fingertip_mkpe(pred_t, gt_lm, sk.fingertips());
  m.pck_auc_t = pck_auc(pred_t, gt_lm);
  m.pa_mpjpe = pa_mpjpe(pred_t, gt_lm);
  const auto pred_surf = surface_points(pred_t, ctx.surface);
  const auto gt_surf = surface_points(gt_lm, ctx.surface);
  m.pa_mpvpe = pa_mpvpe(pred_surf, gt_surf);
  const auto aligned = procrustes_align(pred_surf, gt_surf);
  m.f5 = f_score(aligned, gt_surf, 5.0);
  m.f15 = f_score(aligned, gt_surf, 15.0);
  m.angle_error_deg = joint_angle_errors(pred.phi, gt.phi);
  for (int l = 0; l < kNumLandmarks; ++l) m.landmark_error_t_mm[l] = 1000.0 * (pred_t[l] - gt_lm[l]).norm();
  m.visible = visible;
  return m;
}

std::vector<std::pair<std::string, double>> aggregate_metrics(std::span<const SampleMetrics> samples) {
  if (samples.empty()) throw ValidationError("no samples to aggregate");
  const double n = static_cast<double>(samples.size());
  const bool global = std::all_of(samples.begin(), samples.end(), [](const SampleMetrics& s) { return s.has_global; });
  auto mean = [&](auto field) {
    double sum = 0.0;
    for (const auto& s : samples) sum += field(s);
    return sum / n;
  };
  std::vector<std::pair<std::string, double>> out;
  if (global) {
    out.emplace_back("MKPE", mean([](const SampleMetrics& s) { return s.mkpe; }));
    out.emplace_back("F.MKPE", mean([](const SampleMetrics& s) { return s.f_mkpe; }));
  }
  out.emplace_back("MKPE.T", mean([](const SampleMetrics& s) { return s.mkpe_t; }));
  out.emplace_back("F.MKPE.T", mean([](const SampleMetrics& s) { return s.f_mkpe_t; }));
  if (global) out.emplace_back("PCK-AUC", mean([](const SampleMetrics& s) { return s.pck_auc; }));
  out.emplace_back("PCK-AUC.T", mean([](const SampleMetrics& s) { return s.pck_auc_t; }));
  out.emplace_back("PA-MPJPE", mean([](const SampleMetrics& s) { return s.pa_mpjpe; }));
  out.emplace_back("PA-MPVPE", mean([](const SampleMetrics& s) { return s.pa_mpvpe; }));
  out.emplace_back("F@5", mean([](const SampleMetrics& s) { return s.f5; }));
  out.emplace_back("F@15", mean([](const SampleMetrics& s) { return s.f15; }));
  out.emplace_back("angle_error_deg", mean([](const SampleMetrics& s) {
                     double sum = 0.0;
                     for (double e : s.angle_error_deg) sum += e;
                     return sum / kNumDofs;
                   }));
  double occ_sum = 0.0;
  long occ_count = 0;
  long occ_frames = 0;
  for (const auto& s : samples) {
    bool any = false;
    for (int l = 0; l < kNumLandmarks; ++l) {
      if (!s.visible[l]) {
        occ_sum += s.landmark_error_t_mm[l];
        ++occ_count;
        any = true;
      }
    }
    occ_frames += any ? 1 : 0;
  }
  out.emplace_back("occluded_MKPE.T", occ_count > 0 ? occ_sum / static_cast<double>(occ_count) : 0.0);
  out.emplace_back("occluded_frame_fraction", static_cast<double>(occ_frames) / n);
  return out;
}

}  // namespace fusetrack
