// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "fusetrack/container.hpp"
#include "fusetrack/errors.hpp"
#include "fusetrack/worker_pool.hpp"
#include "json_util.hpp"

namespace fusetrack {

using detail::json;

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kOpenHand: return "open_hand";
    case Regime::kPartialGrasp: return "partial_grasp";
    case Regime::kFullGrasp: return "full_grasp";
  }
  return "unknown";
}

Regime regime_from_name(const std::string& name) {
  if (name == "open_hand") return Regime::kOpenHand;
  if (name == "partial_grasp") return Regime::kPartialGrasp;
  if (name == "full_grasp") return Regime::kFullGrasp;
  throw ConfigError("unknown regime '" + name + "'");
}

OcclusionSchedule::OcclusionSchedule(std::vector<OcclusionInterval> intervals, double duration)
    : intervals_(std::move(intervals)) {
  for (const auto& iv : intervals_) {
    if (iv.start < 0.0 || iv.end > duration + 1e-12 || iv.end < iv.start) {
      throw ValidationError("occlusion interval outside the script duration");
    }
  }
}

LandmarkSet OcclusionSchedule::occluded_at(double t) const {
  LandmarkSet out;
  for (const auto& iv : intervals_) {
    if (t >= iv.start && t < iv.end) out |= iv.landmarks;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

void DatasetConfig::validate() const {
  if (num_sequences < 0) throw ConfigError("dataset: num_sequences must be >= 0");
  if (!(duration > 0.5)) throw ConfigError("dataset: duration must exceed 0.5 s");
  if (!(frame_rate > 0.0) || !(imu_rate > 0.0)) throw ConfigError("dataset: rates must be positive");
  if (raster_size < 4 || raster_size % 2 != 0) throw ConfigError("dataset: raster_size must be even and >= 4");
  double sum = 0.0;
  for (double f : regime_fractions) {
    if (f < 0.0) throw ConfigError("dataset: regime fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset: regime fractions must sum to 1");
  if (eval_fraction < 0.0 || eval_fraction > 1.0) throw ConfigError("dataset: eval_fraction must be in [0, 1]");
  if (!(speed_min >= 1.0) || speed_max < speed_min) throw ConfigError("dataset: need 1 <= speed_min <= speed_max");
  if (!(keyframe_interval_min > 0.0) || keyframe_interval_max < keyframe_interval_min) {
    throw ConfigError("dataset: bad keyframe interval range");
  }
  if (noise.gyro_sigma < 0 || noise.accel_sigma < 0 || noise.gyro_bias_sigma < 0) {
    throw ConfigError("dataset: noise sigmas must be non-negative");
  }
}

std::string DatasetConfig::to_json() const {
  json j;
  j["num_sequences"] = num_sequences;
  j["duration"] = duration;
  j["frame_rate"] = frame_rate;
  j["imu_rate"] = imu_rate;
  j["raster_size"] = raster_size;
  j["regime_fractions"] = {regime_fractions[0], regime_fractions[1], regime_fractions[2]};
  j["eval_fraction"] = eval_fraction;
  j["noise"] = {{"gyro_sigma", noise.gyro_sigma},
                {"accel_sigma", noise.accel_sigma},
                {"gyro_bias_sigma", noise.gyro_bias_sigma}};
  j["seed"] = seed;
  j["speed_range"] = {speed_min, speed_max};
  j["keyframe_interval"] = {keyframe_interval_min, keyframe_interval_max};
  j["camera_jitter"] = {{"rotation", camera_jitter_rotation}, {"translation", camera_jitter_translation}};
  return j.dump();
}

DatasetConfig DatasetConfig::from_json(const std::string& text) {
  const json j = detail::parse_json(text, "dataset config");
  DatasetConfig c;
  try {
    using detail::get_or;
    c.num_sequences = get_or(j, "num_sequences", c.num_sequences);
    c.duration = get_or(j, "duration", c.duration);
    c.frame_rate = get_or(j, "frame_rate", c.frame_rate);
    c.imu_rate = get_or(j, "imu_rate", c.imu_rate);
    c.raster_size = get_or(j, "raster_size", c.raster_size);
    if (j.contains("regime_fractions")) {
      const auto& f = j.at("regime_fractions");
      if (f.size() != kNumRegimes) throw ConfigError("dataset: regime_fractions needs 3 entries");
      for (int i = 0; i < kNumRegimes; ++i) c.regime_fractions[i] = f[i].get<double>();
    }
    c.eval_fraction = get_or(j, "eval_fraction", c.eval_fraction);
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      c.noise.gyro_sigma = get_or(n, "gyro_sigma", c.noise.gyro_sigma);
      c.noise.accel_sigma = get_or(n, "accel_sigma", c.noise.accel_sigma);
      c.noise.gyro_bias_sigma = get_or(n, "gyro_bias_sigma", c.noise.gyro_bias_sigma);
    }
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    if (j.contains("speed_range")) {
      c.speed_min = j.at("speed_range")[0].get<double>();
      c.speed_max = j.at("speed_range")[1].get<double>();
    }
    if (j.contains("keyframe_interval")) {
      c.keyframe_interval_min = j.at("keyframe_interval")[0].get<double>();
      c.keyframe_interval_max = j.at("keyframe_interval")[1].get<double>();
    }
    if (j.contains("camera_jitter")) {
      c.camera_jitter_rotation = get_or(j.at("camera_jitter"), "rotation", c.camera_jitter_rotation);
      c.camera_jitter_translation = get_or(j.at("camera_jitter"), "translation", c.camera_jitter_translation);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Regime> assign_regimes(const DatasetConfig& config) {
  const int n = config.num_sequences;
  std::array<int, kNumRegimes> counts{};
  std::array<double, kNumRegimes> remainder{};
  int assigned = 0;
  for (int r = 0; r < kNumRegimes; ++r) {
    const double exact = config.regime_fractions[r] * n;
    counts[r] = static_cast<int>(std::floor(exact + 1e-9));
    remainder[r] = exact - counts[r];
    assigned += counts[r];
  }
  std::array<int, kNumRegimes> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % kNumRegimes]];

  // Interleave: at each step take the regime furthest behind its quota.
  std::vector<Regime> out;
  std::array<int, kNumRegimes> used{};
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double best_deficit = -1e300;
    for (int r = 0; r < kNumRegimes; ++r) {
      if (used[r] >= counts[r]) continue;
      const double deficit = static_cast<double>(counts[r]) * (i + 1) / n - used[r];
      if (deficit > best_deficit + 1e-12) {
        best_deficit = deficit;
        best = r;
      }
    }
    ++used[best];
    out.push_back(static_cast<Regime>(best));
  }
  return out;
}

std::vector<std::string> assign_splits(const DatasetConfig& config) {
  const int n = config.num_sequences;
  const int n_eval = static_cast<int>(std::lround(config.eval_fraction * n));
  std::vector<std::string> out(n, "train");
  // Spread eval sequences evenly so each regime is represented.
  for (int k = 0; k < n_eval; ++k) {
    const int idx = static_cast<int>(std::floor((k + 0.5) * n / static_cast<double>(n_eval)));
    out[std::min(idx, n - 1)] = "eval";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

HandPose random_pose(const HandSkeleton& skeleton, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto clamp_dof = [&](int d, double v) {
    const auto [lo, hi] = skeleton.limits_for(d);
    return std::clamp(v, lo, hi);
  };

  HandPose p;
  const auto idx = [&](const char* name) { return skeleton.dof_index(name); };
  p.phi[idx("wrist_flex")] = uni(-0.25, 0.7);
  p.phi[idx("wrist_dev")] = uni(-0.3, 0.3);
  p.phi[idx("thumb_cmc_abd")] = uni(-0.3, 0.3);
  p.phi[idx("thumb_cmc_flex")] = uni(-0.2, 0.9);
  p.phi[idx("thumb_mcp")] = uni(0.0, 1.0);
  p.phi[idx("thumb_ip")] = uni(-0.1, 1.2);
  for (const char* finger : {"index", "middle", "ring", "pinky"}) {
    const std::string f(finger);
    const double curl = unit(rng);
    const int abd = idx((f + "_mcp_abd").c_str());
    const int mcp = idx((f + "_mcp_flex").c_str());
    const int pip = idx((f + "_pip").c_str());
    p.phi[abd] = clamp_dof(abd, uni(-0.25, 0.25) * (1.0 - 0.5 * curl));
    p.phi[mcp] = clamp_dof(mcp, 1.5 * curl + 0.15 * normal(rng));
    p.phi[pip] = clamp_dof(pip, 1.6 * curl + 0.15 * normal(rng));
  }
  for (const auto& c : skeleton.couplings()) {
    p.phi[c.dependent] = clamp_dof(c.dependent, c.ratio * p.phi[c.driver]);
  }

  const RigidTransform nominal = nominal_wrist_pose();
  p.wrist_rotation = nominal.rotation * axis_angle(Vec3::UnitZ(), uni(-0.5, 0.5)) *
                     axis_angle(Vec3::UnitY(), uni(-0.35, 0.35)) * axis_angle(Vec3::UnitX(), uni(-0.6, 0.6));
  p.wrist_translation = nominal.translation + Vec3(uni(-0.04, 0.04), uni(-0.05, 0.05), uni(-0.04, 0.04));
  return p;
}

}  // namespace

MotionScript random_motion(const HandSkeleton& skeleton, double duration, double interval_min,
                           double interval_max, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> gap(interval_min, interval_max);
  std::vector<Keyframe> keys;
  double t = 0.0;
  keys.push_back({0.0, random_pose(skeleton, rng)});
  while (true) {
    t += gap(rng);
    if (t >= duration - 0.25 * interval_min) break;
    keys.push_back({t, random_pose(skeleton, rng)});
  }
  keys.push_back({duration, random_pose(skeleton, rng)});
  return MotionScript(std::move(keys), skeleton);
}

CaptureSequence generate_sequence(const DatasetConfig& config, const HandSkeleton& skeleton,
                                  const SensorLayout& layout, int index) {
  config.validate();
  CaptureSequence seq;
  seq.index = index;
  seq.seed = mix_seed(config.seed, static_cast<std::uint64_t>(index));
  seq.regime = assign_regimes(config).at(index);
  seq.split = assign_splits(config).at(index);
  seq.duration = config.duration;
  seq.noise = config.noise;

  std::mt19937_64 speed_rng(mix_seed(seq.seed, 4));
  seq.speed = std::uniform_real_distribution<double>(config.speed_min, config.speed_max)(speed_rng);

  // Script in "slow" time, then played back `speed` times faster.
  const MotionScript slow = random_motion(skeleton, config.duration * seq.speed, config.keyframe_interval_min,
                                          config.keyframe_interval_max, mix_seed(seq.seed, 0));
  seq.keyframes = slow.keyframes();
  for (auto& k : seq.keyframes) k.time /= seq.speed;
  seq.keyframes.back().time = config.duration;
  const MotionScript script(seq.keyframes, skeleton);

  // Occlusion intervals.
  {
    std::mt19937_64 rng(mix_seed(seq.seed, 2));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<OcclusionInterval> intervals;
    double t = 0.0;
    while (t < config.duration && seq.regime != Regime::kOpenHand) {
      const double end = std::min(config.duration, t + 0.6 + 0.9 * unit(rng));
      const bool partial = seq.regime == Regime::kPartialGrasp;
      const double p_occluded = partial ? 0.75 : 0.9;
      const int fingers = partial ? 1 + (unit(rng) < 0.5 ? 1 : 0) : 3 + static_cast<int>(unit(rng) * 3.0);
      if (unit(rng) < p_occluded) {
        std::array<int, 5> order{0, 1, 2, 3, 4};
        std::shuffle(order.begin(), order.end(), rng);
        OcclusionInterval iv{t, end, {}};
        for (int k = 0; k < std::min(fingers, 5); ++k) {
          const auto& lms = skeleton.finger_landmarks()[order[k]];
          // The knuckle stays in view; the three distal landmarks are hidden.
          for (std::size_t m = lms.size() - 3; m < lms.size(); ++m) iv.landmarks.set(lms[m]);
        }
        intervals.push_back(iv);
      }
      t = end;
    }
    seq.occlusion = OcclusionSchedule(std::move(intervals), config.duration);
  }

  // Camera with per-sequence jitter.
  {
    std::mt19937_64 rng(mix_seed(seq.seed, 3));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    seq.camera = CameraModel::egocentric(config.raster_size, config.raster_size);
    const double jr = config.camera_jitter_rotation;
    const Mat3 jitter = axis_angle(Vec3::UnitZ(), jr * unit(rng)) * axis_angle(Vec3::UnitY(), jr * unit(rng)) *
                        axis_angle(Vec3::UnitX(), jr * unit(rng));
    seq.camera.world_from_camera.rotation = jitter * seq.camera.world_from_camera.rotation;
    const double jt = config.camera_jitter_translation;
    seq.camera.world_from_camera.translation += Vec3(jt * unit(rng), jt * unit(rng), jt * unit(rng));
  }

  const auto num_frames = static_cast<std::size_t>(std::floor(config.duration * config.frame_rate + 1e-9)) + 1;
  seq.frames.resize(num_frames);
  for (std::size_t i = 0; i < num_frames; ++i) {
    Frame& f = seq.frames[i];
    f.timestamp = static_cast<double>(i) / config.frame_rate;
    f.gt = script.sample_pose(std::min(f.timestamp, config.duration));
    Observation obs = render_observation(skeleton, f.gt, seq.camera, seq.occlusion.occluded_at(f.timestamp));
    // Stored as f32 on disk; quantize now so in-memory and loaded data agree.
    for (double& v : obs.raster) v = static_cast<float>(v);
    f.raster = std::move(obs.raster);
    f.visible = obs.visible;
  }

  seq.imu = simulate_imu_stream(script, skeleton, layout, config.noise, mix_seed(seq.seed, 1), config.imu_rate);
  for (auto& v : seq.imu.gyro) v = v.cast<float>().cast<double>();
  for (auto& v : seq.imu.accel) v = v.cast<float>().cast<double>();
  return seq;
}

std::vector<CaptureSequence> generate_dataset(const DatasetConfig& config, const HandSkeleton& skeleton,
                                              const SensorLayout& layout, int threads) {
  config.validate();
  std::vector<CaptureSequence> out(static_cast<std::size_t>(config.num_sequences));
  parallel_for(out.size(), threads,
               [&](std::size_t i) { out[i] = generate_sequence(config, skeleton, layout, static_cast<int>(i)); });
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json camera_to_json(const CameraModel& c) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r.push_back(c.world_from_camera.rotation(i, k));
  }
  return {{"width", c.width},         {"height", c.height},
          {"fx", c.fx},               {"fy", c.fy},
          {"cx", c.cx},               {"cy", c.cy},
          {"near_plane", c.near_plane}, {"rotation", r},
          {"translation", detail::vec3_to_json(c.world_from_camera.translation)}};
}

CameraModel camera_from_json(const json& j) {
  CameraModel c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.near_plane = j.at("near_plane").get<double>();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) c.world_from_camera.rotation(i, k) = j.at("rotation")[3 * i + k].get<double>();
  }
  c.world_from_camera.translation = detail::vec3_from_json(j.at("translation"), "camera translation");
  return c;
}

std::vector<double> flatten_rotations(const std::vector<HandPose>& poses) {
  std::vector<double> out;
  for (const auto& p : poses) {
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) out.push_back(p.wrist_rotation(i, k));
    }
  }
  return out;
}

void put_poses(Container& c, const std::string& prefix, const std::vector<HandPose>& poses) {
  std::vector<double> phi, trans;
  for (const auto& p : poses) {
    phi.insert(phi.end(), p.phi.data(), p.phi.data() + kNumDofs);
    trans.insert(trans.end(), p.wrist_translation.data(), p.wrist_translation.data() + 3);
  }
  const std::uint64_t n = poses.size();
  c.put_f64(prefix + "_phi", {n, kNumDofs}, phi);
  c.put_f64(prefix + "_wrist_rotation", {n, 3, 3}, flatten_rotations(poses));
  c.put_f64(prefix + "_wrist_translation", {n, 3}, trans);
}

std::vector<HandPose> get_poses(const Container& c, const std::string& prefix) {
  const auto phi = c.get_f64(prefix + "_phi");
  const auto rot = c.get_f64(prefix + "_wrist_rotation");
  const auto trans = c.get_f64(prefix + "_wrist_translation");
  const std::size_t n = phi.size() / kNumDofs;
  std::vector<HandPose> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < kNumDofs; ++d) out[i].phi[d] = phi[i * kNumDofs + d];
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) out[i].wrist_rotation(r, k) = rot[i * 9 + 3 * r + k];
      out[i].wrist_translation[r] = trans[i * 3 + r];
    }
  }
  return out;
}

}  // namespace

void write_sequence(const std::filesystem::path& path, const CaptureSequence& seq) {
  Container c;
  json meta;
  meta["index"] = seq.index;
  meta["seed"] = seq.seed;
  meta["regime"] = regime_name(seq.regime);
  meta["split"] = seq.split;
  meta["duration"] = seq.duration;
  meta["speed"] = seq.speed;
  meta["frame_rate"] = seq.frames.size() > 1 ? 1.0 / (seq.frames[1].timestamp - seq.frames[0].timestamp) : 0.0;
  meta["imu_rate"] = seq.imu.rate_hz;
  meta["camera"] = camera_to_json(seq.camera);
  meta["noise"] = {{"gyro_sigma", seq.noise.gyro_sigma},
                   {"accel_sigma", seq.noise.accel_sigma},
                   {"gyro_bias_sigma", seq.noise.gyro_bias_sigma}};
  json occ = json::array();
  for (const auto& iv : seq.occlusion.intervals()) {
    json lms = json::array();
    for (int l = 0; l < kNumLandmarks; ++l) {
      if (iv.landmarks[l]) lms.push_back(l);
    }
    occ.push_back({{"start", iv.start}, {"end", iv.end}, {"landmarks", lms}});
  }
  meta["occlusion"] = occ;
  c.put_text("meta", meta.dump());

  const std::uint64_t nf = seq.frames.size();
  const std::uint64_t h = static_cast<std::uint64_t>(seq.camera.height);
  const std::uint64_t w = static_cast<std::uint64_t>(seq.camera.width);
  std::vector<float> raster;
  raster.reserve(nf * h * w);
  std::vector<std::int32_t> visible;
  std::vector<HandPose> gt;
  for (const auto& f : seq.frames) {
    raster.insert(raster.end(), f.raster.begin(), f.raster.end());
    for (bool v : f.visible) visible.push_back(v ? 1 : 0);
    gt.push_back(f.gt);
  }
  c.put_f32("raster", {nf, h, w}, std::span<const float>(raster));
  c.put_i32("visibility", {nf, kNumLandmarks}, visible);
  put_poses(c, "gt", gt);

  const std::uint64_t ns = seq.imu.num_samples;
  std::vector<float> gyro, accel;
  for (std::size_t i = 0; i < seq.imu.gyro.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      gyro.push_back(static_cast<float>(seq.imu.gyro[i][k]));
      accel.push_back(static_cast<float>(seq.imu.accel[i][k]));
    }
  }
  c.put_f32("imu_gyro", {ns, kNumSensors, 3}, std::span<const float>(gyro));
  c.put_f32("imu_accel", {ns, kNumSensors, 3}, std::span<const float>(accel));

  std::vector<double> key_times;
  std::vector<HandPose> key_poses;
  for (const auto& k : seq.keyframes) {
    key_times.push_back(k.time);
    key_poses.push_back(k.pose);
  }
  c.put_f64("script_time", {key_times.size()}, key_times);
  put_poses(c, "script", key_poses);
  c.save(path);
}

CaptureSequence read_sequence(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  CaptureSequence seq;
  try {
    const json meta = json::parse(c.get_text("meta"));
    seq.index = meta.at("index").get<int>();
    seq.seed = meta.at("seed").get<std::uint64_t>();
    seq.regime = regime_from_name(meta.at("regime").get<std::string>());
    seq.split = meta.at("split").get<std::string>();
    seq.duration = meta.at("duration").get<double>();
    seq.speed = meta.at("speed").get<double>();
    seq.camera = camera_from_json(meta.at("camera"));
    seq.noise.gyro_sigma = meta.at("noise").at("gyro_sigma").get<double>();
    seq.noise.accel_sigma = meta.at("noise").at("accel_sigma").get<double>();
    seq.noise.gyro_bias_sigma = meta.at("noise").at("gyro_bias_sigma").get<double>();
    std::vector<OcclusionInterval> intervals;
    for (const auto& iv : meta.at("occlusion")) {
      OcclusionInterval o{iv.at("start").get<double>(), iv.at("end").get<double>(), {}};
      for (const auto& l : iv.at("landmarks")) o.landmarks.set(l.get<int>());
      intervals.push_back(o);
    }
    seq.occlusion = OcclusionSchedule(std::move(intervals), seq.duration);
    const double frame_rate = meta.at("frame_rate").get<double>();
    seq.imu.rate_hz = meta.at("imu_rate").get<double>();

    const auto raster = c.get_f64("raster");
    const auto visible = c.get_i32("visibility");
    const auto gt = get_poses(c, "gt");
    const std::size_t npix = static_cast<std::size_t>(seq.camera.width) * seq.camera.height;
    seq.frames.resize(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
      Frame& f = seq.frames[i];
      f.timestamp = static_cast<double>(i) / frame_rate;
      f.raster.assign(raster.begin() + static_cast<std::ptrdiff_t>(i * npix),
                      raster.begin() + static_cast<std::ptrdiff_t>((i + 1) * npix));
      for (int l = 0; l < kNumLandmarks; ++l) f.visible[l] = visible[i * kNumLandmarks + l] != 0;
      f.gt = gt[i];
    }

    const auto gyro = c.get_f64("imu_gyro");
    const auto accel = c.get_f64("imu_accel");
    seq.imu.num_samples = gyro.size() / (3 * kNumSensors);
    seq.imu.gyro.resize(seq.imu.num_samples * kNumSensors);
    seq.imu.accel.resize(seq.imu.num_samples * kNumSensors);
    for (std::size_t i = 0; i < seq.imu.gyro.size(); ++i) {
      seq.imu.gyro[i] = Vec3(gyro[3 * i], gyro[3 * i + 1], gyro[3 * i + 2]);
      seq.imu.accel[i] = Vec3(accel[3 * i], accel[3 * i + 1], accel[3 * i + 2]);
    }

    const auto key_times = c.get_f64("script_time");
    const auto key_poses = get_poses(c, "script");
    for (std::size_t i = 0; i < key_times.size(); ++i) seq.keyframes.push_back({key_times[i], key_poses[i]});
  } catch (const json::exception& e) {
    throw IoError("sequence " + path.string() + ": bad metadata: " + e.what());
  }
  return seq;
}

void write_dataset(const std::filesystem::path& dir, const DatasetConfig& config,
                   const std::vector<CaptureSequence>& sequences) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["schema_version"] = 1;
  manifest["format"] = "AVHT";
  manifest["config"] = json::parse(config.to_json());
  manifest["sequences"] = json::array();
  for (const auto& seq : sequences) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04d.avht", seq.index);
    write_sequence(dir / name, seq);
    manifest["sequences"].push_back({{"index", seq.index},
                                     {"seed", seq.seed},
                                     {"regime", regime_name(seq.regime)},
                                     {"split", seq.split},
                                     {"file", name}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const json j = detail::parse_json(detail::read_text_file(dir / "manifest.json"), "manifest");
  detail::require_schema_version(j, 1, "manifest");
  DatasetManifest m;
  m.config = DatasetConfig::from_json(j.at("config").dump());
  for (const auto& e : j.at("sequences")) {
    m.sequences.push_back({e.at("index").get<int>(), e.at("seed").get<std::uint64_t>(),
                           regime_from_name(e.at("regime").get<std::string>()), e.at("split").get<std::string>(),
                           e.at("file").get<std::string>()});
  }
  return m;
}

std::vector<CaptureSequence> load_dataset(const std::filesystem::path& dir, const std::string& split) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<CaptureSequence> out;
  for (const auto& e : m.sequences) {
    if (!split.empty() && e.split != split) continue;
    out.push_back(read_sequence(dir / e.file));
  }
  return out;
}

}  // namespace fusetrack
