// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/signal_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fusetrack/container.hpp"
#include "fusetrack/errors.hpp"

namespace fusetrack {

ChannelMap ChannelMap::default_map(const SensorLayout& layout) {
  ChannelMap m;
  int c = 0;
  for (int s = 0; s < kNumSensors; ++s) m.channels[c++] = {s, ChannelKind::kGravity};
  const int skip = layout.sensor_index("hand_back");
  for (int s = 0; s < kNumSensors; ++s) {
    if (s != skip) m.channels[c++] = {s, ChannelKind::kGyro};
  }
  return m;
}

ChannelMap ChannelMap::from_names(std::span<const std::string> names, const SensorLayout& layout) {
  if (names.size() != kNumChannels) {
    throw ConfigError("channel map needs exactly 23 entries, got " + std::to_string(names.size()));
  }
  ChannelMap m;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto colon = names[i].find(':');
    if (colon == std::string::npos) throw ConfigError("channel map entry '" + names[i] + "' is not kind:sensor");
    const std::string kind = names[i].substr(0, colon);
    if (kind != "gravity" && kind != "gyro") throw ConfigError("channel kind must be gravity|gyro: " + names[i]);
    try {
      m.channels[i] = {layout.sensor_index(names[i].substr(colon + 1)),
                       kind == "gravity" ? ChannelKind::kGravity : ChannelKind::kGyro};
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  }
  return m;
}

std::vector<int> ChannelMap::channels_of(int sensor) const {
  std::vector<int> out;
  for (int c = 0; c < kNumChannels; ++c) {
    if (channels[c].sensor == sensor) out.push_back(c);
  }
  return out;
}

std::size_t align_frame(double frame_ts, std::span<const double> ts) {
  if (ts.empty()) throw ValidationError("cannot align against an empty IMU stream");
  auto it = std::lower_bound(ts.begin(), ts.end(), frame_ts);
  if (it == ts.begin()) return 0;
  if (it == ts.end()) return ts.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  const std::size_t lo = hi - 1;
  const double d_lo = frame_ts - ts[lo];
  const double d_hi = ts[hi] - frame_ts;
  // Timestamps are decimal fractions, so a true midpoint can round either way.
  const double tie_tol = 1e-12 * std::max(1.0, std::abs(frame_ts));
  return d_hi < d_lo - tie_tol ? hi : lo;
}

namespace {

Vec3 rotate_by_gyro(const Vec3& g, const Vec3& omega, double dt) {
  const double angle = omega.norm() * dt;
  if (angle == 0.0) return g;
  // Body-frame view of a world-fixed vector turns opposite to the body.
  return Eigen::AngleAxisd(-angle, omega.normalized()) * g;
}

struct GravityFilter {
  double gain;
  bool initialized = false;
  Vec3 g = Vec3::UnitZ();
  Vec3 last_gyro = Vec3::Zero();

  Vec3 step(const Vec3& gyro, const Vec3& accel, double dt) {
    const double norm = accel.norm();
    if (!initialized) {
      if (norm > 0.0) {
        g = accel / norm;
        initialized = true;
      }
      last_gyro = gyro;
      return g;
    }
    g = rotate_by_gyro(g, 0.5 * (gyro + last_gyro), dt);
    last_gyro = gyro;
    if (norm > 0.0) g = ((1.0 - gain) * g + gain * accel / norm);
    g.normalize();
    return g;
  }
};

}  // namespace

std::vector<Vec3> estimate_gravity(std::span<const ImuSample> history, double gain) {
  if (history.empty()) throw ValidationError("gravity estimation needs at least one sample");
  GravityFilter f{gain};
  std::vector<Vec3> out;
  out.reserve(history.size());
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double dt = i == 0 ? 0.0 : history[i].timestamp - history[i - 1].timestamp;
    out.push_back(f.step(history[i].gyro, history[i].accel, dt));
  }
  return out;
}

GravityTracks estimate_gravity_tracks(const ImuStream& stream, double gain) {
  GravityTracks tracks;
  tracks.num_samples = stream.num_samples;
  tracks.direction.resize(stream.num_samples * kNumSensors);
  const double dt = 1.0 / stream.rate_hz;
  for (int s = 0; s < kNumSensors; ++s) {
    GravityFilter f{gain};
    for (std::size_t i = 0; i < stream.num_samples; ++i) {
      tracks.direction[i * kNumSensors + s] = f.step(stream.gyro_at(i, s), stream.accel_at(i, s), i == 0 ? 0.0 : dt);
    }
  }
  return tracks;
}

ImuWindow extract_window(std::size_t aligned_index, const ImuStream& stream, const GravityTracks& gravity,
                         const ChannelMap& channel_map, bool inclusive) {
  const std::size_t needed = inclusive ? kWindowLength - 1 : kWindowLength;
  if (aligned_index < needed) {
    throw WarmupError("frame aligned to IMU sample " + std::to_string(aligned_index) + " lacks " +
                      std::to_string(kWindowLength) + " samples of history");
  }
  if (aligned_index >= stream.num_samples) throw ValidationError("aligned index past the end of the IMU stream");
  const std::size_t first = aligned_index - needed;

  ImuWindow w;
  w.frame_timestamp = stream.timestamp(aligned_index);
  w.channel_map = channel_map;
  for (int t = 0; t < kWindowLength; ++t) {
    const std::size_t i = first + static_cast<std::size_t>(t);
    for (int c = 0; c < kNumChannels; ++c) {
      const Channel& ch = channel_map.channels[c];
      const Vec3& v = ch.kind == ChannelKind::kGravity ? gravity.at(i, ch.sensor) : stream.gyro_at(i, ch.sensor);
      for (int k = 0; k < 3; ++k) w.at(t, c, k) = v[k];
    }
  }
  return w;
}

ImuWindow inject_noise(const ImuWindow& window, double scale, std::uint64_t seed, const NoiseModel& floor) {
  if (!(scale >= 0.0)) throw ValidationError("noise scale must be non-negative");
  if (scale == 0.0) return window;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ImuWindow out = window;
  for (int t = 0; t < kWindowLength; ++t) {
    for (int c = 0; c < kNumChannels; ++c) {
      if (window.channel_map.channels[c].kind == ChannelKind::kGyro) {
        for (int k = 0; k < 3; ++k) out.at(t, c, k) += scale * floor.gyro_sigma * normal(rng);
      } else {
        Vec3 a = window.vec(t, c) * kGravity;
        for (int k = 0; k < 3; ++k) a[k] += scale * floor.accel_sigma * normal(rng);
        const double n = a.norm();
        if (n > 0.0) a /= n;
        for (int k = 0; k < 3; ++k) out.at(t, c, k) = a[k];
      }
    }
  }
  return out;
}

std::vector<FrameAlignment> shift_alignment(const std::vector<double>& frame_timestamps, const ImuStream& stream,
                                            double dt, bool inclusive, double max_shift) {
  if (!(std::abs(dt) <= max_shift + 1e-12)) {
    throw ValidationError("time shift " + std::to_string(dt) + " s exceeds the bound of " +
                          std::to_string(max_shift) + " s");
  }
  const auto ts = stream.timestamps();
  const std::size_t needed = inclusive ? kWindowLength - 1 : kWindowLength;
  const double half_period = 0.5 / stream.rate_hz;
  std::vector<FrameAlignment> out;
  for (std::size_t f = 0; f < frame_timestamps.size(); ++f) {
    const double target = frame_timestamps[f] + dt;
    if (target < ts.front() - half_period || target > ts.back() + half_period) continue;
    const std::size_t j = align_frame(target, ts);
    if (j < needed) continue;
    out.push_back({f, j});
  }
  return out;
}

std::vector<double> augment_observation(std::span<const double> raster, const AugmentParams& params,
                                        std::uint64_t seed) {
  if (!(params.gamma > 0.0)) throw ValidationError("gamma must be positive");
  if (!(params.noise_sigma >= 0.0)) throw ValidationError("noise sigma must be non-negative");
  std::vector<double> out(raster.begin(), raster.end());
  if (params.gamma != 1.0) {
    for (double& v : out) v = std::pow(v, params.gamma);
  }
  if (params.noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, params.noise_sigma);
    for (double& v : out) v += normal(rng);
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::vector<AlignedSample> process_sequence(const CaptureSequence& seq, const ChannelMap& channel_map,
                                            const PipelineConfig& config) {
  if (config.frame_stride < 1) throw ConfigError("frame_stride must be >= 1");
  const GravityTracks gravity = estimate_gravity_tracks(seq.imu, config.gravity_gain);
  std::vector<double> frame_ts(seq.frames.size());
  for (std::size_t i = 0; i < seq.frames.size(); ++i) frame_ts[i] = seq.frames[i].timestamp;

  std::vector<AlignedSample> out;
  for (const auto& a : shift_alignment(frame_ts, seq.imu, config.time_shift, config.window_inclusive)) {
    if (a.frame % static_cast<std::size_t>(config.frame_stride) != 0) continue;
    const Frame& f = seq.frames[a.frame];
    AlignedSample s;
    s.window = extract_window(a.imu_index, seq.imu, gravity, channel_map, config.window_inclusive);
    if (config.noise_scale > 0.0) {
      const std::uint64_t seed = mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(seq.index)), a.frame);
      s.window = inject_noise(s.window, config.noise_scale, seed, config.noise_floor);
    }
    s.raster = f.raster;
    s.raster_size = seq.camera.width;
    s.visible = f.visible;
    s.gt = f.gt;
    s.regime = seq.regime;
    s.sequence = seq.index;
    s.frame = static_cast<int>(a.frame);
    out.push_back(std::move(s));
  }
  return out;
}

void write_aligned_shard(const std::filesystem::path& path, std::span<const AlignedSample> samples) {
  Container c;
  const std::uint64_t n = samples.size();
  const std::uint64_t side = samples.empty() ? 0 : static_cast<std::uint64_t>(samples.front().raster_size);
  std::vector<double> windows, rasters, ts, phi, rot, trans;
  std::vector<std::int32_t> visible, ids, channels;
  for (const auto& s : samples) {
    windows.insert(windows.end(), s.window.data.begin(), s.window.data.end());
    rasters.insert(rasters.end(), s.raster.begin(), s.raster.end());
    ts.push_back(s.window.frame_timestamp);
    for (bool v : s.visible) visible.push_back(v ? 1 : 0);
    ids.insert(ids.end(), {s.sequence, s.frame, static_cast<std::int32_t>(s.regime)});
    phi.insert(phi.end(), s.gt.phi.data(), s.gt.phi.data() + kNumDofs);
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) rot.push_back(s.gt.wrist_rotation(r, k));
      trans.push_back(s.gt.wrist_translation[r]);
    }
  }
  if (!samples.empty()) {
    for (const auto& ch : samples.front().window.channel_map.channels) {
      channels.insert(channels.end(), {ch.sensor, ch.kind == ChannelKind::kGravity ? 0 : 1});
    }
  }
  c.put_f32("window", {n, kWindowLength, kNumChannels, 3}, std::span<const double>(windows));
  c.put_f32("raster", {n, side, side}, std::span<const double>(rasters));
  c.put_f64("frame_timestamp", {n}, ts);
  c.put_i32("visibility", {n, kNumLandmarks}, visible);
  c.put_i32("ids", {n, 3}, ids);
  c.put_i32("channel_map", {channels.size() / 2, 2}, channels);
  c.put_f64("gt_phi", {n, kNumDofs}, phi);
  c.put_f64("gt_wrist_rotation", {n, 3, 3}, rot);
  c.put_f64("gt_wrist_translation", {n, 3}, trans);
  c.save(path);
}

std::vector<AlignedSample> read_aligned_shard(const std::filesystem::path& path, const SensorLayout& layout) {
  const Container c = Container::load(path);
  const auto windows = c.get_f64("window");
  const auto rasters = c.get_f64("raster");
  const auto ts = c.get_f64("frame_timestamp");
  const auto visible = c.get_i32("visibility");
  const auto ids = c.get_i32("ids");
  const auto channels = c.get_i32("channel_map");
  const auto phi = c.get_f64("gt_phi");
  const auto rot = c.get_f64("gt_wrist_rotation");
  const auto trans = c.get_f64("gt_wrist_translation");
  const std::size_t n = ts.size();
  const std::size_t side = n == 0 ? 0 : static_cast<std::size_t>(c.record("raster").dims[1]);

  ChannelMap map = ChannelMap::default_map(layout);
  for (std::size_t i = 0; i * 2 < channels.size() && i < kNumChannels; ++i) {
    map.channels[i] = {channels[2 * i], channels[2 * i + 1] == 0 ? ChannelKind::kGravity : ChannelKind::kGyro};
  }

  std::vector<AlignedSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    AlignedSample& s = out[i];
    std::copy_n(windows.begin() + static_cast<std::ptrdiff_t>(i * kWindowSize), kWindowSize, s.window.data.begin());
    s.window.frame_timestamp = ts[i];
    s.window.channel_map = map;
    s.raster.assign(rasters.begin() + static_cast<std::ptrdiff_t>(i * side * side),
                    rasters.begin() + static_cast<std::ptrdiff_t>((i + 1) * side * side));
    s.raster_size = static_cast<int>(side);
    for (int l = 0; l < kNumLandmarks; ++l) s.visible[l] = visible[i * kNumLandmarks + l] != 0;
    s.sequence = ids[3 * i];
    s.frame = ids[3 * i + 1];
    s.regime = static_cast<Regime>(ids[3 * i + 2]);
    for (int d = 0; d < kNumDofs; ++d) s.gt.phi[d] = phi[i * kNumDofs + d];
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) s.gt.wrist_rotation(r, k) = rot[i * 9 + 3 * r + k];
      s.gt.wrist_translation[r] = trans[i * 3 + r];
    }
  }
  return out;
}

}  // namespace fusetrack
