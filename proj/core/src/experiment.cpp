// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>

#include "fusetrack/checkpoint.hpp"
#include "fusetrack/errors.hpp"
#include "fusetrack/worker_pool.hpp"
#include "json_util.hpp"

namespace fusetrack {

namespace fs = std::filesystem;
using detail::json;

const char* method_name(Method m) {
  switch (m) {
    case Method::kFused:
      return "fused";
    case Method::kVision:
      return "vision";
    case Method::kImu:
      return "imu";
    case Method::kEkf:
      return "ekf";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "fused") return Method::kFused;
  if (name == "vision" || name == "vision_only") return Method::kVision;
  if (name == "imu" || name == "imu_only") return Method::kImu;
  if (name == "ekf") return Method::kEkf;
  throw ConfigError("unknown method '" + name + "' (fused, vision, imu, ekf)");
}

namespace {

FusionMode network_mode(Method m) {
  if (m == Method::kFused) return FusionMode::kFused;
  if (m == Method::kVision) return FusionMode::kVisionOnly;
  throw ConfigError(std::string("method ") + method_name(m) + " is not a trained network");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

const HandSkeleton& skeleton() { return HandSkeleton::default_right_hand(); }
const SensorLayout& layout() { return SensorLayout::default_layout(); }

json ekf_to_json(const EkfConfig& c) {
  return {{"q_angle", c.q_angle},
          {"q_angle_rate", c.q_angle_rate},
          {"q_wrist_rate", c.q_wrist_rate},
          {"q_accel", c.q_accel},
          {"landmark_sigma", c.landmark_sigma},
          {"gyro_sigma", c.gyro_sigma},
          {"coupling_sigma", c.coupling_sigma},
          {"gate_sigma", c.gate_sigma},
          {"fd_step", c.fd_step},
          {"init_angle_sigma", c.init_angle_sigma},
          {"init_rate_sigma", c.init_rate_sigma},
          {"init_position_sigma", c.init_position_sigma},
          {"init_velocity_sigma", c.init_velocity_sigma}};
}

EkfConfig ekf_from_json(const json& j) {
  using detail::get_or;
  EkfConfig c;
  c.q_angle = get_or(j, "q_angle", c.q_angle);
  c.q_angle_rate = get_or(j, "q_angle_rate", c.q_angle_rate);
  c.q_wrist_rate = get_or(j, "q_wrist_rate", c.q_wrist_rate);
  c.q_accel = get_or(j, "q_accel", c.q_accel);
  c.landmark_sigma = get_or(j, "landmark_sigma", c.landmark_sigma);
  c.gyro_sigma = get_or(j, "gyro_sigma", c.gyro_sigma);
  c.coupling_sigma = get_or(j, "coupling_sigma", c.coupling_sigma);
  c.gate_sigma = get_or(j, "gate_sigma", c.gate_sigma);
  c.fd_step = get_or(j, "fd_step", c.fd_step);
  c.init_angle_sigma = get_or(j, "init_angle_sigma", c.init_angle_sigma);
  c.init_rate_sigma = get_or(j, "init_rate_sigma", c.init_rate_sigma);
  c.init_position_sigma = get_or(j, "init_position_sigma", c.init_position_sigma);
  c.init_velocity_sigma = get_or(j, "init_velocity_sigma", c.init_velocity_sigma);
  return c;
}

json tracker_to_json(const ImuTrackerConfig& c) {
  return {{"tilt_gain", c.tilt_gain},
          {"static_band", c.static_band},
          {"coupling_weight", c.coupling_weight},
          {"iterations", c.iterations},
          {"fd_step", c.fd_step}};
}

ImuTrackerConfig tracker_from_json(const json& j) {
  using detail::get_or;
  ImuTrackerConfig c;
  c.tilt_gain = get_or(j, "tilt_gain", c.tilt_gain);
  c.static_band = get_or(j, "static_band", c.static_band);
  c.coupling_weight = get_or(j, "coupling_weight", c.coupling_weight);
  c.iterations = get_or(j, "iterations", c.iterations);
  c.fd_step = get_or(j, "fd_step", c.fd_step);
  return c;
}

double metric_or(const EvalResult& r, const std::string& name, double fallback = 0.0) {
  for (const auto& [k, v] : r.aggregate) {
    if (k == name) return v;
  }
  return fallback;
}

void finish(EvalResult& r) {
  std::vector<SampleMetrics> m;
  m.reserve(r.records.size());
  r.has_global = true;
  for (const auto& rec : r.records) {
    m.push_back(rec.metrics);
    r.has_global = r.has_global && rec.metrics.has_global;
  }
  r.aggregate = aggregate_metrics(m);
}

EvalRecord make_record(const MetricContext& ctx, const AlignedSample& s, const FusionOutput& out) {
  EvalRecord rec;
  rec.output = out;
  rec.metrics = evaluate_sample(ctx, out.pose, out.translation_valid, s.gt, s.visible);
  rec.metrics.sequence = s.sequence;
  rec.metrics.frame = s.frame;
  rec.metrics.regime = s.regime;
  return rec;
}

std::vector<AlignedSample> eval_samples(const ExperimentConfig& config, std::span<const CaptureSequence> seqs,
                                        int stride) {
  PipelineConfig p;
  p.frame_stride = stride;
  p.seed = config.seed;
  return build_samples(seqs, ChannelMap::default_map(layout()), p, worker_count());
}

std::vector<AlignedSample> train_samples(const ExperimentConfig& config, const fs::path& data_dir) {
  const fs::path shard = data_dir / "aligned_train.avht";
  const fs::path meta = data_dir / "aligned.json";
  if (fs::exists(shard) && fs::exists(meta)) {
    const json j = detail::parse_json(detail::read_text_file(meta), "aligned.json");
    if (j.value("train_stride", 0) == config.train_stride) return read_aligned_shard(shard, layout());
  }
  const auto seqs = load_dataset(data_dir, "train");
  return eval_samples(config, seqs, config.train_stride);
}

std::string model_meta(Method method, const ModelConfig& model, const TrainConfig& train, int epoch) {
  json j;
  j["method"] = method_name(method);
  j["epoch"] = epoch;
  j["model"] = json::parse(model.to_json());
  j["train"] = json::parse(train.to_json());
  return j.dump();
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  dataset.validate();
  model.validate();
  if (model.raster_size != dataset.raster_size) throw ConfigError("model.raster_size must equal dataset.raster_size");
  if (train_stride < 1 || eval_stride < 1 || sweep.stride < 1) throw ConfigError("strides must be >= 1");
  if (sweep.noise_scales.empty() || sweep.shifts.empty()) throw ConfigError("sweep grids must be non-empty");
  for (double s : sweep.noise_scales) {
    if (!(s >= 0.0)) throw ConfigError("sweep noise scales must be >= 0");
  }
  for (double s : sweep.shifts) {
    if (!(std::abs(s) <= kMaxTimeShift)) throw ConfigError("sweep shift outside +-0.4 s");
  }
  if (ablate_mode != "eval" && ablate_mode != "train") throw ConfigError("ablate_mode must be eval or train");
  if (train.epochs < 0 || train.batch < 1) throw ConfigError("bad training parameters");
}

void ExperimentConfig::apply_seed(std::uint64_t master) {
  seed = master;
  dataset.seed = mix_seed(master, 1);
  model.seed = mix_seed(master, 2);
  train.seed = mix_seed(master, 3);
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["name"] = name;
  j["seed"] = seed;
  j["dataset"] = json::parse(dataset.to_json());
  j["model"] = json::parse(model.to_json());
  j["train"] = json::parse(train.to_json());
  j["train_stride"] = train_stride;
  j["eval_stride"] = eval_stride;
  j["sweep"] = {{"noise_scales", sweep.noise_scales}, {"shifts", sweep.shifts}, {"stride", sweep.stride}};
  j["ablate_mode"] = ablate_mode;
  j["ekf"] = ekf_to_json(ekf);
  j["imu_tracker"] = tracker_to_json(imu_tracker);
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  const json j = detail::parse_json(text, "experiment config");
  detail::require_schema_version(j, 1, "experiment config");
  ExperimentConfig c;
  try {
    using detail::get_or;
    c.name = get_or<std::string>(j, "name", c.name);
    if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j.at("dataset").dump());
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train").dump());
    c.train_stride = get_or(j, "train_stride", c.train_stride);
    c.eval_stride = get_or(j, "eval_stride", c.eval_stride);
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      c.sweep.noise_scales = get_or(s, "noise_scales", c.sweep.noise_scales);
      c.sweep.shifts = get_or(s, "shifts", c.sweep.shifts);
      c.sweep.stride = get_or(s, "stride", c.sweep.stride);
    }
    c.ablate_mode = get_or<std::string>(j, "ablate_mode", c.ablate_mode);
    if (j.contains("ekf")) c.ekf = ekf_from_json(j.at("ekf"));
    if (j.contains("imu_tracker")) c.imu_tracker = tracker_from_json(j.at("imu_tracker"));
    if (!j.contains("seed")) throw ConfigError("experiment config: seed is required");
    c.apply_seed(j.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_json(detail::read_text_file(path));
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.train.epochs = 12;
  c.train.batch = 16;
  c.train.adam.lr = 2e-3;
  c.train.adam.decay_epochs = {10};
  c.apply_seed(c.seed);
  return c;
}

ExperimentConfig ExperimentConfig::paper_scale() {
  ExperimentConfig c;
  c.name = "paper_scale";
  c.dataset.num_sequences = 400;
  c.dataset.duration = 30.0;
  c.train.epochs = 40;
  c.train.adam.decay_epochs = {30};
  c.train_stride = 1;
  c.eval_stride = 1;
  c.sweep.stride = 1;
  c.apply_seed(c.seed);
  return c;
}

fs::path make_run_dir(const fs::path& out_root, const std::string& command, const std::string& fingerprint) {
  char id[32];
  std::snprintf(id, sizeof(id), "%012llx", static_cast<unsigned long long>(fnv1a(command + "\n" + fingerprint) & 0xffffffffffffULL));
  fs::create_directories(out_root);
  fs::path dir = out_root / (command + "-" + id);
  for (int n = 2; fs::exists(dir); ++n) dir = out_root / (command + "-" + id + "-" + std::to_string(n));
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------

std::vector<AlignedSample> build_samples(std::span<const CaptureSequence> sequences, const ChannelMap& map,
                                         const PipelineConfig& pipeline, int threads) {
  std::vector<std::vector<AlignedSample>> parts(sequences.size());
  parallel_for(sequences.size(), threads,
               [&](std::size_t i) { parts[i] = process_sequence(sequences[i], map, pipeline); });
  std::vector<AlignedSample> out;
  for (auto& p : parts) {
    for (auto& s : p) out.push_back(std::move(s));
  }
  return out;
}

EvalResult evaluate_network(const FusionModel& model, Method method, std::span<const AlignedSample> samples,
                            std::span<const SensorMask> masks, int threads) {
  if (!masks.empty() && masks.size() != samples.size()) throw ValidationError("one sensor mask per sample required");
  const FusionMode mode = network_mode(method);
  const MetricContext ctx(model.skeleton());
  EvalResult r;
  r.method = method;
  r.records.resize(samples.size());
  constexpr std::size_t kChunk = 32;
  const std::size_t chunks = (samples.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(samples.size(), lo + kChunk);
    std::vector<const AlignedSample*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&samples[i]);
    const auto outs = model.predict(batch, mode, masks.empty() ? masks : masks.subspan(lo, hi - lo));
    for (std::size_t i = lo; i < hi; ++i) r.records[i] = make_record(ctx, samples[i], outs[i - lo]);
  });
  finish(r);
  return r;
}

namespace {

std::map<int, std::size_t> sequence_positions(std::span<const CaptureSequence> sequences) {
  std::map<int, std::size_t> pos;
  for (std::size_t i = 0; i < sequences.size(); ++i) pos[sequences[i].index] = i;
  return pos;
}

EvalResult score_tracks(Method method, std::span<const CaptureSequence> sequences,
                        std::span<const AlignedSample> samples, const std::vector<std::vector<HandPose>>& tracks,
                        bool translation_valid, const HandSkeleton& skel) {
  const auto pos = sequence_positions(sequences);
  const MetricContext ctx(skel);
  EvalResult r;
  r.method = method;
  for (const auto& s : samples) {
    const auto it = pos.find(s.sequence);
    if (it == pos.end()) throw ValidationError("sample refers to a sequence that was not tracked");
    FusionOutput out;
    out.pose = tracks[it->second].at(static_cast<std::size_t>(s.frame));
    out.translation_valid = translation_valid;
    out.a_vis_valid = false;
    out.a_vis.fill(0.0);
    r.records.push_back(make_record(ctx, s, out));
  }
  finish(r);
  return r;
}

}  // namespace

EvalResult evaluate_imu_tracker(std::span<const CaptureSequence> sequences, std::span<const AlignedSample> samples,
                                const HandSkeleton& skel, const SensorLayout& lay, const ImuTrackerConfig& config,
                                int threads) {
  std::vector<std::vector<HandPose>> tracks(sequences.size());
  parallel_for(sequences.size(), threads, [&](std::size_t i) {
    tracks[i] = imu_only_tracker(sequences[i], skel, lay, config).poses;
  });
  return score_tracks(Method::kImu, sequences, samples, tracks, false, skel);
}

EvalResult evaluate_ekf(std::span<const CaptureSequence> sequences, std::span<const AlignedSample> samples,
                        const FusionModel& vision, const EkfConfig& config, int threads) {
  const HandSkeleton& skel = vision.skeleton();
  std::vector<std::vector<HandPose>> tracks(sequences.size());
  parallel_for(sequences.size(), threads, [&](std::size_t i) {
    const CaptureSequence& seq = sequences[i];
    PipelineConfig p;
    const auto frames = process_sequence(seq, vision.channel_map(), p);
    std::vector<JointSet21> measurements(seq.frames.size());
    std::vector<std::array<bool, kNumLandmarks>> visibility(seq.frames.size());
    for (auto& v : visibility) v.fill(false);
    constexpr std::size_t kChunk = 32;
    for (std::size_t lo = 0; lo < frames.size(); lo += kChunk) {
      const std::size_t hi = std::min(frames.size(), lo + kChunk);
      std::vector<const AlignedSample*> batch;
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(&frames[k]);
      const auto outs = vision.predict(batch, FusionMode::kVisionOnly);
      for (std::size_t k = lo; k < hi; ++k) {
        const auto f = static_cast<std::size_t>(frames[k].frame);
        measurements[f] = forward_kinematics(skel, outs[k - lo].pose);
        visibility[f] = seq.frames[f].visible;
      }
    }
    tracks[i] = run_ekf(seq, measurements, skel, vision.layout(), config, true, visibility);
  });
  return score_tracks(Method::kEkf, sequences, samples, tracks, true, skel);
}

std::array<double, 5> finger_mkpe_t(const EvalResult& result, const HandSkeleton& skel) {
  std::array<double, 5> out{};
  if (result.records.empty()) return out;
  for (int f = 0; f < 5; ++f) {
    const auto& lms = skel.finger_landmarks()[static_cast<std::size_t>(f)];
    double sum = 0.0;
    for (const auto& rec : result.records) {
      double s = 0.0;
      for (int l : lms) s += rec.metrics.landmark_error_t_mm[static_cast<std::size_t>(l)];
      sum += s / static_cast<double>(lms.size());
    }
    out[static_cast<std::size_t>(f)] = sum / static_cast<double>(result.records.size());
  }
  return out;
}

AttentionStats attention_stats(const EvalResult& fused, const HandSkeleton& skel, const SensorLayout& lay) {
  const auto groups = lay.sensor_groups(skel);
  AttentionStats st;
  std::array<double, 5> occ_sum{}, vis_sum{};
  for (const auto& rec : fused.records) {
    if (!rec.output.a_vis_valid) continue;
    for (std::size_t f = 0; f < 5; ++f) {
      const auto& lms = skel.finger_landmarks()[f];
      std::size_t hidden = 0;
      for (int l : lms) hidden += rec.metrics.visible[static_cast<std::size_t>(l)] ? 0 : 1;
      double mass = 0.0;
      for (int k : groups[f]) mass += rec.output.a_vis[static_cast<std::size_t>(k)];
      if (2 * hidden >= lms.size()) {
        occ_sum[f] += mass;
        ++st.occluded_count[f];
      } else if (hidden == 0) {
        vis_sum[f] += mass;
        ++st.visible_count[f];
      }
    }
  }
  double diff = 0.0;
  for (std::size_t f = 0; f < 5; ++f) {
    if (st.occluded_count[f] > 0) st.occluded_mass[f] = occ_sum[f] / st.occluded_count[f];
    if (st.visible_count[f] > 0) st.visible_mass[f] = vis_sum[f] / st.visible_count[f];
    if (st.occluded_count[f] > 0 && st.visible_count[f] > 0) {
      diff += st.occluded_mass[f] - st.visible_mass[f];
      ++st.paired_fingers;
    }
  }
  if (st.paired_fingers > 0) st.mean_difference = diff / st.paired_fingers;
  return st;
}

// ---------------------------------------------------------------------------

AblationResult ablate_sensors(const FusionModel& fused, const FusionModel& vision,
                              std::span<const AlignedSample> samples, int threads,
                              const std::function<const FusionModel*(int group)>& train_group) {
  const HandSkeleton& skel = fused.skeleton();
  const auto groups = fused.layout().sensor_groups(skel);
  const EvalResult base = evaluate_network(vision, Method::kVision, samples, {}, threads);
  const auto base_finger = finger_mkpe_t(base, skel);
  AblationResult out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    SensorMask only{};
    only.fill(false);
    for (int k : groups[g]) only[static_cast<std::size_t>(k)] = true;
    const std::vector<SensorMask> masks(samples.size(), only);
    const FusionModel* model = train_group ? train_group(static_cast<int>(g)) : &fused;
    const EvalResult r = evaluate_network(*model, Method::kFused, samples, masks, threads);
    const auto fm = finger_mkpe_t(r, skel);
    for (std::size_t f = 0; f < 5; ++f) out.gap[g][f] = fm[f] - base_finger[f];
  }
  for (std::size_t f = 0; f < 5; ++f) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < groups.size(); ++g) {
      if (out.gap[g][f] < out.gap[best][f]) best = g;
    }
    out.diagonal_hits += best == f ? 1 : 0;
  }
  const EvalResult full = evaluate_network(fused, Method::kFused, samples, {}, threads);
  for (int reg = 0; reg < kNumRegimes; ++reg) {
    double a = 0.0, b = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (static_cast<int>(samples[i].regime) != reg) continue;
      a += full.records[i].metrics.mkpe_t;
      b += base.records[i].metrics.mkpe_t;
      ++n;
    }
    out.regime_gap[static_cast<std::size_t>(reg)] = n > 0 ? (a - b) / n : 0.0;
  }
  return out;
}

SensitivityResult sensitivity(const FusionModel& model, Method method, std::span<const CaptureSequence> sequences,
                              const SweepConfig& sweep, std::uint64_t seed, int threads) {
  for (double s : sweep.shifts) {
    if (!(std::abs(s) <= kMaxTimeShift)) throw ConfigError("shift grid outside +-0.4 s");
  }
  for (double s : sweep.noise_scales) {
    if (!(s >= 0.0)) throw ConfigError("noise grid must be >= 0");
  }
  const ChannelMap& map = model.channel_map();
  auto point = [&](double value, const std::vector<AlignedSample>& samples) {
    const EvalResult r = evaluate_network(model, method, samples, {}, threads);
    return SweepPoint{value, metric_or(r, "MKPE"), metric_or(r, "MKPE.T")};
  };
  SensitivityResult out;
  for (double s : sweep.noise_scales) {
    PipelineConfig p;
    p.frame_stride = sweep.stride;
    p.noise_scale = s;
    p.seed = seed;
    out.noise.push_back(point(s, build_samples(sequences, map, p, threads)));
  }
  // Score every shift on the frames that all shifts can provide.
  std::vector<std::vector<AlignedSample>> per_shift;
  std::set<std::pair<int, int>> common;
  for (std::size_t i = 0; i < sweep.shifts.size(); ++i) {
    PipelineConfig p;
    p.frame_stride = sweep.stride;
    p.time_shift = sweep.shifts[i];
    p.seed = seed;
    per_shift.push_back(build_samples(sequences, map, p, threads));
    std::set<std::pair<int, int>> keys;
    for (const auto& s : per_shift.back()) keys.insert({s.sequence, s.frame});
    if (i == 0) {
      common = std::move(keys);
    } else {
      std::set<std::pair<int, int>> both;
      std::set_intersection(common.begin(), common.end(), keys.begin(), keys.end(),
                            std::inserter(both, both.begin()));
      common = std::move(both);
    }
  }
  for (std::size_t i = 0; i < sweep.shifts.size(); ++i) {
    std::vector<AlignedSample> kept;
    for (auto& s : per_shift[i]) {
      if (common.count({s.sequence, s.frame})) kept.push_back(std::move(s));
    }
    if (kept.empty()) throw ValidationError("no frame is available at every shift");
    out.shift.push_back(point(sweep.shifts[i], kept));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::unique_ptr<FusionModel> load_model(const fs::path& checkpoint, const HandSkeleton& skel,
                                        const SensorLayout& lay, Method* method) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  const json meta = detail::parse_json(read_checkpoint_meta(checkpoint), "checkpoint meta");
  auto model = std::make_unique<FusionModel>(ModelConfig::from_json(meta.at("model").dump()), skel, lay,
                                             ChannelMap::default_map(lay));
  load_checkpoint(checkpoint, model->params(), nullptr);
  if (method != nullptr) *method = method_from_name(meta.at("method").get<std::string>());
  return model;
}

fs::path cmd_generate(const ExperimentConfig& config, const fs::path& out_root) {
  config.validate();
  const auto sequences = generate_dataset(config.dataset, skeleton(), layout(), worker_count());
  const fs::path dir = make_run_dir(out_root, "generate", config.to_json());
  write_dataset(dir, config.dataset, sequences);
  write_text(dir / "experiment.json", config.to_json() + "\n");
  std::vector<CaptureSequence> train;
  for (const auto& s : sequences) {
    if (s.split == "train") train.push_back(s);
  }
  const auto samples = eval_samples(config, train, config.train_stride);
  write_aligned_shard(dir / "aligned_train.avht", samples);
  write_text(dir / "aligned.json", json{{"train_stride", config.train_stride}}.dump() + "\n");
  return dir;
}

TrainOutcome cmd_train(const ExperimentConfig& config, const fs::path& data_dir, Method method,
                       const fs::path& out_root, const std::optional<fs::path>& resume) {
  config.validate();
  if (method == Method::kImu || method == Method::kEkf) {
    throw ConfigError(std::string("method ") + method_name(method) + " has no trainable parameters");
  }
  const FusionMode mode = network_mode(method);
  const auto samples = train_samples(config, data_dir);

  FusionModel model(config.model, skeleton(), layout(), ChannelMap::default_map(layout()));
  model.init_output_bias(samples);
  ad::Adam optimizer(config.train.adam);
  int start_epoch = 0;
  if (resume) {
    const json meta = detail::parse_json(load_checkpoint(*resume, model.params(), &optimizer), "checkpoint meta");
    if (meta.at("method").get<std::string>() != method_name(method)) {
      throw ConfigError("resume checkpoint was trained with another method");
    }
    start_epoch = meta.at("epoch").get<int>() + 1;
  }

  std::string fingerprint = config.to_json() + "\n" + fs::absolute(data_dir).string() + "\n" + method_name(method);
  if (resume) fingerprint += "\n" + fs::absolute(*resume).string();
  TrainOutcome outcome;
  outcome.run_dir = make_run_dir(out_root, std::string("train-") + method_name(method), fingerprint);
  write_text(outcome.run_dir / "experiment.json", config.to_json() + "\n");

  auto on_epoch = [&](int epoch) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%02d.ckpt", epoch);
    save_checkpoint(outcome.run_dir / name, model.params(), &optimizer,
                    model_meta(method, config.model, config.train, epoch));
  };
  outcome.log = train_model(model, optimizer, samples, mode, config.train, start_epoch, on_epoch);
  save_checkpoint(outcome.run_dir / "model.ckpt", model.params(), &optimizer,
                  model_meta(method, config.model, config.train, std::max(start_epoch, config.train.epochs) - 1));

  std::string csv = "epoch,step,lr,loss\n";
  for (const auto& s : outcome.log) {
    char line[160];
    std::snprintf(line, sizeof(line), "%d,%lld,%.9g,%.12g\n", s.epoch, s.step, s.lr, s.loss);
    csv += line;
  }
  write_text(outcome.run_dir / "loss.csv", csv);
  return outcome;
}

namespace {

EvalResult run_method(const ExperimentConfig& config, std::span<const CaptureSequence> seqs,
                      std::span<const AlignedSample> samples, Method method,
                      const std::optional<fs::path>& checkpoint) {
  const int threads = worker_count();
  if (method == Method::kImu) return evaluate_imu_tracker(seqs, samples, skeleton(), layout(), config.imu_tracker, threads);
  if (!checkpoint) throw ConfigError(std::string("method ") + method_name(method) + " needs --checkpoint");
  Method trained = Method::kFused;
  const auto model = load_model(*checkpoint, skeleton(), layout(), &trained);
  if (method == Method::kEkf) {
    if (trained != Method::kVision) throw ConfigError("ekf needs a vision-only checkpoint");
    return evaluate_ekf(seqs, samples, *model, config.ekf, threads);
  }
  return evaluate_network(*model, method, samples, {}, threads);
}

std::string angles_csv(const EvalResult& r, const HandSkeleton& skel) {
  std::string out = "sequence,frame,regime";
  for (const auto& d : skel.dofs()) out += "," + d.name;
  out += "\n";
  for (const auto& rec : r.records) {
    out += std::to_string(rec.metrics.sequence) + "," + std::to_string(rec.metrics.frame) + "," +
           regime_name(rec.metrics.regime);
    for (double e : rec.metrics.angle_error_deg) out += "," + fmt(e);
    out += "\n";
  }
  return out;
}

std::string attention_csv(const EvalResult& r, const HandSkeleton& skel, const SensorLayout& lay) {
  static const char* kFingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
  std::string out = "sequence,frame,regime";
  for (const auto& s : lay.sensors()) out += ",a_vis_" + s.name;
  for (const char* f : kFingers) out += std::string(",hidden_") + f;
  out += "\n";
  for (const auto& rec : r.records) {
    out += std::to_string(rec.metrics.sequence) + "," + std::to_string(rec.metrics.frame) + "," +
           regime_name(rec.metrics.regime);
    for (double a : rec.output.a_vis) out += "," + fmt(a);
    for (const auto& lms : skel.finger_landmarks()) {
      int hidden = 0;
      for (int l : lms) hidden += rec.metrics.visible[static_cast<std::size_t>(l)] ? 0 : 1;
      out += "," + std::to_string(hidden);
    }
    out += "\n";
  }
  return out;
}

}  // namespace

fs::path cmd_eval(const ExperimentConfig& config, const fs::path& data_dir, Method method,
                  const std::optional<fs::path>& checkpoint, const fs::path& out_root) {
  config.validate();
  const auto seqs = load_dataset(data_dir, "eval");
  const auto samples = eval_samples(config, seqs, config.eval_stride);
  const EvalResult r = run_method(config, seqs, samples, method, checkpoint);

  std::string fingerprint = config.to_json() + "\n" + fs::absolute(data_dir).string() + "\n" + method_name(method);
  if (checkpoint) fingerprint += "\n" + fs::absolute(*checkpoint).string();
  const fs::path dir = make_run_dir(out_root, std::string("eval-") + method_name(method), fingerprint);
  write_text(dir / "metrics.csv", metrics_csv(r));
  write_text(dir / "summary.json", summary_json(r, skeleton(), layout()));
  write_text(dir / "angles.csv", angles_csv(r, skeleton()));
  if (method == Method::kFused) write_text(dir / "attention.csv", attention_csv(r, skeleton(), layout()));
  return dir;
}

fs::path cmd_ablate(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& fused_checkpoint,
                    const fs::path& vision_checkpoint, const fs::path& out_root) {
  config.validate();
  Method fm = Method::kFused, vm = Method::kVision;
  if (!fs::exists(vision_checkpoint)) throw ConfigError("missing vision-only baseline checkpoint");
  const auto fused = load_model(fused_checkpoint, skeleton(), layout(), &fm);
  const auto vision = load_model(vision_checkpoint, skeleton(), layout(), &vm);
  if (fm != Method::kFused || vm != Method::kVision) {
    throw ConfigError("ablate needs a fused checkpoint and a vision-only checkpoint");
  }
  const auto seqs = load_dataset(data_dir, "eval");
  const auto samples = eval_samples(config, seqs, config.eval_stride);
  const auto groups = layout().sensor_groups(skeleton());

  std::vector<std::unique_ptr<FusionModel>> trained;
  std::function<const FusionModel*(int)> train_group;
  std::vector<AlignedSample> train_set;
  if (config.ablate_mode == "train") {
    train_set = train_samples(config, data_dir);
    train_group = [&](int g) -> const FusionModel* {
      TrainConfig tc = config.train;
      tc.sensor_subset = groups[static_cast<std::size_t>(g)];
      auto m = std::make_unique<FusionModel>(config.model, skeleton(), layout(), ChannelMap::default_map(layout()));
      m->init_output_bias(train_set);
      ad::Adam opt(tc.adam);
      train_model(*m, opt, train_set, FusionMode::kFused, tc);
      trained.push_back(std::move(m));
      return trained.back().get();
    };
  }
  const AblationResult a = ablate_sensors(*fused, *vision, samples, worker_count(), train_group);

  const std::string fingerprint = config.to_json() + "\n" + fs::absolute(data_dir).string() + "\n" +
                                  fs::absolute(fused_checkpoint).string() + "\n" +
                                  fs::absolute(vision_checkpoint).string();
  const fs::path dir = make_run_dir(out_root, "ablate", fingerprint);
  static const char* kGroups[6] = {"thumb", "index", "middle", "ring", "pinky", "back"};
  std::string csv = "sensor_group,thumb,index,middle,ring,pinky\n";
  for (std::size_t g = 0; g < 6; ++g) {
    csv += kGroups[g];
    for (double v : a.gap[g]) csv += "," + fmt(v);
    csv += "\n";
  }
  write_text(dir / "ablation.csv", csv);
  std::string regimes = "regime,MKPE.T_gap\n";
  for (int r = 0; r < kNumRegimes; ++r) {
    regimes += std::string(regime_name(static_cast<Regime>(r))) + "," + fmt(a.regime_gap[static_cast<std::size_t>(r)]) + "\n";
  }
  write_text(dir / "regime_gap.csv", regimes);
  write_text(dir / "ablation.json",
             json{{"mode", config.ablate_mode}, {"diagonal_hits", a.diagonal_hits}, {"gap", a.gap}}.dump(2) + "\n");
  return dir;
}

fs::path cmd_sensitivity(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& checkpoint,
                         const fs::path& out_root) {
  config.validate();
  Method method = Method::kFused;
  const auto model = load_model(checkpoint, skeleton(), layout(), &method);
  const auto seqs = load_dataset(data_dir, "eval");
  const SensitivityResult s = sensitivity(*model, method, seqs, config.sweep, config.seed, worker_count());

  const std::string fingerprint =
      config.to_json() + "\n" + fs::absolute(data_dir).string() + "\n" + fs::absolute(checkpoint).string();
  const fs::path dir = make_run_dir(out_root, "sensitivity", fingerprint);
  auto table = [](const char* key, const std::vector<SweepPoint>& pts) {
    std::string csv = std::string(key) + ",MKPE,MKPE.T\n";
    for (const auto& p : pts) csv += fmt(p.value) + "," + fmt(p.mkpe) + "," + fmt(p.mkpe_t) + "\n";
    return csv;
  };
  write_text(dir / "noise.csv", table("noise_scale", s.noise));
  write_text(dir / "shift.csv", table("shift_s", s.shift));
  auto plot = [](const std::string& title, const std::string& x_label, const std::vector<SweepPoint>& pts) {
    std::vector<SvgSeries> series(2);
    series[0].label = "MKPE";
    series[1].label = "MKPE.T";
    for (const auto& p : pts) {
      series[0].x.push_back(p.value);
      series[0].y.push_back(p.mkpe);
      series[1].x.push_back(p.value);
      series[1].y.push_back(p.mkpe_t);
    }
    return line_plot_svg(title, x_label, "error (mm)", series);
  };
  write_text(dir / "noise.svg", plot("IMU noise sensitivity", "noise scale (x simulator floor)", s.noise));
  write_text(dir / "shift.svg", plot("Temporal misalignment", "IMU time shift (s)", s.shift));
  return dir;
}

// ---------------------------------------------------------------------------

std::string metrics_csv(const EvalResult& r) {
  struct Column {
    const char* name;
    double SampleMetrics::*field;
    bool global;
  };
  static const Column kColumns[] = {
      {"MKPE", &SampleMetrics::mkpe, true},          {"F.MKPE", &SampleMetrics::f_mkpe, true},
      {"MKPE.T", &SampleMetrics::mkpe_t, false},     {"F.MKPE.T", &SampleMetrics::f_mkpe_t, false},
      {"PCK-AUC", &SampleMetrics::pck_auc, true},    {"PCK-AUC.T", &SampleMetrics::pck_auc_t, false},
      {"PA-MPJPE", &SampleMetrics::pa_mpjpe, false}, {"PA-MPVPE", &SampleMetrics::pa_mpvpe, false},
      {"F@5", &SampleMetrics::f5, false},            {"F@15", &SampleMetrics::f15, false},
  };
  std::string out = "sequence,frame,regime";
  for (const auto& c : kColumns) {
    if (!c.global || r.has_global) out += std::string(",") + c.name;
  }
  out += ",angle_error_deg\n";
  auto mean_angle = [](const SampleMetrics& m) {
    double s = 0.0;
    for (double e : m.angle_error_deg) s += e;
    return s / kNumDofs;
  };
  for (const auto& rec : r.records) {
    const SampleMetrics& m = rec.metrics;
    out += std::to_string(m.sequence) + "," + std::to_string(m.frame) + "," + regime_name(m.regime);
    for (const auto& c : kColumns) {
      if (!c.global || r.has_global) out += "," + fmt(m.*(c.field));
    }
    out += "," + fmt(mean_angle(m)) + "\n";
  }
  out += "mean,,";
  for (const auto& c : kColumns) {
    if (!c.global || r.has_global) out += "," + fmt(metric_or(r, c.name));
  }
  out += "," + fmt(metric_or(r, "angle_error_deg")) + "\n";
  return out;
}

std::string summary_json(const EvalResult& r, const HandSkeleton& skel, const SensorLayout& lay) {
  json j;
  j["method"] = method_name(r.method);
  j["samples"] = r.records.size();
  j["surface_points"] = "PA-MPVPE and F-scores use 100 points spaced along the skeleton bones (mesh surrogate)";
  json metrics = json::object();
  for (const auto& [k, v] : r.aggregate) metrics[k] = v;
  j["metrics"] = metrics;

  json regimes = json::object();
  for (int reg = 0; reg < kNumRegimes; ++reg) {
    double sum = 0.0;
    int n = 0;
    for (const auto& rec : r.records) {
      if (static_cast<int>(rec.metrics.regime) != reg) continue;
      sum += rec.metrics.mkpe_t;
      ++n;
    }
    if (n > 0) regimes[regime_name(static_cast<Regime>(reg))] = {{"MKPE.T", sum / n}, {"samples", n}};
  }
  j["per_regime"] = regimes;

  std::vector<double> per_dof(kNumDofs, 0.0);
  for (const auto& rec : r.records) {
    for (int d = 0; d < kNumDofs; ++d) per_dof[static_cast<std::size_t>(d)] += rec.metrics.angle_error_deg[static_cast<std::size_t>(d)];
  }
  for (double& v : per_dof) v /= std::max<std::size_t>(1, r.records.size());
  j["per_dof_deg"] = per_dof;
  const auto fingers = finger_mkpe_t(r, skel);
  j["finger_MKPE.T"] = fingers;
  if (r.method == Method::kFused) {
    const AttentionStats st = attention_stats(r, skel, lay);
    j["attention"] = {{"occluded_mass", st.occluded_mass},   {"visible_mass", st.visible_mass},
                      {"occluded_count", st.occluded_count}, {"visible_count", st.visible_count},
                      {"mean_difference", st.mean_difference}, {"paired_fingers", st.paired_fingers}};
  }
  return j.dump(2) + "\n";
}

PipelineRun cmd_pipeline(const ExperimentConfig& config, const fs::path& out_root,
                         const std::function<void(const char*, const fs::path&)>& progress) {
  config.validate();
  auto step = [&](const char* what, const fs::path& p) {
    if (progress) progress(what, p);
    return p;
  };
  PipelineRun run;
  run.root = make_run_dir(out_root, "pipeline", config.to_json());
  run.dataset = step("generate", cmd_generate(config, run.root));
  run.fused_checkpoint = step("train fused", cmd_train(config, run.dataset, Method::kFused, run.root).run_dir / "model.ckpt");
  run.vision_checkpoint =
      step("train vision", cmd_train(config, run.dataset, Method::kVision, run.root).run_dir / "model.ckpt");
  auto at = [&](Method m) -> fs::path& { return run.eval[static_cast<std::size_t>(m)]; };
  at(Method::kFused) = step("eval fused", cmd_eval(config, run.dataset, Method::kFused, run.fused_checkpoint, run.root));
  at(Method::kVision) =
      step("eval vision", cmd_eval(config, run.dataset, Method::kVision, run.vision_checkpoint, run.root));
  at(Method::kImu) = step("eval imu", cmd_eval(config, run.dataset, Method::kImu, std::nullopt, run.root));
  at(Method::kEkf) = step("eval ekf", cmd_eval(config, run.dataset, Method::kEkf, run.vision_checkpoint, run.root));
  run.ablate = step("ablate", cmd_ablate(config, run.dataset, run.fused_checkpoint, run.vision_checkpoint, run.root));
  run.sensitivity = step("sensitivity", cmd_sensitivity(config, run.dataset, run.fused_checkpoint, run.root));
  run.report = step("report", cmd_report(run.root, run.root));
  return run;
}

}  // namespace fusetrack
