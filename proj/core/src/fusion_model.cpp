// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "fusetrack/errors.hpp"
#include "fusetrack/worker_pool.hpp"
#include "json_util.hpp"

namespace fusetrack {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using detail::json;
using ad::concat_rows;
using ad::gather_rows;
using ad::sigmoid_range;

const char* mode_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::kFused:
      return "fused";
    case FusionMode::kVisionOnly:
      return "vision_only";
    case FusionMode::kImuOnly:
      return "imu_only";
  }
  return "?";
}

FusionMode mode_from_name(const std::string& name) {
  if (name == "fused") return FusionMode::kFused;
  if (name == "vision_only" || name == "vision") return FusionMode::kVisionOnly;
  if (name == "imu_only") return FusionMode::kImuOnly;
  throw ConfigError("unknown fusion mode '" + name + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (d <= 0 || heads <= 0 || d % heads != 0) fail("d must be divisible by heads");
  if (imu_embed <= 0 || imu_heads <= 0 || imu_embed % imu_heads != 0) fail("imu_embed must be divisible by imu_heads");
  if (imu_layers < 1) fail("imu_layers must be >= 1");
  if (imu_ffn < 1 || head_hidden < 1) fail("hidden sizes must be positive");
  if (imu_attn_axis != "time" && imu_attn_axis != "channel") fail("imu_attn_axis must be time|channel");
  if (!std::isfinite(alpha_init) || alpha_init < 0.0) fail("alpha_init must be finite and >= 0");
  if (raster_size < 8) fail("raster_size must be >= 8");
  for (int c : conv_channels) {
    if (c < 1) fail("conv channels must be positive");
  }
  if (!(sigma_floor > 0.0)) fail("sigma_floor must be positive");
  if (!(lambda_angle >= 0.0)) fail("lambda_angle must be >= 0");
}

std::string ModelConfig::to_json() const {
  json j;
  j["d"] = d;
  j["imu_embed"] = imu_embed;
  j["imu_heads"] = imu_heads;
  j["imu_layers"] = imu_layers;
  j["imu_ffn"] = imu_ffn;
  j["imu_attn_axis"] = imu_attn_axis;
  j["heads"] = heads;
  j["alpha_init"] = alpha_init;
  j["learn_alpha"] = learn_alpha;
  j["raster_size"] = raster_size;
  j["conv_channels"] = conv_channels;
  j["coord_channels"] = coord_channels;
  j["head_hidden"] = head_hidden;
  j["activation_threshold"] = activation_threshold;
  j["lambda_angle"] = lambda_angle;
  j["sigma_floor"] = sigma_floor;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = detail::parse_json(text, "model config");
  ModelConfig c;
  try {
    using detail::get_or;
    c.d = get_or(j, "d", c.d);
    c.imu_embed = get_or(j, "imu_embed", c.imu_embed);
    c.imu_heads = get_or(j, "imu_heads", c.imu_heads);
    c.imu_layers = get_or(j, "imu_layers", c.imu_layers);
    c.imu_ffn = get_or(j, "imu_ffn", c.imu_ffn);
    c.imu_attn_axis = get_or(j, "imu_attn_axis", c.imu_attn_axis);
    c.heads = get_or(j, "heads", c.heads);
    c.alpha_init = get_or(j, "alpha_init", c.alpha_init);
    c.learn_alpha = get_or(j, "learn_alpha", c.learn_alpha);
    c.raster_size = get_or(j, "raster_size", c.raster_size);
    c.conv_channels = get_or(j, "conv_channels", c.conv_channels);
    c.coord_channels = get_or(j, "coord_channels", c.coord_channels);
    c.head_hidden = get_or(j, "head_hidden", c.head_hidden);
    c.activation_threshold = get_or(j, "activation_threshold", c.activation_threshold);
    c.lambda_angle = get_or(j, "lambda_angle", c.lambda_angle);
    c.sigma_floor = get_or(j, "sigma_floor", c.sigma_floor);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::to_json() const {
  json j;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["lr"] = adam.lr;
  j["beta1"] = adam.beta1;
  j["beta2"] = adam.beta2;
  j["eps"] = adam.eps;
  j["weight_decay"] = adam.weight_decay;
  j["decay_epochs"] = adam.decay_epochs;
  j["decay_factor"] = adam.decay_factor;
  j["sensor_dropout"] = sensor_dropout;
  j["image_noise"] = image_noise;
  j["gamma_range"] = {gamma_min, gamma_max};
  j["seed"] = seed;
  j["shards"] = shards;
  if (!sensor_subset.empty()) j["sensor_subset"] = sensor_subset;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = detail::parse_json(text, "train config");
  TrainConfig c;
  try {
    using detail::get_or;
    c.epochs = get_or(j, "epochs", c.epochs);
    c.batch = get_or(j, "batch", c.batch);
    c.adam.lr = get_or(j, "lr", c.adam.lr);
    c.adam.beta1 = get_or(j, "beta1", c.adam.beta1);
    c.adam.beta2 = get_or(j, "beta2", c.adam.beta2);
    c.adam.eps = get_or(j, "eps", c.adam.eps);
    c.adam.weight_decay = get_or(j, "weight_decay", c.adam.weight_decay);
    c.adam.decay_epochs = get_or(j, "decay_epochs", c.adam.decay_epochs);
    c.adam.decay_factor = get_or(j, "decay_factor", c.adam.decay_factor);
    c.sensor_dropout = get_or(j, "sensor_dropout", c.sensor_dropout);
    c.image_noise = get_or(j, "image_noise", c.image_noise);
    if (j.contains("gamma_range")) {
      c.gamma_min = j.at("gamma_range")[0].get<double>();
      c.gamma_max = j.at("gamma_range")[1].get<double>();
    }
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.shards = get_or(j, "shards", c.shards);
    c.sensor_subset = get_or(j, "sensor_subset", c.sensor_subset);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (c.epochs < 0 || c.batch < 1 || c.shards < 1) throw ConfigError("train config: epochs >= 0 and batch >= 1 required");
  if (c.gamma_min <= 0.0 || c.gamma_max < c.gamma_min) throw ConfigError("train config: bad gamma_range");
  for (int k : c.sensor_subset) {
    if (k < 0 || k >= kNumSensors) throw ConfigError("train config: sensor_subset index out of range");
  }
  if (c.sensor_dropout < 0.0 || c.sensor_dropout > 1.0) throw ConfigError("train config: sensor_dropout in [0,1]");
  return c;
}

// ---------------------------------------------------------------------------

FusionModel::FusionModel(ModelConfig config, const HandSkeleton& skeleton, const SensorLayout& layout,
                         ChannelMap channel_map)
    : config_(std::move(config)), skeleton_(&skeleton), layout_(&layout), channel_map_(channel_map) {
  config_.validate();
  build();
}

FusionModel::FusionModel(const FusionModel& other)
    : config_(other.config_), skeleton_(other.skeleton_), layout_(other.layout_), channel_map_(other.channel_map_) {
  build();
  params_ = other.params_;
}

void FusionModel::build() {
  sensor_channels_.assign(kNumSensors, {});
  for (int c = 0; c < kNumChannels; ++c) sensor_channels_[channel_map_.channels[c].sensor].push_back(c);
  for (int s = 0; s < kNumSensors; ++s) {
    if (sensor_channels_[s].empty()) {
      throw ConfigError("channel map leaves sensor '" + layout_->sensors()[s].name + "' without channels");
    }
  }
  geodesic_ = sensor_geodesic_matrix(*layout_).cast<double>();
  // Sinusoidal encoding needs an even width; odd embeddings use the first
  // imu_embed columns of the next even size.
  const int e = config_.imu_embed;
  pe_ = ad::sinusoidal_pe(kWindowLength, e + e % 2).leftCols(e);

  std::mt19937_64 rng(config_.seed);
  const int d = config_.d;
  imu_in_ = ad::Linear::create(params_, "imu_encoder.embed", 3, e, rng);
  channel_embed_ = &params_.add("imu_encoder.channel_embed", ad::glorot_uniform(kNumChannels, e, 1, e, rng) * 0.1);
  imu_layers_.clear();
  for (int l = 0; l < config_.imu_layers; ++l) {
    imu_layers_.push_back(ad::TransformerLayer::create(params_, "imu_encoder.layer" + std::to_string(l), e,
                                                       config_.imu_heads, config_.imu_ffn, rng));
  }
  imu_mlp1_ = ad::Linear::create(params_, "imu_encoder.head1", e, d, rng);
  imu_mlp2_ = ad::Linear::create(params_, "imu_encoder.head2", d, d, rng);

  convs_.clear();
  int in = config_.coord_channels ? 3 : 1;
  for (int i = 0; i < 3; ++i) {
    convs_.push_back(ad::Conv2d::create(params_, "vision_encoder.conv" + std::to_string(i), in,
                                        config_.conv_channels[i], rng));
    in = config_.conv_channels[i];
  }
  vis_proj_ = ad::Linear::create(params_, "vision_encoder.proj", in, d, rng);

  token_proj_ = ad::Linear::create(params_, "fusion.token_proj", d, d, rng);
  sensor_embed_ = &params_.add("fusion.sensor_embed", ad::glorot_uniform(kNumSensors, d, 1, d, rng) * 0.1);
  null_sensor_ = &params_.add("fusion.null_sensor", ad::glorot_uniform(1, d, 1, d, rng) * 0.1);
  null_vision_ = &params_.add("fusion.null_vision", ad::glorot_uniform(1, d, 1, d, rng) * 0.1);
  l1_norm_ = ad::LayerNorm::create(params_, "fusion.level1.norm", d);
  l1_attn_ = ad::MultiHeadAttention::create(params_, "fusion.level1.attn", d, config_.heads, rng);
  alpha_ = &params_.add("fusion.level1.alpha", Matrix::Constant(1, 1, config_.alpha_init), config_.learn_alpha);
  l2_attn_ = ad::MultiHeadAttention::create(params_, "fusion.level2.attn", d, config_.heads, rng);

  head_norm_ = ad::LayerNorm::create(params_, "head.norm", d);
  head1_ = ad::Linear::create(params_, "head.hidden1", d, config_.head_hidden, rng);
  head2_ = ad::Linear::create(params_, "head.hidden2", config_.head_hidden, d, rng);
  phi_head_ = ad::Linear::create(params_, "head.phi", d, kNumDofs, rng);
  phi_head_.weight->value *= 0.1;
  phi_lo_.resize(kNumDofs);
  phi_hi_.resize(kNumDofs);
  for (int k = 0; k < kNumDofs; ++k) {
    const auto [lo, hi] = skeleton_->limits_for(k);
    const double margin = 0.1 * (hi - lo);
    phi_lo_[k] = lo - margin;
    phi_hi_[k] = hi + margin;
  }
  rot_head_ = ad::Linear::create(params_, "head.rotation6d", d, 6, rng);
  rot_head_.weight->value *= 0.1;
  rot_head_.bias->value << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  trans_head_ = ad::Linear::create(params_, "head.translation", d, 3, rng);
  trans_head_.weight->value *= 0.1;
  sigma_head_ = ad::Linear::create(params_, "head.sigma", d, kNumLandmarks, rng);
  sigma_head_.weight->value *= 0.1;
  sigma_head_.bias->value.setConstant(std::log(std::expm1(0.01)));
}

Var FusionModel::imu_encoder(Tape& t, std::span<const ImuWindow* const> windows) const {
  const int b = static_cast<int>(windows.size());
  const int e = config_.imu_embed;
  const int rows = b * kNumChannels * kWindowLength;
  Matrix x(rows, 3);
  Matrix pe(rows, e);
  std::vector<int> channel_of(static_cast<std::size_t>(rows));
  for (int s = 0; s < b; ++s) {
    for (int c = 0; c < kNumChannels; ++c) {
      for (int k = 0; k < kWindowLength; ++k) {
        const int r = (s * kNumChannels + c) * kWindowLength + k;
        for (int j = 0; j < 3; ++j) x(r, j) = windows[s]->at(k, c, j);
        pe.row(r) = pe_.row(k);
        channel_of[static_cast<std::size_t>(r)] = c;
      }
    }
  }
  Var h = add(add(imu_in_(t, t.constant(std::move(x))), t.constant(std::move(pe))),
              gather_rows(t.param(*channel_embed_), channel_of));

  if (config_.imu_attn_axis == "time") {
    for (std::size_t l = 0; l < imu_layers_.size(); ++l) {
      h = imu_layers_[l](t, h, kWindowLength, l + 1 == imu_layers_.size());
    }
  } else {
    std::vector<int> by_time;
    for (int s = 0; s < b; ++s) {
      for (int k = 0; k < kWindowLength; ++k) {
        for (int c = 0; c < kNumChannels; ++c) by_time.push_back((s * kNumChannels + c) * kWindowLength + k);
      }
    }
    h = gather_rows(h, by_time);
    for (const auto& layer : imu_layers_) h = layer(t, h, kNumChannels);
    std::vector<int> last;
    for (int s = 0; s < b; ++s) {
      for (int c = 0; c < kNumChannels; ++c) last.push_back((s * kWindowLength + kWindowLength - 1) * kNumChannels + c);
    }
    h = gather_rows(h, last);
  }
  return imu_mlp2_(t, gelu(imu_mlp1_(t, h)));
}

Matrix vision_input(std::span<const std::vector<double>* const> rasters, int size, bool coord_channels) {
  const int channels = coord_channels ? 3 : 1;
  const Eigen::Index pixels = static_cast<Eigen::Index>(size) * size;
  Matrix x(static_cast<Eigen::Index>(rasters.size()) * pixels, channels);
  for (std::size_t b = 0; b < rasters.size(); ++b) {
    if (rasters[b]->size() != static_cast<std::size_t>(pixels)) {
      throw ShapeError("raster has " + std::to_string(rasters[b]->size()) + " pixels, model expects " +
                       std::to_string(size) + "x" + std::to_string(size));
    }
    for (int y = 0; y < size; ++y) {
      for (int xx = 0; xx < size; ++xx) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * pixels + y * size + xx;
        x(r, 0) = (*rasters[b])[static_cast<std::size_t>(y * size + xx)];
        if (coord_channels) {
          x(r, 1) = 2.0 * xx / (size - 1) - 1.0;
          x(r, 2) = 2.0 * y / (size - 1) - 1.0;
        }
      }
    }
  }
  return x;
}

Var FusionModel::vision_encoder(Tape& t, std::span<const std::vector<double>* const> rasters) const {
  const int b = static_cast<int>(rasters.size());
  Var h = t.constant(vision_input(rasters, config_.raster_size, config_.coord_channels));
  int height = config_.raster_size;
  int width = config_.raster_size;
  for (const auto& conv : convs_) {
    int oh = 0;
    int ow = 0;
    h = relu(conv(t, h, b, height, width, &oh, &ow));
    height = oh;
    width = ow;
  }
  return vis_proj_(t, group_mean_rows(h, static_cast<Eigen::Index>(height) * width));
}

Var FusionModel::sensor_tokens(Tape& t, Var f_imu) const {
  const int b = static_cast<int>(f_imu.rows() / kNumChannels);
  std::vector<std::vector<int>> segments;
  std::vector<int> sensor_of;
  for (int s = 0; s < b; ++s) {
    for (int k = 0; k < kNumSensors; ++k) {
      std::vector<int> rows;
      for (int c : sensor_channels_[k]) rows.push_back(s * kNumChannels + c);
      segments.push_back(std::move(rows));
      sensor_of.push_back(k);
    }
  }
  return add(token_proj_(t, segment_mean_rows(f_imu, segments)), gather_rows(t.param(*sensor_embed_), sensor_of));
}

Var FusionModel::level1_fusion(Tape& t, Var vis, Var tokens, Matrix* a_vis, Matrix* full_weights) const {
  const int b = static_cast<int>(vis.rows());
  constexpr int kTokens = kNumSensors + 1;
  std::vector<int> order;
  for (int s = 0; s < b; ++s) {
    order.push_back(s);
    for (int k = 0; k < kNumSensors; ++k) order.push_back(b + s * kNumSensors + k);
  }
  const Var z = gather_rows(concat_rows({vis, tokens}), order);
  const Var mask = scale_by(t.constant(-geodesic_), t.param(*alpha_));
  const Var normed = l1_norm_(t, z);
  Matrix weights;
  const Var attended = add(z, l1_attn_(t, normed, normed, kTokens, kTokens, mask, &weights));
  if (a_vis != nullptr) {
    const int heads = config_.heads;
    a_vis->resize(b, kNumSensors);
    for (int s = 0; s < b; ++s) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(kNumSensors);
      for (int h = 0; h < heads; ++h) row += weights.block((s * heads + h) * kTokens, 1, 1, kNumSensors);
      a_vis->row(s) = row / row.sum();
    }
  }
  if (full_weights != nullptr) *full_weights = std::move(weights);
  return attended;
}

Var FusionModel::level2_fusion(Tape& t, Var attended) const {
  constexpr int kTokens = kNumSensors + 1;
  const int b = static_cast<int>(attended.rows() / kTokens);
  std::vector<int> vis_rows;
  std::vector<std::vector<int>> sensor_rows;
  for (int s = 0; s < b; ++s) {
    vis_rows.push_back(s * kTokens);
    std::vector<int> rows;
    for (int k = 1; k < kTokens; ++k) rows.push_back(s * kTokens + k);
    sensor_rows.push_back(std::move(rows));
  }
  std::vector<int> pairs;
  for (int s = 0; s < b; ++s) {
    pairs.push_back(s);
    pairs.push_back(b + s);
  }
  const Var z = gather_rows(concat_rows({gather_rows(attended, vis_rows), segment_mean_rows(attended, sensor_rows)}),
                            pairs);
  return group_mean_rows(l2_attn_(t, z, z, 2, 2), 2);
}

FusionModel::Heads FusionModel::ume_head(Tape& t, Var h) const {
  const Var g = add(h, head2_(t, gelu(head1_(t, head_norm_(t, h)))));
  Heads out;
  out.phi = sigmoid_range(phi_head_(t, g), phi_lo_, phi_hi_);
  out.rotation = rotation_from_6d(rot_head_(t, g));
  out.translation = trans_head_(t, g);
  out.sigma = add_scalar(softplus(sigma_head_(t, g)), config_.sigma_floor);
  return out;
}

FusionModel::Forward FusionModel::forward(Tape& t, std::span<const AlignedSample* const> batch, FusionMode mode,
                                          std::span<const SensorMask> masks,
                                          std::span<const std::vector<double>* const> rasters_override) const {
  const int b = static_cast<int>(batch.size());
  if (b == 0) throw ValidationError("forward on an empty batch");
  if (!masks.empty() && masks.size() != batch.size()) throw ValidationError("one sensor mask per sample required");
  if (!rasters_override.empty() && rasters_override.size() != batch.size()) {
    throw ValidationError("one raster override per sample required");
  }

  Var vis;
  if (mode == FusionMode::kImuOnly) {
    vis = gather_rows(t.param(*null_vision_), std::vector<int>(static_cast<std::size_t>(b), 0));
  } else {
    std::vector<const std::vector<double>*> rasters;
    for (int s = 0; s < b; ++s) {
      rasters.push_back(rasters_override.empty() ? &batch[s]->raster : rasters_override[s]);
    }
    vis = vision_encoder(t, rasters);
  }

  Var tokens;
  const std::size_t n_tokens = static_cast<std::size_t>(b) * kNumSensors;
  if (mode == FusionMode::kVisionOnly) {
    tokens = gather_rows(t.param(*null_sensor_), std::vector<int>(n_tokens, 0));
  } else {
    std::vector<const ImuWindow*> windows;
    for (const AlignedSample* s : batch) windows.push_back(&s->window);
    tokens = sensor_tokens(t, imu_encoder(t, windows));
    const bool any_masked =
        std::any_of(masks.begin(), masks.end(), [](const SensorMask& m) { return !std::all_of(m.begin(), m.end(), [](bool v) { return v; }); });
    if (any_masked) {
      std::vector<int> pick(n_tokens);
      for (int s = 0; s < b; ++s) {
        for (int k = 0; k < kNumSensors; ++k) {
          pick[static_cast<std::size_t>(s * kNumSensors + k)] =
              masks[s][k] ? s * kNumSensors + k : static_cast<int>(n_tokens);
        }
      }
      tokens = gather_rows(concat_rows({tokens, t.param(*null_sensor_)}), pick);
    }
  }

  Forward f;
  f.mode = mode;
  f.heads = ume_head(t, level2_fusion(t, level1_fusion(t, vis, tokens, &f.a_vis)));
  return f;
}

Var FusionModel::loss(Tape& t, const Forward& f, std::span<const AlignedSample* const> batch) const {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  Matrix target(b, 3 * kNumLandmarks);
  Matrix phi_gt(b, kNumDofs);
  Matrix rot_gt(b, 9);
  Matrix trans_gt(b, 3);
  for (Eigen::Index s = 0; s < b; ++s) {
    const HandPose& gt = batch[static_cast<std::size_t>(s)]->gt;
    const JointSet21 lm = forward_kinematics(*skeleton_, gt);
    for (int l = 0; l < kNumLandmarks; ++l) target.block(s, 3 * l, 1, 3) = lm[l].transpose();
    phi_gt.row(s) = gt.phi.transpose();
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) rot_gt(s, 3 * i + k) = gt.wrist_rotation(i, k);
    }
    trans_gt.row(s) = gt.wrist_translation.transpose();
  }
  Var rotation = f.heads.rotation;
  Var translation = f.heads.translation;
  if (f.mode == FusionMode::kImuOnly) {
    rotation = t.constant(rot_gt);
    translation = t.constant(trans_gt);
  }
  const Var landmarks = fk_landmarks(f.heads.phi, rotation, translation, *skeleton_);
  const Var nll = gaussian_nll(landmarks, f.heads.sigma, target);
  return add(nll, scale(mse(f.heads.phi, phi_gt), config_.lambda_angle));
}

std::vector<FusionOutput> FusionModel::predict(std::span<const AlignedSample* const> batch, FusionMode mode,
                                               std::span<const SensorMask> masks) const {
  Tape t;
  const Forward f = forward(t, batch, mode, masks);
  std::vector<FusionOutput> out(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Eigen::Index r = static_cast<Eigen::Index>(s);
    FusionOutput& o = out[s];
    o.pose.phi = f.heads.phi.value().row(r).transpose();
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) o.pose.wrist_rotation(i, k) = f.heads.rotation.value()(r, 3 * i + k);
      o.pose.wrist_translation[i] = f.heads.translation.value()(r, i);
    }
    for (int l = 0; l < kNumLandmarks; ++l) o.sigma[l] = f.heads.sigma.value()(r, l);
    bool any_sensor = mode != FusionMode::kVisionOnly;
    if (any_sensor && !masks.empty()) any_sensor = std::any_of(masks[s].begin(), masks[s].end(), [](bool v) { return v; });
    for (int k = 0; k < kNumSensors; ++k) {
      o.a_vis[k] = f.a_vis(r, k);
      o.activated[k] = o.a_vis[k] >= config_.activation_threshold;
    }
    o.translation_valid = mode != FusionMode::kImuOnly;
    o.a_vis_valid = any_sensor;
  }
  return out;
}

void FusionModel::init_output_bias(std::span<const AlignedSample> samples) {
  if (samples.empty()) return;
  Phi mean_phi = Phi::Zero();
  Vec3 mean_t = Vec3::Zero();
  for (const auto& s : samples) {
    mean_phi += s.gt.phi;
    mean_t += s.gt.wrist_translation;
  }
  const double n = static_cast<double>(samples.size());
  for (int k = 0; k < kNumDofs; ++k) {
    const double u = std::clamp((mean_phi[k] / n - phi_lo_[k]) / (phi_hi_[k] - phi_lo_[k]), 1e-3, 1.0 - 1e-3);
    phi_head_.bias->value(0, k) = std::log(u / (1.0 - u));
  }
  trans_head_.bias->value = (mean_t / n).transpose();
}

void FusionModel::clamp_alpha() { alpha_->value(0, 0) = std::max(0.0, alpha_->value(0, 0)); }

double FusionModel::alpha() const { return alpha_->value(0, 0); }

// ---------------------------------------------------------------------------

namespace {

// Gradients of the batch-mean loss into model.params(). The batch is cut
// into a fixed number of contiguous shards and the shard gradients are summed
// in shard order, so the result does not depend on the worker count.
double batch_gradients(FusionModel& model, std::vector<std::unique_ptr<FusionModel>>& replicas, int shards,
                       std::span<const AlignedSample* const> batch, FusionMode mode,
                       std::span<const SensorMask> masks, std::span<const std::vector<double>* const> rasters) {
  const std::size_t n = batch.size();
  const std::size_t parts = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(shards, 1)), 1, n);
  model.params().zero_grad();
  if (parts == 1) {
    Tape t;
    const auto f = model.forward(t, batch, mode, masks, rasters);
    const Var loss = model.loss(t, f, batch);
    const double value = loss.scalar();
    if (!std::isfinite(value)) return value;
    t.backward(loss);
    return value;
  }
  while (replicas.size() < parts) replicas.push_back(std::make_unique<FusionModel>(model));
  std::vector<double> losses(parts, 0.0);
  parallel_for(parts, worker_count(), [&](std::size_t p) {
    FusionModel& r = *replicas[p];
    r.params() = model.params();
    r.params().zero_grad();
    const std::size_t lo = p * n / parts;
    const std::size_t hi = (p + 1) * n / parts;
    const auto sub = batch.subspan(lo, hi - lo);
    Tape t;
    const auto f = r.forward(t, sub, mode, masks.empty() ? masks : masks.subspan(lo, hi - lo),
                             rasters.empty() ? rasters : rasters.subspan(lo, hi - lo));
    const Var loss = r.loss(t, f, sub);
    losses[p] = loss.scalar();
    if (std::isfinite(losses[p])) t.backward(loss);
  });
  double total = 0.0;
  auto dst = model.params().all();
  for (std::size_t p = 0; p < parts; ++p) {
    const double w = static_cast<double>((p + 1) * n / parts - p * n / parts) / static_cast<double>(n);
    total += w * losses[p];
    const auto src = replicas[p]->params().all();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->grad += w * src[i]->grad;
  }
  return total;
}

}  // namespace

double train_step(FusionModel& model, ad::Adam& optimizer, std::span<const AlignedSample* const> batch,
                  FusionMode mode, double lr, int shards) {
  std::vector<std::unique_ptr<FusionModel>> replicas;
  const double value = batch_gradients(model, replicas, shards, batch, mode, {}, {});
  if (!std::isfinite(value)) throw NumericalError("non-finite training loss");
  optimizer.step(model.params(), lr);
  model.clamp_alpha();
  return value;
}

std::vector<StepLog> train_model(FusionModel& model, ad::Adam& optimizer, std::span<const AlignedSample> samples,
                                 FusionMode mode, const TrainConfig& config, int start_epoch,
                                 const std::function<void(int)>& on_epoch) {
  if (samples.empty()) throw ValidationError("no training samples");
  const auto groups = model.layout().sensor_groups(model.skeleton());
  std::vector<std::unique_ptr<FusionModel>> replicas;
  std::vector<StepLog> log;
  long long step = optimizer.steps();
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = ad::scheduled_lr(config.adam, epoch);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng() % i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<const AlignedSample*> batch;
      std::vector<std::vector<double>> rasters;
      std::vector<SensorMask> masks;
      std::mt19937_64 rng(mix_seed(config.seed ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(step)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t i = start; i < end; ++i) {
        const AlignedSample& s = samples[order[i]];
        batch.push_back(&s);
        const double gamma = config.gamma_min + (config.gamma_max - config.gamma_min) * unit(rng);
        rasters.push_back(augment_observation(s.raster, {config.image_noise, gamma}, rng()));
        SensorMask m = all_sensors();
        if (!config.sensor_subset.empty()) {
          m.fill(false);
          for (int k : config.sensor_subset) m[static_cast<std::size_t>(k)] = true;
        } else if (mode == FusionMode::kFused && unit(rng) < config.sensor_dropout) {
          for (int k : groups[static_cast<std::size_t>(rng() % groups.size())]) m[k] = false;
        }
        masks.push_back(m);
      }
      std::vector<const std::vector<double>*> raster_ptrs;
      for (const auto& r : rasters) raster_ptrs.push_back(&r);

      const double value = batch_gradients(model, replicas, config.shards, batch, mode, masks, raster_ptrs);
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      optimizer.step(model.params(), lr);
      model.clamp_alpha();
      log.push_back({epoch, step, lr, value});
      ++step;
    }
    if (on_epoch) on_epoch(epoch);
  }
  return log;
}

}  // namespace fusetrack
