// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Vision-IMU fusion network: IMU transformer encoder, conv vision encoder,
// two-level cross-sensor attention with a kinematic prior mask, and a UME
// head (joint angles, wrist SE(3), per-landmark sigma).

#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusetrack/nn.hpp"
#include "fusetrack/optim.hpp"
#include "fusetrack/signal_pipeline.hpp"

namespace fusetrack {

enum class FusionMode { kFused, kVisionOnly, kImuOnly };
const char* mode_name(FusionMode mode);
FusionMode mode_from_name(const std::string& name);

struct ModelConfig {
  int d = 64;
  int imu_embed = 69;
  int imu_heads = 3;
  int imu_layers = 2;
  int imu_ffn = 138;
  std::string imu_attn_axis = "time";  // "time" or "channel"
  int heads = 4;
  double alpha_init = 1.0;
  bool learn_alpha = true;
  int raster_size = 32;
  std::array<int, 3> conv_channels{8, 16, 32};
  bool coord_channels = true;
  int head_hidden = 128;
  double activation_threshold = 1.0 / kNumSensors;
  double lambda_angle = 1.0;
  double sigma_floor = 1e-4;
  std::uint64_t seed = 7;

  void validate() const;  // ConfigError on bad fields
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct FusionOutput {
  HandPose pose;
  std::array<double, kNumLandmarks> sigma{};
  std::array<double, kNumSensors> a_vis{};
  std::array<bool, kNumSensors> activated{};
  bool translation_valid = true;
  bool a_vis_valid = true;  // false when every sensor token is the null token
};

// Per-sample sensor availability; false replaces the token with the null token.
using SensorMask = std::array<bool, kNumSensors>;
inline SensorMask all_sensors() {
  SensorMask m;
  m.fill(true);
  return m;
}

class FusionModel {
 public:
  FusionModel(ModelConfig config, const HandSkeleton& skeleton, const SensorLayout& layout, ChannelMap channel_map);
  FusionModel(const FusionModel& other);
  FusionModel& operator=(const FusionModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const HandSkeleton& skeleton() const { return *skeleton_; }
  const SensorLayout& layout() const { return *layout_; }
  const ChannelMap& channel_map() const { return channel_map_; }

  // Building blocks (rows are flattened over the batch).
  ad::Var imu_encoder(ad::Tape& t, std::span<const ImuWindow* const> windows) const;      // [B*23, d]
  ad::Var vision_encoder(ad::Tape& t, std::span<const std::vector<double>* const> rasters) const;  // [B, d]
  ad::Var sensor_tokens(ad::Tape& t, ad::Var f_imu) const;                                  // [B*12, d]
  // Z = [vis, s_1..s_12] per sample -> attended Z [B*13, d]; a_vis [B, 12].
  // `weights` receives the raw attention rows [(B*heads)*13, 13].
  ad::Var level1_fusion(ad::Tape& t, ad::Var vis, ad::Var tokens, ad::Matrix* a_vis,
                        ad::Matrix* weights = nullptr) const;
  ad::Var level2_fusion(ad::Tape& t, ad::Var attended) const;  // [B, d]

  struct Heads {
    ad::Var phi;          // [B, 22]
    ad::Var rotation;     // [B, 9]
    ad::Var translation;  // [B, 3]
    ad::Var sigma;        // [B, 21]
  };
  Heads ume_head(ad::Tape& t, ad::Var h) const;

  struct Forward {
    Heads heads;
    ad::Matrix a_vis;  // [B, 12]
    FusionMode mode = FusionMode::kFused;
  };
  // `masks` (optional, one per sample) drop individual sensor tokens.
  Forward forward(ad::Tape& t, std::span<const AlignedSample* const> batch, FusionMode mode,
                  std::span<const SensorMask> masks = {},
                  std::span<const std::vector<double>* const> rasters_override = {}) const;

  // Landmark NLL + lambda * joint-angle MSE, averaged over the batch. In
  // imu_only mode the ground-truth wrist is substituted before FK.
  ad::Var loss(ad::Tape& t, const Forward& f, std::span<const AlignedSample* const> batch) const;

  std::vector<FusionOutput> predict(std::span<const AlignedSample* const> batch, FusionMode mode,
                                    std::span<const SensorMask> masks = {}) const;

  // Output biases set to the mean training pose (angles, wrist translation).
  void init_output_bias(std::span<const AlignedSample> samples);
  // Enforces alpha >= 0 after an optimizer step.
  void clamp_alpha();
  double alpha() const;

 private:
  void build();

  ModelConfig config_;
  const HandSkeleton* skeleton_;
  const SensorLayout* layout_;
  ChannelMap channel_map_;
  std::vector<std::vector<int>> sensor_channels_;
  ad::Matrix geodesic_;  // 13 x 13 hop counts
  ad::Matrix pe_;        // [14, imu_embed]
  ad::ParameterSet params_;

  ad::Linear imu_in_;
  ad::Parameter* channel_embed_ = nullptr;  // [23, imu_embed]
  std::vector<ad::TransformerLayer> imu_layers_;
  ad::Linear imu_mlp1_, imu_mlp2_;
  std::vector<ad::Conv2d> convs_;
  ad::Linear vis_proj_;
  ad::Linear token_proj_;
  ad::Parameter* sensor_embed_ = nullptr;  // [12, d]
  ad::Parameter* null_sensor_ = nullptr;   // [1, d]
  ad::Parameter* null_vision_ = nullptr;   // [1, d]
  ad::LayerNorm l1_norm_;
  ad::MultiHeadAttention l1_attn_;
  ad::Parameter* alpha_ = nullptr;  // [1, 1]
  ad::MultiHeadAttention l2_attn_;
  ad::LayerNorm head_norm_;
  ad::Linear head1_, head2_;
  ad::Linear phi_head_, rot_head_, trans_head_, sigma_head_;
  Eigen::RowVectorXd phi_lo_, phi_hi_;  // joint limits widened by a margin
};

// Input raster channels fed to the first convolution: intensity, then x and
// y pixel coordinates in [-1, 1] when coord_channels is set.
ad::Matrix vision_input(std::span<const std::vector<double>* const> rasters, int size, bool coord_channels);

struct TrainConfig {
  int epochs = 5;
  int batch = 48;
  ad::AdamConfig adam{7.89e-4, 0.9, 0.999, 1e-8, 1e-6, {4}, 0.1};
  double sensor_dropout = 0.25;  // probability of hiding one sensor group per sample
  double image_noise = 10.0 / 255.0;
  double gamma_min = 0.5;
  double gamma_max = 1.7;
  std::uint64_t seed = 11;
  int shards = 4;  // fixed gradient split; workers run shards in parallel
  std::vector<int> sensor_subset;  // non-empty: only these sensors are ever provided

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct StepLog {
  int epoch = 0;
  long long step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

// Trains in place; `on_epoch(epoch)` runs after each completed epoch (used
// for checkpointing). Throws NumericalError on a non-finite loss.
std::vector<StepLog> train_model(FusionModel& model, ad::Adam& optimizer, std::span<const AlignedSample> samples,
                                 FusionMode mode, const TrainConfig& config, int start_epoch = 0,
                                 const std::function<void(int)>& on_epoch = {});

// One optimizer step on a fixed batch (no augmentation); returns the loss
// before the update.
double train_step(FusionModel& model, ad::Adam& optimizer, std::span<const AlignedSample* const> batch,
                  FusionMode mode, double lr, int shards = 1);

}  // namespace fusetrack
