// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Adam with decoupled weight decay and a step-decay schedule.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "fusetrack/nn.hpp"

namespace fusetrack::ad {

struct AdamConfig {
  double lr = 7.89e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  std::vector<int> decay_epochs{30};  // lr *= decay_factor at each listed epoch
  double decay_factor = 0.1;
};

// Learning rate in effect during `epoch` (0-based).
double scheduled_lr(const AdamConfig& config, int epoch);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(std::move(config)) {}

  // One update with learning rate `lr`. Throws NumericalError naming the
  // parameter when a gradient is not finite.
  void step(ParameterSet& params, double lr);

  const AdamConfig& config() const { return config_; }
  long long steps() const { return steps_; }

  struct Moments {
    Matrix m, v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(long long steps, std::map<std::string, Moments> moments);

 private:
  AdamConfig config_;
  long long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace fusetrack::ad
