// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/optim.hpp"

#include <cmath>

#include "fusetrack/errors.hpp"

namespace fusetrack::ad {

double scheduled_lr(const AdamConfig& config, int epoch) {
  double lr = config.lr;
  for (int e : config.decay_epochs) {
    if (epoch >= e) lr *= config.decay_factor;
  }
  return lr;
}

void Adam::step(ParameterSet& params, double lr) {
  for (Parameter* p : params.all()) {
    if (p->trainable && p->grad.size() != 0 && !p->grad.allFinite()) {
      throw NumericalError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Parameter* p : params.all()) {
    if (!p->trainable) continue;
    Moments& mom = moments_[p->name];
    if (mom.m.size() == 0) {
      mom.m = Matrix::Zero(p->value.rows(), p->value.cols());
      mom.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    const Matrix g = p->grad.size() == 0 ? Matrix::Zero(p->value.rows(), p->value.cols()) : p->grad;
    mom.m = config_.beta1 * mom.m + (1.0 - config_.beta1) * g;
    mom.v = config_.beta2 * mom.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const Matrix update = (mom.m / c1).array() / ((mom.v / c2).array().sqrt() + config_.eps);
    p->value -= lr * (update + config_.weight_decay * p->value);
  }
}

void Adam::restore(long long steps, std::map<std::string, Moments> moments) {
  steps_ = steps;
  moments_ = std::move(moments);
}

}  // namespace fusetrack::ad
