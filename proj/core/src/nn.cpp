// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/nn.hpp"

#include <cmath>

#include "fusetrack/errors.hpp"

namespace fusetrack::ad {

ParameterSet::ParameterSet(const ParameterSet& other) : params_(other.params_), index_(other.index_) {}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    if (index_ == other.index_) {
      // Same layout: copy values in place so Parameter* held by layers stay valid.
      for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = other.params_[i];
    } else {
      params_ = other.params_;
      index_ = other.index_;
    }
  }
  return *this;
}

Parameter& ParameterSet::add(const std::string& name, Matrix init, bool trainable) {
  if (index_.count(name) != 0) throw ValidationError("duplicate parameter name '" + name + "'");
  index_[name] = params_.size();
  params_.push_back({name, std::move(init), {}, trainable});
  return params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return params_[it->second];
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Linear Linear::create(ParameterSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng) {
  Linear l;
  l.weight = &ps.add(name + ".weight", glorot_uniform(in, out, in, out, rng));
  l.bias = &ps.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

Var Linear::operator()(Tape& t, Var x) const { return linear(x, t.param(*weight), t.param(*bias)); }

LayerNorm LayerNorm::create(ParameterSet& ps, const std::string& name, int dim) {
  LayerNorm l;
  l.gain = &ps.add(name + ".gain", Matrix::Ones(1, dim));
  l.bias = &ps.add(name + ".bias", Matrix::Zero(1, dim));
  return l;
}

Var LayerNorm::operator()(Tape& t, Var x) const { return layer_norm(x, t.param(*gain), t.param(*bias)); }

MultiHeadAttention MultiHeadAttention::create(ParameterSet& ps, const std::string& name, int dim, int heads,
                                              std::mt19937_64& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError(name + ": dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  MultiHeadAttention m;
  m.query = Linear::create(ps, name + ".query", dim, dim, rng);
  m.key = Linear::create(ps, name + ".key", dim, dim, rng);
  m.value = Linear::create(ps, name + ".value", dim, dim, rng);
  m.output = Linear::create(ps, name + ".output", dim, dim, rng);
  m.heads = heads;
  return m;
}

Var MultiHeadAttention::operator()(Tape& t, Var xq, Var xkv, Eigen::Index query_group, Eigen::Index key_group,
                                   Var mask, Matrix* weights) const {
  const Var q = query(t, xq);
  const Var k = key(t, xkv);
  const Var v = value(t, xkv);
  return output(t, attention(q, k, v, {heads, query_group, key_group}, mask, weights));
}

TransformerLayer TransformerLayer::create(ParameterSet& ps, const std::string& name, int dim, int heads, int ffn_dim,
                                          std::mt19937_64& rng) {
  TransformerLayer l;
  l.norm1 = LayerNorm::create(ps, name + ".norm1", dim);
  l.attn = MultiHeadAttention::create(ps, name + ".attn", dim, heads, rng);
  l.norm2 = LayerNorm::create(ps, name + ".norm2", dim);
  l.ff1 = Linear::create(ps, name + ".ff1", dim, ffn_dim, rng);
  l.ff2 = Linear::create(ps, name + ".ff2", ffn_dim, dim, rng);
  return l;
}

Var TransformerLayer::operator()(Tape& t, Var x, Eigen::Index length, bool last_only) const {
  const Var normed = norm1(t, x);
  Var h;
  if (last_only) {
    std::vector<int> last;
    for (Eigen::Index r = length - 1; r < x.rows(); r += length) last.push_back(static_cast<int>(r));
    h = add(gather_rows(x, last), attn(t, gather_rows(normed, last), normed, 1, length));
  } else {
    h = add(x, attn(t, normed, normed, length, length));
  }
  return add(h, ff2(t, gelu(ff1(t, norm2(t, h)))));
}

Conv2d Conv2d::create(ParameterSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng) {
  Conv2d c;
  const int taps = c.kernel * c.kernel;
  c.weight = &ps.add(name + ".weight", glorot_uniform(taps * in, out, taps * in, taps * out, rng));
  c.bias = &ps.add(name + ".bias", Matrix::Zero(1, out));
  c.in_channels = in;
  c.out_channels = out;
  return c;
}

Var Conv2d::operator()(Tape& t, Var x, int batch, int height, int width, int* out_height, int* out_width) const {
  ConvSpec spec{batch, height, width, in_channels, out_channels, kernel, stride, kernel / 2};
  *out_height = spec.out_height();
  *out_width = spec.out_width();
  return conv2d(x, t.param(*weight), t.param(*bias), spec);
}

}  // namespace fusetrack::ad
