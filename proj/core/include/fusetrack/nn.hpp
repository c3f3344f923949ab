// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Named parameters and the layers built from them.

#pragma once

#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fusetrack/tensor.hpp"

namespace fusetrack::ad {

class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);

  // Throws ValidationError on a duplicate name.
  Parameter& add(const std::string& name, Matrix init, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::deque<Parameter> params_;  // stable addresses
  std::map<std::string, std::size_t> index_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out, std::mt19937_64& rng);

struct Linear {
  Parameter* weight = nullptr;  // [in, out]
  Parameter* bias = nullptr;    // [1, out]

  static Linear create(ParameterSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng);
  Var operator()(Tape& t, Var x) const;
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  static LayerNorm create(ParameterSet& ps, const std::string& name, int dim);
  Var operator()(Tape& t, Var x) const;
};

struct MultiHeadAttention {
  Linear query, key, value, output;
  int heads = 1;

  static MultiHeadAttention create(ParameterSet& ps, const std::string& name, int dim, int heads,
                                   std::mt19937_64& rng);
  // Queries from `xq` (groups of `query_group` rows), keys/values from `xkv`
  // (groups of `key_group` rows).
  Var operator()(Tape& t, Var xq, Var xkv, Eigen::Index query_group, Eigen::Index key_group, Var mask = {},
                 Matrix* weights = nullptr) const;
};

// Pre-norm encoder layer: x + MHA(LN x), then + FFN(LN x) with a GELU FFN.
struct TransformerLayer {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  static TransformerLayer create(ParameterSet& ps, const std::string& name, int dim, int heads, int ffn_dim,
                                 std::mt19937_64& rng);
  // x holds sequences of `length` rows. With `last_only`, only the final row
  // of each sequence is computed (queries, residual and FFN).
  Var operator()(Tape& t, Var x, Eigen::Index length, bool last_only = false) const;
};

struct Conv2d {
  Parameter* weight = nullptr;  // [k * k * in, out]
  Parameter* bias = nullptr;
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 2;

  static Conv2d create(ParameterSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng);
  // Returns the output and its spatial size.
  Var operator()(Tape& t, Var x, int batch, int height, int width, int* out_height, int* out_width) const;
};

}  // namespace fusetrack::ad
