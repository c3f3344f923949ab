// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

// Dense f64 matrices with tape-based reverse-mode differentiation.
//
// Every value is a row-major 2-D matrix; batched tensors are flattened into
// rows (e.g. [batch * tokens, features]). A Tape records one forward pass and
// is consumed by a single backward call.

#pragma once

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "fusetrack/kinematics.hpp"

namespace fusetrack::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(const Matrix& m);

struct Parameter {
  std::string name;  // e.g. "imu_encoder.embed.weight"
  Matrix value;
  Matrix grad;
  bool trainable = true;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf whose gradient is readable after backward (used by gradient checks).
  Var variable(Matrix value);
  // Leaf bound to a parameter; backward adds into parameter.grad.
  Var param(Parameter& p);

  // Records an op. `back` reads the output gradient and accumulates into the
  // inputs through add_grad.
  Var record(Matrix value, std::initializer_list<Var> inputs, std::function<void(Tape&, int self)> back);
  Var record(Matrix value, const std::vector<Var>& inputs, std::function<void(Tape&, int self)> back);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const;
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  void add_grad(int id, const Matrix& g);
  template <typename F>
  void with_grad(int id, F&& f) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    f(n.grad);
  }

  // Throws on a non-scalar loss, a loss with no trainable inputs, or a second
  // call on the same tape.
  void backward(Var loss);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, int)> back;
  };
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Elementwise and linear algebra.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x C row over every row of a
Var scale(Var a, double s);
Var scale_by(Var a, Var s);  // s is 1 x 1
Var linear(Var x, Var weight, Var bias);  // x W + b, weight [in, out]

// Structure.
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, const std::vector<int>& rows);
// Output row i is the mean of the consecutive block of `group` rows.
Var group_mean_rows(Var a, Eigen::Index group);
// Output row i is the mean of the listed rows.
Var segment_mean_rows(Var a, const std::vector<std::vector<int>>& segments);
Var sum_all(Var a);
Var mean_all(Var a);

// Activations and normalization.
Var relu(Var a);
Var gelu(Var a);  // exact, 0.5 x (1 + erf(x / sqrt 2))
Var softplus(Var a);
Var add_scalar(Var a, double c);
// lo + (hi - lo) * sigmoid(a), column-wise bounds
Var sigmoid_range(Var a, const Eigen::RowVectorXd& lo, const Eigen::RowVectorXd& hi);
inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);

// Row-wise softmax of logits + mask. The mask's rows tile the logits' rows.
// Entries of -inf get exactly zero weight.
Var softmax_masked(Var logits, Var mask);

struct AttentionSpec {
  int heads = 1;
  Eigen::Index query_group = 1;  // queries per independent sequence
  Eigen::Index key_group = 1;    // keys/values per independent sequence
};

// Scaled dot-product attention over independent sequences packed in rows,
// with an optional additive mask [query_group, key_group] shared by all
// sequences and heads. `weights`, if given, receives the softmax rows laid out
// as [(seq * heads + head) * query_group + i, key].
Var attention(Var q, Var k, Var v, const AttentionSpec& spec, Var mask = {}, Matrix* weights = nullptr);

struct ConvSpec {
  int batch = 1;
  int height = 0;
  int width = 0;
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 2;
  int pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// x: [batch * height * width, in_channels] (channel-last); weight:
// [kernel * kernel * in_channels, out_channels]; bias: [1, out_channels].
Var conv2d(Var x, Var weight, Var bias, const ConvSpec& spec);

// Landmarks R * P(phi) + t per row: phi [B, 22], rotation [B, 9] (row-major
// 3x3), translation [B, 3] -> [B, 63].
Var fk_landmarks(Var phi, Var rotation, Var translation, const HandSkeleton& skeleton);

// Two 3-vectors per row orthonormalized by Gram-Schmidt into the columns of a
// rotation: [B, 6] -> [B, 9] row-major.
Var rotation_from_6d(Var x);

// Mean over rows of sum_l |p_l - g_l|^2 / (2 sigma_l^2) + 3 log sigma_l.
Var gaussian_nll(Var landmarks, Var sigma, const Matrix& target);
// Mean squared error over all entries.
Var mse(Var a, const Matrix& target);

// PE[t, 2i] = sin(t / 10000^(2i/dim)), PE[t, 2i+1] = cos(...). Throws on odd dim.
Matrix sinusoidal_pe(int length, int dim);

}  // namespace fusetrack::ad
