// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/tensor.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "fusetrack/errors.hpp"

namespace fusetrack::ad {

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

namespace {

void require(bool ok, const std::string& op, const Matrix& a, const Matrix& b) {
  if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_same(const std::string& op, const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op, a, b);
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ValidationError("operation on an empty Var");
  return *a.tape();
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), {}, false, nullptr, {}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), {}, true, nullptr, {}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back({p.value, {}, p.trainable, &p, {}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, std::function<void(Tape&, int)> back) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(back));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, std::function<void(Tape&, int)> back) {
  if (consumed_) throw ValidationError("tape already consumed by backward");
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ValidationError("inputs recorded on a different tape");
    needs = needs || nodes_[v.id()].needs_grad;
  }
  nodes_.push_back({std::move(value), {}, needs, nullptr, needs ? std::move(back) : nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::grad(int id) const {
  static const Matrix kEmpty;
  const Node& n = nodes_[id];
  return n.grad.size() == 0 && n.value.size() != 0 ? kEmpty : n.grad;
}

void Tape::add_grad(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (consumed_) throw ValidationError("backward called twice on the same tape");
  if (loss.tape() != this) throw ValidationError("loss belongs to a different tape");
  const Node& root = nodes_[loss.id()];
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(root.value));
  }
  if (!root.needs_grad) throw ValidationError("loss is not connected to any trainable input");
  consumed_ = true;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.size() == 0) continue;
    if (n.param->grad.size() == 0) n.param->grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  require(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.add_grad(a.id(), g * b.value().transpose());
    if (t.needs_grad(b.id())) t.add_grad(b.id(), a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a);
  require(a.cols() == b.cols(), "matmul_nt", a.value(), b.value());
  Matrix out = a.value() * b.value().transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.add_grad(a.id(), g * b.value());
    if (t.needs_grad(b.id())) t.add_grad(b.id(), g.transpose() * a.value());
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().transpose();
  return t.record(std::move(out), {a}, [a](Tape& t, int self) { t.add_grad(a.id(), t.grad(self).transpose()); });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    t.add_grad(a.id(), t.grad(self));
    t.add_grad(b.id(), t.grad(self));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    t.add_grad(a.id(), t.grad(self));
    if (t.needs_grad(b.id())) t.add_grad(b.id(), -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same("mul", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.add_grad(a.id(), g.cwiseProduct(b.value()));
    if (t.needs_grad(b.id())) t.add_grad(b.id(), g.cwiseProduct(a.value()));
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row", a.value(), row.value());
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.add_grad(a.id(), g);
    if (t.needs_grad(row.id())) t.add_grad(row.id(), g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.value() * s;
  return t.record(std::move(out), {a}, [a, s](Tape& t, int self) { t.add_grad(a.id(), t.grad(self) * s); });
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a);
  require(s.rows() == 1 && s.cols() == 1, "scale_by", a.value(), s.value());
  Matrix out = a.value() * s.scalar();
  return t.record(std::move(out), {a, s}, [a, s](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(a.id())) t.add_grad(a.id(), g * s.scalar());
    if (t.needs_grad(s.id())) t.add_grad(s.id(), Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape& t = tape_of(parts[0]);
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == parts[0].cols(), "concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, int self) {
    Eigen::Index r = 0;
    for (const Var& p : parts) {
      if (t.needs_grad(p.id())) t.add_grad(p.id(), t.grad(self).middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& t = tape_of(parts[0]);
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == parts[0].rows(), "concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, int self) {
    Eigen::Index c = 0;
    for (const Var& p : parts) {
      if (t.needs_grad(p.id())) t.add_grad(p.id(), t.grad(self).middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " +
                     shape_str(a.value()));
  }
  Matrix out = a.value().middleRows(start, count);
  return t.record(std::move(out), {a}, [a, start, count](Tape& t, int self) {
    t.with_grad(a.id(), [&](Matrix& g) { g.middleRows(start, count) += t.grad(self); });
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " +
                     shape_str(a.value()));
  }
  Matrix out = a.value().middleCols(start, count);
  return t.record(std::move(out), {a}, [a, start, count](Tape& t, int self) {
    t.with_grad(a.id(), [&](Matrix& g) { g.middleCols(start, count) += t.grad(self); });
  });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  Tape& t = tape_of(a);
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw ShapeError("gather_rows index out of " + shape_str(a.value()));
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  return t.record(std::move(out), {a}, [a, rows](Tape& t, int self) {
    t.with_grad(a.id(), [&](Matrix& g) {
      const Matrix& go = t.grad(self);
      for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
    });
  });
}

Var group_mean_rows(Var a, Eigen::Index group) {
  Tape& t = tape_of(a);
  if (group <= 0 || a.rows() % group != 0) {
    throw ShapeError("group_mean_rows: " + std::to_string(group) + " does not divide " + shape_str(a.value()));
  }
  const Eigen::Index n = a.rows() / group;
  Matrix out(n, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().mean();
  return t.record(std::move(out), {a}, [a, group, n](Tape& t, int self) {
    t.with_grad(a.id(), [&](Matrix& g) {
      const Matrix& go = t.grad(self);
      for (Eigen::Index i = 0; i < n; ++i) {
        g.middleRows(i * group, group).rowwise() += go.row(i) / static_cast<double>(group);
      }
    });
  });
}

Var segment_mean_rows(Var a, const std::vector<std::vector<int>>& segments) {
  Tape& t = tape_of(a);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(segments.size()), a.cols());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].empty()) throw ShapeError("segment_mean_rows: empty segment " + std::to_string(i));
    for (int r : segments[i]) {
      if (r < 0 || r >= a.rows()) throw ShapeError("segment_mean_rows index out of " + shape_str(a.value()));
      out.row(static_cast<Eigen::Index>(i)) += a.value().row(r);
    }
    out.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(segments[i].size());
  }
  return t.record(std::move(out), {a}, [a, segments](Tape& t, int self) {
    t.with_grad(a.id(), [&](Matrix& g) {
      const Matrix& go = t.grad(self);
      for (std::size_t i = 0; i < segments.size(); ++i) {
        const double w = 1.0 / static_cast<double>(segments[i].size());
        for (int r : segments[i]) g.row(r) += w * go.row(static_cast<Eigen::Index>(i));
      }
    });
  });
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  return t.record(std::move(out), {a}, [a](Tape& t, int self) {
    t.add_grad(a.id(), Matrix::Constant(a.rows(), a.cols(), t.grad(self)(0, 0)));
  });
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseMax(0.0);
  return t.record(std::move(out), {a}, [a](Tape& t, int self) {
    t.add_grad(a.id(), t.grad(self).cwiseProduct((a.value().array() > 0.0).cast<double>().matrix()));
  });
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); });
  return t.record(std::move(out), {a}, [a](Tape& t, int self) {
    const Matrix d = a.value().unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    });
    t.add_grad(a.id(), t.grad(self).cwiseProduct(d));
  });
}

Var softplus(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr(
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
  return t.record(std::move(out), {a}, [a](Tape& t, int self) {
    const Matrix d = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.add_grad(a.id(), t.grad(self).cwiseProduct(d));
  });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array() + c;
  return t.record(std::move(out), {a}, [a](Tape& t, int self) { t.add_grad(a.id(), t.grad(self)); });
}

Var sigmoid_range(Var a, const Eigen::RowVectorXd& lo, const Eigen::RowVectorXd& hi) {
  Tape& t = tape_of(a);
  if (lo.size() != a.cols() || hi.size() != a.cols()) {
    throw ValidationError("sigmoid_range: bounds do not match " + std::to_string(a.cols()) + " columns");
  }
  const Eigen::RowVectorXd width = hi - lo;
  auto s = std::make_shared<Matrix>(a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
  Matrix out = (s->array().rowwise() * width.array()).rowwise() + lo.array();
  return t.record(std::move(out), {a}, [a, s, width](Tape& t, int self) {
    const Matrix d = (s->array() * (1.0 - s->array())).rowwise() * width.array();
    t.add_grad(a.id(), t.grad(self).cwiseProduct(d));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x);
  require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm gain", x.value(), gain.value());
  require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm bias", x.value(), bias.value());
  const Eigen::Index n = x.cols();
  auto xhat = std::make_shared<Matrix>(x.rows(), n);
  auto inv = std::make_shared<Eigen::VectorXd>(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    (*inv)[r] = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (x.value().row(r).array() - mu) * (*inv)[r];
  }
  Matrix out = (xhat->array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return t.record(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv, n](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(gain.id())) t.add_grad(gain.id(), g.cwiseProduct(*xhat).colwise().sum());
    if (t.needs_grad(bias.id())) t.add_grad(bias.id(), g.colwise().sum());
    if (!t.needs_grad(x.id())) return;
    Matrix dx(x.rows(), n);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Eigen::RowVectorXd dxh = g.row(r).cwiseProduct(gain.value().row(0));
      const double s1 = dxh.sum();
      const double s2 = dxh.dot(xhat->row(r));
      dx.row(r) = ((*inv)[r] / static_cast<double>(n)) *
                  (static_cast<double>(n) * dxh.array() - s1 - xhat->row(r).array() * s2).matrix();
    }
    t.add_grad(x.id(), dx);
  });
}

namespace {

// In-place row softmax; returns false if a row is entirely -inf.
bool softmax_rows(Matrix& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    if (!std::isfinite(m)) return false;
    double sum = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double e = std::isinf(s(r, c)) ? 0.0 : std::exp(s(r, c) - m);
      s(r, c) = e;
      sum += e;
    }
    s.row(r) /= sum;
  }
  return true;
}

// dS = P o (dP - rowsum(dP o P))
Matrix softmax_backward(const Matrix& p, const Matrix& dp) {
  const Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
  return p.cwiseProduct(dp - dot.replicate(1, dp.cols()));
}

}  // namespace

Var softmax_masked(Var logits, Var mask) {
  Tape& t = tape_of(logits);
  const Matrix& l = logits.value();
  const Matrix& m = mask.value();
  require(m.cols() == l.cols() && m.rows() > 0 && l.rows() % m.rows() == 0, "softmax_masked", l, m);
  if (l.hasNaN() || m.hasNaN()) throw NumericalError("softmax_masked: NaN in logits or mask");
  Matrix s(l.rows(), l.cols());
  for (Eigen::Index r = 0; r < l.rows(); ++r) s.row(r) = l.row(r) + m.row(r % m.rows());
  if (!softmax_rows(s)) throw NumericalError("softmax_masked: a row is fully masked");
  auto p = std::make_shared<Matrix>(s);
  return t.record(std::move(s), {logits, mask}, [logits, mask, p](Tape& t, int self) {
    const Matrix ds = softmax_backward(*p, t.grad(self));
    t.add_grad(logits.id(), ds);
    if (t.needs_grad(mask.id())) {
      const Eigen::Index mr = mask.rows();
      Matrix dm = Matrix::Zero(mr, ds.cols());
      for (Eigen::Index r = 0; r < ds.rows(); ++r) dm.row(r % mr) += ds.row(r);
      t.add_grad(mask.id(), dm);
    }
  });
}

Var attention(Var q, Var k, Var v, const AttentionSpec& spec, Var mask, Matrix* weights) {
  Tape& t = tape_of(q);
  const Eigen::Index lq = spec.query_group;
  const Eigen::Index lk = spec.key_group;
  const Eigen::Index dim = q.cols();
  const int heads = spec.heads;
  if (heads <= 0 || dim % heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                     " heads");
  }
  require(k.cols() == dim && v.cols() == dim && k.rows() == v.rows(), "attention k/v", k.value(), v.value());
  require(q.rows() % lq == 0 && k.rows() % lk == 0 && q.rows() / lq == k.rows() / lk, "attention q/k", q.value(),
          k.value());
  const bool masked = mask.valid();
  if (masked) {
    require(mask.rows() == lq && mask.cols() == lk, "attention mask", mask.value(), Matrix(lq, lk));
  }
  const Eigen::Index groups = q.rows() / lq;
  const Eigen::Index dk = dim / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));

  auto probs = std::make_shared<Matrix>(groups * heads * lq, lk);
  Matrix out(q.rows(), dim);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      Matrix s = qv.block(g * lq, h * dk, lq, dk) * kv.block(g * lk, h * dk, lk, dk).transpose() * inv;
      if (masked) s += mask.value();
      if (!softmax_rows(s)) throw NumericalError("attention: a row is fully masked");
      out.block(g * lq, h * dk, lq, dk) = s * vv.block(g * lk, h * dk, lk, dk);
      probs->middleRows((g * heads + h) * lq, lq) = s;
    }
  }
  if (weights != nullptr) *weights = *probs;

  std::vector<Var> inputs{q, k, v};
  if (masked) inputs.push_back(mask);
  return t.record(std::move(out), inputs, [q, k, v, mask, masked, probs, lq, lk, dk, heads, groups, inv](
                                              Tape& t, int self) {
    const Matrix& go = t.grad(self);
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
    Matrix dk_ = Matrix::Zero(kv.rows(), kv.cols());
    Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
    Matrix dm = masked ? Matrix::Zero(lq, lk) : Matrix();
    for (Eigen::Index g = 0; g < groups; ++g) {
      for (int h = 0; h < heads; ++h) {
        const auto p = probs->middleRows((g * heads + h) * lq, lq);
        const Matrix dout = go.block(g * lq, h * dk, lq, dk);
        const Matrix dp = dout * vv.block(g * lk, h * dk, lk, dk).transpose();
        dv.block(g * lk, h * dk, lk, dk) += p.transpose() * dout;
        const Matrix ds = softmax_backward(p, dp);
        if (masked) dm += ds;
        dq.block(g * lq, h * dk, lq, dk) += ds * kv.block(g * lk, h * dk, lk, dk) * inv;
        dk_.block(g * lk, h * dk, lk, dk) += ds.transpose() * qv.block(g * lq, h * dk, lq, dk) * inv;
      }
    }
    t.add_grad(q.id(), dq);
    t.add_grad(k.id(), dk_);
    t.add_grad(v.id(), dv);
    if (masked) t.add_grad(mask.id(), dm);
  });
}

Var conv2d(Var x, Var weight, Var bias, const ConvSpec& s) {
  Tape& t = tape_of(x);
  const int ho = s.out_height();
  const int wo = s.out_width();
  const Eigen::Index patch = static_cast<Eigen::Index>(s.kernel) * s.kernel * s.in_channels;
  require(x.rows() == static_cast<Eigen::Index>(s.batch) * s.height * s.width && x.cols() == s.in_channels,
          "conv2d input", x.value(), Matrix(static_cast<Eigen::Index>(s.batch) * s.height * s.width, s.in_channels));
  require(weight.rows() == patch && weight.cols() == s.out_channels, "conv2d weight", weight.value(),
          Matrix(patch, s.out_channels));
  require(bias.rows() == 1 && bias.cols() == s.out_channels, "conv2d bias", bias.value(), Matrix(1, s.out_channels));

  // Source row in x for each (output pixel, kernel tap), or -1 for padding.
  auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(s.batch) * ho * wo * s.kernel * s.kernel);
  auto cols = std::make_shared<Matrix>(Matrix::Zero(static_cast<Eigen::Index>(s.batch) * ho * wo, patch));
  const Matrix& xv = x.value();
  std::size_t n = 0;
  for (int b = 0; b < s.batch; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index row = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
        for (int ky = 0; ky < s.kernel; ++ky) {
          for (int kx = 0; kx < s.kernel; ++kx) {
            const int iy = oy * s.stride - s.pad + ky;
            const int ix = ox * s.stride - s.pad + kx;
            int src = -1;
            if (iy >= 0 && iy < s.height && ix >= 0 && ix < s.width) {
              src = (b * s.height + iy) * s.width + ix;
              cols->block(row, (ky * s.kernel + kx) * s.in_channels, 1, s.in_channels) = xv.row(src);
            }
            (*index)[n++] = src;
          }
        }
      }
    }
  }
  Matrix out = (*cols * weight.value()).rowwise() + bias.value().row(0);
  return t.record(std::move(out), {x, weight, bias}, [x, weight, bias, cols, index, s](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(weight.id())) t.add_grad(weight.id(), cols->transpose() * g);
    if (t.needs_grad(bias.id())) t.add_grad(bias.id(), g.colwise().sum());
    if (!t.needs_grad(x.id())) return;
    const Matrix dcols = g * weight.value().transpose();
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    const int taps = s.kernel * s.kernel;
    for (Eigen::Index row = 0; row < dcols.rows(); ++row) {
      for (int tap = 0; tap < taps; ++tap) {
        const int src = (*index)[static_cast<std::size_t>(row) * taps + tap];
        if (src >= 0) dx.row(src) += dcols.block(row, tap * s.in_channels, 1, s.in_channels);
      }
    }
    t.add_grad(x.id(), dx);
  });
}

Var fk_landmarks(Var phi, Var rotation, Var translation, const HandSkeleton& skeleton) {
  Tape& t = tape_of(phi);
  const Eigen::Index batch = phi.rows();
  require(phi.cols() == kNumDofs, "fk_landmarks phi", phi.value(), Matrix(batch, kNumDofs));
  require(rotation.rows() == batch && rotation.cols() == 9, "fk_landmarks rotation", rotation.value(),
          Matrix(batch, 9));
  require(translation.rows() == batch && translation.cols() == 3, "fk_landmarks translation", translation.value(),
          Matrix(batch, 3));
  auto local = std::make_shared<std::vector<LocalFk>>();
  local->reserve(static_cast<std::size_t>(batch));
  Matrix out(batch, 3 * kNumLandmarks);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Phi p = phi.value().row(b).transpose();
    local->push_back(local_fk_with_jacobian(skeleton, p));
    const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> r(rotation.value().row(b).data());
    const Vec3 tr = translation.value().row(b).transpose();
    for (int l = 0; l < kNumLandmarks; ++l) out.block(b, 3 * l, 1, 3) = (r * local->back().points[l] + tr).transpose();
  }
  return t.record(std::move(out), {phi, rotation, translation}, [phi, rotation, translation, local](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Eigen::Index batch = g.rows();
    Matrix dphi = Matrix::Zero(batch, kNumDofs);
    Matrix drot = Matrix::Zero(batch, 9);
    Matrix dtr = Matrix::Zero(batch, 3);
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> r(rotation.value().row(b).data());
      Eigen::Matrix<double, 3 * kNumLandmarks, 1> local_grad;
      Mat3 dr = Mat3::Zero();
      Vec3 dt = Vec3::Zero();
      for (int l = 0; l < kNumLandmarks; ++l) {
        const Vec3 gl = g.block(b, 3 * l, 1, 3).transpose();
        local_grad.segment<3>(3 * l) = r.transpose() * gl;
        dr += gl * (*local)[static_cast<std::size_t>(b)].points[l].transpose();
        dt += gl;
      }
      dphi.row(b) = ((*local)[static_cast<std::size_t>(b)].jacobian.transpose() * local_grad).transpose();
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) drot(b, 3 * i + j) = dr(i, j);
      }
      dtr.row(b) = dt.transpose();
    }
    if (t.needs_grad(phi.id())) t.add_grad(phi.id(), dphi);
    if (t.needs_grad(rotation.id())) t.add_grad(rotation.id(), drot);
    if (t.needs_grad(translation.id())) t.add_grad(translation.id(), dtr);
  });
}

namespace {

// Gradient of y = x / |x| given dy.
Vec3 normalize_backward(const Vec3& x, const Vec3& dy) {
  const double n = x.norm();
  const Vec3 y = x / n;
  return (dy - y * y.dot(dy)) / n;
}

}  // namespace

Var rotation_from_6d(Var x) {
  Tape& t = tape_of(x);
  require(x.cols() == 6, "rotation_from_6d", x.value(), Matrix(x.rows(), 6));
  const Eigen::Index batch = x.rows();
  Matrix out(batch, 9);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Vec3 a1 = x.value().block(b, 0, 1, 3).transpose();
    const Vec3 a2 = x.value().block(b, 3, 1, 3).transpose();
    if (a1.norm() < 1e-12) throw NumericalError("rotation_from_6d: degenerate first vector");
    const Vec3 b1 = a1.normalized();
    const Vec3 u = a2 - b1.dot(a2) * b1;
    if (u.norm() < 1e-12) throw NumericalError("rotation_from_6d: parallel vectors");
    const Vec3 b2 = u.normalized();
    const Vec3 b3 = b1.cross(b2);
    for (int i = 0; i < 3; ++i) {
      out(b, 3 * i + 0) = b1[i];
      out(b, 3 * i + 1) = b2[i];
      out(b, 3 * i + 2) = b3[i];
    }
  }
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix dx(x.rows(), 6);
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      const Vec3 a1 = x.value().block(b, 0, 1, 3).transpose();
      const Vec3 a2 = x.value().block(b, 3, 1, 3).transpose();
      const Vec3 b1 = a1.normalized();
      const Vec3 u = a2 - b1.dot(a2) * b1;
      const Vec3 b2 = u.normalized();
      Vec3 gb1(g(b, 0), g(b, 3), g(b, 6));
      Vec3 gb2(g(b, 1), g(b, 4), g(b, 7));
      const Vec3 gb3(g(b, 2), g(b, 5), g(b, 8));
      gb1 += b2.cross(gb3);
      gb2 += gb3.cross(b1);
      const Vec3 gu = normalize_backward(u, gb2);
      const Vec3 ga2 = gu - b1 * b1.dot(gu);
      gb1 -= b1.dot(a2) * gu + b1.dot(gu) * a2;
      const Vec3 ga1 = normalize_backward(a1, gb1);
      dx.block(b, 0, 1, 3) = ga1.transpose();
      dx.block(b, 3, 1, 3) = ga2.transpose();
    }
    t.add_grad(x.id(), dx);
  });
}

Var gaussian_nll(Var landmarks, Var sigma, const Matrix& target) {
  Tape& t = tape_of(landmarks);
  require_same("gaussian_nll", landmarks.value(), target);
  require(sigma.rows() == landmarks.rows() && sigma.cols() * 3 == landmarks.cols(), "gaussian_nll sigma",
          landmarks.value(), sigma.value());
  if ((sigma.value().array() <= 0.0).any()) throw NumericalError("gaussian_nll: non-positive sigma");
  const Eigen::Index batch = landmarks.rows();
  const Eigen::Index nl = sigma.cols();
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index l = 0; l < nl; ++l) {
      const double r2 = (landmarks.value().block(b, 3 * l, 1, 3) - target.block(b, 3 * l, 1, 3)).squaredNorm();
      const double s = sigma.value()(b, l);
      loss += r2 / (2.0 * s * s) + 3.0 * std::log(s);
    }
  }
  loss /= static_cast<double>(batch);
  return t.record(Matrix::Constant(1, 1, loss), {landmarks, sigma}, [landmarks, sigma, target, batch, nl](
                                                                       Tape& t, int self) {
    const double go = t.grad(self)(0, 0) / static_cast<double>(batch);
    Matrix dp(batch, 3 * nl);
    Matrix ds(batch, nl);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index l = 0; l < nl; ++l) {
        const Eigen::RowVector3d r = landmarks.value().block(b, 3 * l, 1, 3) - target.block(b, 3 * l, 1, 3);
        const double s = sigma.value()(b, l);
        dp.block(b, 3 * l, 1, 3) = go * r / (s * s);
        ds(b, l) = go * (-r.squaredNorm() / (s * s * s) + 3.0 / s);
      }
    }
    if (t.needs_grad(landmarks.id())) t.add_grad(landmarks.id(), dp);
    if (t.needs_grad(sigma.id())) t.add_grad(sigma.id(), ds);
  });
}

Var mse(Var a, const Matrix& target) {
  Tape& t = tape_of(a);
  require_same("mse", a.value(), target);
  const double n = static_cast<double>(target.size());
  const double loss = (a.value() - target).squaredNorm() / n;
  return t.record(Matrix::Constant(1, 1, loss), {a}, [a, target, n](Tape& t, int self) {
    t.add_grad(a.id(), (2.0 * t.grad(self)(0, 0) / n) * (a.value() - target));
  });
}

Matrix sinusoidal_pe(int length, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ShapeError("sinusoidal_pe needs an even dim, got " + std::to_string(dim));
  Matrix pe(length, dim);
  for (int t = 0; t < length; ++t) {
    for (int i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, 2.0 * i / static_cast<double>(dim));
      pe(t, 2 * i) = std::sin(t / freq);
      pe(t, 2 * i + 1) = std::cos(t / freq);
    }
  }
  return pe;
}

}  // namespace fusetrack::ad
