// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "fusetrack/errors.hpp"
#include "fusetrack/nn.hpp"
#include "fusetrack/optim.hpp"
#include "fusetrack/tensor.hpp"
#include "test_support.hpp"

using namespace fusetrack;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using fusetrack::testing::random_matrix;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTol = 1e-5;
constexpr double kFloor = 1e-3;

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST_CASE("matmul values") {
  Tape t;
  const Matrix a = mat({{1, 2}, {3, 4}});
  const Matrix b = mat({{5, 6}, {7, 8}});
  CHECK(ad::matmul(t.constant(a), t.constant(b)).value() == mat({{19, 22}, {43, 50}}));
  CHECK(ad::matmul(t.constant(Matrix::Identity(2, 2)), t.constant(a)).value() == a);
  CHECK(ad::matmul_nt(t.constant(a), t.constant(b)).value() == a * b.transpose());
  CHECK(ad::transpose(t.constant(a)).value() == a.transpose());
  CHECK_THROWS_AS(ad::matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), ShapeError);
  try {
    ad::matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3)));
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("2x3") != std::string::npos);
  }
}

TEST_CASE("structural ops") {
  Tape t;
  const Matrix a = mat({{1, 2}, {3, 4}, {5, 6}});
  CHECK(ad::group_mean_rows(t.constant(a), 1).value() == a);
  CHECK(ad::group_mean_rows(t.constant(a), 3).value() == mat({{3, 4}}));
  CHECK(ad::concat_rows({t.constant(a), t.constant(a)}).rows() == 6);
  CHECK(ad::concat_cols({t.constant(a), t.constant(a)}).value().row(1) == mat({{3, 4, 3, 4}}));
  CHECK(ad::slice_rows(t.constant(a), 1, 2).value() == mat({{3, 4}, {5, 6}}));
  CHECK(ad::slice_cols(t.constant(a), 1, 1).value() == mat({{2}, {4}, {6}}));
  CHECK(ad::gather_rows(t.constant(a), {2, 0}).value() == mat({{5, 6}, {1, 2}}));
  CHECK(ad::segment_mean_rows(t.constant(a), {{0, 2}, {1}}).value() == mat({{3, 4}, {3, 4}}));
  CHECK(ad::mean_all(t.constant(a)).scalar() == 3.5);
}

TEST_CASE("masked softmax") {
  Tape t;
  const Var eq = ad::softmax_masked(t.constant(Matrix::Constant(1, 4, 0.7)), t.constant(Matrix::Zero(1, 4)));
  for (int i = 0; i < 4; ++i) CHECK(eq.value()(0, i) == doctest::Approx(0.25).epsilon(1e-15));

  const Var m = ad::softmax_masked(t.constant(Matrix::Zero(1, 3)), t.constant(mat({{0, 0, -kInf}})));
  CHECK(m.value()(0, 0) == doctest::Approx(0.5));
  CHECK(m.value()(0, 1) == doctest::Approx(0.5));
  CHECK(m.value()(0, 2) == 0.0);

  const Var u = ad::softmax_masked(t.constant(mat({{1, 2, 3}})), t.constant(mat({{0, -1, -2}})));
  for (int i = 0; i < 3; ++i) CHECK(u.value()(0, i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::mt19937_64 rng(2);
  const Matrix logits = random_matrix(50, 13, rng, 5.0);
  const Matrix mask = -random_matrix(1, 13, rng).cwiseAbs();
  const Matrix p = ad::softmax_masked(t.constant(logits), t.constant(mask)).value();
  Matrix shifted = logits;
  for (Eigen::Index r = 0; r < shifted.rows(); ++r) shifted.row(r).array() += 3.0 * static_cast<double>(r);
  const Matrix q = ad::softmax_masked(t.constant(shifted), t.constant(mask)).value();
  for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-12);
  CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);

  Matrix nan = Matrix::Zero(1, 3);
  nan(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ad::softmax_masked(t.constant(nan), t.constant(Matrix::Zero(1, 3))), NumericalError);
}

TEST_CASE("layer norm, activations, linear") {
  Tape t;
  const Var ln = ad::layer_norm(t.constant(Matrix::Constant(2, 5, 3.0)), t.constant(Matrix::Ones(1, 5)),
                                t.constant(Matrix::Zero(1, 5)));
  CHECK(ln.value().cwiseAbs().maxCoeff() == 0.0);
  CHECK(ad::gelu(t.constant(Matrix::Zero(1, 1))).scalar() == 0.0);
  CHECK(ad::gelu(t.constant(mat({{1.0}}))).scalar() == doctest::Approx(0.5 * (1 + std::erf(1 / std::sqrt(2.0)))));
  CHECK(ad::relu(t.constant(mat({{-1, 2}}))).value() == mat({{0, 2}}));
  CHECK(ad::softplus(t.constant(mat({{0.0}}))).scalar() == doctest::Approx(std::log(2.0)));
  const Var y = ad::linear(t.constant(mat({{1, 2}})), t.constant(mat({{1, -1}, {0.5, 2}})),
                           t.constant(mat({{0.1, 0.2}})));
  CHECK(y.value()(0, 0) == doctest::Approx(1 * 1 + 2 * 0.5 + 0.1));
  CHECK(y.value()(0, 1) == doctest::Approx(1 * -1 + 2 * 2 + 0.2));
}

TEST_CASE("sinusoidal positional encoding") {
  const Matrix pe = ad::sinusoidal_pe(14, 8);
  CHECK(pe.rows() == 14);
  for (int i = 0; i < 8; i += 2) {
    CHECK(pe(0, i) == 0.0);
    CHECK(pe(0, i + 1) == 1.0);
  }
  CHECK(pe.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(pe(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK(pe(3, 5) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 4.0 / 8.0))).epsilon(1e-15));
  CHECK_THROWS(ad::sinusoidal_pe(14, 7));
}

TEST_CASE("attention against a scalar evaluation of softmax(QK^T / sqrt(d) + M) V") {
  Tape t;
  const Matrix q = mat({{0.3, -0.2}, {0.1, 0.4}});
  const Matrix k = mat({{0.5, 0.1}, {-0.3, 0.2}});
  const Matrix v = mat({{1.0, 2.0}, {-1.0, 0.5}});
  const Matrix m = mat({{0.0, -1.0}, {-1.0, 0.0}});
  Matrix w;
  const Var out = ad::attention(t.constant(q), t.constant(k), t.constant(v), {1, 2, 2}, t.constant(m), &w);
  for (int i = 0; i < 2; ++i) {
    double s[2], z = 0.0;
    for (int j = 0; j < 2; ++j) {
      s[j] = std::exp((q(i, 0) * k(j, 0) + q(i, 1) * k(j, 1)) / std::sqrt(2.0) + m(i, j));
      z += s[j];
    }
    for (int c = 0; c < 2; ++c) {
      CHECK(out.value()(i, c) == doctest::Approx((s[0] * v(0, c) + s[1] * v(1, c)) / z).epsilon(1e-14));
    }
    CHECK(w(i, 0) + w(i, 1) == doctest::Approx(1.0).epsilon(1e-15));
  }

  const Var single = ad::attention(t.constant(mat({{0.2, 0.9}})), t.constant(mat({{0.2, 0.9}})),
                                   t.constant(mat({{0.2, 0.9}})), {1, 1, 1});
  CHECK(single.value() == mat({{0.2, 0.9}}));
  CHECK_THROWS_AS(ad::attention(t.constant(q), t.constant(k), t.constant(v), {3, 2, 2}), ShapeError);
}

TEST_CASE("multi-head attention layer with hand-set weights") {
  ad::ParameterSet ps;
  std::mt19937_64 rng(1);
  const auto mha = ad::MultiHeadAttention::create(ps, "mha", 2, 1, rng);
  for (auto* lin : {&mha.query, &mha.key, &mha.value, &mha.output}) {
    lin->weight->value = Matrix::Identity(2, 2);
    lin->bias->value = Matrix::Zero(1, 2);
  }
  Tape t;
  const Matrix x = mat({{0.4, -0.6}});
  CHECK((mha(t, t.constant(x), t.constant(x), 1, 1).value() - x).norm() < 1e-15);

  std::mt19937_64 rng2(3);
  const Matrix z = random_matrix(6, 4, rng2);
  const auto heads = ad::MultiHeadAttention::create(ps, "mh2", 4, 2, rng2);
  Matrix w;
  heads(t, t.constant(z), t.constant(z), 3, 3, {}, &w);
  CHECK(w.rows() == 2 * 2 * 3);
  for (Eigen::Index r = 0; r < w.rows(); ++r) CHECK(std::abs(w.row(r).sum() - 1.0) < 1e-12);
}

TEST_CASE("backward basics") {
  {
    Tape t;
    const Var p = t.variable(mat({{1, -2, 3}}));
    t.backward(ad::sum_all(p));
    CHECK(p.grad() == Matrix::Ones(1, 3));
  }
  {
    Tape t;
    const Matrix v = mat({{1, -2}, {0.5, 4}});
    const Var p = t.variable(v);
    t.backward(ad::sum_all(ad::mul(p, p)));
    CHECK(p.grad() == 2 * v);
  }
  {
    Tape t;
    const Var p = t.variable(mat({{1, 2}}));
    CHECK_THROWS(t.backward(p));
    const Var loss = ad::sum_all(p);
    t.backward(loss);
    CHECK_THROWS(t.backward(loss));
  }
  {
    Tape t;
    CHECK_THROWS(t.backward(ad::sum_all(t.constant(mat({{1, 2}})))));
  }
  {
    ad::Parameter param{"w", mat({{2.0}}), Matrix::Zero(1, 1), true};
    Tape t;
    t.backward(ad::scale(t.param(param), 3.0));
    CHECK(param.grad(0, 0) == 3.0);
  }
}

TEST_CASE("finite-difference checks for every op") {
  for (const auto& [name, w] : fusetrack::testing::op_gradient_checks(kFloor)) {
    INFO(name);
    CHECK(w < kTol);
  }
}

TEST_CASE("gaussian nll closed forms") {
  Tape t;
  const Matrix pred = mat({{0.01, 0.0, 0.0, 0.0, 0.02, 0.0}});
  const Matrix gt = Matrix::Zero(1, 6);
  const double l1 = ad::gaussian_nll(t.constant(pred), t.constant(Matrix::Ones(1, 2)), gt).scalar();
  CHECK(l1 == doctest::Approx(0.5 * (0.01 * 0.01 + 0.02 * 0.02)).epsilon(1e-14));
  const double s = 0.05;
  const double l0 = ad::gaussian_nll(t.constant(gt), t.constant(Matrix::Constant(1, 2, s)), gt).scalar();
  CHECK(l0 == doctest::Approx(2 * 3 * std::log(s)).epsilon(1e-14));

  // One landmark, residual r: the minimizing sigma satisfies sigma^2 = r^2 / 3.
  const double r = 0.012;
  auto nll = [&](double sigma) {
    Tape tt;
    return ad::gaussian_nll(tt.constant(mat({{r, 0, 0}})), tt.constant(mat({{sigma}})), Matrix::Zero(1, 3)).scalar();
  };
  double lo = 1e-4, hi = 0.1;
  for (int i = 0; i < 200; ++i) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    (nll(m1) < nll(m2) ? hi : lo) = (nll(m1) < nll(m2) ? m2 : m1);
  }
  CHECK(0.5 * (lo + hi) == doctest::Approx(r / std::sqrt(3.0)).epsilon(1e-8));
}

TEST_CASE("rotation from 6d matches a hand Gram-Schmidt") {
  Tape t;
  const Matrix x = mat({{1.0, 0.2, -0.3, 0.4, 1.1, 0.5}});
  const Matrix out = ad::rotation_from_6d(t.constant(x)).value();
  const Vec3 a(1.0, 0.2, -0.3), b(0.4, 1.1, 0.5);
  const Vec3 e1 = a.normalized();
  const Vec3 e2 = (b - e1.dot(b) * e1).normalized();
  const Vec3 e3 = e1.cross(e2);
  Mat3 expect;
  expect << e1, e2, e3;
  Mat3 got;
  for (int i = 0; i < 9; ++i) got(i / 3, i % 3) = out(0, i);
  CHECK((got - expect).norm() < 1e-14);
  CHECK((got.transpose() * got - Mat3::Identity()).norm() < 1e-9);
}

TEST_CASE("convolution against a direct loop") {
  std::mt19937_64 rng(4);
  ad::ConvSpec spec;
  spec.height = 4;
  spec.width = 4;
  spec.in_channels = 1;
  spec.out_channels = 2;
  const Matrix x = random_matrix(16, 1, rng);
  const Matrix w = random_matrix(9, 2, rng);
  const Matrix b = random_matrix(1, 2, rng);
  Tape t;
  const Matrix y = ad::conv2d(t.constant(x), t.constant(w), t.constant(b), spec).value();
  CHECK(y.rows() == 4);
  for (int oy = 0; oy < 2; ++oy) {
    for (int ox = 0; ox < 2; ++ox) {
      for (int o = 0; o < 2; ++o) {
        double s = b(0, o);
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
            if (iy < 0 || ix < 0 || iy >= 4 || ix >= 4) continue;
            s += x(iy * 4 + ix, 0) * w(ky * 3 + kx, o);
          }
        }
        CHECK(y(oy * 2 + ox, o) == doctest::Approx(s).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient and no decay leaves parameters") {
    ad::ParameterSet ps;
    ps.add("w", mat({{1.0, -2.0}}));
    ad::Adam opt({1e-3, 0.9, 0.999, 1e-8, 0.0, {}, 0.1});
    ps.get("w").grad = Matrix::Zero(1, 2);
    opt.step(ps, 1e-3);
    CHECK(ps.get("w").value == mat({{1.0, -2.0}}));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    ad::ParameterSet ps;
    ps.add("w", mat({{0.5, 0.5}}));
    ad::Adam opt({1e-2, 0.9, 0.999, 1e-8, 0.0, {}, 0.1});
    ps.get("w").grad = mat({{3.0, -0.02}});
    opt.step(ps, 1e-2);
    CHECK(ps.get("w").value(0, 0) == doctest::Approx(0.49).epsilon(1e-8));
    CHECK(ps.get("w").value(0, 1) == doctest::Approx(0.51).epsilon(1e-8));
  }
  SUBCASE("quadratic bowl against a reference trace") {
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 1e-2;
    ad::ParameterSet ps;
    ps.add("w", mat({{1.0, -0.5, 2.0}}));
    ad::Adam opt({lr, b1, b2, eps, wd, {}, 0.1});
    double w[3] = {1.0, -0.5, 2.0}, m[3] = {}, v[3] = {};
    const double curv[3] = {1.0, 4.0, 0.25};
    for (int step = 1; step <= 3; ++step) {
      ad::Parameter& p = ps.get("w");
      p.grad = Matrix(1, 3);
      for (int i = 0; i < 3; ++i) p.grad(0, i) = curv[i] * p.value(0, i);
      opt.step(ps, lr);
      for (int i = 0; i < 3; ++i) {
        const double g = curv[i] * w[i];
        m[i] = b1 * m[i] + (1 - b1) * g;
        v[i] = b2 * v[i] + (1 - b2) * g * g;
        const double mh = m[i] / (1 - std::pow(b1, step));
        const double vh = v[i] / (1 - std::pow(b2, step));
        w[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * w[i]);
      }
      for (int i = 0; i < 3; ++i) CHECK(std::abs(ps.get("w").value(0, i) - w[i]) < 1e-12);
    }
  }
  SUBCASE("schedule and non-finite gradients") {
    ad::AdamConfig cfg;
    cfg.decay_epochs = {30};
    CHECK(ad::scheduled_lr(cfg, 29) == cfg.lr);
    CHECK(ad::scheduled_lr(cfg, 30) == doctest::Approx(cfg.lr * 0.1).epsilon(1e-15));
    ad::ParameterSet ps;
    ps.add("layer.bad", mat({{1.0}}));
    ps.get("layer.bad").grad = mat({{std::nan("")}});
    ad::Adam opt;
    try {
      opt.step(ps, 1e-3);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("layer.bad") != std::string::npos);
    }
  }
}

TEST_CASE("parameter names are unique") {
  ad::ParameterSet ps;
  ps.add("a.weight", Matrix::Zero(1, 1));
  CHECK_THROWS_AS(ps.add("a.weight", Matrix::Zero(1, 1)), ValidationError);
}
