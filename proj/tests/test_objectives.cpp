// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/objectives.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "topksim/data.hpp"
#include "topksim/errors.hpp"
#include "topksim/rng.hpp"

using topksim::AnalyticConstants;
using topksim::CounterRng;
using topksim::CsrMatrix;
using topksim::DenseVector;
using topksim::estimate_second_moment;
using topksim::Index;
using topksim::InvalidParameterError;
using topksim::LeastSquaresProblem;
using topksim::LogisticProblem;
using topksim::RowMajorMatrix;
using topksim::SmoothNonconvexProblem;
using topksim::testing::fd_gradient;

namespace {

DenseVector random_vec(Index n, CounterRng& rng) {
  DenseVector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

LogisticProblem small_logistic(Index m, Index n, double l2,
                               std::uint64_t seed) {
  CounterRng rng(seed, 0, 99, 0);
  CsrMatrix X;
  X.rows = m;
  X.cols = n;
  X.row_ptr.push_back(0);
  std::vector<double> labels;
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (rng.uniform() < 0.6) {  // sparse-ish rows
        X.col_idx.push_back(j);
        X.values.push_back(rng.normal());
      }
    }
    X.row_ptr.push_back(static_cast<Index>(X.col_idx.size()));
    labels.push_back(rng.uniform() < 0.5 ? -1.0 : 1.0);
  }
  return LogisticProblem(std::move(X), std::move(labels), l2);
}

}  // namespace

TEST_CASE("least squares loss follows the mean normalization") {
  RowMajorMatrix A = RowMajorMatrix::Identity(2, 2);
  const LeastSquaresProblem zero_target(A, DenseVector::Zero(2), 0.0);
  CHECK(zero_target.loss(DenseVector::Zero(2)) == 0.0);

  DenseVector b(2);
  b << 2.0, 0.0;
  const LeastSquaresProblem p(A, b, 0.0);
  // (1 / (2 m)) |A 0 - b|^2 = 4 / 4 = 1.
  CHECK(p.loss(DenseVector::Zero(2)) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("least squares minibatch gradient is the batch mean") {
  RowMajorMatrix A = RowMajorMatrix::Identity(2, 2);
  DenseVector b(2);
  b << 2.0, 0.0;
  const LeastSquaresProblem p(A, b, 0.0);
  const std::vector<Index> batch = {0};
  const DenseVector g = p.grad_minibatch(DenseVector::Zero(2), batch);

  // Oracle: central finite differences of the batch loss
  // (1 / (2 |B|)) sum_{i in B} (a_i . x - b_i)^2.
  const auto batch_loss = [&](const DenseVector& x) {
    double acc = 0.0;
    for (Index i : batch) {
      const double r = A.row(i).dot(x) - b[i];
      acc += r * r;
    }
    return acc / (2.0 * static_cast<double>(batch.size()));
  };
  const DenseVector fd = fd_gradient(batch_loss, DenseVector::Zero(2));
  CHECK(g[0] == doctest::Approx(-2.0).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-14));
  CHECK((g - fd).norm() < 1e-8);
}

TEST_CASE("minibatch gradients are unbiased (exhaustive small-m check)") {
  CounterRng rng(5, 0, 98, 0);
  const Index m = 8, n = 5;
  RowMajorMatrix A(m, n);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) A(i, j) = rng.normal();
  DenseVector b = random_vec(m, rng);
  const LeastSquaresProblem p(A, b, 0.3);
  const DenseVector x = random_vec(n, rng);
  const DenseVector full = p.gradient(x);

  // All singleton batches.
  DenseVector mean1 = DenseVector::Zero(n);
  for (Index i = 0; i < m; ++i) {
    const std::vector<Index> batch = {i};
    mean1 += p.grad_minibatch(x, batch);
  }
  mean1 /= static_cast<double>(m);
  CHECK((mean1 - full).norm() < 1e-12 * std::max(1.0, full.norm()));

  // All size-3 batches (C(8,3) = 56).
  DenseVector mean3 = DenseVector::Zero(n);
  int count = 0;
  for (Index i = 0; i < m; ++i)
    for (Index j = i + 1; j < m; ++j)
      for (Index k = j + 1; k < m; ++k) {
        const std::vector<Index> batch = {i, j, k};
        mean3 += p.grad_minibatch(x, batch);
        ++count;
      }
  mean3 /= static_cast<double>(count);
  CHECK((mean3 - full).norm() < 1e-12 * std::max(1.0, full.norm()));

  // The full batch reproduces gradient() itself.
  std::vector<Index> all(m);
  for (Index i = 0; i < m; ++i) all[static_cast<std::size_t>(i)] = i;
  CHECK((p.grad_minibatch(x, all) - full).norm() <
        1e-12 * std::max(1.0, full.norm()));
}

TEST_CASE("least squares analytic constants from the Gram spectrum") {
  // Design scaled so A^T A / m is exactly the identity: c = L = 1.
  const Index n = 4;
  RowMajorMatrix A = std::sqrt(4.0) * RowMajorMatrix::Identity(n, n);
  const LeastSquaresProblem p(A, DenseVector::Zero(n), 0.0);
  CHECK(p.strong_convexity() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.smoothness() == doctest::Approx(1.0).epsilon(1e-12));

  // Plain identity design with m = 2: Gram = I/2, so c = L = 1/2.
  RowMajorMatrix I2 = RowMajorMatrix::Identity(2, 2);
  const LeastSquaresProblem q(I2, DenseVector::Zero(2), 0.0);
  CHECK(q.strong_convexity() == doctest::Approx(0.5).epsilon(1e-12));

  // The ridge shifts both constants by exactly l2.
  const LeastSquaresProblem r(I2, DenseVector::Zero(2), 0.25);
  CHECK(r.strong_convexity() ==
        doctest::Approx(q.strong_convexity() + 0.25).epsilon(1e-12));
  CHECK(r.smoothness() ==
        doctest::Approx(q.smoothness() + 0.25).epsilon(1e-12));
  const AnalyticConstants ac = topksim::analytic_constants(r);
  REQUIRE(ac.c.has_value());
  REQUIRE(ac.L.has_value());
  CHECK(*ac.c == r.strong_convexity());
}

TEST_CASE("gradients match finite differences for every problem kind") {
  CounterRng rng(77, 0, 97, 0);

  // Least squares.
  {
    auto synth = topksim::synth_regression(30, 8, 0.5, 1234, 0.2);
    const auto& p = *synth.problem;
    for (int rep = 0; rep < 50; ++rep) {
      const DenseVector x = random_vec(8, rng);
      const DenseVector g = p.gradient(x);
      const DenseVector fd =
          fd_gradient([&](const DenseVector& v) { return p.loss(v); }, x);
      CHECK((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));
    }
  }
  // Logistic.
  {
    const LogisticProblem p = small_logistic(25, 6, 0.1, 42);
    for (int rep = 0; rep < 50; ++rep) {
      const DenseVector x = random_vec(6, rng);
      const DenseVector g = p.gradient(x);
      const DenseVector fd =
          fd_gradient([&](const DenseVector& v) { return p.loss(v); }, x);
      CHECK((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));
    }
  }
  // Smooth non-convex net.
  {
    const auto p = SmoothNonconvexProblem::synth(20, 6, 4, 7);
    for (int rep = 0; rep < 50; ++rep) {
      const DenseVector x = random_vec(p.dim(), rng);
      const DenseVector g = p.gradient(x);
      const DenseVector fd =
          fd_gradient([&](const DenseVector& v) { return p.loss(v); }, x);
      CHECK((g - fd).norm() <= 1e-5 * std::max(1.0, g.norm()));
    }
  }
}

TEST_CASE("curvature witnesses hold on random pairs") {
  CounterRng rng(13, 0, 96, 0);
  auto synth = topksim::synth_regression(40, 10, 1.0, 99, 0.05);
  const auto& ls = *synth.problem;
  const double c = ls.strong_convexity();
  const double L = ls.smoothness();
  for (int rep = 0; rep < 100; ++rep) {
    const DenseVector x = random_vec(10, rng);
    const DenseVector y = random_vec(10, rng);
    const DenseVector dg = ls.gradient(x) - ls.gradient(y);
    const double d2 = (x - y).squaredNorm();
    CHECK((x - y).dot(dg) >= c * d2 - 1e-10 * std::max(1.0, d2));
    CHECK(dg.norm() <= L * (x - y).norm() + 1e-10);
  }

  const LogisticProblem lg = small_logistic(30, 7, 0.2, 11);
  const double Llg = lg.smoothness();
  for (int rep = 0; rep < 100; ++rep) {
    const DenseVector x = random_vec(7, rng);
    const DenseVector y = random_vec(7, rng);
    const DenseVector dg = lg.gradient(x) - lg.gradient(y);
    CHECK(dg.norm() <= Llg * (x - y).norm() + 1e-10);
    // Strong convexity from the ridge alone.
    CHECK((x - y).dot(dg) >= 0.2 * (x - y).squaredNorm() - 1e-10);
  }
}

TEST_CASE("logistic smoothness matches a dense eigensolver") {
  const LogisticProblem p = small_logistic(20, 5, 0.1, 3);
  // Densify X and take the top eigenvalue of X^T X directly.
  const CsrMatrix& X = p.design();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(X.rows, X.cols);
  for (Index r = 0; r < X.rows; ++r)
    for (Index j = X.row_ptr[r]; j < X.row_ptr[r + 1]; ++j)
      D(r, X.col_idx[j]) = X.values[j];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D.transpose() * D,
                                                    Eigen::EigenvaluesOnly);
  const double expect =
      0.1 + es.eigenvalues().maxCoeff() / (4.0 * static_cast<double>(X.rows));
  CHECK(p.smoothness() == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("logistic optimum reaches the gradient tolerance") {
  const LogisticProblem p = small_logistic(40, 6, 0.15, 21);
  const DenseVector& x = p.optimum(1e-10);
  CHECK(p.gradient(x).norm() <= 1e-10);
}

TEST_CASE("logistic rejects bad labels and zero regularization") {
  CsrMatrix X;
  X.rows = 1;
  X.cols = 1;
  X.row_ptr = {0, 1};
  X.col_idx = {0};
  X.values = {1.0};
  CHECK_THROWS_AS(LogisticProblem(X, {2.0}, 0.1), InvalidParameterError);
  CHECK_THROWS_AS(LogisticProblem(X, {1.0}, 0.0), InvalidParameterError);
}

TEST_CASE("nonconvex net: loss nonnegative, deterministic synthesis") {
  const auto p = SmoothNonconvexProblem::synth(32, 16, 8, 5);
  CHECK(p.dim() == 16 * 8 + 2 * 8 + 1);  // 145
  CounterRng rng(1, 0, 95, 0);
  const DenseVector x = random_vec(p.dim(), rng);
  CHECK(p.loss(x) >= 0.0);

  const auto q = SmoothNonconvexProblem::synth(32, 16, 8, 5);
  CHECK(p.loss(x) == q.loss(x));  // bitwise-identical instance
  const auto r = SmoothNonconvexProblem::synth(32, 16, 8, 6);
  CHECK(p.loss(x) != r.loss(x));
}

TEST_CASE("nonconvex constants report an estimated L and no c") {
  const auto p = SmoothNonconvexProblem::synth(16, 4, 3, 9);
  const AnalyticConstants ac = p.constants();
  CHECK_FALSE(ac.c.has_value());
  REQUIRE(ac.L.has_value());
  CHECK(*ac.L > 0.0);
  CHECK(ac.source.find("estimated") != std::string::npos);

  // The estimate upper-bounds ratios drawn with the estimation protocol and
  // stays within modest slack on fresh pairs.
  const double L = p.smoothness_estimate(100, 1.0, 0x6d6c70ull);
  CounterRng rng(2, 0, 94, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const DenseVector a = random_vec(p.dim(), rng);
    const DenseVector b = random_vec(p.dim(), rng);
    const double dist = (a - b).norm();
    const double ratio = (p.gradient(a) - p.gradient(b)).norm() / dist;
    CHECK(ratio <= 1.5 * std::max(L, *ac.L));
  }
}

TEST_CASE("second moment: full batch short-circuits to the oracle") {
  auto synth = topksim::synth_regression(25, 6, 0.7, 17, 0.1);
  const auto& p = *synth.problem;
  CounterRng rng(3, 0, 93, 0);
  std::vector<DenseVector> xs = {random_vec(6, rng), random_vec(6, rng)};
  const auto est = estimate_second_moment(p, xs, 4, p.num_samples(), 1, 123);
  double expect = 0.0;
  for (const auto& x : xs) expect = std::max(expect, p.gradient(x).squaredNorm());
  CHECK(est.m_squared == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("second moment vanishes at the noiseless optimum") {
  auto synth = topksim::synth_regression(30, 8, 0.0, 29, 0.0);
  const auto& p = *synth.problem;
  const auto est = estimate_second_moment(p, {synth.x_true}, 2, 4, 8, 7);
  CHECK(est.m_squared <= 1e-16);
}

TEST_CASE("second moment decreases with P toward the full gradient norm") {
  auto synth = topksim::synth_regression(128, 6, 1.0, 31, 0.0);
  const auto& p = *synth.problem;
  CounterRng rng(8, 0, 92, 0);
  const DenseVector x = random_vec(6, rng);
  const double grad_sq = p.gradient(x).squaredNorm();
  const int trials = 400;
  const auto m1 = estimate_second_moment(p, {x}, 1, 8, trials, 55);
  const auto m4 = estimate_second_moment(p, {x}, 4, 8, trials, 55);
  const auto m16 = estimate_second_moment(p, {x}, 16, 8, trials, 55);
  CHECK(m1.m_squared > m4.m_squared);
  CHECK(m4.m_squared > m16.m_squared);
  CHECK(m16.m_squared >= grad_sq * 0.8);
  // Excess above |grad|^2 shrinks like 1/P (slack for sampling noise).
  const double ex1 = m1.m_squared - grad_sq;
  const double ex16 = m16.m_squared - grad_sq;
  CHECK(ex16 < ex1 / 8.0);
}

TEST_CASE("second moment estimate dominates the squared mean (Jensen)") {
  auto synth = topksim::synth_regression(64, 5, 1.0, 41, 0.0);
  const auto& p = *synth.problem;
  CounterRng rng(9, 0, 91, 0);
  const DenseVector x = random_vec(5, rng);
  const int P = 3, trials = 50;
  const Index batch_size = 4;
  const std::uint64_t seed = 321;
  const auto est = estimate_second_moment(p, {x}, P, batch_size, trials, seed);

  // Reconstruct the same draws through the documented stream layout.
  DenseVector mean_vec = DenseVector::Zero(5);
  std::vector<Index> batch(static_cast<std::size_t>(batch_size));
  for (int trial = 0; trial < trials; ++trial) {
    DenseVector avg = DenseVector::Zero(5);
    for (int node = 0; node < P; ++node) {
      CounterRng draw(seed, static_cast<std::uint32_t>(node),
                      topksim::stream_tag::kSecondMoment,
                      static_cast<std::uint64_t>(trial));
      for (auto& idx : batch) {
        idx = static_cast<Index>(draw.uniform_below(
            static_cast<std::uint64_t>(p.num_samples())));
      }
      avg += p.grad_minibatch(x, batch);
    }
    avg /= static_cast<double>(P);
    mean_vec += avg;
  }
  mean_vec /= static_cast<double>(trials);
  CHECK(est.m_squared >= mean_vec.squaredNorm() - 1e-12);
}
