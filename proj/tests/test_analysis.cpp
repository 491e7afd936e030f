// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/analysis.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "topksim/errors.hpp"
#include "topksim/rng.hpp"

using topksim::CounterRng;
using topksim::DCheck;
using topksim::DenseVector;
using topksim::Index;
using topksim::InvalidParameterError;
using topksim::LearningRateSchedule;
using topksim::NonconvexBoundInputs;
using topksim::XiMeasurement;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

DenseVector random_vector(Index n, CounterRng& rng, double scale = 1.0) {
  DenseVector v(n);
  for (Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

LearningRateSchedule constant_schedule(double alpha0) {
  LearningRateSchedule s;
  s.kind = LearningRateSchedule::Kind::kConstant;
  s.alpha0 = alpha0;
  return s;
}

LearningRateSchedule power_schedule(double alpha0, double theta) {
  LearningRateSchedule s;
  s.kind = LearningRateSchedule::Kind::kPowerLaw;
  s.alpha0 = alpha0;
  s.theta = theta;
  return s;
}

}  // namespace

TEST_CASE("piecewise_log: branches, continuity, slope") {
  CHECK(topksim::piecewise_log(1.0) == 1.0);  // both branches agree
  CHECK(topksim::piecewise_log(0.5) == 0.5);
  CHECK(topksim::piecewise_log(-2.0) == -2.0);
  CHECK(topksim::piecewise_log(std::exp(1.0)) == doctest::Approx(2.0));
  // Linear growth turns logarithmic past the splice.
  CHECK(topksim::piecewise_log(100.0) == doctest::Approx(1.0 + std::log(100.0)));
  // C1 at the splice: difference quotients from both sides approach 1.
  const double h = 1e-7;
  const double left = (topksim::piecewise_log(1.0) - topksim::piecewise_log(1.0 - h)) / h;
  const double right = (topksim::piecewise_log(1.0 + h) - topksim::piecewise_log(1.0)) / h;
  CHECK(left == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(right == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(topksim::piecewise_log(kInf), InvalidParameterError);
}

TEST_CASE("measure_xi: tie-collapse instance gives exactly one") {
  DenseVector a0(2), a1(2), g(2);
  a0 << -1001.0, 500.0;
  a1 << 1001.0, 500.0;
  g << 0.0, 500.0;
  const XiMeasurement m = topksim::measure_xi({a0, a1}, g, 1, 2);
  CHECK(m.lhs_norm == 500.0);
  CHECK(m.grad_norm == 500.0);
  CHECK(m.xi == 1.0);
}

TEST_CASE("measure_xi: degenerate ratios and trivial cases") {
  CounterRng rng(7, 0, 1, 0);
  const DenseVector acc = random_vector(6, rng);
  const DenseVector grad = random_vector(6, rng);

  // P = 1: averaging over one node commutes with selection, bitwise.
  for (Index k = 1; k <= 6; ++k) {
    CHECK(topksim::measure_xi({acc}, grad, k, 1).xi == 0.0);
  }

  // Identical accumulators across nodes: the average is the common value.
  const XiMeasurement same = topksim::measure_xi({acc, acc, acc}, grad, 2, 3);
  CHECK(same.lhs_norm == 0.0);
  CHECK(same.xi == 0.0);

  // K = dim: dense selection collapses nothing.
  DenseVector other = random_vector(6, rng);
  CHECK(topksim::measure_xi({acc, other}, grad, 6, 2).lhs_norm == 0.0);

  // 0/0 reports zero; positive/0 reports infinity, not an exception.
  const DenseVector zero = DenseVector::Zero(2);
  DenseVector a0(2), a1(2);
  a0 << 1.0, 0.0;
  a1 << 0.0, 1.0;
  CHECK(topksim::measure_xi({acc, acc}, DenseVector::Zero(6), 3, 2).xi == 0.0);
  const XiMeasurement unbounded = topksim::measure_xi({a0, a1}, zero, 1, 2);
  CHECK(unbounded.lhs_norm > 0.0);
  CHECK(unbounded.xi == kInf);

  CHECK_THROWS_AS(topksim::measure_xi({acc}, grad, 3, 2),
                  InvalidParameterError);
  CHECK_THROWS_AS(topksim::measure_xi({acc, random_vector(5, rng)}, grad, 3, 2),
                  InvalidParameterError);
}

TEST_CASE("measure_xi: matches an exhaustive scalar recomputation") {
  // Small dimensions, every K, P in {2, 3}: recompute both sides of the
  // collapse ratio with plain scalar loops and compare exactly.
  CounterRng rng(2025, 0, 2, 0);
  for (Index n : {2, 4, 8}) {
    for (int P : {2, 3}) {
      std::vector<DenseVector> accs;
      for (int p = 0; p < P; ++p) accs.push_back(random_vector(n, rng));
      const DenseVector grad = random_vector(n, rng, 0.1);
      for (Index K = 1; K <= n; ++K) {
        const XiMeasurement fast = topksim::measure_xi(accs, grad, K, P);

        DenseVector avg = DenseVector::Zero(n);
        for (Index i = 0; i < n; ++i) {
          double s = 0.0;
          for (int p = 0; p < P; ++p) s += accs[static_cast<std::size_t>(p)][i];
          avg[i] = s * (1.0 / static_cast<double>(P));
        }
        DenseVector mean_topk = DenseVector::Zero(n);
        for (Index i = 0; i < n; ++i) {
          double s = 0.0;
          for (int p = 0; p < P; ++p) {
            s += topksim::top_k(accs[static_cast<std::size_t>(p)], K)
                     .densify()[i];
          }
          mean_topk[i] = s * (1.0 / static_cast<double>(P));
        }
        const double lhs =
            (topksim::top_k(avg, K).densify() - mean_topk).norm();
        CHECK(fast.lhs_norm == lhs);
        CHECK(fast.grad_norm == grad.norm());
      }
    }
  }
}

TEST_CASE("convex_constants: closed forms and the C-prime identity") {
  // n = 4, K = 3, xi = 0: gamma = 1/2, C = 3/2, C' = 2 in exact arithmetic.
  const auto cc = topksim::convex_constants(4, 3, 0.0, 1, 0.1, 1.0, 1.0, 1.0);
  CHECK(cc.gamma == 0.5);
  CHECK(cc.C == 1.5);
  CHECK(cc.C_prime == 2.0);
  CHECK(cc.C_prime == cc.C + cc.gamma);  // xi = 0 form of the identity

  // Dense limit: gamma = 0, C = xi/P, C' = 2 xi/P.
  const auto dense = topksim::convex_constants(16, 16, 0.8, 4, 0.1, 1.0, 1.0, 1.0);
  CHECK(dense.gamma == 0.0);
  CHECK(dense.C == 0.2);
  CHECK(dense.C_prime == 0.4);

  // Identity C' = C + (gamma + xi/P) over a grid.
  for (Index n : {8, 64, 1024}) {
    for (Index K : {Index{1}, n / 4, n / 2, n - 1, n}) {
      for (double xi : {0.0, 0.3, 2.0}) {
        for (int P : {1, 2, 8}) {
          const auto c = topksim::convex_constants(n, K, xi, P, 0.05, 0.7, 2.0, 0.01);
          const double base = c.gamma + xi / P;
          CHECK(c.C_prime == doctest::Approx(c.C + base).epsilon(1e-12));
          CHECK(c.C_prime >= 0.0);
        }
      }
    }
  }

  // H = 2 sqrt(eps) / (2 a c eps - a^2 M^2) and its feasibility edge.
  const auto ok = topksim::convex_constants(4, 2, 0.0, 1, 0.5, 1.0, 1.0, 1.0);
  CHECK(ok.feasible);
  CHECK(ok.H == doctest::Approx(2.0 / (2.0 * 0.5 - 0.25)).epsilon(1e-15));
  const auto bad = topksim::convex_constants(4, 2, 0.0, 1, 2.0, 1.0, 1.0, 1.0);
  CHECK_FALSE(bad.feasible);
  CHECK_FALSE(bad.reason.empty());

  // Dampening: C' is non-increasing in P at fixed n, K, xi.
  double prev = kInf;
  for (int P = 1; P <= 16; ++P) {
    const double cp =
        topksim::convex_constants(64, 16, 1.0, P, 0.1, 1.0, 1.0, 1.0).C_prime;
    CHECK(cp <= prev);
    prev = cp;
  }

  // Slowdown scaling: C' * K/n stays bounded as K/n shrinks (xi = 0 worst
  // case approaches 4 from below).
  for (Index n : {64, 256, 4096}) {
    for (Index K = 1; K <= n; K *= 4) {
      const auto c = topksim::convex_constants(n, K, 0.0, 1, 0.1, 1.0, 1.0, 1.0);
      CHECK(c.C_prime * static_cast<double>(K) / static_cast<double>(n) <=
            4.0 + 1e-12);
    }
  }
}

TEST_CASE("convex_lr_window: both branches and the feasibility threshold") {
  // c = 1, eps = 1, M = 1, C' = 1/2: min{2, 1} = 1.
  const auto w = topksim::convex_lr_window(1.0, 1.0, 1.0, 0.5);
  CHECK(w.uncompressed_term == 2.0);
  CHECK(w.compressed_term == 1.0);
  CHECK(w.alpha_max == 1.0);
  CHECK(w.feasible);

  // C' = 0: the two branches coincide.
  const auto dense = topksim::convex_lr_window(0.7, 0.3, 2.0, 0.0);
  CHECK(dense.uncompressed_term == dense.compressed_term);
  CHECK(dense.alpha_max == dense.uncompressed_term);
  CHECK(dense.feasible);

  // eps exactly (M C'/c)^2 sits on the boundary: window closed.
  const double eps_boundary = (2.0 * 0.5 / 1.0) * (2.0 * 0.5 / 1.0);
  const auto edge = topksim::convex_lr_window(1.0, eps_boundary, 2.0, 0.5);
  CHECK(edge.compressed_term == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_FALSE(edge.feasible);
  // Just above the threshold the window opens.
  CHECK(topksim::convex_lr_window(1.0, eps_boundary * 1.01, 2.0, 0.5).feasible);
}

TEST_CASE("convex_failure_bound: scaling, branches, vacuous marker") {
  // Linear branch: dist0^2 <= eps/e makes the plog argument <= 1.
  const double eps = 0.1;
  const double small_dist = eps / std::exp(1.0) * 0.5;
  const auto lin = topksim::convex_failure_bound(0.05, 1.0, eps, 1.0, 0.0,
                                                 small_dist, 100);
  CHECK(lin.feasible);
  const double denom = 2 * 0.05 * 1.0 * eps - 0.05 * 0.05;
  CHECK(lin.denominator == doctest::Approx(denom).epsilon(1e-15));
  CHECK(lin.raw == doctest::Approx(eps / (denom * 100) *
                                   (std::exp(1.0) * small_dist / eps))
                       .epsilon(1e-12));

  // Doubling T halves the bound.
  const auto t1 = topksim::convex_failure_bound(0.05, 1.0, eps, 1.0, 0.2, 5.0, 1000);
  const auto t2 = topksim::convex_failure_bound(0.05, 1.0, eps, 1.0, 0.2, 5.0, 2000);
  CHECK(t1.feasible);
  CHECK(t2.raw == doctest::Approx(t1.raw / 2.0).epsilon(1e-12));

  // A tiny horizon makes the bound vacuous: raw reported verbatim, clamped at 1.
  const auto vac = topksim::convex_failure_bound(0.05, 1.0, eps, 1.0, 0.2, 5.0, 1);
  CHECK(vac.vacuous);
  CHECK(vac.raw > 1.0);
  CHECK(vac.clamped == 1.0);

  // Compression slowdown can close the window entirely.
  const auto infeasible =
      topksim::convex_failure_bound(0.05, 1.0, eps, 1.0, 50.0, 5.0, 1000);
  CHECK_FALSE(infeasible.feasible);
  CHECK(infeasible.denominator <= 0.0);
  CHECK(infeasible.vacuous);
}

TEST_CASE("check_D: geometric closed form on constant schedules") {
  // q = 2 gamma^2 = 1/2: sup = alpha * q / (1 - q) = alpha.
  const double gamma = 0.5;  // 2 * 0.25 = 0.5
  const DCheck d = topksim::check_D(constant_schedule(0.07), gamma, 100000);
  CHECK(d.bounded);
  const double q = 2.0 * gamma * gamma;
  CHECK(d.sup_partial ==
        doctest::Approx(0.07 * q / (1.0 - q)).epsilon(1e-12));

  // Other contraction levels against the same closed form.
  for (double g : {0.1, 0.3, 0.6, 0.7}) {
    const double qq = 2.0 * g * g;
    const DCheck dd = topksim::check_D(constant_schedule(0.02), g, 50000);
    CHECK(dd.bounded);
    CHECK(dd.sup_partial ==
          doctest::Approx(0.02 * qq / (1.0 - qq)).epsilon(1e-12));
  }
}

TEST_CASE("check_D: recursion matches a brute-force double loop") {
  const auto schedule = power_schedule(0.1, 0.7);
  const double gamma = std::sqrt(0.15);  // q = 0.3
  const double q = 2.0 * gamma * gamma;
  const std::int64_t t_max = 300;

  double brute_sup = 0.0;
  auto alpha_at = [&](std::int64_t t) {
    return t >= 1 ? schedule.alpha(t) : schedule.alpha(1);
  };
  for (std::int64_t t = 1; t <= t_max; ++t) {
    double s = 0.0;
    for (std::int64_t k = 1; k <= t; ++k) {
      s += std::pow(q, static_cast<double>(k)) * alpha_at(t - k) * alpha_at(t - k);
    }
    brute_sup = std::max(brute_sup, s / schedule.alpha(t));
  }
  const DCheck d = topksim::check_D(schedule, gamma, t_max);
  CHECK(d.sup_partial == doctest::Approx(brute_sup).epsilon(1e-12));
}

TEST_CASE("check_D: boundary behavior and the frozen power-law fixture") {
  // gamma = 0: empty sum.
  const DCheck zero = topksim::check_D(constant_schedule(0.1), 0.0, 1000);
  CHECK(zero.sup_partial == 0.0);
  CHECK(zero.bounded);

  // 2 gamma^2 >= 1: declared unbounded without iteration.
  const DCheck unbounded =
      topksim::check_D(constant_schedule(0.1), std::sqrt(0.6), 1000000);
  CHECK_FALSE(unbounded.bounded);
  CHECK(unbounded.sup_partial == kInf);
  CHECK(unbounded.t_evaluated == 0);

  // Power law theta = 1/2 at q = 1/2: the supremum is attained at t = 3 and
  // equals sqrt(3)/16 for alpha0 = 0.1 (hand derivation:
  // [q a2^2 + q^2 a1^2 + q^3 a0^2] / a3 = 0.00625 sqrt(3) / 0.1).
  const DCheck fx = topksim::check_D(power_schedule(0.1, 0.5), 0.5, 100000);
  CHECK(fx.bounded);
  CHECK(fx.sup_partial == doctest::Approx(std::sqrt(3.0) / 16.0).epsilon(1e-12));

  CHECK_THROWS_AS(topksim::check_D(constant_schedule(0.1), 0.5, 0),
                  InvalidParameterError);
}

TEST_CASE("nonconvex_bound: dense-limit forms and monotonicity") {
  NonconvexBoundInputs in;
  in.f0_minus_fstar = 2.0;
  in.L = 1.5;
  in.M = 3.0;
  in.xi = 0.0;
  in.P = 1;
  in.gamma = 0.0;
  in.D = 0.0;
  in.schedule = constant_schedule(0.01);
  in.T = 1000;

  // D = 0 with constant alpha: 4 delta / (T alpha) + 2 L M^2 alpha.
  const auto b = topksim::nonconvex_bound(in);
  REQUIRE(b.applicable);
  CHECK(b.value == doctest::Approx(4.0 * 2.0 / (1000 * 0.01) +
                                   2.0 * 1.5 * 9.0 * 0.01)
                       .epsilon(1e-14));
  CHECK(b.sum_alpha == doctest::Approx(10.0).epsilon(1e-15));

  // Doubling T with constant alpha strictly shrinks the first term only.
  in.T = 2000;
  const auto b2 = topksim::nonconvex_bound(in);
  CHECK(b2.value < b.value);
  CHECK(b2.value == doctest::Approx(4.0 * 2.0 / (2000 * 0.01) +
                                    2.0 * 1.5 * 9.0 * 0.01)
                        .epsilon(1e-14));

  // gamma = 0 with xi > 0 has no finite factor: not applicable.
  in.xi = 0.5;
  const auto na = topksim::nonconvex_bound(in);
  CHECK_FALSE(na.applicable);
  CHECK_FALSE(na.reason.empty());

  // Power-law sums agree with explicit accumulation.
  NonconvexBoundInputs pw = in;
  pw.xi = 0.2;
  pw.gamma = 0.5;
  pw.D = 0.05;
  pw.P = 4;
  pw.schedule = power_schedule(0.1, 0.5);
  pw.T = 500;
  const auto pb = topksim::nonconvex_bound(pw);
  REQUIRE(pb.applicable);
  double sa = 0.0, sa2 = 0.0;
  for (std::int64_t t = 1; t <= 500; ++t) {
    const double a = pw.schedule.alpha(t);
    sa += a;
    sa2 += a * a;
  }
  const double fac = 1.0 + 0.2 / (4 * 0.5);
  const double coeff = 2 * pw.L * 9.0 + 4 * pw.L * pw.L * 9.0 * fac * fac * 0.05;
  CHECK(pb.value ==
        doctest::Approx(4 * 2.0 / sa + coeff * sa2 / sa).epsilon(1e-12));
}

TEST_CASE("fixed_lr_nonconvex: scaling and the five-root identity") {
  // Quadrupling T halves alpha.
  const double a1 = topksim::fixed_lr_nonconvex(2.0, 1.5, 3.0, 0.2, 4, 0.5, 0.05, 1000);
  const double a4 = topksim::fixed_lr_nonconvex(2.0, 1.5, 3.0, 0.2, 4, 0.5, 0.05, 4000);
  CHECK(a4 == doctest::Approx(a1 / 2.0).epsilon(1e-14));

  // xi = 0, D = 0 closed form.
  const double a0 = topksim::fixed_lr_nonconvex(2.0, 1.5, 3.0, 0.0, 1, 0.0, 0.0, 1000);
  CHECK(a0 == doctest::Approx(std::sqrt(2.0 / (2.0 * 1000 * 1.5 * 9.0))).epsilon(1e-14));

  // Feeding the rate back into the bound yields exactly
  // 5 sqrt(delta * coeff / T), across a parameter grid.
  for (double delta : {0.5, 2.0, 37.0}) {
    for (double L : {0.3, 1.5}) {
      for (double M : {1.0, 4.0}) {
        for (double D : {0.0, 0.2, 1.3}) {
          const double xi = 0.4, gamma = 0.6;
          const int P = 4;
          const std::int64_t T = 2500;
          const double alpha =
              topksim::fixed_lr_nonconvex(delta, L, M, xi, P, gamma, D, T);

          NonconvexBoundInputs in;
          in.f0_minus_fstar = delta;
          in.L = L;
          in.M = M;
          in.xi = xi;
          in.P = P;
          in.gamma = gamma;
          in.D = D;
          in.schedule = constant_schedule(alpha);
          in.schedule.kind = LearningRateSchedule::Kind::kFixedNonconvex;
          in.T = T;
          const auto b = topksim::nonconvex_bound(in);
          REQUIRE(b.applicable);

          const double fac = 1.0 + xi / (P * gamma);
          const double coeff = 2 * L * M * M + 4 * L * L * M * M * fac * fac * D;
          const double expect = 5.0 * std::sqrt(delta * coeff / static_cast<double>(T));
          CHECK(b.value == doctest::Approx(expect).epsilon(1e-12));
        }
      }
    }
  }

  CHECK_THROWS_AS(topksim::fixed_lr_nonconvex(2.0, 1.5, 3.0, 0.5, 4, 0.0, 0.0, 1000),
                  InvalidParameterError);
}

TEST_CASE("norm_gap_curve: tightness, monotonicity, skip accounting") {
  // Uniform-magnitude sample attains gamma exactly.
  const Index n = 16;
  std::vector<DenseVector> ones{DenseVector::Ones(n)};
  const auto tight = topksim::norm_gap_curve(ones, {1, 4, 8, 12, 16});
  for (const auto& row : tight) {
    CHECK(row.mean_ratio == doctest::Approx(row.gamma).epsilon(1e-14));
    CHECK(row.max_ratio <= row.gamma + 1e-12);
  }
  CHECK(tight.back().K == 16);
  CHECK(tight.back().max_ratio == 0.0);  // K = n truncates nothing

  // Random samples: ratio <= gamma(K), non-increasing in K per sample.
  CounterRng rng(99, 0, 3, 0);
  std::vector<DenseVector> samples;
  for (int i = 0; i < 200; ++i) samples.push_back(random_vector(n, rng));
  std::vector<Index> ks;
  for (Index k = 1; k <= n; ++k) ks.push_back(k);
  const auto rows = topksim::norm_gap_curve(samples, ks);
  double prev_mean = kInf;
  for (const auto& row : rows) {
    CHECK(row.max_ratio <= row.gamma + 1e-12);
    CHECK(row.mean_ratio <= prev_mean + 1e-15);  // nested truncation
    CHECK(row.skipped == 0);
    prev_mean = row.mean_ratio;
  }

  // Zero-norm samples are skipped and counted, not folded into the mean.
  std::vector<DenseVector> with_zero = {DenseVector::Zero(n), DenseVector::Ones(n)};
  const auto rows_z = topksim::norm_gap_curve(with_zero, {4});
  CHECK(rows_z[0].skipped == 1);
  CHECK(rows_z[0].mean_ratio == doctest::Approx(rows_z[0].gamma).epsilon(1e-14));

  CHECK_THROWS_AS(topksim::norm_gap_curve({}, {1}), InvalidParameterError);
  CHECK_THROWS_AS(topksim::norm_gap_curve(ones, {0}), InvalidParameterError);
}

TEST_CASE("supermartingale_W: branch boundary, time shift, Lipschitz") {
  const double alpha = 0.1, c = 1.0, eps = 0.04, M = 0.5;
  const double denom = 2 * alpha * c * eps - alpha * alpha * M * M;
  REQUIRE(denom > 0.0);

  // dist^2 = eps sits on the plog splice: W = eps/denom + t.
  CHECK(topksim::supermartingale_W(eps, 0, alpha, c, eps, M) ==
        doctest::Approx(eps / denom).epsilon(1e-14));
  // Time enters additively: shifting t reproduces "base plus t" bitwise.
  const double w0 = topksim::supermartingale_W(0.7, 0, alpha, c, eps, M);
  const double w9 = topksim::supermartingale_W(0.7, 9, alpha, c, eps, M);
  CHECK(w9 == w0 + 9.0);

  // Infeasible denominator throws.
  CHECK_THROWS_AS(topksim::supermartingale_W(0.7, 0, 10.0, c, eps, M),
                  InvalidParameterError);

  // Empirical Lipschitz constant in the iterate never beats H.
  const auto cc = topksim::convex_constants(8, 4, 0.0, 1, alpha, c, M, eps);
  REQUIRE(cc.feasible);
  CounterRng rng(31337, 0, 4, 0);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const DenseVector u = random_vector(8, rng, 0.3);
    const DenseVector v = u + random_vector(8, rng, 0.05);
    const double wu =
        topksim::supermartingale_W(u.squaredNorm(), 3, alpha, c, eps, M);
    const double wv =
        topksim::supermartingale_W(v.squaredNorm(), 3, alpha, c, eps, M);
    const double dist = (u - v).norm();
    if (dist > 0.0) worst = std::max(worst, std::abs(wu - wv) / dist);
  }
  CHECK(worst <= cc.H + 1e-9);
}
