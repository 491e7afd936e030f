// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/vec.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "topksim/errors.hpp"
#include "topksim/rng.hpp"

using topksim::aggregate_fixed_order;
using topksim::CounterRng;
using topksim::DenseVector;
using topksim::gamma_for;
using topksim::Index;
using topksim::InvalidParameterError;
using topksim::make_gamma;
using topksim::residual;
using topksim::SparseVector;
using topksim::top_k;

namespace {

DenseVector make_vec(std::initializer_list<double> vals) {
  DenseVector v(static_cast<Index>(vals.size()));
  Index i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("top_k keeps the largest magnitudes with lower-index tie break") {
  const DenseVector v = make_vec({-3.0, 1.0, 2.0, -2.0});
  const SparseVector s = top_k(v, 2);
  s.validate();
  REQUIRE(s.nnz() == 2);
  CHECK(s.indices[0] == 0);
  CHECK(s.values[0] == -3.0);
  // |2| ties |-2|; index 2 wins over index 3.
  CHECK(s.indices[1] == 2);
  CHECK(s.values[1] == 2.0);
}

TEST_CASE("top_k never stores exact zeros") {
  const DenseVector v = make_vec({0.0, 0.0, 5.0});
  const SparseVector s = top_k(v, 2);
  s.validate();
  REQUIRE(s.nnz() == 1);
  CHECK(s.indices[0] == 2);
  CHECK(s.values[0] == 5.0);
}

TEST_CASE("top_k on a uniform-magnitude vector keeps the lowest indices") {
  const DenseVector v = DenseVector::Ones(4);
  const SparseVector s = top_k(v, 1);
  REQUIRE(s.nnz() == 1);
  CHECK(s.indices[0] == 0);
  // Residual of the all-ones vector: norm sqrt(3) = gamma(4,1) * norm(v).
  const DenseVector r = residual(v, 1);
  CHECK(r.norm() == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  CHECK(r.norm() ==
        doctest::Approx(gamma_for(4, 1) * v.norm()).epsilon(1e-15));
}

TEST_CASE("top_k rejects bad K and non-finite input") {
  const DenseVector v = DenseVector::Ones(4);
  CHECK_THROWS_AS(top_k(v, 0), InvalidParameterError);
  CHECK_THROWS_AS(top_k(v, 5), InvalidParameterError);
  DenseVector bad = v;
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(top_k(bad, 2), InvalidParameterError);
}

TEST_CASE("residual plus densified top_k reconstructs v exactly") {
  CounterRng rng(11, 0, 1, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const Index n = 1 + static_cast<Index>(rng.uniform_below(40));
    DenseVector v(n);
    for (Index i = 0; i < n; ++i) {
      v[i] = rng.uniform() < 0.2 ? 0.0 : rng.normal();
    }
    const Index k = 1 + static_cast<Index>(rng.uniform_below(
                            static_cast<std::uint64_t>(n)));
    const DenseVector back = residual(v, k) + top_k(v, k).densify();
    for (Index i = 0; i < n; ++i) CHECK(back[i] == v[i]);  // bitwise
  }
}

TEST_CASE("residual norms obey the sparsification contraction bounds") {
  CounterRng rng(23, 0, 2, 0);
  for (int rep = 0; rep < 1000; ++rep) {
    const Index n = 1 + static_cast<Index>(rng.uniform_below(64));
    DenseVector v(n);
    for (Index i = 0; i < n; ++i) v[i] = rng.normal();
    const Index k = 1 + static_cast<Index>(rng.uniform_below(
                            static_cast<std::uint64_t>(n)));
    const DenseVector r = residual(v, k);
    const double frac =
        static_cast<double>(n - k) / static_cast<double>(n);
    CHECK(r.lpNorm<1>() <= frac * v.lpNorm<1>() + 1e-12);
    CHECK(r.squaredNorm() <= frac * v.squaredNorm() + 1e-12);
    CHECK(r.norm() <= gamma_for(n, k) * v.norm() + 1e-12);
  }
}

TEST_CASE("residual norm is monotone nonincreasing in K") {
  CounterRng rng(31, 0, 3, 0);
  DenseVector v(32);
  for (Index i = 0; i < 32; ++i) v[i] = rng.normal();
  double prev = v.norm() + 1.0;
  for (Index k = 1; k <= 32; ++k) {
    const double cur = residual(v, k).norm();
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
  CHECK(residual(v, 32).norm() == 0.0);
}

TEST_CASE("gamma constant: boundary values and validation") {
  CHECK(gamma_for(4, 1) == doctest::Approx(std::sqrt(3.0) / 2.0));
  CHECK(gamma_for(1024, 1024) == 0.0);
  CHECK(make_gamma(10, 10).value == 0.0);
  CHECK(gamma_for(2, 1) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(make_gamma(4, 0), InvalidParameterError);
  CHECK_THROWS_AS(make_gamma(4, 5), InvalidParameterError);
  CHECK_THROWS_AS(make_gamma(0, 0), InvalidParameterError);
}

TEST_CASE("aggregate_fixed_order averages payloads deterministically") {
  SparseVector a;
  a.dim = 2;
  a.indices = {0};
  a.values = {-1001.0};
  SparseVector b;
  b.dim = 2;
  b.indices = {0};
  b.values = {1001.0};
  const DenseVector g = aggregate_fixed_order({a, b}, 2);
  CHECK(g[0] == 0.0);  // exact cancellation
  CHECK(g[1] == 0.0);

  SparseVector c;
  c.dim = 2;
  c.indices = {0, 1};
  c.values = {1.0, 3.0};
  const DenseVector m = aggregate_fixed_order({a, c}, 2);
  CHECK(m[0] == doctest::Approx(-500.0).epsilon(1e-15));
  CHECK(m[1] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("aggregate_fixed_order validates shapes") {
  SparseVector a;
  a.dim = 2;
  SparseVector b;
  b.dim = 3;
  CHECK_THROWS_AS(aggregate_fixed_order({a, b}, 2), InvalidParameterError);
  CHECK_THROWS_AS(aggregate_fixed_order({a}, 2), InvalidParameterError);
  CHECK_THROWS_AS(aggregate_fixed_order({}, 0), InvalidParameterError);
}

TEST_CASE("top_k equals its value on the densified selection (idempotence)") {
  CounterRng rng(47, 0, 4, 0);
  DenseVector v(24);
  for (Index i = 0; i < 24; ++i) v[i] = rng.normal();
  const SparseVector s = top_k(v, 6);
  const SparseVector again = top_k(s.densify(), 6);
  REQUIRE(again.nnz() == s.nnz());
  for (Index i = 0; i < s.nnz(); ++i) {
    CHECK(again.indices[static_cast<std::size_t>(i)] ==
          s.indices[static_cast<std::size_t>(i)]);
    CHECK(again.values[static_cast<std::size_t>(i)] ==
          s.values[static_cast<std::size_t>(i)]);
  }
}
