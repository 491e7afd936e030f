// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense/sparse vector types and the selection operators the whole toolkit is
// built on: top-K magnitude selection, its residual, and fixed-order
// aggregation of sparse node payloads.

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace topksim {

using Index = Eigen::Index;
using DenseVector = Eigen::VectorXd;

// Sparse payload of a compression step. Invariants: indices are strictly
// increasing and in [0, dim); values are finite and never exactly zero.
struct SparseVector {
  Index dim = 0;
  std::vector<Index> indices;
  std::vector<double> values;

  Index nnz() const { return static_cast<Index>(indices.size()); }
  DenseVector densify() const;

  // Throws InvalidParameterError if an invariant is broken.
  void validate() const;
};

// The K entries of v of largest absolute value, ties broken toward the lower
// index, values copied bit for bit from v. Exact zeros are never stored, so
// the result can have fewer than K entries. Selection uses a K-th order
// statistic, not a full sort; the outcome matches the full sort exactly
// because the (|value| desc, index asc) order is total.
// Requires 1 <= k <= v.size() and finite v.
SparseVector top_k(const DenseVector& v, Index k);

// v minus the densified top-K of v. Exact: the kept coordinates of the
// result are bitwise equal to v's and the selected ones are exactly zero.
DenseVector residual(const DenseVector& v, Index k);

// Contraction factor of the top-K residual: gamma = sqrt((n - K) / n).
// gamma = 0 iff K = n; requires 1 <= K <= n.
struct GammaConstant {
  Index n = 0;
  Index k = 0;
  double value = 0.0;
};

GammaConstant make_gamma(Index n, Index k);
double gamma_for(Index n, Index k);

// Mean of the densified updates, summed in node order 0..P-1 and scaled by
// 1/P afterwards. The fixed order makes the result bit-identical no matter
// how the payloads were produced (threads, processes, replays).
// Requires updates.size() == P >= 1 and equal ambient dims.
DenseVector aggregate_fixed_order(const std::vector<SparseVector>& updates,
                                  int P);

}  // namespace topksim
