// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/vec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "topksim/errors.hpp"

namespace topksim {

DenseVector SparseVector::densify() const {
  DenseVector out = DenseVector::Zero(dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out[indices[i]] = values[i];
  }
  return out;
}

void SparseVector::validate() const {
  if (dim < 0) throw InvalidParameterError("SparseVector: negative dim");
  if (indices.size() != values.size()) {
    throw InvalidParameterError("SparseVector: index/value size mismatch");
  }
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= dim) {
      throw InvalidParameterError("SparseVector: index out of range");
    }
    if (i > 0 && indices[i] <= indices[i - 1]) {
      throw InvalidParameterError("SparseVector: indices not increasing");
    }
    if (!std::isfinite(values[i]) || values[i] == 0.0) {
      throw InvalidParameterError("SparseVector: value not finite nonzero");
    }
  }
}

SparseVector top_k(const DenseVector& v, Index k) {
  const Index n = v.size();
  if (k < 1 || k > n) {
    throw InvalidParameterError("top_k: K must satisfy 1 <= K <= " +
                                std::to_string(n) + ", got " +
                                std::to_string(k));
  }
  if (!v.allFinite()) {
    throw InvalidParameterError("top_k: input has non-finite entries");
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const auto before = [&v](Index a, Index b) {
    const double ma = std::fabs(v[a]);
    const double mb = std::fabs(v[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  if (k < n) {
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                     before);
  }
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());

  SparseVector out;
  out.dim = n;
  out.indices.reserve(order.size());
  out.values.reserve(order.size());
  for (Index i : order) {
    if (v[i] != 0.0) {
      out.indices.push_back(i);
      out.values.push_back(v[i]);
    }
  }
  return out;
}

DenseVector residual(const DenseVector& v, Index k) {
  const SparseVector kept = top_k(v, k);
  DenseVector out = v;
  for (Index i : kept.indices) out[i] = 0.0;
  return out;
}

GammaConstant make_gamma(Index n, Index k) {
  if (n < 1 || k < 1 || k > n) {
    throw InvalidParameterError("make_gamma: need 1 <= K <= n");
  }
  GammaConstant g;
  g.n = n;
  g.k = k;
  g.value = std::sqrt(static_cast<double>(n - k) / static_cast<double>(n));
  return g;
}

double gamma_for(Index n, Index k) { return make_gamma(n, k).value; }

DenseVector aggregate_fixed_order(const std::vector<SparseVector>& updates,
                                  int P) {
  if (P < 1 || updates.size() != static_cast<std::size_t>(P)) {
    throw InvalidParameterError(
        "aggregate_fixed_order: list length must equal P >= 1");
  }
  const Index dim = updates.front().dim;
  for (const SparseVector& u : updates) {
    if (u.dim != dim) {
      throw InvalidParameterError(
          "aggregate_fixed_order: mismatched ambient dims");
    }
  }
  DenseVector acc = DenseVector::Zero(dim);
  for (const SparseVector& u : updates) {
    for (std::size_t i = 0; i < u.indices.size(); ++i) {
      acc[u.indices[i]] += u.values[i];
    }
  }
  acc *= 1.0 / static_cast<double>(P);
  return acc;
}

}  // namespace topksim
