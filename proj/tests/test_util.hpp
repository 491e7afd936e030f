// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "topksim/vec.hpp"

namespace topksim::testing {

// Central finite differences of a scalar function.
inline DenseVector fd_gradient(
    const std::function<double(const DenseVector&)>& f, const DenseVector& x,
    double h = 1e-6) {
  DenseVector g(x.size());
  DenseVector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace topksim::testing
