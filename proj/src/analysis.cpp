// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "topksim/errors.hpp"

namespace topksim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) {
    throw InvalidParameterError(std::string(name) + " must be finite");
  }
}

void require_positive(double v, const char* name) {
  require_finite(v, name);
  if (!(v > 0.0)) {
    throw InvalidParameterError(std::string(name) + " must be positive");
  }
}

void require_nonnegative(double v, const char* name) {
  require_finite(v, name);
  if (!(v >= 0.0)) {
    throw InvalidParameterError(std::string(name) + " must be nonnegative");
  }
}

// Fixed node-order mean of dense vectors; the same summation order and
// final 1/P scaling the simulator's aggregation uses, so comparisons
// against aggregated payloads are bitwise consistent.
DenseVector mean_fixed_order(const std::vector<DenseVector>& vs) {
  DenseVector sum = vs[0];
  for (std::size_t p = 1; p < vs.size(); ++p) sum += vs[p];
  sum *= 1.0 / static_cast<double>(vs.size());
  return sum;
}

}  // namespace

double piecewise_log(double x) {
  if (!std::isfinite(x)) {
    throw InvalidParameterError("piecewise_log: argument must be finite");
  }
  return x >= 1.0 ? 1.0 + std::log(x) : x;
}

XiMeasurement measure_xi(const std::vector<DenseVector>& per_node_accs,
                         const DenseVector& avg_alpha_grad, Index K, int P) {
  if (P < 1 || per_node_accs.size() != static_cast<std::size_t>(P)) {
    throw InvalidParameterError("measure_xi: need P >= 1 accumulator vectors");
  }
  const Index n = per_node_accs[0].size();
  for (const DenseVector& acc : per_node_accs) {
    if (acc.size() != n) {
      throw InvalidParameterError("measure_xi: accumulator dimension mismatch");
    }
  }
  if (avg_alpha_grad.size() != n) {
    throw InvalidParameterError("measure_xi: gradient dimension mismatch");
  }

  const DenseVector avg_acc = mean_fixed_order(per_node_accs);
  std::vector<SparseVector> payloads;
  payloads.reserve(per_node_accs.size());
  for (const DenseVector& acc : per_node_accs) {
    payloads.push_back(top_k(acc, K));
  }
  const DenseVector avg_payload = aggregate_fixed_order(payloads, P);

  XiMeasurement out;
  out.lhs_norm = (top_k(avg_acc, K).densify() - avg_payload).norm();
  out.grad_norm = avg_alpha_grad.norm();
  if (out.grad_norm > 0.0) {
    out.xi = out.lhs_norm / out.grad_norm;
  } else {
    out.xi = out.lhs_norm > 0.0 ? kInf : 0.0;
  }
  return out;
}

ConvexConstants convex_constants(Index n, Index K, double xi, int P,
                                 double alpha, double c, double M,
                                 double epsilon) {
  if (P < 1) throw InvalidParameterError("convex_constants: P must be >= 1");
  require_nonnegative(xi, "xi");
  require_positive(alpha, "alpha");
  require_positive(c, "c");
  require_positive(M, "M");
  require_positive(epsilon, "epsilon");

  ConvexConstants out;
  out.gamma = gamma_for(n, K);  // K >= 1 keeps gamma < 1
  const double base = out.gamma + xi / static_cast<double>(P);
  out.C = (1.0 + out.gamma) / (1.0 - out.gamma) * base;
  out.C_prime = base * 2.0 / (1.0 - out.gamma);

  const double denom = 2.0 * alpha * c * epsilon - alpha * alpha * M * M;
  if (denom > 0.0) {
    out.feasible = true;
    out.H = 2.0 * std::sqrt(epsilon) / denom;
  } else {
    out.feasible = false;
    out.H = kInf;
    out.reason = "2*alpha*c*epsilon - alpha^2*M^2 <= 0";
  }
  return out;
}

LrWindow convex_lr_window(double c, double epsilon, double M, double C_prime) {
  require_positive(c, "c");
  require_positive(epsilon, "epsilon");
  require_positive(M, "M");
  require_nonnegative(C_prime, "C_prime");

  LrWindow out;
  out.uncompressed_term = 2.0 * c * epsilon / (M * M);
  out.compressed_term =
      2.0 * (c * epsilon - std::sqrt(epsilon) * M * C_prime) / (M * M);
  out.alpha_max = std::min(out.uncompressed_term, out.compressed_term);
  const double threshold = (M * C_prime / c) * (M * C_prime / c);
  out.feasible = epsilon > threshold;
  return out;
}

FailureBound convex_failure_bound(double alpha, double c, double epsilon,
                                  double M, double C_prime, double dist0_sq,
                                  std::int64_t T) {
  require_positive(alpha, "alpha");
  require_positive(c, "c");
  require_positive(epsilon, "epsilon");
  require_positive(M, "M");
  require_nonnegative(C_prime, "C_prime");
  require_nonnegative(dist0_sq, "dist0_sq");
  if (T < 1) throw InvalidParameterError("convex_failure_bound: T must be >= 1");

  FailureBound out;
  out.denominator = 2.0 * alpha * c * epsilon - alpha * alpha * M * M -
                    alpha * 2.0 * std::sqrt(epsilon) * M * C_prime;
  if (!(out.denominator > 0.0)) {
    out.feasible = false;
    out.raw = kInf;
    out.clamped = 1.0;
    out.vacuous = true;
    return out;
  }
  out.feasible = true;
  out.raw = epsilon / (out.denominator * static_cast<double>(T)) *
            piecewise_log(std::exp(1.0) * dist0_sq / epsilon);
  out.vacuous = out.raw > 1.0;
  out.clamped = std::min(out.raw, 1.0);
  return out;
}

DCheck check_D(const LearningRateSchedule& schedule, double gamma,
               std::int64_t t_max) {
  schedule.validate();
  require_nonnegative(gamma, "gamma");
  if (t_max < 1) throw InvalidParameterError("check_D: t_max must be >= 1");

  DCheck out;
  const double q = 2.0 * gamma * gamma;
  if (q >= 1.0) {
    out.sup_partial = kInf;
    out.bounded = false;
    out.t_evaluated = 0;
    return out;
  }
  if (q == 0.0) {
    out.sup_partial = 0.0;
    out.bounded = true;
    out.t_evaluated = t_max;
    return out;
  }

  // S_t = N_t / alpha_t with N_t = q*(alpha_{t-1}^2 + N_{t-1}), N_0 = 0,
  // and the convention alpha_0 = alpha_1.
  double prev_alpha = schedule.alpha(1);
  double numerator = 0.0;
  double sup = 0.0;
  double sup_at_tenth = 0.0;
  const std::int64_t tenth_mark = t_max - t_max / 10;  // last decade start
  for (std::int64_t t = 1; t <= t_max; ++t) {
    const double alpha_t = schedule.alpha(t);
    numerator = q * (prev_alpha * prev_alpha + numerator);
    sup = std::max(sup, numerator / alpha_t);
    if (t == tenth_mark) sup_at_tenth = sup;
    prev_alpha = alpha_t;
  }
  out.sup_partial = sup;
  out.t_evaluated = t_max;
  if (t_max >= 10 && sup > 0.0) {
    out.bounded = (sup - sup_at_tenth) / sup < 1e-6;
  } else {
    out.bounded = false;
  }
  return out;
}

namespace {

// (1 + xi/(P*gamma))^2, with the dense-limit rules: gamma = 0 with xi = 0
// degenerates to 1; gamma = 0 with xi > 0 has no finite value.
bool collapse_factor_sq(double xi, int P, double gamma, double* out) {
  if (gamma == 0.0) {
    if (xi > 0.0) return false;
    *out = 1.0;
    return true;
  }
  const double f = 1.0 + xi / (static_cast<double>(P) * gamma);
  *out = f * f;
  return true;
}

void sum_schedule(const LearningRateSchedule& schedule, std::int64_t T,
                  double* sum_alpha, double* sum_alpha_sq) {
  if (schedule.is_constant()) {
    // Closed form keeps downstream algebraic identities exact.
    const double a = schedule.alpha0;
    *sum_alpha = static_cast<double>(T) * a;
    *sum_alpha_sq = static_cast<double>(T) * a * a;
    return;
  }
  double s = 0.0;
  double s2 = 0.0;
  for (std::int64_t t = 1; t <= T; ++t) {
    const double a = schedule.alpha(t);
    s += a;
    s2 += a * a;
  }
  *sum_alpha = s;
  *sum_alpha_sq = s2;
}

}  // namespace

NonconvexBound nonconvex_bound(const NonconvexBoundInputs& inputs) {
  inputs.schedule.validate();
  require_positive(inputs.f0_minus_fstar, "f0_minus_fstar");
  require_positive(inputs.L, "L");
  require_positive(inputs.M, "M");
  require_nonnegative(inputs.xi, "xi");
  require_nonnegative(inputs.gamma, "gamma");
  require_nonnegative(inputs.D, "D");
  if (inputs.P < 1) throw InvalidParameterError("nonconvex_bound: P >= 1");
  if (inputs.T < 1) throw InvalidParameterError("nonconvex_bound: T >= 1");

  NonconvexBound out;
  double factor_sq = 0.0;
  if (!collapse_factor_sq(inputs.xi, inputs.P, inputs.gamma, &factor_sq)) {
    out.applicable = false;
    out.reason = "gamma = 0 with xi > 0: the (1 + xi/(P*gamma)) factor has "
                 "no finite value in the dense limit";
    return out;
  }
  sum_schedule(inputs.schedule, inputs.T, &out.sum_alpha, &out.sum_alpha_sq);
  const double lm = inputs.L * inputs.M;
  const double coeff =
      2.0 * inputs.L * inputs.M * inputs.M + 4.0 * lm * lm * factor_sq * inputs.D;
  out.value = 4.0 * inputs.f0_minus_fstar / out.sum_alpha +
              coeff * out.sum_alpha_sq / out.sum_alpha;
  out.applicable = true;
  return out;
}

double fixed_lr_nonconvex(double f0_minus_fstar, double L, double M, double xi,
                          int P, double gamma, double D, std::int64_t T) {
  require_positive(f0_minus_fstar, "f0_minus_fstar");
  require_positive(L, "L");
  require_positive(M, "M");
  require_nonnegative(xi, "xi");
  require_nonnegative(gamma, "gamma");
  require_nonnegative(D, "D");
  if (P < 1) throw InvalidParameterError("fixed_lr_nonconvex: P >= 1");
  if (T < 1) throw InvalidParameterError("fixed_lr_nonconvex: T >= 1");

  double factor_sq = 0.0;
  if (!collapse_factor_sq(xi, P, gamma, &factor_sq)) {
    throw InvalidParameterError(
        "fixed_lr_nonconvex: gamma = 0 with xi > 0 has no finite rate");
  }
  const double lm = L * M;
  const double coeff = 2.0 * L * M * M + 4.0 * lm * lm * factor_sq * D;
  if (!(coeff > 0.0)) {
    throw InvalidParameterError("fixed_lr_nonconvex: zero rate coefficient");
  }
  return std::sqrt(f0_minus_fstar / (static_cast<double>(T) * coeff));
}

std::vector<NormGapRow> norm_gap_curve(const std::vector<DenseVector>& samples,
                                       const std::vector<Index>& K_values) {
  if (samples.empty()) {
    throw InvalidParameterError("norm_gap_curve: need at least one sample");
  }
  const Index n = samples[0].size();
  for (const DenseVector& s : samples) {
    if (s.size() != n) {
      throw InvalidParameterError("norm_gap_curve: sample dimension mismatch");
    }
  }

  std::vector<NormGapRow> rows;
  rows.reserve(K_values.size());
  for (Index K : K_values) {
    NormGapRow row;
    row.K = K;
    row.gamma = gamma_for(n, K);  // validates 1 <= K <= n
    double sum = 0.0;
    std::int64_t used = 0;
    for (const DenseVector& g : samples) {
      const double norm = g.norm();
      if (norm == 0.0) {
        ++row.skipped;
        continue;
      }
      const double ratio = residual(g, K).norm() / norm;
      sum += ratio;
      row.max_ratio = std::max(row.max_ratio, ratio);
      ++used;
    }
    row.mean_ratio = used > 0 ? sum / static_cast<double>(used) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

double supermartingale_W(double dist_sq, std::int64_t t, double alpha,
                         double c, double epsilon, double M) {
  require_nonnegative(dist_sq, "dist_sq");
  require_positive(alpha, "alpha");
  require_positive(c, "c");
  require_positive(epsilon, "epsilon");
  require_positive(M, "M");
  if (t < 0) throw InvalidParameterError("supermartingale_W: t must be >= 0");

  const double denom = 2.0 * alpha * c * epsilon - alpha * alpha * M * M;
  if (!(denom > 0.0)) {
    throw InvalidParameterError(
        "supermartingale_W: 2*alpha*c*epsilon - alpha^2*M^2 must be positive");
  }
  return epsilon / denom * piecewise_log(dist_sq / epsilon) +
         static_cast<double>(t);
}

}  // namespace topksim
