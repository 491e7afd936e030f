// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form constants, assumption estimators, and convergence bounds for
// TopK-compressed SGD with error feedback. Everything here is a pure
// function over vectors, traces, or scalar constants.

#ifndef TOPKSIM_ANALYSIS_HPP_
#define TOPKSIM_ANALYSIS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "topksim/schedule.hpp"
#include "topksim/vec.hpp"

namespace topksim {

// Piecewise logarithm: x on (-inf, 1], 1 + ln(x) on [1, inf).
// Continuously differentiable at the splice (both branches have slope 1).
double piecewise_log(double x);

// One measurement of the collapse constant xi_t: how far averaging the
// per-node TopK payloads lands from the TopK of the averaged accumulator,
// relative to the scaled average gradient that entered the accumulators.
struct XiMeasurement {
  std::int64_t t = 0;     // step label, carried through for reporting
  double lhs_norm = 0.0;  // ||TopK(mean acc) - mean TopK(acc_p)||
  double grad_norm = 0.0; // ||alpha * mean gradient||
  double xi = 0.0;        // lhs_norm / grad_norm; 0/0 -> 0, x/0 -> inf
};

// Both norms are evaluated with the same fixed node-order averaging the
// simulator uses, so xi is exactly 0 when P = 1 or when K = dim.
XiMeasurement measure_xi(const std::vector<DenseVector>& per_node_accs,
                         const DenseVector& avg_alpha_grad, Index K, int P);

// Constants controlling the convex-case slowdown. C_prime = C + (gamma +
// xi/P) by construction; H is the Lipschitz constant of the rate
// supermartingale in its first coordinate and requires
// 2*alpha*c*epsilon - alpha^2*M^2 > 0.
struct ConvexConstants {
  double gamma = 0.0;
  double C = 0.0;
  double C_prime = 0.0;
  double H = 0.0;         // valid only when feasible
  bool feasible = false;  // true iff the H denominator is positive
  std::string reason;     // names the violated condition when infeasible
};

ConvexConstants convex_constants(Index n, Index K, double xi, int P,
                                 double alpha, double c, double M,
                                 double epsilon);

// Largest admissible fixed learning rate for the convex guarantee:
// min{2*c*eps/M^2, 2*(c*eps - sqrt(eps)*M*C_prime)/M^2}. The window is
// non-empty iff eps > (M*C_prime/c)^2.
struct LrWindow {
  double alpha_max = 0.0;
  bool feasible = false;
  double uncompressed_term = 0.0;  // 2*c*eps/M^2
  double compressed_term = 0.0;    // 2*(c*eps - sqrt(eps)*M*C_prime)/M^2
};

LrWindow convex_lr_window(double c, double epsilon, double M, double C_prime);

// Probability that the iterate still sits outside the radius-eps success
// region after T steps. Vacuous bounds (> 1) are reported verbatim with a
// marker; `clamped` additionally caps at 1 for display.
struct FailureBound {
  double raw = 0.0;
  double clamped = 0.0;
  bool vacuous = false;
  bool feasible = false;
  double denominator = 0.0;  // 2*a*c*eps - a^2*M^2 - a*2*sqrt(eps)*M*C_prime
};

FailureBound convex_failure_bound(double alpha, double c, double epsilon,
                                  double M, double C_prime, double dist0_sq,
                                  std::int64_t T);

// Supremum over t <= t_max of S_t = sum_{k=1..t} (2g^2)^k alpha_{t-k}^2 /
// alpha_t, the quantity whose uniform bound D the non-convex rate needs.
// Finite only when 2*gamma^2 < 1. alpha_0 is taken to equal alpha_1 (the
// schedule starts at t = 1). `bounded` is true when the supremum stopped
// growing: relative increase over the last decade of t below 1e-6.
struct DCheck {
  double sup_partial = 0.0;
  bool bounded = false;
  std::int64_t t_evaluated = 0;
};

DCheck check_D(const LearningRateSchedule& schedule, double gamma,
               std::int64_t t_max);

// Inputs to the non-convex ergodic bound. D is the uniform bound from
// check_D; xi the uniform collapse constant; gamma from (n, K).
struct NonconvexBoundInputs {
  double f0_minus_fstar = 0.0;
  double L = 0.0;
  double M = 0.0;
  double xi = 0.0;
  int P = 1;
  double gamma = 0.0;
  double D = 0.0;
  LearningRateSchedule schedule;
  std::int64_t T = 1;
};

struct NonconvexBound {
  double value = 0.0;
  bool applicable = false;
  std::string reason;  // set when not applicable
  double sum_alpha = 0.0;
  double sum_alpha_sq = 0.0;
};

// Weighted ergodic bound on E||grad f||^2:
//   4*(f0-f*)/sum(alpha) + (2LM^2 + 4L^2M^2(1+xi/(P*gamma))^2 D)
//     * sum(alpha^2)/sum(alpha).
// gamma = 0 with xi > 0 makes the middle factor singular; reported as not
// applicable. gamma = 0 with xi = 0 uses factor 1 (and D = 0 there).
NonconvexBound nonconvex_bound(const NonconvexBoundInputs& inputs);

// Horizon-optimal fixed learning rate for the non-convex bound:
//   alpha = sqrt((f0-f*) / (T * (2LM^2 + 4L^2M^2(1+xi/(P*gamma))^2 D))).
// Feeding it back into nonconvex_bound with a constant schedule yields
// exactly 5*sqrt((f0-f*)*coeff/T).
double fixed_lr_nonconvex(double f0_minus_fstar, double L, double M, double xi,
                          int P, double gamma, double D, std::int64_t T);

// Relative truncation error ||g - TopK(g)|| / ||g|| aggregated over gradient
// samples, per K. Every ratio is bounded by gamma(K) = sqrt((n-K)/n).
struct NormGapRow {
  Index K = 0;
  double gamma = 0.0;
  double mean_ratio = 0.0;
  double max_ratio = 0.0;
  std::int64_t skipped = 0;  // zero-norm samples excluded from the ratios
};

std::vector<NormGapRow> norm_gap_curve(const std::vector<DenseVector>& samples,
                                       const std::vector<Index>& K_values);

// Rate supermartingale W_t = eps/(2*a*c*eps - a^2*M^2) * plog(dist_sq/eps)
// + t. Throws when the denominator is not positive.
double supermartingale_W(double dist_sq, std::int64_t t, double alpha,
                         double c, double epsilon, double M);

}  // namespace topksim

#endif  // TOPKSIM_ANALYSIS_HPP_
