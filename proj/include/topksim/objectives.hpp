// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Every problem exposes the same three evaluations:
//   loss(x)                 mean loss over all samples plus any ridge term
//   gradient(x)             exact gradient of loss()
//   grad_minibatch(x, B)    mean per-sample gradient over an explicit batch,
//                           plus the ridge gradient
// The minibatch convention makes the estimator unbiased: averaging
// grad_minibatch over all batches of a fixed size reproduces gradient(x).

#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topksim/vec.hpp"

namespace topksim {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Curvature constants of a problem. c and L are absent when the problem kind
// cannot provide them (non-convex problems report only an estimated L).
struct AnalyticConstants {
  std::optional<double> c;
  std::optional<double> L;
  std::string source;
};

class Problem {
 public:
  virtual ~Problem() = default;

  virtual Index dim() const = 0;
  virtual Index num_samples() const = 0;
  virtual std::string kind() const = 0;

  virtual double loss(const DenseVector& x) const = 0;
  virtual DenseVector gradient(const DenseVector& x) const = 0;
  virtual DenseVector grad_minibatch(const DenseVector& x,
                                     std::span<const Index> batch) const = 0;

  virtual AnalyticConstants constants() const = 0;
};

AnalyticConstants analytic_constants(const Problem& problem);

// ------------------------------------------------------------- least squares
// f(x) = (1/2m) |A x - b|^2 + (l2/2) |x|^2. Evaluations go through the
// cached Gram matrix G = A^T A / m, so a loss or gradient costs one
// matrix-vector product in n instead of a pass over the data.
class LeastSquaresProblem final : public Problem {
 public:
  // A is m x n with one sample per row. Requires m >= 1, n >= 1, l2 >= 0.
  LeastSquaresProblem(RowMajorMatrix A, DenseVector b, double l2_reg);
  ~LeastSquaresProblem() override;

  Index dim() const override { return A_.cols(); }
  Index num_samples() const override { return A_.rows(); }
  std::string kind() const override { return "least_squares"; }

  double loss(const DenseVector& x) const override;
  DenseVector gradient(const DenseVector& x) const override;
  DenseVector grad_minibatch(const DenseVector& x,
                             std::span<const Index> batch) const override;

  // c = l2 + lambda_min(G), L = l2 + lambda_max(G), both exact up to the
  // symmetric eigensolver. Computed once, on first use.
  AnalyticConstants constants() const override;
  double strong_convexity() const;
  double smoothness() const;

  // argmin f, from the normal equations (G + l2 I) x = A^T b / m.
  const DenseVector& known_optimum() const;

  const RowMajorMatrix& design() const { return A_; }
  const DenseVector& targets() const { return b_; }
  double l2_reg() const { return l2_; }

  // Gram internals for incremental loss tracking in the engine.
  const Eigen::MatrixXd& gram() const { return gram_; }
  const DenseVector& gram_rhs() const { return atb_; }
  double loss_const_term() const { return const_term_; }

 private:
  void ensure_eigs() const;

  RowMajorMatrix A_;
  DenseVector b_;
  double l2_;
  Eigen::MatrixXd gram_;   // A^T A / m
  DenseVector atb_;        // A^T b / m
  double const_term_;      // |b|^2 / (2m)

  struct Lazy;
  std::unique_ptr<Lazy> lazy_;
};

// ------------------------------------------------------ logistic regression
// Compressed sparse rows; one sample per row.
struct CsrMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> row_ptr;  // size rows + 1
  std::vector<Index> col_idx;
  std::vector<double> values;

  double density() const;
  void validate() const;
};

// f(x) = (1/m) sum log(1 + exp(-y_i <x_i, x>)) + (l2/2) |x|^2 with labels
// y in {-1, +1}. Requires l2 > 0 so the objective is strongly convex.
class LogisticProblem final : public Problem {
 public:
  LogisticProblem(CsrMatrix X, std::vector<double> labels, double l2_reg);
  ~LogisticProblem() override;

  Index dim() const override { return X_.cols; }
  Index num_samples() const override { return X_.rows; }
  std::string kind() const override { return "logistic"; }

  double loss(const DenseVector& x) const override;
  DenseVector gradient(const DenseVector& x) const override;
  DenseVector grad_minibatch(const DenseVector& x,
                             std::span<const Index> batch) const override;

  // c = l2; L = l2 + lambda_max(X^T X) / (4m), the top eigenvalue obtained
  // by power iteration (deterministic start, iterated to 1e-13 relative).
  AnalyticConstants constants() const override;
  double strong_convexity() const { return l2_; }
  double smoothness() const;

  // argmin f by full gradient descent with step 1/L, run until
  // |gradient| <= tol. Throws if the iteration cap is hit first.
  const DenseVector& optimum(double tol = 1e-10) const;

  const CsrMatrix& design() const { return X_; }
  const std::vector<double>& labels() const { return y_; }
  double l2_reg() const { return l2_; }

 private:
  CsrMatrix X_;
  std::vector<double> y_;
  double l2_;

  struct Lazy;
  std::unique_ptr<Lazy> lazy_;
};

// ------------------------------------------------------- smooth non-convex
// Two-layer tanh regression network: out(u) = w2 . tanh(W1 u + b1) + b2,
// f(x) = (1/2m) sum (out(u_i) - y_i)^2. Parameters are packed
// [W1 row-major (h x d), b1 (h), w2 (h), b2 (1)], so dim = h d + 2h + 1.
// Smooth, bounded below by zero, not convex.
class SmoothNonconvexProblem final : public Problem {
 public:
  SmoothNonconvexProblem(RowMajorMatrix inputs, DenseVector targets,
                         Index hidden);

  // Deterministic synthetic instance: standard normal inputs, targets from a
  // fixed random teacher network of the same shape.
  static SmoothNonconvexProblem synth(Index m, Index d, Index hidden,
                                      std::uint64_t seed);

  Index dim() const override { return h_ * d_ + 2 * h_ + 1; }
  Index num_samples() const override { return U_.rows(); }
  std::string kind() const override { return "smooth_nonconvex"; }

  double loss(const DenseVector& x) const override;
  DenseVector gradient(const DenseVector& x) const override;
  DenseVector grad_minibatch(const DenseVector& x,
                             std::span<const Index> batch) const override;

  // No c; L is the largest gradient Lipschitz ratio observed over random
  // parameter pairs (a numeric estimate, clearly labeled as such).
  AnalyticConstants constants() const override;
  double smoothness_estimate(int pairs, double scale,
                             std::uint64_t seed) const;

  Index input_dim() const { return d_; }
  Index hidden_dim() const { return h_; }
  const RowMajorMatrix& inputs() const { return U_; }
  const DenseVector& targets() const { return y_; }

 private:
  RowMajorMatrix U_;  // m x d
  DenseVector y_;
  Index d_;
  Index h_;
};

// ------------------------------------------------------ second-moment bound
// Empirical estimate of M^2 with E |(1/P) sum_p g_p(x)|^2 <= M^2 over the
// supplied evaluation points: for each x, average over `trials` draws of P
// independent minibatch gradients; M^2 is the max of those averages.
struct SecondMomentEstimate {
  double m_squared = 0.0;
  Index argmax_point = 0;
  std::vector<double> per_point;  // mean squared norm at each x
  int P = 0;
  Index batch_size = 0;
  int trials = 0;
};

// Batches are drawn uniformly with replacement from all samples; with
// batch_size == num_samples the draw is skipped and every gradient is the
// deterministic full gradient, so the estimate equals max_x |grad f(x)|^2.
SecondMomentEstimate estimate_second_moment(const Problem& problem,
                                            const std::vector<DenseVector>& xs,
                                            int P, Index batch_size,
                                            int trials, std::uint64_t seed);

}  // namespace topksim
