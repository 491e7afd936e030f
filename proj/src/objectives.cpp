// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/objectives.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <mutex>
#include <string>

#include "topksim/errors.hpp"
#include "topksim/rng.hpp"

namespace topksim {

namespace {

void check_batch(std::span<const Index> batch, Index m) {
  if (batch.empty()) {
    throw InvalidParameterError("grad_minibatch: empty batch");
  }
  for (Index i : batch) {
    if (i < 0 || i >= m) {
      throw InvalidParameterError("grad_minibatch: sample index out of range");
    }
  }
}

// log(1 + exp(-z)) without overflow on either tail.
inline double softplus_neg(double z) {
  if (z > 0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

// sigma(-z) = 1 / (1 + exp(z)) without overflow.
inline double sigmoid_neg(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

}  // namespace

AnalyticConstants analytic_constants(const Problem& problem) {
  return problem.constants();
}

// ---------------------------------------------------------------------------
// LeastSquaresProblem

struct LeastSquaresProblem::Lazy {
  std::once_flag eig_once;
  std::once_flag opt_once;
  double c = 0.0;
  double L = 0.0;
  DenseVector optimum;
};

LeastSquaresProblem::LeastSquaresProblem(RowMajorMatrix A, DenseVector b,
                                         double l2_reg)
    : A_(std::move(A)), b_(std::move(b)), l2_(l2_reg),
      lazy_(std::make_unique<Lazy>()) {
  if (A_.rows() < 1 || A_.cols() < 1) {
    throw InvalidParameterError("LeastSquaresProblem: empty design matrix");
  }
  if (b_.size() != A_.rows()) {
    throw InvalidParameterError(
        "LeastSquaresProblem: target length does not match sample count");
  }
  if (!(l2_ >= 0.0) || !std::isfinite(l2_)) {
    throw InvalidParameterError("LeastSquaresProblem: l2_reg must be >= 0");
  }
  if (!A_.allFinite() || !b_.allFinite()) {
    throw InvalidParameterError("LeastSquaresProblem: non-finite data");
  }
  const double m = static_cast<double>(A_.rows());
  gram_.noalias() = A_.transpose() * A_;
  gram_ /= m;
  atb_.noalias() = A_.transpose() * b_;
  atb_ /= m;
  const_term_ = b_.squaredNorm() / (2.0 * m);
}

LeastSquaresProblem::~LeastSquaresProblem() = default;

double LeastSquaresProblem::loss(const DenseVector& x) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("loss: dimension mismatch");
  }
  double value = 0.5 * x.dot(gram_ * x) - atb_.dot(x) + const_term_;
  if (l2_ > 0.0) value += 0.5 * l2_ * x.squaredNorm();
  return value;
}

DenseVector LeastSquaresProblem::gradient(const DenseVector& x) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("gradient: dimension mismatch");
  }
  DenseVector g = gram_ * x - atb_;
  if (l2_ > 0.0) g += l2_ * x;
  return g;
}

DenseVector LeastSquaresProblem::grad_minibatch(
    const DenseVector& x, std::span<const Index> batch) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("grad_minibatch: dimension mismatch");
  }
  check_batch(batch, num_samples());
  DenseVector g = DenseVector::Zero(dim());
  for (Index i : batch) {
    const double r = A_.row(i).dot(x) - b_[i];
    g.noalias() += r * A_.row(i).transpose();
  }
  g /= static_cast<double>(batch.size());
  if (l2_ > 0.0) g += l2_ * x;
  return g;
}

void LeastSquaresProblem::ensure_eigs() const {
  std::call_once(lazy_->eig_once, [this] {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_,
                                                      Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
      throw InvalidParameterError("least squares: eigensolver failed");
    }
    lazy_->c = l2_ + es.eigenvalues().minCoeff();
    lazy_->L = l2_ + es.eigenvalues().maxCoeff();
  });
}

double LeastSquaresProblem::strong_convexity() const {
  ensure_eigs();
  return lazy_->c;
}

double LeastSquaresProblem::smoothness() const {
  ensure_eigs();
  return lazy_->L;
}

AnalyticConstants LeastSquaresProblem::constants() const {
  ensure_eigs();
  return {lazy_->c, lazy_->L, "analytic (Gram eigenvalue extremes)"};
}

const DenseVector& LeastSquaresProblem::known_optimum() const {
  std::call_once(lazy_->opt_once, [this] {
    Eigen::MatrixXd reg = gram_;
    if (l2_ > 0.0) reg.diagonal().array() += l2_;
    const DenseVector x = reg.ldlt().solve(atb_);
    // The optimum is only trusted if it actually satisfies the optimality
    // condition; a rank-deficient unregularized system fails here.
    const double resid = (reg * x - atb_).norm();
    if (!x.allFinite() || resid > 1e-8 * std::max(1.0, atb_.norm())) {
      throw InvalidParameterError(
          "least squares: normal equations could not be solved to 1e-8; "
          "the optimum is not unique or the system is ill-conditioned");
    }
    lazy_->optimum = x;
  });
  return lazy_->optimum;
}

// ---------------------------------------------------------------------------
// LogisticProblem

double CsrMatrix::density() const {
  if (rows == 0 || cols == 0) return 0.0;
  return static_cast<double>(values.size()) /
         (static_cast<double>(rows) * static_cast<double>(cols));
}

void CsrMatrix::validate() const {
  if (rows < 0 || cols < 0) {
    throw InvalidParameterError("CsrMatrix: negative shape");
  }
  if (row_ptr.size() != static_cast<std::size_t>(rows) + 1 ||
      row_ptr.front() != 0 ||
      row_ptr.back() != static_cast<Index>(col_idx.size()) ||
      col_idx.size() != values.size()) {
    throw InvalidParameterError("CsrMatrix: inconsistent structure");
  }
  for (Index r = 0; r < rows; ++r) {
    if (row_ptr[r + 1] < row_ptr[r]) {
      throw InvalidParameterError("CsrMatrix: row_ptr not nondecreasing");
    }
    for (Index j = row_ptr[r]; j < row_ptr[r + 1]; ++j) {
      if (col_idx[j] < 0 || col_idx[j] >= cols) {
        throw InvalidParameterError("CsrMatrix: column index out of range");
      }
      if (j > row_ptr[r] && col_idx[j] <= col_idx[j - 1]) {
        throw InvalidParameterError("CsrMatrix: columns not increasing");
      }
      if (!std::isfinite(values[j])) {
        throw InvalidParameterError("CsrMatrix: non-finite value");
      }
    }
  }
}

struct LogisticProblem::Lazy {
  std::once_flag smooth_once;
  double L = 0.0;
  std::mutex opt_mutex;
  DenseVector optimum;
  double achieved = -1.0;  // gradient norm reached; < 0 means not computed
};

LogisticProblem::LogisticProblem(CsrMatrix X, std::vector<double> labels,
                                 double l2_reg)
    : X_(std::move(X)), y_(std::move(labels)), l2_(l2_reg),
      lazy_(std::make_unique<Lazy>()) {
  X_.validate();
  if (X_.rows < 1 || X_.cols < 1) {
    throw InvalidParameterError("LogisticProblem: empty design matrix");
  }
  if (y_.size() != static_cast<std::size_t>(X_.rows)) {
    throw InvalidParameterError("LogisticProblem: label count mismatch");
  }
  for (double y : y_) {
    if (y != -1.0 && y != 1.0) {
      throw InvalidParameterError("LogisticProblem: labels must be -1 or +1");
    }
  }
  if (!(l2_ > 0.0) || !std::isfinite(l2_)) {
    throw InvalidParameterError("LogisticProblem: l2_reg must be > 0");
  }
}

LogisticProblem::~LogisticProblem() = default;

namespace {

inline double csr_row_dot(const CsrMatrix& X, Index r, const DenseVector& x) {
  double acc = 0.0;
  for (Index j = X.row_ptr[r]; j < X.row_ptr[r + 1]; ++j) {
    acc += X.values[j] * x[X.col_idx[j]];
  }
  return acc;
}

inline void csr_row_axpy(const CsrMatrix& X, Index r, double a,
                         DenseVector& out) {
  for (Index j = X.row_ptr[r]; j < X.row_ptr[r + 1]; ++j) {
    out[X.col_idx[j]] += a * X.values[j];
  }
}

}  // namespace

double LogisticProblem::loss(const DenseVector& x) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("loss: dimension mismatch");
  }
  double acc = 0.0;
  for (Index r = 0; r < X_.rows; ++r) {
    acc += softplus_neg(y_[r] * csr_row_dot(X_, r, x));
  }
  return acc / static_cast<double>(X_.rows) + 0.5 * l2_ * x.squaredNorm();
}

DenseVector LogisticProblem::gradient(const DenseVector& x) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("gradient: dimension mismatch");
  }
  DenseVector g = DenseVector::Zero(dim());
  for (Index r = 0; r < X_.rows; ++r) {
    const double z = y_[r] * csr_row_dot(X_, r, x);
    csr_row_axpy(X_, r, -y_[r] * sigmoid_neg(z), g);
  }
  g /= static_cast<double>(X_.rows);
  g += l2_ * x;
  return g;
}

DenseVector LogisticProblem::grad_minibatch(
    const DenseVector& x, std::span<const Index> batch) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("grad_minibatch: dimension mismatch");
  }
  check_batch(batch, num_samples());
  DenseVector g = DenseVector::Zero(dim());
  for (Index r : batch) {
    const double z = y_[r] * csr_row_dot(X_, r, x);
    csr_row_axpy(X_, r, -y_[r] * sigmoid_neg(z), g);
  }
  g /= static_cast<double>(batch.size());
  g += l2_ * x;
  return g;
}

double LogisticProblem::smoothness() const {
  std::call_once(lazy_->smooth_once, [this] {
    // Power iteration for lambda_max(X^T X) via v -> X^T (X v).
    CounterRng rng(0x746f706b73696dull, 0, stream_tag::kPowerIter, 0);
    DenseVector v(dim());
    for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform() - 0.5;
    if (v.norm() == 0.0) v[0] = 1.0;
    v /= v.norm();
    double lam = 0.0;
    DenseVector xv(X_.rows);
    DenseVector w(dim());
    for (int it = 0; it < 50000; ++it) {
      for (Index r = 0; r < X_.rows; ++r) xv[r] = csr_row_dot(X_, r, v);
      w.setZero();
      for (Index r = 0; r < X_.rows; ++r) csr_row_axpy(X_, r, xv[r], w);
      const double next = v.dot(w);  // Rayleigh quotient
      const double wn = w.norm();
      if (wn == 0.0) {
        lam = 0.0;
        break;
      }
      v = w / wn;
      if (it > 0 && std::fabs(next - lam) <= 1e-13 * std::max(next, 1e-30)) {
        lam = next;
        break;
      }
      lam = next;
    }
    lazy_->L =
        l2_ + lam / (4.0 * static_cast<double>(X_.rows));
  });
  return lazy_->L;
}

AnalyticConstants LogisticProblem::constants() const {
  return {l2_, smoothness(), "analytic (L via power iteration)"};
}

const DenseVector& LogisticProblem::optimum(double tol) const {
  std::scoped_lock lock(lazy_->opt_mutex);
  if (lazy_->achieved >= 0.0 && lazy_->achieved <= tol) {
    return lazy_->optimum;
  }
  const double step = 1.0 / smoothness();
  DenseVector x = lazy_->achieved >= 0.0 ? lazy_->optimum
                                         : DenseVector::Zero(dim());
  constexpr int kMaxIters = 2000000;
  for (int it = 0; it < kMaxIters; ++it) {
    const DenseVector g = gradient(x);
    const double gn = g.norm();
    if (gn <= tol) {
      lazy_->optimum = std::move(x);
      lazy_->achieved = gn;
      return lazy_->optimum;
    }
    x -= step * g;
  }
  throw InvalidParameterError(
      "logistic optimum: gradient descent did not reach the tolerance");
}

// ---------------------------------------------------------------------------
// SmoothNonconvexProblem

SmoothNonconvexProblem::SmoothNonconvexProblem(RowMajorMatrix inputs,
                                               DenseVector targets,
                                               Index hidden)
    : U_(std::move(inputs)), y_(std::move(targets)), d_(U_.cols()),
      h_(hidden) {
  if (U_.rows() < 1 || d_ < 1 || h_ < 1) {
    throw InvalidParameterError("SmoothNonconvexProblem: empty shape");
  }
  if (y_.size() != U_.rows()) {
    throw InvalidParameterError("SmoothNonconvexProblem: target count");
  }
  if (!U_.allFinite() || !y_.allFinite()) {
    throw InvalidParameterError("SmoothNonconvexProblem: non-finite data");
  }
}

namespace {

struct NetView {
  Eigen::Map<const RowMajorMatrix> W1;
  Eigen::Map<const DenseVector> b1;
  Eigen::Map<const DenseVector> w2;
  double b2;

  NetView(const DenseVector& x, Index h, Index d)
      : W1(x.data(), h, d),
        b1(x.data() + h * d, h),
        w2(x.data() + h * d + h, h),
        b2(x[h * d + 2 * h]) {}
};

}  // namespace

double SmoothNonconvexProblem::loss(const DenseVector& x) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("loss: dimension mismatch");
  }
  const NetView net(x, h_, d_);
  double acc = 0.0;
  DenseVector ha(h_);
  for (Index i = 0; i < U_.rows(); ++i) {
    ha.noalias() = net.W1 * U_.row(i).transpose();
    ha += net.b1;
    ha = ha.array().tanh();
    const double e = net.w2.dot(ha) + net.b2 - y_[i];
    acc += 0.5 * e * e;
  }
  return acc / static_cast<double>(U_.rows());
}

namespace {

// Shared by gradient and grad_minibatch: mean gradient over the given rows.
DenseVector net_grad(const RowMajorMatrix& U, const DenseVector& y,
                     const DenseVector& x, Index h, Index d,
                     std::span<const Index> rows) {
  const NetView net(x, h, d);
  DenseVector out = DenseVector::Zero(x.size());
  Eigen::Map<RowMajorMatrix> gW1(out.data(), h, d);
  Eigen::Map<DenseVector> gb1(out.data() + h * d, h);
  Eigen::Map<DenseVector> gw2(out.data() + h * d + h, h);
  double& gb2 = out[h * d + 2 * h];

  DenseVector ha(h), delta(h);
  for (Index i : rows) {
    ha.noalias() = net.W1 * U.row(i).transpose();
    ha += net.b1;
    ha = ha.array().tanh();
    const double e = net.w2.dot(ha) + net.b2 - y[i];
    gw2.noalias() += e * ha;
    gb2 += e;
    delta = (e * net.w2.array() * (1.0 - ha.array().square())).matrix();
    gW1.noalias() += delta * U.row(i);
    gb1 += delta;
  }
  out /= static_cast<double>(rows.size());
  return out;
}

}  // namespace

DenseVector SmoothNonconvexProblem::gradient(const DenseVector& x) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("gradient: dimension mismatch");
  }
  std::vector<Index> all(static_cast<std::size_t>(U_.rows()));
  for (Index i = 0; i < U_.rows(); ++i) all[static_cast<std::size_t>(i)] = i;
  return net_grad(U_, y_, x, h_, d_, all);
}

DenseVector SmoothNonconvexProblem::grad_minibatch(
    const DenseVector& x, std::span<const Index> batch) const {
  if (x.size() != dim()) {
    throw InvalidParameterError("grad_minibatch: dimension mismatch");
  }
  check_batch(batch, num_samples());
  return net_grad(U_, y_, x, h_, d_, batch);
}

SmoothNonconvexProblem SmoothNonconvexProblem::synth(Index m, Index d,
                                                     Index hidden,
                                                     std::uint64_t seed) {
  if (m < 1 || d < 1 || hidden < 1) {
    throw InvalidParameterError("synth: shape must be positive");
  }
  RowMajorMatrix U(m, d);
  CounterRng in_rng(seed, 0, stream_tag::kNetInputs, 0);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < d; ++j) U(i, j) = in_rng.normal();
  }
  // Fixed random teacher of the same architecture generates the targets.
  const Index n = hidden * d + 2 * hidden + 1;
  DenseVector teacher(n);
  CounterRng t_rng(seed, 0, stream_tag::kNetTeacher, 0);
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double w2_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Index j = 0; j < hidden * d; ++j) teacher[j] = w1_scale * t_rng.normal();
  for (Index j = hidden * d; j < hidden * d + hidden; ++j) {
    teacher[j] = 0.1 * t_rng.normal();
  }
  for (Index j = hidden * d + hidden; j < hidden * d + 2 * hidden; ++j) {
    teacher[j] = w2_scale * t_rng.normal();
  }
  teacher[n - 1] = 0.1 * t_rng.normal();

  const NetView net(teacher, hidden, d);
  DenseVector y(m);
  DenseVector ha(hidden);
  for (Index i = 0; i < m; ++i) {
    ha.noalias() = net.W1 * U.row(i).transpose();
    ha += net.b1;
    ha = ha.array().tanh();
    y[i] = net.w2.dot(ha) + net.b2;
  }
  return SmoothNonconvexProblem(std::move(U), std::move(y), hidden);
}

double SmoothNonconvexProblem::smoothness_estimate(int pairs, double scale,
                                                   std::uint64_t seed) const {
  if (pairs < 1 || !(scale > 0.0)) {
    throw InvalidParameterError("smoothness_estimate: bad arguments");
  }
  CounterRng rng(seed, 0, stream_tag::kSmoothnessProbe, 0);
  const Index n = dim();
  double best = 0.0;
  DenseVector a(n), b(n);
  for (int p = 0; p < pairs; ++p) {
    for (Index i = 0; i < n; ++i) a[i] = scale * rng.normal();
    for (Index i = 0; i < n; ++i) b[i] = scale * rng.normal();
    const double dist = (a - b).norm();
    if (dist == 0.0) continue;
    const double ratio = (gradient(a) - gradient(b)).norm() / dist;
    best = std::max(best, ratio);
  }
  return best;
}

AnalyticConstants SmoothNonconvexProblem::constants() const {
  return {std::nullopt, smoothness_estimate(200, 1.0, 0x6d6c70ull),
          "estimated (gradient Lipschitz ratio over sampled pairs)"};
}

// ---------------------------------------------------------------------------
// Second-moment estimation

SecondMomentEstimate estimate_second_moment(const Problem& problem,
                                            const std::vector<DenseVector>& xs,
                                            int P, Index batch_size,
                                            int trials, std::uint64_t seed) {
  if (xs.empty()) {
    throw InvalidParameterError("estimate_second_moment: no evaluation points");
  }
  const Index m = problem.num_samples();
  if (P < 1 || trials < 1 || batch_size < 1 || batch_size > m) {
    throw InvalidParameterError("estimate_second_moment: bad parameters");
  }
  const bool full_batch = batch_size == m;
  std::vector<Index> batch(static_cast<std::size_t>(batch_size));
  if (full_batch) {
    for (Index i = 0; i < m; ++i) batch[static_cast<std::size_t>(i)] = i;
  }

  SecondMomentEstimate est;
  est.P = P;
  est.batch_size = batch_size;
  est.trials = trials;
  est.per_point.reserve(xs.size());
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    double mean_sq = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
      DenseVector avg = DenseVector::Zero(problem.dim());
      for (int p = 0; p < P; ++p) {
        if (!full_batch) {
          CounterRng rng(seed, static_cast<std::uint32_t>(p),
                         stream_tag::kSecondMoment,
                         static_cast<std::uint64_t>(xi) *
                                 static_cast<std::uint64_t>(trials) +
                             static_cast<std::uint64_t>(trial));
          for (auto& idx : batch) {
            idx = static_cast<Index>(
                rng.uniform_below(static_cast<std::uint64_t>(m)));
          }
        }
        avg += problem.grad_minibatch(xs[xi], batch);
      }
      avg /= static_cast<double>(P);
      mean_sq += avg.squaredNorm();
    }
    mean_sq /= static_cast<double>(trials);
    est.per_point.push_back(mean_sq);
    if (mean_sq > est.m_squared) {
      est.m_squared = mean_sq;
      est.argmax_point = static_cast<Index>(xi);
    }
  }
  return est;
}

}  // namespace topksim
