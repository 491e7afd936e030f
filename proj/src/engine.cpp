// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "topksim/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace topksim {

namespace {

constexpr double kViewNormLimit = 1e12;  // past this the run is declared lost
constexpr std::int64_t kGramRefreshPeriod = 512;
constexpr std::int64_t kIndexBytes = 4;  // payload index width on the wire
constexpr std::int64_t kValueBytes = 8;

std::vector<Index> random_subset(Index n, Index k, CounterRng& rng) {
  // Partial Fisher-Yates: after i swaps the prefix holds a uniform
  // i-subset in random order.
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    const auto j =
        i + static_cast<Index>(rng.uniform_below(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

std::string compressor_name(CompressorKind kind) {
  switch (kind) {
    case CompressorKind::kTopK:
      return "topk";
    case CompressorKind::kRandomK:
      return "randomk";
    case CompressorKind::kIdentity:
      return "identity";
  }
  return "unknown";
}

CompressResult compress(const DenseVector& acc, Index K, CompressorKind kind,
                        CounterRng& rng) {
  const Index n = acc.size();
  CompressResult out;
  switch (kind) {
    case CompressorKind::kTopK:
      // residual() repeats the same deterministic selection, so the error
      // is exactly zero on the selected set (all of it when K = n).
      out.payload = top_k(acc, K);
      out.error = residual(acc, K);
      return out;
    case CompressorKind::kRandomK: {
      if (K < 1 || K > n) {
        throw InvalidParameterError("compress: need 1 <= K <= dim");
      }
      if (!acc.allFinite()) {
        throw InvalidParameterError("compress: accumulator must be finite");
      }
      const std::vector<Index> picks = random_subset(n, K, rng);
      out.payload.dim = n;
      out.error = acc;
      for (Index idx : picks) {
        const double val = acc[idx];
        if (val != 0.0) {
          out.payload.indices.push_back(idx);
          out.payload.values.push_back(val);
        }
        out.error[idx] = 0.0;
      }
      return out;
    }
    case CompressorKind::kIdentity:
      // Bitwise the top-K path at K = n: full payload, exactly zero error.
      out.payload = top_k(acc, n);
      out.error = DenseVector::Zero(n);
      return out;
  }
  throw InvalidParameterError("compress: unknown compressor kind");
}

// ------------------------------------------------------------ instrumentation

// Per-step loss/gradient probes over the full objective.
class Instrumentor {
 public:
  virtual ~Instrumentor() = default;
  virtual void reset(const DenseVector& v, const DenseVector& x) = 0;
  // Called after v -> v - applied (nonzeros confined to `support`, sorted)
  // and x moved densely.
  virtual void advance(const DenseVector& v, const DenseVector& x,
                       const DenseVector& applied,
                       const std::vector<Index>& support) = 0;
  virtual double loss_v(const DenseVector& v) = 0;
  virtual double loss_x(const DenseVector& x) = 0;
  virtual double grad_norm_sq_v(const DenseVector& v) = 0;
};

namespace {

class GenericInstrumentor final : public Instrumentor {
 public:
  explicit GenericInstrumentor(const Problem& problem) : problem_(problem) {}

  void reset(const DenseVector&, const DenseVector&) override {}
  void advance(const DenseVector&, const DenseVector&, const DenseVector&,
               const std::vector<Index>&) override {}
  double loss_v(const DenseVector& v) override { return problem_.loss(v); }
  double loss_x(const DenseVector& x) override { return problem_.loss(x); }
  double grad_norm_sq_v(const DenseVector& v) override {
    return problem_.gradient(v).squaredNorm();
  }

 private:
  const Problem& problem_;
};

// Least-squares probes via the cached Gram matrix: s_v = G v is advanced
// incrementally when the applied update has small support (a full refresh
// every kGramRefreshPeriod steps stops drift); s_x = G x is a fresh product
// each step because x moves densely. The path choice depends only on the
// support size and the step counter, never on the compressor, so runs that
// produce identical iterates stay bitwise identical here too.
class LeastSquaresInstrumentor final : public Instrumentor {
 public:
  explicit LeastSquaresInstrumentor(const LeastSquaresProblem& problem)
      : problem_(problem) {}

  void reset(const DenseVector& v, const DenseVector& x) override {
    s_v_ = problem_.gram() * v;
    s_x_ = problem_.gram() * x;
    steps_ = 0;
  }

  void advance(const DenseVector& v, const DenseVector& x,
               const DenseVector& applied,
               const std::vector<Index>& support) override {
    ++steps_;
    const Index n = v.size();
    const bool sparse_path =
        static_cast<Index>(support.size()) <= n / 4 &&
        steps_ % kGramRefreshPeriod != 0;
    if (sparse_path) {
      for (Index j : support) {
        const double gj = applied[j];
        if (gj != 0.0) s_v_.noalias() -= gj * problem_.gram().col(j);
      }
    } else {
      s_v_.noalias() = problem_.gram() * v;
    }
    s_x_.noalias() = problem_.gram() * x;
  }

  double loss_v(const DenseVector& v) override { return loss_from(v, s_v_); }
  double loss_x(const DenseVector& x) override { return loss_from(x, s_x_); }

  double grad_norm_sq_v(const DenseVector& v) override {
    const double l2 = problem_.l2_reg();
    double sq = 0.0;
    const DenseVector& atb = problem_.gram_rhs();
    for (Index i = 0; i < v.size(); ++i) {
      const double gi = s_v_[i] - atb[i] + l2 * v[i];
      sq += gi * gi;
    }
    return sq;
  }

 private:
  double loss_from(const DenseVector& p, const DenseVector& s) const {
    return 0.5 * p.dot(s) - problem_.gram_rhs().dot(p) +
           problem_.loss_const_term() + 0.5 * problem_.l2_reg() * p.squaredNorm();
  }

  const LeastSquaresProblem& problem_;
  DenseVector s_v_;
  DenseVector s_x_;
  std::int64_t steps_ = 0;
};

std::unique_ptr<Instrumentor> make_instrumentor(const Problem& problem) {
  if (const auto* ls = dynamic_cast<const LeastSquaresProblem*>(&problem)) {
    return std::make_unique<LeastSquaresInstrumentor>(*ls);
  }
  return std::make_unique<GenericInstrumentor>(problem);
}

}  // namespace

// ------------------------------------------------------------------- engine

DivergenceError::DivergenceError(std::int64_t t, int node, Trace partial)
    : std::runtime_error("run diverged at step " + std::to_string(t) +
                         (node >= 0 ? " on node " + std::to_string(node)
                                    : std::string(" in the aggregate"))),
      t_(t),
      node_(node),
      partial_(std::move(partial)) {}

Engine::Engine(const Problem& problem, RunConfig config, ExecOptions exec)
    : problem_(problem), config_(std::move(config)), exec_(exec) {
  n_ = problem_.dim();
  if (config_.P < 1) {
    throw InvalidParameterError("engine: P must be >= 1");
  }
  if (config_.T < 1) {
    throw InvalidParameterError("engine: T must be >= 1");
  }
  if (config_.batch_size < 1) {
    throw InvalidParameterError("engine: batch_size must be >= 1");
  }
  config_.schedule.validate();
  k_eff_ = config_.K == 0 ? n_ : config_.K;
  if (k_eff_ < 1 || k_eff_ > n_) {
    throw InvalidParameterError("engine: need 1 <= K <= dim");
  }
  config_.K = k_eff_;  // the trace echoes the resolved value
  gamma_ = gamma_for(n_, k_eff_);
  if (exec_.threads < 1) {
    throw InvalidParameterError("engine: threads must be >= 1");
  }

  DenseVector v0 = DenseVector::Zero(n_);
  if (config_.init.has_value()) {
    if (config_.init->size() != n_) {
      throw InvalidParameterError("engine: init dimension mismatch");
    }
    if (!config_.init->allFinite()) {
      throw InvalidParameterError("engine: init must be finite");
    }
    v0 = *config_.init;
  }

  auto shards = partition(problem_.num_samples(), config_.P, config_.seed,
                          config_.partition);
  nodes_.resize(static_cast<std::size_t>(config_.P));
  for (int p = 0; p < config_.P; ++p) {
    nodes_[static_cast<std::size_t>(p)] =
        NodeState{p, std::move(shards[static_cast<std::size_t>(p)]),
                  DenseVector::Zero(n_)};
  }

  world_.v = v0;
  world_.x_aux = v0;
  world_.step = 0;

  grads_.resize(nodes_.size());
  accs_.resize(nodes_.size());
  payloads_.resize(nodes_.size());
  grad_finite_.assign(nodes_.size(), 1);
  telescope_ = DenseVector::Zero(n_);

  instrumentor_ = make_instrumentor(problem_);
  instrumentor_->reset(world_.v, world_.x_aux);
  initial_loss_v_ = instrumentor_->loss_v(world_.v);
  initial_loss_x_ = instrumentor_->loss_x(world_.x_aux);
  if (!std::isfinite(initial_loss_v_)) {
    throw InvalidParameterError("engine: loss at the initial point is not finite");
  }
  prev_gap_norm_ = 0.0;
  summary_.min_lemma1_slack = std::numeric_limits<double>::quiet_NaN();
}

Engine::~Engine() = default;

Trace Engine::make_trace() const {
  Trace tr;
  tr.config = config_;
  tr.problem_kind = problem_.kind();
  tr.dim = n_;
  tr.num_samples = problem_.num_samples();
  tr.initial_loss_v = initial_loss_v_;
  tr.initial_loss_x = initial_loss_x_;
  tr.records = records_;
  tr.final_v = world_.v;
  tr.final_x = world_.x_aux;
  tr.summary = summary_;
  DenseVector x_from_sums =
      (config_.init.has_value() ? *config_.init : DenseVector::Zero(n_)) -
      telescope_;
  tr.summary.telescope_inf =
      (world_.x_aux - x_from_sums).lpNorm<Eigen::Infinity>();
  return tr;
}

void Engine::throw_divergence(std::int64_t t, int node) {
  summary_.diverged_at = t;
  throw DivergenceError(t, node, make_trace());
}

void Engine::check_node_finite(std::int64_t t) {
  for (std::size_t p = 0; p < nodes_.size(); ++p) {
    if (!grad_finite_[p]) throw_divergence(t, static_cast<int>(p));
  }
}

StepRecord Engine::step(StepObserver* observer) {
  if (world_.step >= config_.T) {
    throw InvalidParameterError("engine: all T steps already taken");
  }
  const std::int64_t t = world_.step + 1;
  const double alpha = config_.schedule.alpha(t);
  const int P = config_.P;
  const auto m = static_cast<std::uint64_t>(problem_.num_samples());

  // Node phase: gradient, accumulate, compress. Each worker touches only
  // its own slot; the shared view is read-only here.
  auto node_work = [&](int p) {
    const auto sp = static_cast<std::size_t>(p);
    NodeState& node = nodes_[sp];
    CounterRng rng(config_.seed, static_cast<std::uint32_t>(p),
                   stream_tag::kBatch, static_cast<std::uint32_t>(t));
    std::vector<Index> batch(static_cast<std::size_t>(config_.batch_size));
    if (config_.global_sampling) {
      for (Index& b : batch) {
        b = static_cast<Index>(rng.uniform_below(m));
      }
    } else {
      const std::vector<Index>& own = node.shard.sample_indices;
      for (Index& b : batch) {
        b = own[static_cast<std::size_t>(
            rng.uniform_below(static_cast<std::uint64_t>(own.size())))];
      }
    }
    grads_[sp] = problem_.grad_minibatch(world_.v, batch);
    if (!grads_[sp].allFinite()) {
      grad_finite_[sp] = 0;
      return;
    }
    accs_[sp] = node.error + alpha * grads_[sp];
    if (!accs_[sp].allFinite()) {
      grad_finite_[sp] = 0;
      return;
    }
    grad_finite_[sp] = 1;
    CounterRng crng(config_.seed, static_cast<std::uint32_t>(p),
                    stream_tag::kCompress, static_cast<std::uint32_t>(t));
    CompressResult cr = compress(accs_[sp], k_eff_, config_.compressor, crng);
    payloads_[sp] = std::move(cr.payload);
    node.error = std::move(cr.error);
  };

#ifdef _OPENMP
  if (exec_.mode == ExecMode::kParallel) {
#pragma omp parallel for num_threads(exec_.threads) schedule(static)
    for (int p = 0; p < P; ++p) node_work(p);
  } else {
    for (int p = 0; p < P; ++p) node_work(p);
  }
#else
  for (int p = 0; p < P; ++p) node_work(p);
#endif

  check_node_finite(t);

  // Aggregation, strictly in node order. The x iterate sums the same
  // alpha-scaled per-node terms the accumulators received, so a run whose
  // errors stay exactly zero (dense payloads) keeps v and x bitwise equal.
  DenseVector avg_grad = grads_[0];
  DenseVector alpha_grad = alpha * grads_[0];
  for (int p = 1; p < P; ++p) {
    const auto sp = static_cast<std::size_t>(p);
    avg_grad += grads_[sp];
    alpha_grad += alpha * grads_[sp];
  }
  avg_grad *= 1.0 / static_cast<double>(P);
  alpha_grad *= 1.0 / static_cast<double>(P);
  const DenseVector applied = aggregate_fixed_order(payloads_, P);

  world_.v -= applied;
  world_.x_aux -= alpha_grad;
  telescope_ += alpha_grad;
  world_.step = t;

  if (!world_.v.allFinite() || !world_.x_aux.allFinite() ||
      world_.v.lpNorm<Eigen::Infinity>() > kViewNormLimit) {
    throw_divergence(t, -1);
  }

  // Conservation of the average local error against the view gap.
  DenseVector mean_err = nodes_[0].error;
  for (int p = 1; p < P; ++p) mean_err += nodes_[static_cast<std::size_t>(p)].error;
  mean_err *= 1.0 / static_cast<double>(P);
  const double conservation =
      ((world_.v - world_.x_aux) - mean_err).lpNorm<Eigen::Infinity>();
  summary_.max_conservation_inf =
      std::max(summary_.max_conservation_inf, conservation);

  const double gap_norm = (world_.v - world_.x_aux).norm();
  const double step_norm = alpha_grad.norm();
  if (step_norm == 0.0) ++summary_.zero_grad_steps;

  const bool want_xi = config_.record_xi || config_.record_lemma_slack ||
                       observer != nullptr;
  XiMeasurement xim;
  if (want_xi) {
    xim = measure_xi(accs_, alpha_grad, k_eff_, P);
    xim.t = t;
  }

  std::optional<double> slack;
  if (config_.record_lemma_slack) {
    // One-step contraction: new gap <= gamma * old gap +
    // (gamma + xi/P) * ||x step||. A zero-length x step contributes zero
    // even when the xi ratio is unbounded there.
    const double second =
        step_norm > 0.0
            ? (gamma_ + xim.xi / static_cast<double>(P)) * step_norm
            : 0.0;
    slack = gamma_ * prev_gap_norm_ + second - gap_norm;
    if (std::isnan(summary_.min_lemma1_slack) ||
        *slack < summary_.min_lemma1_slack) {
      summary_.min_lemma1_slack = *slack;
    }
  }
  prev_gap_norm_ = gap_norm;

  // Union support of the applied update, for the incremental probes.
  std::vector<Index> support;
  for (const SparseVector& payload : payloads_) {
    support.insert(support.end(), payload.indices.begin(),
                   payload.indices.end());
  }
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());
  instrumentor_->advance(world_.v, world_.x_aux, applied, support);

  StepRecord rec;
  rec.t = t;
  rec.loss_v = instrumentor_->loss_v(world_.v);
  rec.loss_x = instrumentor_->loss_x(world_.x_aux);
  rec.gap_norm = gap_norm;
  rec.grad_norm_sq_v = instrumentor_->grad_norm_sq_v(world_.v);
  if (config_.record_xi) rec.xi_t = xim.xi;
  if (config_.record_lemma_slack) rec.lemma1_slack = slack;
  rec.bytes_sent_per_node = config_.compressor == CompressorKind::kIdentity
                                ? n_ * kValueBytes
                                : k_eff_ * (kIndexBytes + kValueBytes);
  if (!std::isfinite(rec.loss_v) || !std::isfinite(rec.loss_x) ||
      !std::isfinite(rec.grad_norm_sq_v)) {
    throw_divergence(t, -1);
  }
  records_.push_back(rec);

  if (observer != nullptr) {
    StepDiagnostics diag;
    diag.t = t;
    diag.alpha = alpha;
    diag.accs = &accs_;
    diag.payloads = &payloads_;
    diag.avg_grad = &avg_grad;
    diag.applied = &applied;
    diag.v = &world_.v;
    diag.x = &world_.x_aux;
    diag.step_norm = step_norm;
    diag.gap_norm = gap_norm;
    diag.conservation_inf = conservation;
    diag.xi = want_xi ? &xim : nullptr;
    // Error vectors live inside the node states; snapshot them into a
    // contiguous buffer for the observer.
    errors_view_.clear();
    errors_view_.reserve(nodes_.size());
    for (const NodeState& node : nodes_) errors_view_.push_back(node.error);
    diag.errors = &errors_view_;
    observer->on_step(diag);
  }
  return rec;
}

Trace Engine::run(StepObserver* observer) {
  while (world_.step < config_.T) {
    step(observer);
  }
  return make_trace();
}

Trace run_simulation(const Problem& problem, const RunConfig& config,
                     const ExecOptions& exec, StepObserver* observer) {
  Engine engine(problem, config, exec);
  return engine.run(observer);
}

}  // namespace topksim
