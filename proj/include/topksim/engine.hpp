// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Barrier-synchronous simulator of data-parallel SGD with per-node gradient
// compression and local error accumulation. Each step: every node adds its
// scaled minibatch gradient to its error accumulator, transmits a compressed
// payload, and keeps the residual; the driver applies the node-order average
// of the payloads to the shared view v and the average uncompressed gradient
// to the auxiliary iterate x.

#ifndef TOPKSIM_ENGINE_HPP_
#define TOPKSIM_ENGINE_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "topksim/analysis.hpp"
#include "topksim/data.hpp"
#include "topksim/objectives.hpp"
#include "topksim/rng.hpp"
#include "topksim/schedule.hpp"
#include "topksim/vec.hpp"

namespace topksim {

enum class CompressorKind { kTopK, kRandomK, kIdentity };

std::string compressor_name(CompressorKind kind);

enum class ExecMode { kSequential, kParallel };

// Execution shape only; never part of a trace, because modes are
// bitwise-equivalent by contract.
struct ExecOptions {
  ExecMode mode = ExecMode::kSequential;
  int threads = 1;
};

struct CompressResult {
  SparseVector payload;
  DenseVector error;  // what the node keeps: acc - densify(payload)
};

// kTopK: magnitude selection, error = complement of the selected set.
// kRandomK: K coordinates drawn uniformly without replacement from rng.
// kIdentity: the whole vector, zero error; K is ignored.
// Zeroing is exact: payload values are bitwise copies of acc entries and
// the error is exactly zero on the selected set.
CompressResult compress(const DenseVector& acc, Index K, CompressorKind kind,
                        CounterRng& rng);

struct NodeState {
  int node_id = 0;
  Shard shard;
  DenseVector error;  // epsilon_p, zero at t = 0
};

struct WorldState {
  DenseVector v;      // shared view, identical on every node
  DenseVector x_aux;  // untruncated-gradient iterate
  std::int64_t step = 0;
};

struct RunConfig {
  int P = 1;
  Index K = 0;  // kept components; 0 means dense (resolved to dim at start)
  std::int64_t T = 1;
  Index batch_size = 1;
  std::uint64_t seed = 42;
  CompressorKind compressor = CompressorKind::kTopK;
  LearningRateSchedule schedule;
  PartitionMode partition = PartitionMode::kContiguous;
  bool global_sampling = false;  // sample minibatches from all data, not shards
  bool record_xi = true;
  bool record_lemma_slack = true;
  std::optional<DenseVector> init;  // v_0 override; default is the origin
};

struct StepRecord {
  std::int64_t t = 0;
  double loss_v = 0.0;
  double loss_x = 0.0;
  double gap_norm = 0.0;        // ||v - x||
  double grad_norm_sq_v = 0.0;  // ||grad f(v)||^2, full objective
  std::optional<double> xi_t;
  std::optional<double> lemma1_slack;
  std::int64_t bytes_sent_per_node = 0;
};

struct TraceSummary {
  double max_conservation_inf = 0.0;  // max_t ||v - x - mean error||_inf
  double min_lemma1_slack = 0.0;      // NaN when slack was never recorded
  double telescope_inf = 0.0;  // ||x_T - (x_0 - sum alpha_t g_t)||_inf
  std::int64_t zero_grad_steps = 0;   // steps whose xi ratio is undefined
  std::int64_t diverged_at = -1;      // step of divergence, -1 = completed
};

struct Trace {
  RunConfig config;  // echo; K resolved, init recorded
  std::string problem_kind;
  Index dim = 0;
  Index num_samples = 0;
  double initial_loss_v = 0.0;
  double initial_loss_x = 0.0;
  std::vector<StepRecord> records;
  DenseVector final_v;
  DenseVector final_x;
  TraceSummary summary;
};

// Thrown when any per-node gradient, aggregate, or instrumented value goes
// non-finite (or the view norm explodes). Carries what completed so far.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int64_t t, int node, Trace partial);

  std::int64_t step() const { return t_; }
  int node() const { return node_; }  // -1 means the aggregate, not a node
  const Trace& partial_trace() const { return partial_; }

 private:
  std::int64_t t_;
  int node_;
  Trace partial_;
};

// Everything a step produced, for observers that need more than StepRecord:
// per-node accumulators/payloads/errors and the aggregate vectors.
struct StepDiagnostics {
  std::int64_t t = 0;
  double alpha = 0.0;
  const std::vector<DenseVector>* accs = nullptr;
  const std::vector<SparseVector>* payloads = nullptr;
  const std::vector<DenseVector>* errors = nullptr;
  const DenseVector* avg_grad = nullptr;  // mean minibatch gradient at v_{t-1}
  const DenseVector* applied = nullptr;   // aggregated payload mean g_t
  const DenseVector* v = nullptr;         // post-step
  const DenseVector* x = nullptr;         // post-step
  double step_norm = 0.0;                 // alpha * ||avg_grad||
  double gap_norm = 0.0;
  double conservation_inf = 0.0;
  const XiMeasurement* xi = nullptr;  // null when xi was not computed
};

class StepObserver {
 public:
  virtual ~StepObserver() = default;
  virtual void on_step(const StepDiagnostics& diag) = 0;
};

// Loss/gradient instrumentation per step. The least-squares specialization
// tracks Gram products incrementally so desk-scale runs stay cheap.
class Instrumentor;

class Engine {
 public:
  Engine(const Problem& problem, RunConfig config, ExecOptions exec = {});
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const WorldState& world() const { return world_; }
  const std::vector<NodeState>& nodes() const { return nodes_; }
  const RunConfig& config() const { return config_; }

  // Advances one step; records per `config`. Throws DivergenceError.
  StepRecord step(StepObserver* observer = nullptr);

  // Runs the remaining steps up to T from the current state and returns the
  // full trace. Records length equals T when called on a fresh engine.
  Trace run(StepObserver* observer = nullptr);

 private:
  Trace make_trace() const;
  void check_node_finite(std::int64_t t);
  [[noreturn]] void throw_divergence(std::int64_t t, int node);

  const Problem& problem_;
  RunConfig config_;
  ExecOptions exec_;
  Index n_ = 0;
  Index k_eff_ = 0;
  double gamma_ = 0.0;
  WorldState world_;
  std::vector<NodeState> nodes_;
  std::unique_ptr<Instrumentor> instrumentor_;

  // Per-node scratch, indexed by node id; workers own their slot.
  std::vector<DenseVector> grads_;
  std::vector<DenseVector> accs_;
  std::vector<SparseVector> payloads_;
  std::vector<signed char> grad_finite_;
  std::vector<DenseVector> errors_view_;  // observer snapshot buffer

  DenseVector telescope_;  // independent accumulation of alpha_t * avg grad
  double initial_loss_v_ = 0.0;
  double initial_loss_x_ = 0.0;
  double prev_gap_norm_ = 0.0;
  std::vector<StepRecord> records_;
  TraceSummary summary_;
};

// Builds an engine and runs all T steps.
Trace run_simulation(const Problem& problem, const RunConfig& config,
                     const ExecOptions& exec = {},
                     StepObserver* observer = nullptr);

}  // namespace topksim

#endif  // TOPKSIM_ENGINE_HPP_
