// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Configuration-driven experiment orchestration: builds the problem, expands
// sweeps, executes runs, applies invariant gates, and writes every artifact
// (traces, summary CSV, measurement series, bound reports) under the
// configured output directory.

#ifndef TOPKSIM_EXPERIMENT_HPP_
#define TOPKSIM_EXPERIMENT_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "topksim/config.hpp"

namespace topksim {

// A constructed problem plus whatever ground truth its kind provides.
struct ProblemBundle {
  std::unique_ptr<Problem> problem;
  bool has_optimum = false;
  DenseVector optimum;           // valid iff has_optimum
  double loss_at_optimum = 0.0;  // valid iff has_optimum
  std::string optimum_source;
};

// data_seed falls back to the master seed when the config leaves it unset,
// so changing --seed regenerates synthetic data unless data_seed is pinned.
ProblemBundle build_problem(const ProblemConfig& spec,
                            std::uint64_t master_seed);

// Outcome of one executed sweep point.
struct RunReport {
  RunConfig run;  // as executed, with K resolved by the engine echo
  std::string label;
  bool diverged = false;
  std::int64_t diverged_at = -1;
  int diverged_node = -2;  // -1 = aggregate, -2 = did not diverge
  double final_loss_v = 0.0;
  double final_gap_norm = 0.0;
  std::int64_t steps_to_threshold = -1;  // -1: never reached or undefined
  std::int64_t total_bytes_per_node = 0;
  double max_xi = 0.0;  // over finite recorded values
  double p99_xi = 0.0;
  std::int64_t infinite_xi_steps = 0;
  TraceSummary summary;
  std::filesystem::path dir;
};

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;  // measured value vs threshold
};

struct ExperimentResult {
  std::vector<RunReport> runs;
  std::vector<CheckOutcome> checks;
  int exit_code = 0;  // 0 ok, 1 check failure, 2 divergence
};

// First t with loss(v_t) - loss_star <= 1e-3 * (loss_v0 - loss_star);
// -1 when never reached.
std::int64_t steps_to_threshold(const Trace& trace, double loss_star);

// Subcommand bodies. Each writes artifacts under config.output.dir, logs a
// line per artifact, and never throws on divergence (captured per run).
ExperimentResult run_single(const ExperimentConfig& config,
                            const ExecOptions& exec, std::ostream& log);
ExperimentResult run_sweep(const ExperimentConfig& config,
                           const ExecOptions& exec, std::ostream& log);
ExperimentResult validate_assumption(const ExperimentConfig& config,
                                     const ExecOptions& exec,
                                     std::ostream& log);
ExperimentResult norm_curve(const ExperimentConfig& config,
                            const ExecOptions& exec, std::ostream& log);
ExperimentResult convergence_sweep(const ExperimentConfig& config,
                                   const ExecOptions& exec, std::ostream& log);
ExperimentResult emit_bounds(const ExperimentConfig& config,
                             const ExecOptions& exec, std::ostream& log);
ExperimentResult check_invariants(const ExperimentConfig& config,
                                  const ExecOptions& exec, std::ostream& log);

}  // namespace topksim

#endif  // TOPKSIM_EXPERIMENT_HPP_
