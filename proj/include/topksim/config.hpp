// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a strict TOML-subset document with sections
// [problem], [run], [analysis], [output], [sweep]. Unknown keys and type
// mismatches are rejected with the key path and line number. The keys
// run.K, run.P, run.alpha0, run.compressor accept lists; lists turn into
// sweep axes whose cross product is capped by sweep.max_points.

#ifndef TOPKSIM_CONFIG_HPP_
#define TOPKSIM_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "topksim/engine.hpp"

namespace topksim {

struct ProblemConfig {
  std::string kind;  // synth_regression | libsvm_logistic | tanh_net
  // synth_regression / tanh_net generators.
  Index m = 512;
  Index n = 64;
  double noise_sigma = 0.0;
  double l2 = 0.0;
  std::optional<std::uint64_t> data_seed;  // default: the master seed
  // libsvm_logistic ingestion.
  std::string path;
  // tanh_net shape (parameter count is hidden * d + 2 * hidden + 1).
  Index net_d = 16;
  Index net_hidden = 8;
};

struct AnalysisConfig {
  // Convex target accuracy. When absent, bound evaluations use
  // epsilon_rel * ||x0 - x*||^2.
  std::optional<double> epsilon;
  double epsilon_rel = 1e-3;
  int second_moment_trials = 200;
  Index second_moment_batch = 0;  // 0 = full batch (deterministic gradient)
  std::int64_t pilot_steps = 200;
  std::int64_t d_check_t_max = 100000;
  std::vector<Index> norm_curve_k;  // empty = fraction grid over the dim
  std::int64_t norm_curve_samples = 50;
  std::vector<double> convergence_fractions = {0.001, 0.01, 0.1, 1.0};
};

struct OutputConfig {
  std::string dir = "out";
  bool write_jsonl = true;
  bool write_csv = true;
};

struct ExperimentConfig {
  ProblemConfig problem;
  RunConfig run;  // scalar template; the axes below override per point
  std::vector<Index> sweep_K;
  std::vector<int> sweep_P;
  std::vector<double> sweep_alpha0;
  std::vector<CompressorKind> sweep_compressor;
  AnalysisConfig analysis;
  OutputConfig output;
  std::int64_t sweep_cap = 512;
  std::string raw_text;
  std::string config_hash;  // fnv1a64 over raw_text, 16 hex digits
};

std::uint64_t fnv1a64(std::string_view text);
std::string hash_hex(std::uint64_t value);

// Parses and fully validates a configuration document. `source` names the
// input in error messages. Defaults are filled (seed 42 among them);
// required keys are problem.kind and run.T.
ExperimentConfig parse_config(const std::string& text,
                              const std::string& source = "config");
ExperimentConfig load_config_file(const std::filesystem::path& path);

// Cross product of the sweep axes in K, P, alpha0, compressor order.
// Every point carries the master seed so compressor comparisons see the
// same gradient noise.
std::vector<RunConfig> expand_sweep(const ExperimentConfig& config);

// Directory-safe point label, e.g. "K6_P4_a0.05_topk".
std::string run_label(const RunConfig& run);

}  // namespace topksim

#endif  // TOPKSIM_CONFIG_HPP_
