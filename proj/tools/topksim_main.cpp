// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 = all runs completed and all checks
// passed, 1 = a check failed, 2 = a run diverged, 3 = configuration or
// usage error.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "topksim/config.hpp"
#include "topksim/errors.hpp"
#include "topksim/experiment.hpp"
#include "topksim/version.hpp"

namespace {

constexpr int kExitCheckFailure = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitConfigError = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Deterministic data-parallel SGD simulator with sparse gradient "
      "exchange and local error correction"};
  app.set_version_flag("--version", std::string(topksim::kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_override;
  int threads = 1;
  std::string mode = "sequential";

  CLI::Option* config_opt =
      app.add_option("--config", config_path,
                     "Path to the experiment configuration file")
          ->required();
  CLI::Option* seed_opt =
      app.add_option("--seed", seed, "Master seed override");
  CLI::Option* out_opt =
      app.add_option("--out", out_override, "Output directory override");
  app.add_option("--threads", threads,
                 "Worker thread count for parallel mode")
      ->check(CLI::PositiveNumber);
  app.add_option("--mode", mode, "Execution mode")
      ->check(CLI::IsMember({"sequential", "parallel"}));

  CLI::App* cmd_run =
      app.add_subcommand("run", "Execute the single configured run");
  CLI::App* cmd_sweep =
      app.add_subcommand("sweep", "Execute every sweep point");
  CLI::App* cmd_validate = app.add_subcommand(
      "validate-assumption",
      "Run once and emit the collapse-constant series and stats");
  CLI::App* cmd_norm = app.add_subcommand(
      "norm-curve", "Emit truncation-ratio tables from sampled gradients");
  CLI::App* cmd_convergence = app.add_subcommand(
      "convergence-sweep",
      "Sweep sparsity fractions and emit loss-vs-iteration traces");
  CLI::App* cmd_bounds = app.add_subcommand(
      "bounds", "Evaluate convergence bounds with measured inputs");
  CLI::App* cmd_check = app.add_subcommand(
      "check-invariants",
      "Run once in both modes and verify runtime invariants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitConfigError;
  }

  try {
    topksim::ExperimentConfig config =
        topksim::load_config_file(config_path);
    (void)config_opt;
    if (seed_opt->count() > 0) config.run.seed = seed;
    // Output directory priority: config < TOPKSIM_OUT < --out.
    if (const char* env = std::getenv("TOPKSIM_OUT")) {
      if (*env != '\0') config.output.dir = env;
    }
    if (out_opt->count() > 0) config.output.dir = out_override;

    const topksim::ExecOptions exec{mode == "parallel"
                                        ? topksim::ExecMode::kParallel
                                        : topksim::ExecMode::kSequential,
                                    threads};

    topksim::ExperimentResult result;
    if (app.got_subcommand(cmd_run)) {
      result = topksim::run_single(config, exec, std::cout);
    } else if (app.got_subcommand(cmd_sweep)) {
      result = topksim::run_sweep(config, exec, std::cout);
    } else if (app.got_subcommand(cmd_validate)) {
      result = topksim::validate_assumption(config, exec, std::cout);
    } else if (app.got_subcommand(cmd_norm)) {
      result = topksim::norm_curve(config, exec, std::cout);
    } else if (app.got_subcommand(cmd_convergence)) {
      result = topksim::convergence_sweep(config, exec, std::cout);
    } else if (app.got_subcommand(cmd_bounds)) {
      result = topksim::emit_bounds(config, exec, std::cout);
    } else if (app.got_subcommand(cmd_check)) {
      result = topksim::check_invariants(config, exec, std::cout);
    }
    return result.exit_code;
  } catch (const topksim::DivergenceError& err) {
    std::cerr << "divergence at step " << err.step() << "\n";
    return kExitDivergence;
  } catch (const topksim::ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfigError;
  } catch (const topksim::ParseError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitConfigError;
  }
}
