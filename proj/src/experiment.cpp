// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include <json.hpp>

#include "topksim/analysis.hpp"
#include "topksim/data.hpp"
#include "topksim/errors.hpp"
#include "topksim/trace_io.hpp"
#include "topksim/version.hpp"

namespace topksim {

namespace {

using nlohmann::json;

// Always-on trace gates; the slack gate applies only where the truncation
// contraction argument does (topk and identity, not randomk).
constexpr double kConservationTol = 1e-10;
constexpr double kTelescopeTol = 1e-10;
constexpr double kSlackFloor = -1e-9;

json jnum(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

json provenance(double value, const std::string& source) {
  return json{{"value", jnum(value)}, {"source", source}};
}

void write_json_file(const json& doc, const std::filesystem::path& path,
                     std::ostream& log) {
  std::ofstream out = open_output_file(path);
  out << doc.dump(2) << "\n";
  log << "wrote " << path.string() << "\n";
}

json stamp_json(const ExperimentConfig& config) {
  return json{{"version", std::string(kVersion)},
              {"config_hash", config.config_hash},
              {"seed", config.run.seed}};
}

OutputStamp stamp_for(const ExperimentConfig& config) {
  return OutputStamp{config.config_hash, std::string(kVersion)};
}

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

bool same_vector_bits(const DenseVector& a, const DenseVector& b) {
  if (a.size() != b.size()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(),
                     static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool same_optional_bits(const std::optional<double>& a,
                        const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a.has_value() || same_bits(*a, *b);
}

// Sorted ascending; index ceil(0.99 N) - 1.
double quantile99(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::size_t idx = (99 * n + 99) / 100;
  if (idx > 0) --idx;
  if (idx >= n) idx = n - 1;
  return values[idx];
}

struct XiStats {
  std::int64_t count = 0;
  double max_finite = 0.0;
  double p99 = 0.0;
  std::int64_t infinite_steps = 0;
  double first_half_max = 0.0;
  double second_half_max = 0.0;
};

XiStats xi_stats_from(const std::vector<StepRecord>& records) {
  XiStats stats;
  std::vector<double> finite;
  const std::size_t half = records.size() / 2;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].xi_t) continue;
    ++stats.count;
    const double xi = *records[i].xi_t;
    if (std::isinf(xi)) {
      ++stats.infinite_steps;
      continue;
    }
    finite.push_back(xi);
    stats.max_finite = std::max(stats.max_finite, xi);
    double& half_max =
        (i < half) ? stats.first_half_max : stats.second_half_max;
    half_max = std::max(half_max, xi);
  }
  stats.p99 = quantile99(std::move(finite));
  return stats;
}

class XiSeriesObserver : public StepObserver {
 public:
  void on_step(const StepDiagnostics& diag) override {
    if (diag.xi != nullptr) series_.push_back(*diag.xi);
  }

  const std::vector<XiMeasurement>& series() const { return series_; }

 private:
  std::vector<XiMeasurement> series_;
};

// Copies the averaged minibatch gradient at a fixed step stride.
class GradSampleObserver : public StepObserver {
 public:
  explicit GradSampleObserver(std::int64_t stride) : stride_(stride) {}

  void on_step(const StepDiagnostics& diag) override {
    if ((diag.t - 1) % stride_ == 0 && diag.avg_grad != nullptr) {
      samples_.push_back(*diag.avg_grad);
    }
  }

  const std::vector<DenseVector>& samples() const { return samples_; }

 private:
  std::int64_t stride_;
  std::vector<DenseVector> samples_;
};

RunReport execute_point(const ExperimentConfig& config, const RunConfig& run,
                        const ProblemBundle& bundle, const ExecOptions& exec,
                        StepObserver* observer, std::ostream& log) {
  RunReport report;
  report.label = run_label(run);
  report.dir = std::filesystem::path(config.output.dir) / report.label;

  Trace trace;
  try {
    trace = run_simulation(*bundle.problem, run, exec, observer);
  } catch (const DivergenceError& err) {
    trace = err.partial_trace();
    report.diverged = true;
    report.diverged_at = err.step();
    report.diverged_node = err.node();
  }

  report.run = trace.config;
  report.summary = trace.summary;
  report.final_loss_v =
      trace.records.empty() ? trace.initial_loss_v : trace.records.back().loss_v;
  report.final_gap_norm =
      trace.records.empty() ? 0.0 : trace.records.back().gap_norm;
  for (const StepRecord& record : trace.records) {
    report.total_bytes_per_node += record.bytes_sent_per_node;
  }
  if (bundle.has_optimum && !report.diverged) {
    report.steps_to_threshold =
        steps_to_threshold(trace, bundle.loss_at_optimum);
  }
  const XiStats stats = xi_stats_from(trace.records);
  report.max_xi = stats.max_finite;
  report.p99_xi = stats.p99;
  report.infinite_xi_steps = stats.infinite_steps;

  const OutputStamp stamp = stamp_for(config);
  if (config.output.write_jsonl) {
    const auto path = report.dir / "trace.jsonl";
    write_trace_jsonl(trace, stamp, path);
    log << "wrote " << path.string() << "\n";
  }
  if (config.output.write_csv) {
    const auto path = report.dir / "trace.csv";
    write_trace_csv(trace, stamp, path);
    log << "wrote " << path.string() << "\n";
  }
  if (report.diverged) {
    log << report.label << ": diverged at step " << report.diverged_at
        << (report.diverged_node >= 0
                ? " on node " + std::to_string(report.diverged_node)
                : " in the aggregate")
        << "\n";
  } else {
    log << report.label << ": final loss " << format_g17(report.final_loss_v)
        << "\n";
  }
  return report;
}

void apply_trace_gates(const RunReport& report,
                       std::vector<CheckOutcome>& checks) {
  if (report.diverged) return;
  checks.push_back(
      {report.label + ".conservation",
       report.summary.max_conservation_inf <= kConservationTol,
       "max |v - x - mean error|_inf = " +
           format_g17(report.summary.max_conservation_inf) + ", tolerance " +
           format_g17(kConservationTol)});
  checks.push_back({report.label + ".telescope",
                    report.summary.telescope_inf <= kTelescopeTol,
                    "|x_T - (x_0 - sum alpha g)|_inf = " +
                        format_g17(report.summary.telescope_inf) +
                        ", tolerance " + format_g17(kTelescopeTol)});
  const bool slack_applies =
      report.run.record_lemma_slack &&
      report.run.compressor != CompressorKind::kRandomK &&
      !std::isnan(report.summary.min_lemma1_slack);
  if (slack_applies) {
    checks.push_back({report.label + ".gap_recursion_slack",
                      report.summary.min_lemma1_slack >= kSlackFloor,
                      "min slack = " +
                          format_g17(report.summary.min_lemma1_slack) +
                          ", floor " + format_g17(kSlackFloor)});
  }
}

int resolve_exit(const ExperimentResult& result) {
  for (const RunReport& run : result.runs) {
    if (run.diverged) return 2;
  }
  for (const CheckOutcome& check : result.checks) {
    if (!check.passed) return 1;
  }
  return 0;
}

void write_summary_csv(const ExperimentConfig& config,
                       const std::vector<RunReport>& runs,
                       const std::filesystem::path& path, std::ostream& log) {
  std::ofstream out = open_output_file(path);
  out << "# config_hash=" << config.config_hash << " seed=" << config.run.seed
      << " version=" << kVersion << "\n";
  out << "label,K,P,alpha0,compressor,schedule,final_loss_v,final_gap_norm,"
         "steps_to_threshold,total_bytes_per_node,diverged,diverged_at,"
         "max_conservation_inf,min_lemma1_slack,telescope_inf,"
         "zero_grad_steps,max_xi,p99_xi,infinite_xi_steps\n";
  for (const RunReport& r : runs) {
    out << r.label << ',' << r.run.K << ',' << r.run.P << ','
        << format_g17(r.run.schedule.alpha0) << ','
        << compressor_name(r.run.compressor) << ','
        << r.run.schedule.kind_name() << ',' << format_g17(r.final_loss_v)
        << ',' << format_g17(r.final_gap_norm) << ',' << r.steps_to_threshold
        << ',' << r.total_bytes_per_node << ',' << (r.diverged ? 1 : 0) << ','
        << r.diverged_at << ',' << format_g17(r.summary.max_conservation_inf)
        << ',' << format_g17(r.summary.min_lemma1_slack) << ','
        << format_g17(r.summary.telescope_inf) << ','
        << r.summary.zero_grad_steps << ',' << format_g17(r.max_xi) << ','
        << format_g17(r.p99_xi) << ',' << r.infinite_xi_steps << "\n";
  }
  log << "wrote " << path.string() << " (" << runs.size() << " rows)\n";
}

ExperimentResult sweep_body(const ExperimentConfig& config,
                            const std::vector<RunConfig>& points,
                            const ProblemBundle& bundle,
                            const ExecOptions& exec, std::ostream& log) {
  ExperimentResult result;
  for (const RunConfig& run : points) {
    RunReport report = execute_point(config, run, bundle, exec, nullptr, log);
    apply_trace_gates(report, result.checks);
    result.runs.push_back(std::move(report));
  }
  write_summary_csv(config, result.runs,
                    std::filesystem::path(config.output.dir) / "summary.csv",
                    log);
  result.exit_code = resolve_exit(result);
  return result;
}

RunConfig single_point(const ExperimentConfig& config,
                       const char* subcommand) {
  std::vector<RunConfig> points = expand_sweep(config);
  if (points.size() != 1) {
    throw ConfigError("config expands to " + std::to_string(points.size()) +
                      " sweep points; '" + subcommand +
                      "' needs exactly one (use the sweep subcommand)");
  }
  return points.front();
}

std::string mismatch_or_empty(const Trace& a, const Trace& b) {
  if (a.records.size() != b.records.size()) return "record counts differ";
  if (!same_bits(a.initial_loss_v, b.initial_loss_v) ||
      !same_bits(a.initial_loss_x, b.initial_loss_x)) {
    return "initial losses differ";
  }
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const StepRecord& ra = a.records[i];
    const StepRecord& rb = b.records[i];
    const bool equal =
        ra.t == rb.t && same_bits(ra.loss_v, rb.loss_v) &&
        same_bits(ra.loss_x, rb.loss_x) &&
        same_bits(ra.gap_norm, rb.gap_norm) &&
        same_bits(ra.grad_norm_sq_v, rb.grad_norm_sq_v) &&
        same_optional_bits(ra.xi_t, rb.xi_t) &&
        same_optional_bits(ra.lemma1_slack, rb.lemma1_slack) &&
        ra.bytes_sent_per_node == rb.bytes_sent_per_node;
    if (!equal) return "records differ at t = " + std::to_string(ra.t);
  }
  if (!same_vector_bits(a.final_v, b.final_v)) return "final v differs";
  if (!same_vector_bits(a.final_x, b.final_x)) return "final x differs";
  return "";
}

}  // namespace

ProblemBundle build_problem(const ProblemConfig& spec,
                            std::uint64_t master_seed) {
  const std::uint64_t data_seed = spec.data_seed.value_or(master_seed);
  ProblemBundle bundle;
  if (spec.kind == "synth_regression") {
    SynthRegression synth =
        synth_regression(spec.m, spec.n, spec.noise_sigma, data_seed, spec.l2);
    bundle.optimum = synth.problem->known_optimum();
    bundle.loss_at_optimum = synth.problem->loss(bundle.optimum);
    bundle.has_optimum = true;
    bundle.optimum_source = "normal equations";
    bundle.problem = std::move(synth.problem);
  } else if (spec.kind == "libsvm_logistic") {
    std::unique_ptr<LogisticProblem> logistic =
        load_libsvm(spec.path, spec.l2);
    try {
      bundle.optimum = logistic->optimum();
      bundle.loss_at_optimum = logistic->loss(bundle.optimum);
      bundle.has_optimum = true;
      bundle.optimum_source = "full-gradient descent to |grad| <= 1e-10";
    } catch (const std::exception&) {
      bundle.has_optimum = false;
    }
    bundle.problem = std::move(logistic);
  } else if (spec.kind == "tanh_net") {
    bundle.problem = std::make_unique<SmoothNonconvexProblem>(
        SmoothNonconvexProblem::synth(spec.m, spec.net_d, spec.net_hidden,
                                      data_seed));
    bundle.has_optimum = false;
  } else {
    throw ConfigError("unknown problem kind: " + spec.kind);
  }
  return bundle;
}

std::int64_t steps_to_threshold(const Trace& trace, double loss_star) {
  const double gap0 = trace.initial_loss_v - loss_star;
  if (!(gap0 > 0.0)) return 0;
  const double threshold = loss_star + 1e-3 * gap0;
  for (const StepRecord& record : trace.records) {
    if (record.loss_v <= threshold) return record.t;
  }
  return -1;
}

ExperimentResult run_single(const ExperimentConfig& config,
                            const ExecOptions& exec, std::ostream& log) {
  const RunConfig run = single_point(config, "run");
  const ProblemBundle bundle = build_problem(config.problem, config.run.seed);
  return sweep_body(config, {run}, bundle, exec, log);
}

ExperimentResult run_sweep(const ExperimentConfig& config,
                           const ExecOptions& exec, std::ostream& log) {
  const std::vector<RunConfig> points = expand_sweep(config);
  const ProblemBundle bundle = build_problem(config.problem, config.run.seed);
  return sweep_body(config, points, bundle, exec, log);
}

ExperimentResult convergence_sweep(const ExperimentConfig& config,
                                   const ExecOptions& exec,
                                   std::ostream& log) {
  const ProblemBundle bundle = build_problem(config.problem, config.run.seed);
  const Index n = bundle.problem->dim();
  ExperimentConfig modified = config;
  modified.sweep_K.clear();
  for (const double fraction : config.analysis.convergence_fractions) {
    const Index K = std::clamp<Index>(
        static_cast<Index>(std::llround(fraction * static_cast<double>(n))),
        1, n);
    if (std::find(modified.sweep_K.begin(), modified.sweep_K.end(), K) ==
        modified.sweep_K.end()) {
      modified.sweep_K.push_back(K);
    }
  }
  const std::vector<RunConfig> points = expand_sweep(modified);
  if (static_cast<std::int64_t>(points.size()) > config.sweep_cap) {
    throw ConfigError("convergence sweep has " +
                      std::to_string(points.size()) + " points, cap is " +
                      std::to_string(config.sweep_cap));
  }
  return sweep_body(modified, points, bundle, exec, log);
}

ExperimentResult validate_assumption(const ExperimentConfig& config,
                                     const ExecOptions& exec,
                                     std::ostream& log) {
  RunConfig run = single_point(config, "validate-assumption");
  run.record_xi = true;
  const ProblemBundle bundle = build_problem(config.problem, config.run.seed);

  ExperimentResult result;
  XiSeriesObserver observer;
  RunReport report =
      execute_point(config, run, bundle, exec, &observer, log);
  apply_trace_gates(report, result.checks);

  const std::filesystem::path out_dir(config.output.dir);
  write_xi_series_csv(observer.series(), stamp_for(config), run.seed,
                      out_dir / "xi_series.csv");
  log << "wrote " << (out_dir / "xi_series.csv").string() << " ("
      << observer.series().size() << " rows)\n";

  // Stats come from the observer series so a diverged run still reports
  // what it saw before stopping.
  std::vector<double> finite;
  double max_finite = 0.0;
  double first_half_max = 0.0;
  double second_half_max = 0.0;
  std::int64_t infinite_steps = 0;
  const std::size_t half = observer.series().size() / 2;
  for (std::size_t i = 0; i < observer.series().size(); ++i) {
    const double xi = observer.series()[i].xi;
    if (std::isinf(xi)) {
      ++infinite_steps;
      continue;
    }
    finite.push_back(xi);
    max_finite = std::max(max_finite, xi);
    double& half_max = (i < half) ? first_half_max : second_half_max;
    half_max = std::max(half_max, xi);
  }
  const double growth_ratio =
      first_half_max > 0.0
          ? second_half_max / first_half_max
          : (second_half_max > 0.0 ? std::numeric_limits<double>::infinity()
                                   : 0.0);
  json doc = stamp_json(config);
  doc["label"] = report.label;
  doc["count"] = static_cast<std::int64_t>(observer.series().size());
  doc["max"] = jnum(max_finite);
  doc["p99"] = jnum(quantile99(std::move(finite)));
  doc["infinite_steps"] = infinite_steps;
  doc["zero_grad_steps"] = report.summary.zero_grad_steps;
  doc["first_half_max"] = jnum(first_half_max);
  doc["second_half_max"] = jnum(second_half_max);
  doc["growth_ratio"] = jnum(growth_ratio);
  doc["diverged"] = report.diverged;
  write_json_file(doc, out_dir / "xi_stats.json", log);

  result.runs.push_back(std::move(report));
  result.exit_code = resolve_exit(result);
  return result;
}

ExperimentResult norm_curve(const ExperimentConfig& config,
                            const ExecOptions& exec, std::ostream& log) {
  const RunConfig run = single_point(config, "norm-curve");
  const ProblemBundle bundle = build_problem(config.problem, config.run.seed);
  const Index n = bundle.problem->dim();

  std::vector<Index> ks = config.analysis.norm_curve_k;
  if (ks.empty()) {
    for (const double fraction :
         {0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0}) {
      const Index K = std::clamp<Index>(
          static_cast<Index>(std::llround(fraction * static_cast<double>(n))),
          1, n);
      if (ks.empty() || ks.back() != K) ks.push_back(K);
    }
  }

  ExperimentResult result;
  const std::int64_t stride =
      std::max<std::int64_t>(1, run.T / config.analysis.norm_curve_samples);
  GradSampleObserver observer(stride);
  RunReport report = execute_point(config, run, bundle, exec, &observer, log);
  apply_trace_gates(report, result.checks);

  const std::filesystem::path out_dir(config.output.dir);
  if (observer.samples().empty()) {
    log << "no gradient samples collected; skipping the ratio table\n";
  } else {
    const std::vector<NormGapRow> rows =
        norm_gap_curve(observer.samples(), ks);
    write_norm_gap_csv(rows, stamp_for(config), run.seed,
                       out_dir / "norm_gap.csv");
    log << "wrote " << (out_dir / "norm_gap.csv").string() << " ("
        << rows.size() << " rows from " << observer.samples().size()
        << " gradient samples)\n";
  }

  result.runs.push_back(std::move(report));
  result.exit_code = resolve_exit(result);
  return result;
}

ExperimentResult emit_bounds(const ExperimentConfig& config,
                             const ExecOptions& exec, std::ostream& log) {
  RunConfig pilot = single_point(config, "bounds");
  pilot.T = config.analysis.pilot_steps;
  pilot.record_xi = true;
  const ProblemBundle bundle = build_problem(config.problem, config.run.seed);
  const Problem& problem = *bundle.problem;
  const Index n = problem.dim();

  ExperimentResult result;
  json doc = stamp_json(config);
  doc["problem"] = {{"kind", problem.kind()},
                    {"dim", n},
                    {"num_samples", problem.num_samples()}};

  // Pilot run: measures the collapse constant on the configured point.
  RunReport report = execute_point(config, pilot, bundle, exec, nullptr, log);
  apply_trace_gates(report, result.checks);
  const Index k_eff = report.run.K;
  const double gamma = gamma_for(n, k_eff);
  const double xi_used = report.max_xi;
  doc["pilot"] = {{"label", report.label},
                  {"T", pilot.T},
                  {"K", k_eff},
                  {"P", pilot.P},
                  {"compressor", compressor_name(pilot.compressor)},
                  {"alpha0", jnum(pilot.schedule.alpha0)},
                  {"schedule", pilot.schedule.kind_name()},
                  {"diverged", report.diverged}};

  const DenseVector x0 =
      pilot.init ? *pilot.init : DenseVector(DenseVector::Zero(n));

  // Curvature constants.
  const AnalyticConstants constants = problem.constants();

  // Second-moment estimate over x0, the optimum when known, and three
  // seeded gaussian iterates at a matching scale.
  std::vector<DenseVector> points;
  points.push_back(x0);
  std::string points_desc = "x0";
  double scale = 1.0;
  if (bundle.has_optimum) {
    points.push_back(bundle.optimum);
    points_desc += ", optimum";
    scale = std::max(1.0, bundle.optimum.norm());
  }
  CounterRng point_rng(pilot.seed, 0, stream_tag::kBoundPoints, 0);
  for (int j = 0; j < 3; ++j) {
    DenseVector z(n);
    for (Index i = 0; i < n; ++i) z[i] = point_rng.normal();
    points.push_back(z * (scale / std::sqrt(static_cast<double>(n))));
  }
  points_desc += ", 3 gaussian iterates (norm ~ " + format_g17(scale) + ")";
  const Index sm_batch = config.analysis.second_moment_batch == 0
                             ? problem.num_samples()
                             : config.analysis.second_moment_batch;
  const SecondMomentEstimate second_moment = estimate_second_moment(
      problem, points, pilot.P, sm_batch,
      config.analysis.second_moment_trials, pilot.seed);
  const double M = std::sqrt(second_moment.m_squared);

  json inputs;
  inputs["c"] = constants.c
                    ? provenance(*constants.c, constants.source)
                    : json{{"available", false},
                           {"source", constants.source}};
  inputs["L"] = constants.L
                    ? provenance(*constants.L, constants.source)
                    : json{{"available", false},
                           {"source", constants.source}};
  json m_entry = provenance(
      M, "estimated: max mean squared stochastic gradient norm");
  m_entry["m_squared"] = jnum(second_moment.m_squared);
  m_entry["points"] = points_desc;
  {
    json per_point = json::array();
    for (const double value : second_moment.per_point) {
      per_point.push_back(jnum(value));
    }
    m_entry["per_point"] = per_point;
  }
  m_entry["argmax_point"] = second_moment.argmax_point;
  m_entry["trials"] = second_moment.trials;
  m_entry["batch_size"] = second_moment.batch_size;
  inputs["M"] = m_entry;
  inputs["xi"] = {{"max", jnum(report.max_xi)},
                  {"p99", jnum(report.p99_xi)},
                  {"infinite_steps", report.infinite_xi_steps},
                  {"zero_grad_steps", report.summary.zero_grad_steps},
                  {"pilot_steps", pilot.T},
                  {"source", "measured: max finite value over the pilot run"}};
  json gamma_entry =
      provenance(gamma, "analytic: sqrt((n - K) / n) truncation factor");
  gamma_entry["K"] = k_eff;
  gamma_entry["n"] = n;
  gamma_entry["compression_exact"] = (gamma == 0.0);
  inputs["gamma"] = gamma_entry;

  // Convex section: needs strong convexity, a reachable optimum, and a
  // positive target accuracy.
  json convex;
  double dist0_sq = 0.0;
  if (!constants.c) {
    convex = {{"applicable", false},
              {"reason", "no strong-convexity constant for this problem"}};
    inputs["epsilon"] = {{"available", false}};
    inputs["dist0_sq"] = {{"available", false}};
  } else if (!bundle.has_optimum) {
    convex = {{"applicable", false}, {"reason", "optimum unavailable"}};
    inputs["epsilon"] = {{"available", false}};
    inputs["dist0_sq"] = {{"available", false}};
  } else {
    dist0_sq = (x0 - bundle.optimum).squaredNorm();
    inputs["dist0_sq"] =
        provenance(dist0_sq, "computed: |x0 - x*|^2, optimum from " +
                                 bundle.optimum_source);
    const double epsilon =
        config.analysis.epsilon
            ? *config.analysis.epsilon
            : config.analysis.epsilon_rel * dist0_sq;
    inputs["epsilon"] = provenance(
        epsilon, config.analysis.epsilon
                     ? "user"
                     : "default: epsilon_rel * dist0_sq, epsilon_rel = " +
                           format_g17(config.analysis.epsilon_rel));
    try {
      const ConvexConstants cc =
          convex_constants(n, k_eff, xi_used, pilot.P,
                           pilot.schedule.alpha0, *constants.c, M, epsilon);
      const LrWindow window =
          convex_lr_window(*constants.c, epsilon, M, cc.C_prime);
      const FailureBound failure = convex_failure_bound(
          pilot.schedule.alpha0, *constants.c, epsilon, M, cc.C_prime,
          dist0_sq, config.run.T);
      convex["applicable"] = true;
      json constants_json{{"gamma", jnum(cc.gamma)},
                          {"C", jnum(cc.C)},
                          {"C_prime", jnum(cc.C_prime)},
                          {"H", jnum(cc.H)},
                          {"feasible", cc.feasible}};
      if (!cc.feasible) constants_json["reason"] = cc.reason;
      if (gamma == 0.0) {
        constants_json["note"] =
            "gamma = 0: truncation is exact and C' reduces to 2 xi / P";
      }
      convex["constants"] = constants_json;
      convex["lr_window"] = {
          {"alpha_max", jnum(window.alpha_max)},
          {"feasible", window.feasible},
          {"uncompressed_term", jnum(window.uncompressed_term)},
          {"compressed_term", jnum(window.compressed_term)}};
      convex["failure_bound"] = {{"raw", jnum(failure.raw)},
                                 {"clamped", jnum(failure.clamped)},
                                 {"vacuous", failure.vacuous},
                                 {"feasible", failure.feasible},
                                 {"denominator", jnum(failure.denominator)},
                                 {"T", config.run.T}};
      if (pilot.schedule.kind == LearningRateSchedule::Kind::kPowerLaw) {
        convex["note"] =
            "fixed-step evaluation at alpha0; the run uses a decaying "
            "schedule";
      }
    } catch (const std::exception& err) {
      convex = {{"applicable", false}, {"reason", err.what()}};
    }
  }
  doc["convex"] = convex;

  // Schedule series check: D = sup_t of the compressed-error series.
  const DCheck d_check =
      check_D(pilot.schedule, gamma, config.analysis.d_check_t_max);
  doc["schedule_check"] = {{"gamma", jnum(gamma)},
                           {"two_gamma_sq", jnum(2.0 * gamma * gamma)},
                           {"sup_partial", jnum(d_check.sup_partial)},
                           {"bounded", d_check.bounded},
                           {"t_evaluated", d_check.t_evaluated}};

  // Non-convex ergodic bound.
  json nonconvex;
  if (!constants.L) {
    nonconvex = {{"applicable", false},
                 {"reason", "no smoothness constant available"}};
  } else if (!d_check.bounded) {
    nonconvex = {{"applicable", false},
                 {"reason",
                  "unbounded-D: the compressed-error series has no uniform "
                  "bound (needs 2 gamma^2 < 1 and a summable schedule)"}};
  } else {
    const double f_star = bundle.has_optimum ? bundle.loss_at_optimum : 0.0;
    const double f0_minus_fstar = problem.loss(x0) - f_star;
    NonconvexBoundInputs nb_inputs;
    nb_inputs.f0_minus_fstar = f0_minus_fstar;
    nb_inputs.L = *constants.L;
    nb_inputs.M = M;
    nb_inputs.xi = xi_used;
    nb_inputs.P = pilot.P;
    nb_inputs.gamma = gamma;
    nb_inputs.D = d_check.sup_partial;
    nb_inputs.schedule = pilot.schedule;
    nb_inputs.T = config.run.T;
    try {
      const NonconvexBound bound = nonconvex_bound(nb_inputs);
      nonconvex = {{"applicable", bound.applicable},
                   {"value", jnum(bound.value)},
                   {"sum_alpha", jnum(bound.sum_alpha)},
                   {"sum_alpha_sq", jnum(bound.sum_alpha_sq)},
                   {"T", config.run.T},
                   {"D", jnum(d_check.sup_partial)}};
      if (!bound.applicable) nonconvex["reason"] = bound.reason;
      nonconvex["f0_minus_fstar"] = provenance(
          f0_minus_fstar,
          bundle.has_optimum
              ? "computed: loss(x0) - loss(x*)"
              : "upper bound: loss(x0) - 0, the loss is bounded below by "
                "zero");
    } catch (const std::exception& err) {
      nonconvex = {{"applicable", false}, {"reason", err.what()}};
    }
  }
  doc["nonconvex"] = nonconvex;
  doc["inputs"] = inputs;

  write_json_file(doc, std::filesystem::path(config.output.dir) /
                           "bounds.json",
                  log);

  result.runs.push_back(std::move(report));
  result.exit_code = resolve_exit(result);
  return result;
}

ExperimentResult check_invariants(const ExperimentConfig& config,
                                  const ExecOptions& exec, std::ostream& log) {
  const RunConfig run = single_point(config, "check-invariants");
  const ProblemBundle bundle = build_problem(config.problem, config.run.seed);

  ExperimentResult result;
  RunReport report;
  report.label = run_label(run);
  report.dir = config.output.dir;

  Trace sequential;
  bool have_parallel = false;
  std::string mode_detail;
  try {
    sequential =
        run_simulation(*bundle.problem, run, {ExecMode::kSequential, 1});

    // The parallel leg uses at least four threads so the scheduling paths
    // genuinely differ from the sequential one.
    ExecOptions parallel_exec{ExecMode::kParallel,
                              std::max(exec.threads, 4)};
    const Trace parallel =
        run_simulation(*bundle.problem, run, parallel_exec);
    have_parallel = true;
    mode_detail = mismatch_or_empty(sequential, parallel);
  } catch (const DivergenceError& err) {
    if (!have_parallel && sequential.records.empty()) {
      sequential = err.partial_trace();
    }
    report.diverged = true;
    report.diverged_at = err.step();
    report.diverged_node = err.node();
    log << report.label << ": diverged at step " << err.step() << "\n";
  }

  report.run = sequential.config;
  report.summary = sequential.summary;
  const XiStats stats = xi_stats_from(sequential.records);
  report.max_xi = stats.max_finite;
  report.p99_xi = stats.p99;
  report.infinite_xi_steps = stats.infinite_steps;

  if (!report.diverged) {
    result.checks.push_back(
        {"records_complete",
         static_cast<std::int64_t>(sequential.records.size()) == run.T,
         std::to_string(sequential.records.size()) + " of " +
             std::to_string(run.T) + " step records"});
    apply_trace_gates(report, result.checks);
    result.checks.push_back(
        {"mode_equivalence", have_parallel && mode_detail.empty(),
         mode_detail.empty() ? "sequential and parallel traces are bitwise "
                               "equal"
                             : mode_detail});
  }

  json doc = stamp_json(config);
  doc["label"] = report.label;
  doc["diverged"] = report.diverged;
  if (report.diverged) doc["diverged_at"] = report.diverged_at;
  json checks = json::array();
  bool all_passed = true;
  for (const CheckOutcome& check : result.checks) {
    checks.push_back({{"name", check.name},
                      {"passed", check.passed},
                      {"detail", check.detail}});
    all_passed = all_passed && check.passed;
    log << (check.passed ? "pass " : "FAIL ") << check.name << ": "
        << check.detail << "\n";
  }
  doc["checks"] = checks;
  doc["all_passed"] = all_passed && !report.diverged;
  write_json_file(doc, std::filesystem::path(config.output.dir) /
                           "invariants.json",
                  log);

  result.runs.push_back(std::move(report));
  result.exit_code = resolve_exit(result);
  return result;
}

}  // namespace topksim
