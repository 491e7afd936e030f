// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the core operations: truncation operators, problem
// construction, the simulation engine, and the analysis constants/bounds.
// Traces come back as plain dicts of numpy arrays and lists so downstream
// notebooks need nothing beyond numpy.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "topksim/analysis.hpp"
#include "topksim/data.hpp"
#include "topksim/engine.hpp"
#include "topksim/errors.hpp"
#include "topksim/objectives.hpp"
#include "topksim/vec.hpp"
#include "topksim/version.hpp"

namespace py = pybind11;

namespace {

using topksim::CompressorKind;
using topksim::DenseVector;
using topksim::ExecMode;
using topksim::ExecOptions;
using topksim::Index;
using topksim::LearningRateSchedule;
using topksim::PartitionMode;
using topksim::Problem;
using topksim::RunConfig;
using topksim::SparseVector;
using topksim::Trace;

// Owner of any problem kind, with the optional extras each kind carries.
struct PyProblem {
  std::shared_ptr<Problem> impl;
  std::optional<DenseVector> x_true;  // generating weights, synthetic only

  const Problem& ref() const { return *impl; }

  DenseVector optimum() const {
    if (auto* ls =
            dynamic_cast<const topksim::LeastSquaresProblem*>(impl.get())) {
      return ls->known_optimum();
    }
    if (auto* lg =
            dynamic_cast<const topksim::LogisticProblem*>(impl.get())) {
      return lg->optimum();
    }
    throw std::runtime_error("problem kind '" + impl->kind() +
                             "' has no optimum oracle");
  }
};

CompressorKind compressor_from(const std::string& name) {
  if (name == "topk") return CompressorKind::kTopK;
  if (name == "randomk") return CompressorKind::kRandomK;
  if (name == "identity") return CompressorKind::kIdentity;
  throw std::invalid_argument("unknown compressor '" + name +
                              "' (use topk, randomk, or identity)");
}

LearningRateSchedule schedule_from(const std::string& kind, double alpha0,
                                   double theta) {
  LearningRateSchedule schedule;
  if (kind == "constant") {
    schedule.kind = LearningRateSchedule::Kind::kConstant;
  } else if (kind == "power_law") {
    schedule.kind = LearningRateSchedule::Kind::kPowerLaw;
  } else if (kind == "fixed_nonconvex") {
    schedule.kind = LearningRateSchedule::Kind::kFixedNonconvex;
  } else {
    throw std::invalid_argument(
        "unknown schedule '" + kind +
        "' (use constant, power_law, or fixed_nonconvex)");
  }
  schedule.alpha0 = alpha0;
  schedule.theta = theta;
  schedule.validate();
  return schedule;
}

PartitionMode partition_from(const std::string& name) {
  if (name == "contiguous") return PartitionMode::kContiguous;
  if (name == "shuffled") return PartitionMode::kShuffled;
  throw std::invalid_argument("unknown partition '" + name +
                              "' (use contiguous or shuffled)");
}

ExecOptions exec_from(const std::string& mode, int threads) {
  if (mode != "sequential" && mode != "parallel") {
    throw std::invalid_argument("unknown mode '" + mode +
                                "' (use sequential or parallel)");
  }
  return {mode == "parallel" ? ExecMode::kParallel : ExecMode::kSequential,
          threads};
}

// Optional per-step doubles become NaN in the column (xi itself is never
// NaN: undefined ratios are reported as inf).
py::dict trace_to_dict(const Trace& trace) {
  const auto T = static_cast<Index>(trace.records.size());
  DenseVector loss_v(T), loss_x(T), gap(T), grad_sq(T), xi(T), slack(T);
  std::vector<std::int64_t> t(static_cast<std::size_t>(T));
  std::vector<std::int64_t> bytes(static_cast<std::size_t>(T));
  constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();
  for (Index i = 0; i < T; ++i) {
    const auto& r = trace.records[static_cast<std::size_t>(i)];
    t[static_cast<std::size_t>(i)] = r.t;
    loss_v[i] = r.loss_v;
    loss_x[i] = r.loss_x;
    gap[i] = r.gap_norm;
    grad_sq[i] = r.grad_norm_sq_v;
    xi[i] = r.xi_t.value_or(kAbsent);
    slack[i] = r.lemma1_slack.value_or(kAbsent);
    bytes[static_cast<std::size_t>(i)] = r.bytes_sent_per_node;
  }

  py::dict records;
  records["t"] = t;
  records["loss_v"] = loss_v;
  records["loss_x"] = loss_x;
  records["gap_norm"] = gap;
  records["grad_norm_sq_v"] = grad_sq;
  records["xi_t"] = xi;
  records["lemma1_slack"] = slack;
  records["bytes_sent_per_node"] = bytes;

  py::dict summary;
  summary["max_conservation_inf"] = trace.summary.max_conservation_inf;
  summary["min_lemma1_slack"] = trace.summary.min_lemma1_slack;
  summary["telescope_inf"] = trace.summary.telescope_inf;
  summary["zero_grad_steps"] = trace.summary.zero_grad_steps;
  summary["diverged_at"] = trace.summary.diverged_at;

  py::dict out;
  out["problem"] = trace.problem_kind;
  out["dim"] = trace.dim;
  out["num_samples"] = trace.num_samples;
  out["K"] = trace.config.K;
  out["P"] = trace.config.P;
  out["seed"] = trace.config.seed;
  out["compressor"] = topksim::compressor_name(trace.config.compressor);
  out["initial_loss_v"] = trace.initial_loss_v;
  out["initial_loss_x"] = trace.initial_loss_x;
  out["records"] = records;
  out["final_v"] = trace.final_v;
  out["final_x"] = trace.final_x;
  out["summary"] = summary;
  return out;
}

py::dict constants_to_dict(const topksim::AnalyticConstants& constants) {
  py::dict out;
  out["c"] = constants.c;
  out["L"] = constants.L;
  out["source"] = constants.source;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Deterministic simulator and analysis toolkit for data-parallel SGD "
      "with top-K gradient truncation and per-node error feedback.";
  m.attr("__version__") = topksim::kVersion;

  py::register_exception<topksim::DivergenceError>(m, "DivergenceError");

  // ------------------------------------------------------------- operators
  py::class_<SparseVector>(m, "SparseVector",
                           "Sparse payload: sorted indices and their values.")
      .def_readonly("dim", &SparseVector::dim)
      .def_readonly("indices", &SparseVector::indices)
      .def_readonly("values", &SparseVector::values)
      .def("nnz", &SparseVector::nnz)
      .def("densify", &SparseVector::densify)
      .def("__repr__", [](const SparseVector& s) {
        return "SparseVector(dim=" + std::to_string(s.dim) +
               ", nnz=" + std::to_string(s.nnz()) + ")";
      });

  m.def("top_k", &topksim::top_k, py::arg("v"), py::arg("k"),
        "The k largest-magnitude entries of v, ties toward lower index.");
  m.def("residual", &topksim::residual, py::arg("v"), py::arg("k"),
        "v minus the densified top-k of v.");
  m.def("gamma_for", &topksim::gamma_for, py::arg("n"), py::arg("k"),
        "Truncation contraction factor sqrt((n - k) / n).");
  m.def("aggregate_fixed_order", &topksim::aggregate_fixed_order,
        py::arg("updates"), py::arg("P"),
        "Mean of densified payloads, summed in node order.");
  m.def(
      "measure_xi",
      [](const std::vector<DenseVector>& accs, const DenseVector& avg,
         Index K, int P) {
        const auto r = topksim::measure_xi(accs, avg, K, P);
        py::dict out;
        out["t"] = r.t;
        out["lhs_norm"] = r.lhs_norm;
        out["grad_norm"] = r.grad_norm;
        out["xi"] = r.xi;
        return out;
      },
      py::arg("per_node_accs"), py::arg("avg_alpha_grad"), py::arg("K"),
      py::arg("P"),
      "Collapse ratio: distance between truncating the averaged accumulator "
      "and averaging the per-node truncations, relative to the scaled "
      "average gradient.");

  // -------------------------------------------------------------- problems
  py::class_<PyProblem>(m, "Problem",
                        "A training objective with loss and gradient "
                        "oracles over a flat parameter vector.")
      .def_property_readonly(
          "dim", [](const PyProblem& p) { return p.ref().dim(); })
      .def_property_readonly(
          "num_samples",
          [](const PyProblem& p) { return p.ref().num_samples(); })
      .def_property_readonly(
          "kind", [](const PyProblem& p) { return p.ref().kind(); })
      .def_property_readonly(
          "x_true", [](const PyProblem& p) { return p.x_true; },
          "Generating weights of a synthetic instance, else None.")
      .def("loss",
           [](const PyProblem& p, const DenseVector& x) {
             return p.ref().loss(x);
           },
           py::arg("x"))
      .def("gradient",
           [](const PyProblem& p, const DenseVector& x) {
             return p.ref().gradient(x);
           },
           py::arg("x"))
      .def("grad_minibatch",
           [](const PyProblem& p, const DenseVector& x,
              const std::vector<Index>& batch) {
             return p.ref().grad_minibatch(x, batch);
           },
           py::arg("x"), py::arg("batch"),
           "Mean per-sample gradient over the given sample indices.")
      .def("constants",
           [](const PyProblem& p) {
             return constants_to_dict(p.ref().constants());
           },
           "Curvature constants {c, L, source}; entries may be None.")
      .def("optimum", &PyProblem::optimum,
           "The minimizer, where the kind provides one; raises otherwise.")
      .def("__repr__", [](const PyProblem& p) {
        return "Problem(kind='" + p.ref().kind() +
               "', dim=" + std::to_string(p.ref().dim()) +
               ", num_samples=" + std::to_string(p.ref().num_samples()) + ")";
      });

  m.def(
      "synth_regression",
      [](Index m_samples, Index n, double noise_sigma, std::uint64_t seed,
         double l2) {
        auto synth =
            topksim::synth_regression(m_samples, n, noise_sigma, seed, l2);
        PyProblem out;
        out.impl = std::move(synth.problem);
        out.x_true = std::move(synth.x_true);
        return out;
      },
      py::arg("m"), py::arg("n"), py::arg("noise_sigma") = 0.0,
      py::arg("seed") = 42, py::arg("l2") = 0.0,
      "Seeded synthetic least-squares instance; targets are A x_true plus "
      "optional gaussian noise.");

  m.def(
      "load_libsvm",
      [](const std::filesystem::path& path, double l2) {
        PyProblem out;
        out.impl = topksim::load_libsvm(path, l2);
        return out;
      },
      py::arg("path"), py::arg("l2") = 1e-4,
      "Binary logistic regression over a LIBSVM-format file.");

  m.def(
      "tanh_net",
      [](Index m_samples, Index d, Index hidden, std::uint64_t seed) {
        PyProblem out;
        out.impl = std::make_shared<topksim::SmoothNonconvexProblem>(
            topksim::SmoothNonconvexProblem::synth(m_samples, d, hidden,
                                                   seed));
        return out;
      },
      py::arg("m"), py::arg("d"), py::arg("hidden"), py::arg("seed") = 42,
      "Seeded two-layer tanh regression network (smooth, non-convex).");

  m.def(
      "partition",
      [](Index m_samples, int P, std::uint64_t seed,
         const std::string& mode) {
        std::vector<std::vector<Index>> out;
        for (auto& shard :
             topksim::partition(m_samples, P, seed, partition_from(mode))) {
          out.push_back(std::move(shard.sample_indices));
        }
        return out;
      },
      py::arg("m"), py::arg("P"), py::arg("seed") = 42,
      py::arg("mode") = "contiguous",
      "Sample indices per node; sizes differ by at most one.");

  m.def(
      "estimate_second_moment",
      [](const PyProblem& problem, const std::vector<DenseVector>& points,
         int P, Index batch_size, int trials, std::uint64_t seed) {
        const auto est = topksim::estimate_second_moment(
            problem.ref(), points, P, batch_size, trials, seed);
        py::dict out;
        out["m_squared"] = est.m_squared;
        out["argmax_point"] = est.argmax_point;
        out["per_point"] = est.per_point;
        out["P"] = est.P;
        out["batch_size"] = est.batch_size;
        out["trials"] = est.trials;
        return out;
      },
      py::arg("problem"), py::arg("points"), py::arg("P"),
      py::arg("batch_size"), py::arg("trials") = 200, py::arg("seed") = 42,
      "Empirical bound on E |node-averaged minibatch gradient|^2 over the "
      "given evaluation points.");

  // ---------------------------------------------------------------- engine
  m.def(
      "run_simulation",
      [](const PyProblem& problem, int P, Index K, std::int64_t T,
         Index batch_size, std::uint64_t seed, const std::string& compressor,
         double alpha0, const std::string& schedule, double theta,
         const std::string& partition, bool global_sampling, bool record_xi,
         bool record_lemma_slack, std::optional<DenseVector> init,
         const std::string& mode, int threads) {
        RunConfig cfg;
        cfg.P = P;
        cfg.K = K;
        cfg.T = T;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        cfg.compressor = compressor_from(compressor);
        cfg.schedule = schedule_from(schedule, alpha0, theta);
        cfg.partition = partition_from(partition);
        cfg.global_sampling = global_sampling;
        cfg.record_xi = record_xi;
        cfg.record_lemma_slack = record_lemma_slack;
        cfg.init = std::move(init);
        const ExecOptions exec = exec_from(mode, threads);

        Trace trace;
        {
          py::gil_scoped_release release;
          trace = topksim::run_simulation(problem.ref(), cfg, exec);
        }
        return trace_to_dict(trace);
      },
      py::arg("problem"), py::kw_only(), py::arg("P") = 1, py::arg("K") = 0,
      py::arg("T") = 1, py::arg("batch_size") = 1, py::arg("seed") = 42,
      py::arg("compressor") = "topk", py::arg("alpha0") = 0.1,
      py::arg("schedule") = "constant", py::arg("theta") = 0.5,
      py::arg("partition") = "contiguous", py::arg("global_sampling") = false,
      py::arg("record_xi") = true, py::arg("record_lemma_slack") = true,
      py::arg("init") = py::none(), py::arg("mode") = "sequential",
      py::arg("threads") = 1,
      "Run T steps of compressed data-parallel SGD and return the trace as "
      "a dict (K = 0 means dense). Raises DivergenceError on non-finite "
      "values; results are bit-identical for any mode/threads setting.");

  // -------------------------------------------------------------- analysis
  m.def("piecewise_log", &topksim::piecewise_log, py::arg("x"),
        "x on (-inf, 1], 1 + ln(x) on [1, inf); C1 at the splice.");

  m.def(
      "convex_constants",
      [](Index n, Index K, double xi, int P, double alpha, double c, double M,
         double epsilon) {
        const auto cc =
            topksim::convex_constants(n, K, xi, P, alpha, c, M, epsilon);
        py::dict out;
        out["gamma"] = cc.gamma;
        out["C"] = cc.C;
        out["C_prime"] = cc.C_prime;
        out["H"] = cc.H;
        out["feasible"] = cc.feasible;
        out["reason"] = cc.reason;
        return out;
      },
      py::arg("n"), py::arg("K"), py::arg("xi"), py::arg("P"),
      py::arg("alpha"), py::arg("c"), py::arg("M"), py::arg("epsilon"),
      "Slowdown constants of the convex guarantee; C_prime = C + (gamma + "
      "xi / P).");

  m.def(
      "convex_lr_window",
      [](double c, double epsilon, double M, double C_prime) {
        const auto w = topksim::convex_lr_window(c, epsilon, M, C_prime);
        py::dict out;
        out["alpha_max"] = w.alpha_max;
        out["feasible"] = w.feasible;
        out["uncompressed_term"] = w.uncompressed_term;
        out["compressed_term"] = w.compressed_term;
        return out;
      },
      py::arg("c"), py::arg("epsilon"), py::arg("M"), py::arg("C_prime"),
      "Largest admissible fixed learning rate for the convex guarantee.");

  m.def(
      "convex_failure_bound",
      [](double alpha, double c, double epsilon, double M, double C_prime,
         double dist0_sq, std::int64_t T) {
        const auto b = topksim::convex_failure_bound(alpha, c, epsilon, M,
                                                     C_prime, dist0_sq, T);
        py::dict out;
        out["raw"] = b.raw;
        out["clamped"] = b.clamped;
        out["vacuous"] = b.vacuous;
        out["feasible"] = b.feasible;
        out["denominator"] = b.denominator;
        return out;
      },
      py::arg("alpha"), py::arg("c"), py::arg("epsilon"), py::arg("M"),
      py::arg("C_prime"), py::arg("dist0_sq"), py::arg("T"),
      "Probability bound on missing the radius-epsilon region after T "
      "steps.");

  m.def(
      "check_d",
      [](const std::string& schedule, double alpha0, double theta,
         double gamma, std::int64_t t_max) {
        const auto d = topksim::check_D(
            schedule_from(schedule, alpha0, theta), gamma, t_max);
        py::dict out;
        out["sup_partial"] = d.sup_partial;
        out["bounded"] = d.bounded;
        out["t_evaluated"] = d.t_evaluated;
        return out;
      },
      py::arg("schedule"), py::arg("alpha0"), py::arg("theta"),
      py::arg("gamma"), py::arg("t_max") = 100000,
      "Supremum of the step-weighted truncation series; finite only when "
      "2 gamma^2 < 1.");

  m.def(
      "nonconvex_bound",
      [](double f0_minus_fstar, double L, double M, double xi, int P,
         double gamma, double D, const std::string& schedule, double alpha0,
         double theta, std::int64_t T) {
        topksim::NonconvexBoundInputs inputs;
        inputs.f0_minus_fstar = f0_minus_fstar;
        inputs.L = L;
        inputs.M = M;
        inputs.xi = xi;
        inputs.P = P;
        inputs.gamma = gamma;
        inputs.D = D;
        inputs.schedule = schedule_from(schedule, alpha0, theta);
        inputs.T = T;
        const auto b = topksim::nonconvex_bound(inputs);
        py::dict out;
        out["value"] = b.value;
        out["applicable"] = b.applicable;
        out["reason"] = b.reason;
        out["sum_alpha"] = b.sum_alpha;
        out["sum_alpha_sq"] = b.sum_alpha_sq;
        return out;
      },
      py::arg("f0_minus_fstar"), py::arg("L"), py::arg("M"), py::arg("xi"),
      py::arg("P"), py::arg("gamma"), py::arg("D"), py::arg("schedule"),
      py::arg("alpha0"), py::arg("theta"), py::arg("T"),
      "Weighted ergodic bound on the mean squared gradient norm.");

  m.def("fixed_lr_nonconvex", &topksim::fixed_lr_nonconvex,
        py::arg("f0_minus_fstar"), py::arg("L"), py::arg("M"), py::arg("xi"),
        py::arg("P"), py::arg("gamma"), py::arg("D"), py::arg("T"),
        "Horizon-optimal fixed learning rate for the ergodic bound.");

  m.def("supermartingale_w", &topksim::supermartingale_W, py::arg("dist_sq"),
        py::arg("t"), py::arg("alpha"), py::arg("c"), py::arg("epsilon"),
        py::arg("M"),
        "Rate supermartingale value at squared distance dist_sq and step t.");

  m.def(
      "norm_gap_curve",
      [](const std::vector<DenseVector>& samples,
         const std::vector<Index>& K_values) {
        py::list rows;
        for (const auto& row : topksim::norm_gap_curve(samples, K_values)) {
          py::dict d;
          d["K"] = row.K;
          d["gamma"] = row.gamma;
          d["mean_ratio"] = row.mean_ratio;
          d["max_ratio"] = row.max_ratio;
          d["skipped"] = row.skipped;
          rows.append(d);
        }
        return rows;
      },
      py::arg("samples"), py::arg("K_values"),
      "Relative truncation error per K over the given gradient samples.");
}
