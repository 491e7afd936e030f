// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/trace_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "topksim/data.hpp"
#include "topksim/errors.hpp"

namespace topksim {

namespace {

using nlohmann::json;

// JSON has no literals for non-finite values; keep them as readable strings
// so a trace survives a diverging run intact.
json jnum(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

json jvec(const DenseVector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(jnum(v[i]));
  return arr;
}

json run_config_json(const RunConfig& config) {
  json schedule{{"kind", config.schedule.kind_name()},
                {"alpha0", jnum(config.schedule.alpha0)},
                {"theta", jnum(config.schedule.theta)}};
  json run{{"P", config.P},
           {"K", config.K},
           {"T", config.T},
           {"batch_size", config.batch_size},
           {"seed", config.seed},
           {"compressor", compressor_name(config.compressor)},
           {"schedule", schedule},
           {"partition", partition_name(config.partition)},
           {"global_sampling", config.global_sampling},
           {"record_xi", config.record_xi},
           {"record_lemma_slack", config.record_lemma_slack}};
  run["init"] = config.init ? jvec(*config.init) : json(nullptr);
  return run;
}

void stamp_comment(std::ofstream& out, const OutputStamp& stamp,
                   std::uint64_t seed) {
  out << "# config_hash=" << stamp.config_hash << " seed=" << seed
      << " version=" << stamp.version << "\n";
}

}  // namespace

std::ofstream open_output_file(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ConfigError("cannot open output file for writing: " +
                      path.string());
  }
  return out;
}

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_trace_jsonl(const Trace& trace, const OutputStamp& stamp,
                       const std::filesystem::path& path) {
  std::ofstream out = open_output_file(path);

  json header{{"type", "header"},
              {"version", stamp.version},
              {"config_hash", stamp.config_hash},
              {"seed", trace.config.seed},
              {"problem",
               {{"kind", trace.problem_kind},
                {"dim", trace.dim},
                {"num_samples", trace.num_samples}}},
              {"run", run_config_json(trace.config)},
              {"initial_loss_v", jnum(trace.initial_loss_v)},
              {"initial_loss_x", jnum(trace.initial_loss_x)}};
  out << header.dump() << "\n";

  for (const StepRecord& r : trace.records) {
    json line{{"type", "record"},
              {"t", r.t},
              {"loss_v", jnum(r.loss_v)},
              {"loss_x", jnum(r.loss_x)},
              {"gap_norm", jnum(r.gap_norm)},
              {"grad_norm_sq_v", jnum(r.grad_norm_sq_v)},
              {"bytes_sent_per_node", r.bytes_sent_per_node}};
    if (r.xi_t) line["xi_t"] = jnum(*r.xi_t);
    if (r.lemma1_slack) line["lemma1_slack"] = jnum(*r.lemma1_slack);
    out << line.dump() << "\n";
  }

  const TraceSummary& s = trace.summary;
  json summary{{"type", "summary"},
               {"max_conservation_inf", jnum(s.max_conservation_inf)},
               {"min_lemma1_slack", jnum(s.min_lemma1_slack)},
               {"telescope_inf", jnum(s.telescope_inf)},
               {"zero_grad_steps", s.zero_grad_steps},
               {"diverged_at", s.diverged_at},
               {"final_v", jvec(trace.final_v)},
               {"final_x", jvec(trace.final_x)}};
  out << summary.dump() << "\n";
}

void write_trace_csv(const Trace& trace, const OutputStamp& stamp,
                     const std::filesystem::path& path) {
  std::ofstream out = open_output_file(path);
  const RunConfig& c = trace.config;

  stamp_comment(out, stamp, c.seed);
  out << "# problem=" << trace.problem_kind << " dim=" << trace.dim
      << " samples=" << trace.num_samples << " P=" << c.P << " K=" << c.K
      << " T=" << c.T << " batch_size=" << c.batch_size
      << " compressor=" << compressor_name(c.compressor)
      << " schedule=" << c.schedule.kind_name()
      << " alpha0=" << format_g17(c.schedule.alpha0)
      << " theta=" << format_g17(c.schedule.theta)
      << " partition=" << partition_name(c.partition)
      << " global_sampling=" << (c.global_sampling ? 1 : 0) << "\n";
  out << "t,loss_v,loss_x,gap_norm,grad_norm_sq_v,xi_t,lemma1_slack,"
         "bytes_sent_per_node\n";

  for (const StepRecord& r : trace.records) {
    out << r.t << ',' << format_g17(r.loss_v) << ',' << format_g17(r.loss_x)
        << ',' << format_g17(r.gap_norm) << ','
        << format_g17(r.grad_norm_sq_v) << ',';
    if (r.xi_t) out << format_g17(*r.xi_t);
    out << ',';
    if (r.lemma1_slack) out << format_g17(*r.lemma1_slack);
    out << ',' << r.bytes_sent_per_node << "\n";
  }
}

void write_xi_series_csv(const std::vector<XiMeasurement>& series,
                         const OutputStamp& stamp, std::uint64_t seed,
                         const std::filesystem::path& path) {
  std::ofstream out = open_output_file(path);
  stamp_comment(out, stamp, seed);
  out << "t,xi,lhs_norm,grad_norm\n";
  for (const XiMeasurement& m : series) {
    out << m.t << ',' << format_g17(m.xi) << ',' << format_g17(m.lhs_norm)
        << ',' << format_g17(m.grad_norm) << "\n";
  }
}

void write_norm_gap_csv(const std::vector<NormGapRow>& rows,
                        const OutputStamp& stamp, std::uint64_t seed,
                        const std::filesystem::path& path) {
  std::ofstream out = open_output_file(path);
  stamp_comment(out, stamp, seed);
  out << "K,gamma,mean_ratio,max_ratio,skipped\n";
  for (const NormGapRow& r : rows) {
    out << r.K << ',' << format_g17(r.gamma) << ','
        << format_g17(r.mean_ratio) << ',' << format_g17(r.max_ratio) << ','
        << r.skipped << "\n";
  }
}

}  // namespace topksim
