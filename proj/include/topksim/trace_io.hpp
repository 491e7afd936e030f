// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Trace and measurement-series export. Every file starts with provenance
// (config hash, seed, artifact version) so any output can be traced back to
// the exact configuration that produced it; identical runs produce
// byte-identical files.

#ifndef TOPKSIM_TRACE_IO_HPP_
#define TOPKSIM_TRACE_IO_HPP_

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "topksim/analysis.hpp"
#include "topksim/engine.hpp"

namespace topksim {

// %.17g: enough digits to reproduce any double bit for bit.
std::string format_g17(double v);

// Creates parent directories and opens for binary writing; failures raise
// ConfigError naming the path.
std::ofstream open_output_file(const std::filesystem::path& path);

// Provenance block for output files. The seed is read from the trace or
// passed alongside, never duplicated here.
struct OutputStamp {
  std::string config_hash;  // hex digest of the raw configuration text
  std::string version;      // artifact version
};

// One header object on the first line (provenance, config echo, problem
// shape, initial losses), one record object per step line, and a closing
// summary object carrying the final iterates. Non-finite numbers appear as
// the strings "inf", "-inf", "nan" since JSON has no literals for them.
void write_trace_jsonl(const Trace& trace, const OutputStamp& stamp,
                       const std::filesystem::path& path);

// Flat columns under provenance comment lines. Optional per-step fields
// are empty cells when a record does not carry them.
void write_trace_csv(const Trace& trace, const OutputStamp& stamp,
                     const std::filesystem::path& path);

// Per-step collapse-constant measurements: t, xi, lhs_norm, grad_norm.
void write_xi_series_csv(const std::vector<XiMeasurement>& series,
                         const OutputStamp& stamp, std::uint64_t seed,
                         const std::filesystem::path& path);

// Truncation-ratio table: K, gamma, mean_ratio, max_ratio, skipped.
void write_norm_gap_csv(const std::vector<NormGapRow>& rows,
                        const OutputStamp& stamp, std::uint64_t seed,
                        const std::filesystem::path& path);

}  // namespace topksim

#endif  // TOPKSIM_TRACE_IO_HPP_
