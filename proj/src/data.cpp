// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string_view>
#include <utility>

#include "topksim/errors.hpp"
#include "topksim/rng.hpp"

namespace topksim {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view tok, const std::string& source,
                    std::int64_t line, const char* what) {
  double value = 0.0;
  // from_chars rejects an explicit plus sign; "+1" labels are common.
  std::string_view digits = tok;
  if (digits.size() > 1 && digits.front() == '+') digits.remove_prefix(1);
  const auto* end = digits.data() + digits.size();
  const auto res = std::from_chars(digits.data(), end, value);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ParseError(source, line,
                     std::string("malformed ") + what + " '" +
                         std::string(tok) + "'");
  }
  return value;
}

}  // namespace

std::string partition_name(PartitionMode mode) {
  return mode == PartitionMode::kContiguous ? "contiguous" : "shuffled";
}

std::vector<Shard> partition(Index m, int P, std::uint64_t seed,
                             PartitionMode mode) {
  if (m < 1 || P < 1 || static_cast<Index>(P) > m) {
    throw InvalidParameterError("partition: need 1 <= P <= m");
  }
  std::vector<Index> order(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  if (mode == PartitionMode::kShuffled) {
    CounterRng rng(seed, 0, stream_tag::kPartition, 0);
    for (Index i = m - 1; i > 0; --i) {
      const Index j = static_cast<Index>(
          rng.uniform_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
    }
  }
  const Index base = m / P;
  const Index extra = m % P;  // lowest-numbered shards absorb the remainder
  std::vector<Shard> shards(static_cast<std::size_t>(P));
  Index pos = 0;
  for (int p = 0; p < P; ++p) {
    const Index size = base + (static_cast<Index>(p) < extra ? 1 : 0);
    auto& dst = shards[static_cast<std::size_t>(p)].sample_indices;
    dst.assign(order.begin() + pos, order.begin() + pos + size);
    pos += size;
  }
  return shards;
}

SynthRegression synth_regression(Index m, Index n, double noise_sigma,
                                 std::uint64_t seed, double l2_reg) {
  if (m < 1 || n < 1) {
    throw InvalidParameterError("synth_regression: m and n must be positive");
  }
  if (!(noise_sigma >= 0.0)) {
    throw InvalidParameterError("synth_regression: noise_sigma must be >= 0");
  }
  RowMajorMatrix A(m, n);
  CounterRng a_rng(seed, 0, stream_tag::kDesignMatrix, 0);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) A(i, j) = a_rng.normal();
  }
  DenseVector x_true(n);
  CounterRng w_rng(seed, 0, stream_tag::kTrueWeights, 0);
  for (Index j = 0; j < n; ++j) x_true[j] = w_rng.normal();

  DenseVector b = A * x_true;
  if (noise_sigma > 0.0) {
    CounterRng n_rng(seed, 0, stream_tag::kTargetNoise, 0);
    for (Index i = 0; i < m; ++i) b[i] += noise_sigma * n_rng.normal();
  }

  SynthRegression out;
  out.problem = std::make_unique<LeastSquaresProblem>(std::move(A),
                                                      std::move(b), l2_reg);
  out.x_true = std::move(x_true);
  out.seed = seed;
  out.noise_sigma = noise_sigma;
  return out;
}

LibsvmFile read_libsvm_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  const std::string source = path.string();
  if (!in) throw ParseError(source, 0, "cannot open file");

  LibsvmFile out;
  CsrMatrix& M = out.matrix;
  M.row_ptr.push_back(0);
  Index max_col = 0;  // 1-based
  bool seen_sample = false;
  std::string raw;
  std::int64_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line(raw);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    // Full-line comments before the first sample form the header block.
    const auto first_ns = line.find_first_not_of(" \t");
    if (first_ns == std::string_view::npos) continue;
    if (line[first_ns] == '#') {
      if (!seen_sample) out.header_comments.emplace_back(line);
      continue;
    }
    // Trailing comment on a data line.
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }

    Index prev_col = 0;
    bool have_label = false;
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) {
        ++pos;
      }
      if (pos >= line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && line[end] != ' ' && line[end] != '\t') {
        ++end;
      }
      const std::string_view tok = line.substr(pos, end - pos);
      pos = end;

      if (!have_label) {
        out.labels.push_back(parse_double(tok, source, lineno, "label"));
        out.sample_lines.push_back(lineno);
        have_label = true;
        continue;
      }
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos || colon == 0 ||
          colon + 1 >= tok.size() ||
          tok.find(':', colon + 1) != std::string_view::npos) {
        throw ParseError(source, lineno,
                         "malformed feature '" + std::string(tok) +
                             "' (expected index:value)");
      }
      const std::string_view idx_tok = tok.substr(0, colon);
      Index idx = 0;
      const auto* idx_end = idx_tok.data() + idx_tok.size();
      const auto res = std::from_chars(idx_tok.data(), idx_end, idx);
      if (res.ec != std::errc{} || res.ptr != idx_end || idx < 1) {
        throw ParseError(source, lineno,
                         "feature index '" + std::string(idx_tok) +
                             "' is not a positive integer (indices are "
                             "1-based)");
      }
      if (idx <= prev_col) {
        throw ParseError(source, lineno,
                         "feature indices must be strictly increasing");
      }
      prev_col = idx;
      max_col = std::max(max_col, idx);
      const double value =
          parse_double(tok.substr(colon + 1), source, lineno, "feature value");
      M.col_idx.push_back(idx - 1);  // to 0-based
      M.values.push_back(value);
    }
    if (!have_label) continue;  // comment stripped the whole line
    M.row_ptr.push_back(static_cast<Index>(M.col_idx.size()));
    seen_sample = true;
  }
  if (!seen_sample) throw ParseError(source, 0, "no samples in file");
  M.rows = static_cast<Index>(out.labels.size());
  M.cols = max_col;
  M.validate();
  return out;
}

std::unique_ptr<LogisticProblem> load_libsvm(
    const std::filesystem::path& path, double l2_reg) {
  LibsvmFile file = read_libsvm_file(path);
  for (std::size_t i = 0; i < file.labels.size(); ++i) {
    double& y = file.labels[i];
    if (y == 0.0) {
      y = -1.0;
    } else if (y != -1.0 && y != 1.0) {
      throw ParseError(path.string(), file.sample_lines[i],
                       "label " + fmt_double(y) +
                           " is not a binary label (-1/+1 or 0/1)");
    }
  }
  return std::make_unique<LogisticProblem>(std::move(file.matrix),
                                           std::move(file.labels), l2_reg);
}

void save_regression_libsvm(const LeastSquaresProblem& problem,
                            const DenseVector& x_true, std::uint64_t seed,
                            const std::filesystem::path& path) {
  std::ofstream outf(path);
  if (!outf) {
    throw ParseError(path.string(), 0, "cannot open file for writing");
  }
  const RowMajorMatrix& A = problem.design();
  const DenseVector& b = problem.targets();
  outf << "# synth_regression seed=" << seed << " m=" << A.rows()
       << " n=" << A.cols() << " l2=" << fmt_double(problem.l2_reg()) << "\n";
  outf << "# x_true";
  for (Index j = 0; j < x_true.size(); ++j) outf << ' ' << fmt_double(x_true[j]);
  outf << "\n";
  for (Index i = 0; i < A.rows(); ++i) {
    outf << fmt_double(b[i]);
    for (Index j = 0; j < A.cols(); ++j) {
      if (A(i, j) != 0.0) {
        outf << ' ' << (j + 1) << ':' << fmt_double(A(i, j));
      }
    }
    outf << "\n";
  }
  if (!outf) throw ParseError(path.string(), 0, "write failed");
}

}  // namespace topksim
