// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset generation, sharding across nodes, and LIBSVM-format I/O.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "topksim/objectives.hpp"
#include "topksim/vec.hpp"

namespace topksim {

// The sample indices owned by one node.
struct Shard {
  std::vector<Index> sample_indices;
};

enum class PartitionMode { kContiguous, kShuffled };

std::string partition_name(PartitionMode mode);

// Splits samples 0..m-1 into P shards whose sizes differ by at most one;
// when m % P != 0 the lowest-numbered shards take the extra sample.
// kContiguous keeps index order; kShuffled applies a seeded permutation
// first (Fisher-Yates on the partition stream) and then splits. Every
// sample lands in exactly one shard either way.
std::vector<Shard> partition(Index m, int P, std::uint64_t seed,
                             PartitionMode mode);

// A synthetic least-squares instance together with its generating weights.
struct SynthRegression {
  std::unique_ptr<LeastSquaresProblem> problem;
  DenseVector x_true;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
};

// Design entries and x_true are standard normal draws from dedicated
// counter streams; targets are A x_true + noise_sigma * noise. The same
// seed always reproduces the same bits. With noise_sigma = 0 and l2 = 0 the
// instance interpolates: loss(x_true) = 0.
SynthRegression synth_regression(Index m, Index n, double noise_sigma,
                                 std::uint64_t seed, double l2_reg = 0.0);

// Raw contents of a LIBSVM-format file: labels plus a CSR matrix. Feature
// indices in the file are 1-based and must be strictly increasing per line;
// '#' starts a comment; blank lines are skipped. The ambient dimension is
// the largest feature index seen. Malformed input raises ParseError with
// the offending line number; a file with no samples is an error.
struct LibsvmFile {
  CsrMatrix matrix;
  std::vector<double> labels;
  std::vector<std::int64_t> sample_lines;    // source line of each sample
  std::vector<std::string> header_comments;  // leading '#' lines, verbatim
};

LibsvmFile read_libsvm_file(const std::filesystem::path& path);

// Binary classification loader: labels must be in {-1, +1} or {0, 1}
// (0 maps to -1). Returns a ready LogisticProblem.
std::unique_ptr<LogisticProblem> load_libsvm(const std::filesystem::path& path,
                                             double l2_reg = 1e-4);

// Serializes a synthetic regression instance in LIBSVM format (real-valued
// labels) with a sidecar header recording the seed and x_true, so the
// instance's provenance travels with the file. Values are printed with 17
// significant digits; reading the file back reproduces the matrix exactly.
void save_regression_libsvm(const LeastSquaresProblem& problem,
                            const DenseVector& x_true, std::uint64_t seed,
                            const std::filesystem::path& path);

}  // namespace topksim
