// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random number generation (Philox4x32-10).
//
// Every random draw in the library is a pure function of
// (master seed, node id, stream tag, step t, draw index). That makes data
// generation and the simulation engine reproducible bit for bit regardless
// of execution order: a node's stream at step t never depends on how many
// draws other nodes made, and threaded runs replay the sequential ones
// exactly.

#pragma once

#include <array>
#include <cstdint>

namespace topksim {

// One 4x32 Philox block with 10 rounds. Reference: the Random123 generator
// of Salmon et al.; verified against its published known-answer vectors.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key);

// Stream tags partition the draw space by purpose so no two uses of the same
// (seed, node, t) can collide.
namespace stream_tag {
inline constexpr std::uint32_t kDesignMatrix = 1;   // synthetic A entries
inline constexpr std::uint32_t kTrueWeights = 2;    // synthetic x_true
inline constexpr std::uint32_t kTargetNoise = 3;    // synthetic label noise
inline constexpr std::uint32_t kPartition = 4;      // shard shuffling
inline constexpr std::uint32_t kBatch = 5;          // minibatch draws
inline constexpr std::uint32_t kCompress = 6;       // random-K selection
inline constexpr std::uint32_t kSecondMoment = 7;   // M^2 estimation batches
inline constexpr std::uint32_t kInit = 8;           // initial point override
inline constexpr std::uint32_t kNetInputs = 9;      // nonconvex net inputs
inline constexpr std::uint32_t kNetTeacher = 10;    // nonconvex teacher params
inline constexpr std::uint32_t kPowerIter = 11;     // power-iteration start
inline constexpr std::uint32_t kSmoothnessProbe = 12;  // Lipschitz sampling
inline constexpr std::uint32_t kBoundPoints = 13;   // bound-report iterates
}  // namespace stream_tag

// A deterministic stream of randomness addressed by (seed, node, tag, t).
// Draws consume successive Philox blocks; the stream never touches global
// state and two streams with different coordinates are independent.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint32_t node, std::uint32_t tag,
             std::uint64_t t);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on [0, 1), 53 random bits.
  double uniform();

  // Standard normal via Box-Muller; generates pairs and caches the spare.
  double normal();

  // Unbiased integer on [0, bound) via rejection sampling. bound >= 1.
  std::uint64_t uniform_below(std::uint64_t bound);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::uint32_t node_;
  std::uint32_t tag_;
  std::uint32_t t_;
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;  // next unread word in buf_; 4 means empty
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace topksim
