// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "insure/common.hpp"

namespace insure {

/// Deterministic random stream. Gaussian and uniform draws are generated from
/// raw mt19937_64 output (no std::*_distribution), so sequences are identical
/// across standard libraries, not just across runs.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  /// Uniform in [0, 1).
  Scalar uniform();

  /// Uniform in [lo, hi).
  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  Scalar normal();

  Scalar normal(Scalar mean, Scalar stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates shuffle of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

  Matrix normal_matrix(Index rows, Index cols, Scalar mean = 0.0, Scalar stddev = 1.0);
  Matrix uniform_matrix(Index rows, Index cols, Scalar lo, Scalar hi);

  /// Independent child stream; (seed, id) -> child seed is a splitmix64 hash,
  /// so per-sample substreams do not depend on draw order.
  RandomStream derive(std::uint64_t stream_id) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  Scalar spare_ = 0.0;
};

/// splitmix64 finalizer; used for seed derivation and config hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace insure
