// SPDX-License-Identifier: Apache-2.0
#include "insure/rng.hpp"

#include <cmath>
#include <numbers>

namespace insure {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Scalar RandomStream::uniform() {
  // 53 mantissa bits of one engine word -> [0, 1).
  return static_cast<Scalar>(engine_() >> 11) * 0x1.0p-53;
}

Scalar RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  Scalar u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const Scalar u2 = uniform();
  const Scalar r = std::sqrt(-2.0 * std::log(u1));
  const Scalar theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t RandomStream::below(std::uint64_t n) {
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::vector<std::size_t> RandomStream::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

Matrix RandomStream::normal_matrix(Index rows, Index cols, Scalar mean, Scalar stddev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(mean, stddev);
  return m;
}

Matrix RandomStream::uniform_matrix(Index rows, Index cols, Scalar lo, Scalar hi) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
  return m;
}

RandomStream RandomStream::derive(std::uint64_t stream_id) const {
  return RandomStream(mix64(seed_ ^ mix64(stream_id + 1)));
}

}  // namespace insure
