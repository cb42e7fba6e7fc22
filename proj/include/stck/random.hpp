// Copyright 2026 The stck Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "stck/tensor.hpp"

namespace stck {

/// Explicit random stream. No global state: every randomized operation takes
/// one of these by reference so runs are reproducible from the seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  std::int64_t randint(std::int64_t n) {  // uniform over [0, n)
    return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_);
  }

  /// Standard Gumbel draw, -log(-log(u)), with u clamped away from {0, 1}
  /// so the transform stays finite.
  double gumbel() {
    double u = std::clamp(uniform(), 1e-10, 1.0 - 1e-10);
    return -std::log(-std::log(u));
  }

  /// Derive an independent child stream (e.g. one per data worker).
  Rng split() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

template <typename Scalar>
Tensor<Scalar> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  auto t = Tensor<Scalar>::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t(i) = static_cast<Scalar>(rng.normal() * stddev);
  return t;
}

template <typename Scalar>
Tensor<Scalar> rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  auto t = Tensor<Scalar>::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i)
    t(i) = static_cast<Scalar>(lo + (hi - lo) * rng.uniform());
  return t;
}

}  // namespace stck
