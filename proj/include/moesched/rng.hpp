// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace moesched {

/// Deterministic, portable random generator: xoshiro256** seeded via
/// splitmix64. State evolution is pure integer arithmetic, so identical
/// seeds reproduce identical streams on any platform. Floating-point
/// helpers (normal, gamma) depend on libm only through log/sqrt/cos.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double();

    /// Uniform integer in [0, n). Rejection sampling, unbiased. n > 0.
    std::uint64_t next_below(std::uint64_t n);

    /// Standard normal via Box-Muller.
    double next_normal();

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
    double next_gamma(double shape);

  private:
    std::uint64_t state_[4];
};

/// Derives an independent stream seed from (seed, tag) with splitmix64.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

} // namespace moesched
