// Copyright (c) moesim contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace moesim {

/// splitmix64 stream. Small, fast, and bit-identical on every platform,
/// which is what the reproducibility guarantees lean on; the standard
/// distributions are implementation-defined and are avoided on purpose.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return next_double() < p; }

  /// Derives an independent stream keyed by (seed, stream tag), so request
  /// i's randomness never depends on how many requests came before it.
  static Rng stream(std::uint64_t seed, std::uint64_t tag) {
    Rng mix(seed ^ (0xA0761D6478BD642Full + tag * 0xE7037ED1A0B428DBull));
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

/// Samples indices 0..n-1 with cumulative weights prepared once up front.
class WeightedSampler {
 public:
  explicit WeightedSampler(std::span<const double> weights);
  std::size_t sample(Rng& rng) const;

 private:
  std::vector<double> cdf_;
};

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::uint32_t> random_permutation(std::uint32_t n, Rng& rng);

}  // namespace moesim
