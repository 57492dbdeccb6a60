// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace spreadnet {

/// Deterministic 64-bit generator (SplitMix64, Steele et al. 2014).
///
/// Chosen over std::mt19937_64 because every draw the project makes must be
/// reproducible across compilers and standard libraries: split manifests,
/// generated datasets and parameter initialization all promise byte-identical
/// output per seed. The exact update is
///   s += 0x9E3779B97F4A7C15;  z = s;
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
///   return z ^ (z >> 31);
/// Derived draws (uniform doubles, bounded ints, gaussians, shuffles) are
/// defined below in terms of next() only, so they inherit the guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next();

  /// Uniform in [0, 1), 53-bit mantissa: (next() >> 11) * 2^-53.
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Uniform integer in [0, n). n must be > 0. Defined as next() % n; the
  /// modulo bias is below 2^-32 for every n this project uses and keeping the
  /// mapping trivial makes the manifest format easy to re-implement.
  uint64_t next_below(uint64_t n);

  /// Standard normal via Box-Muller on two uniform() draws; the spare value
  /// is cached, so draw order is part of the stream contract.
  double gaussian();
  double gaussian(double mean, double sigma);

  /// Derive an independent stream: reseed with next() of a generator built
  /// from (seed, salt). Used to give every sample / member its own stream.
  static Rng derive(uint64_t seed, uint64_t salt);

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates shuffle driven by rng.next_below(i + 1), from the last index
/// down. This exact procedure is what a manifest's "rng=splitmix64" header
/// line refers to.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (size_t i = items.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Identifier recorded in split manifests.
inline constexpr const char* kRngAlgorithmId = "splitmix64";

}  // namespace spreadnet
