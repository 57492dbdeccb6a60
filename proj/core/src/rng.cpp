// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/rng.hpp"

#include <cmath>

namespace spreadnet {

uint64_t Rng::next() {
  state_ += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

uint64_t Rng::next_below(uint64_t n) {
  return next() % n;
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 is kept away from 0 so log() stays finite.
  double u1 = uniform();
  if (u1 <= 0.0) {
    u1 = 0x1.0p-53;
  }
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::gaussian(double mean, double sigma) {
  return mean + sigma * gaussian();
}

Rng Rng::derive(uint64_t seed, uint64_t salt) {
  Rng mix(seed ^ (0xA5A5A5A55A5A5A5AULL * (salt + 1)));
  return Rng(mix.next());
}

}  // namespace spreadnet
