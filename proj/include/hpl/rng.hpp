#pragma once

// Deterministic splittable random streams for the Monte Carlo engine.
//
// Reproducibility contract: a stream is addressed by (base_seed,
// stream_index).  The engine assigns one stream per pulse, so any
// partition of pulses across workers replays exactly the same draws.

#include <cmath>
#include <cstdint>

namespace hpl {

/// One step of the SplitMix64 sequence; used to expand seeds into state.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ generator addressed by (base_seed, stream_index).
class RandomStream {
 public:
  RandomStream(std::uint64_t base_seed, std::uint64_t stream_index) {
    // Hash the user seed once so that small seeds (0, 1, 2, ...) do not
    // produce correlated state, then offset by the stream index along a
    // distinct odd-constant arithmetic progression.
    std::uint64_t sm = base_seed;
    sm = splitmix64_next(sm) + 0xD1B54A32D192ED03ULL * (stream_index + 1);
    for (auto& word : state_) word = splitmix64_next(sm);
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 significant bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Poisson sample by Knuth's product method (exact; intended for the
  /// small means of this library, cost grows linearly with the mean).
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    double product = uniform();
    int k = 0;
    while (product > limit) {
      ++k;
      product *= uniform();
    }
    return k;
  }

  /// Thermal (Bose-Einstein) photon number with the given mean,
  /// P(n) = mu^n / (1+mu)^(n+1), sampled by geometric inversion.
  int thermal(double mean) {
    if (mean <= 0.0) return 0;
    const double log_ratio = std::log(mean / (1.0 + mean));
    const double value = std::log1p(-uniform()) / log_ratio;
    return static_cast<int>(std::fmin(value, 1073741824.0));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
};

}  // namespace hpl
