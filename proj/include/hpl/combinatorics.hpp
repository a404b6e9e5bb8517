#pragma once

#include <cstdint>

#include "hpl/errors.hpp"

namespace hpl {

/// Exact binomial coefficient in integer arithmetic; overflow-free for
/// n <= 62, far above the photon numbers handled here.
inline std::uint64_t binomial_coefficient(int n, int k) {
  if (k < 0 || k > n) return 0;
  if (n > 62) throw ConfigError("binomial coefficient limited to n <= 62");
  std::uint64_t result = 1;
  if (k > n - k) k = n - k;
  for (int i = 1; i <= k; ++i) {
    // Each prefix product is itself a binomial coefficient, so the
    // division is exact at every step.
    result = result * static_cast<std::uint64_t>(n - k + i) /
             static_cast<std::uint64_t>(i);
  }
  return result;
}

}  // namespace hpl
