#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "hpl/rng.hpp"

using hpl::RandomStream;

TEST_CASE("streams are deterministic and addressable", "[rng]") {
  RandomStream a(42, 7);
  RandomStream b(42, 7);
  for (int i = 0; i < 64; ++i) REQUIRE(a.next_u64() == b.next_u64());

  RandomStream c(42, 8);
  RandomStream d(43, 7);
  bool differs_stream = false;
  bool differs_seed = false;
  RandomStream reference(42, 7);
  for (int i = 0; i < 16; ++i) {
    const std::uint64_t value = reference.next_u64();
    differs_stream |= c.next_u64() != value;
    differs_seed |= d.next_u64() != value;
  }
  REQUIRE(differs_stream);
  REQUIRE(differs_seed);
}

TEST_CASE("uniform stays in [0,1) with sane mean", "[rng]") {
  RandomStream rng(1, 0);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  const double mean = sum / n;
  // sigma of the mean is 1/sqrt(12 n) ~ 9.1e-4
  REQUIRE(std::fabs(mean - 0.5) < 4.0 * 9.2e-4);
}

TEST_CASE("poisson sampler matches its mean and variance", "[rng]") {
  RandomStream rng(2, 0);
  const double mu = 0.07;
  const int n = 400000;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const int k = rng.poisson(mu);
    sum += k;
    sum_sq += static_cast<double>(k) * k;
  }
  const double mean = sum / n;
  const double variance = sum_sq / n - mean * mean;
  const double sigma_mean = std::sqrt(mu / n);
  REQUIRE(std::fabs(mean - mu) < 4.0 * sigma_mean);
  REQUIRE(std::fabs(variance - mu) < 0.01 * mu + 4.0 * sigma_mean * 3.0);

  REQUIRE(rng.poisson(0.0) == 0);
  REQUIRE(rng.poisson(-1.0) == 0);
}

TEST_CASE("thermal sampler matches the geometric pmf", "[rng]") {
  RandomStream rng(3, 0);
  const double mu = 0.25;
  const int n = 400000;
  std::vector<int> histogram(8, 0);
  for (int i = 0; i < n; ++i) {
    const int k = rng.thermal(mu);
    REQUIRE(k >= 0);
    if (k < static_cast<int>(histogram.size())) ++histogram[k];
  }
  for (int k = 0; k < 4; ++k) {
    const double expected = std::pow(mu / (1.0 + mu), k) / (1.0 + mu);
    const double observed = static_cast<double>(histogram[k]) / n;
    const double sigma = std::sqrt(expected * (1.0 - expected) / n);
    REQUIRE(std::fabs(observed - expected) < 4.0 * sigma);
  }
  REQUIRE(rng.thermal(0.0) == 0);
}
