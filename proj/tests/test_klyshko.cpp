#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "hpl/klyshko.hpp"
#include "hpl/rng.hpp"

using namespace hpl;

namespace {

constexpr double kEtaS = 0.4195;
constexpr double kAlpha = 344.0;   // mW m
constexpr double kBeta = 5.324e-6; // mW

const std::vector<double> kPowers = {10.0, 20.0, 30.0, 40.0, 50.0};
const std::vector<double> kLengths = {5.0, 10.0, 15.0, 20.0};

KlyshkoDataset grid_dataset(double eta_s, double alpha, double beta,
                            double sigma = 1e-4) {
  KlyshkoDataset dataset;
  for (double p : kPowers) {
    for (double l : kLengths) {
      KlyshkoPoint point;
      point.pump_power_mw = p;
      point.fiber_length_m = l;
      point.detector = "A";
      point.eta_k = model_eta(p, l, eta_s, alpha, beta);
      point.sigma = sigma;
      dataset.points.push_back(point);
    }
  }
  return dataset;
}

double standard_normal(RandomStream& rng) {
  const double u1 = std::max(rng.uniform(), 1e-300);
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace

TEST_CASE("klyshko ratio estimate", "[klyshko]") {
  const auto perfect = estimate_klyshko(500, 500);
  REQUIRE(perfect.eta_k == 1.0);
  REQUIRE(perfect.sigma == 0.0);

  const auto half = estimate_klyshko(250, 1000);
  REQUIRE(half.eta_k == Catch::Approx(0.25).margin(1e-15));
  REQUIRE(half.sigma ==
          Catch::Approx(std::sqrt(0.25 * 0.75 / 1000.0)).margin(1e-15));

  REQUIRE_THROWS_AS(estimate_klyshko(1, 0), StatisticsError);
  REQUIRE_THROWS_AS(estimate_klyshko(5, 4), ConfigError);
}

TEST_CASE("noise model values and limits", "[klyshko]") {
  // Noise-free limit.
  REQUIRE(model_eta(25.0, 10.0, 0.36, 0.0, 0.0) == 0.36);

  // High-power asymptote.
  REQUIRE(model_eta(1e9, 20.0, kEtaS, kAlpha, kBeta) ==
          Catch::Approx(kEtaS).epsilon(1e-6));

  // Benchmark operating point of the fitted parameters.
  const double value = model_eta(50.0, 20.0, kEtaS, kAlpha, kBeta);
  REQUIRE(value ==
          Catch::Approx(kEtaS * 50000.0 / 67200.005324).epsilon(1e-12));
  REQUIRE(value == Catch::Approx(0.3121).margin(5e-5));

  REQUIRE_THROWS_AS(model_eta(0.0, 10.0, 0.4, 1.0, 1.0), ConfigError);
  REQUIRE_THROWS_AS(model_eta(10.0, -1.0, 0.4, 1.0, 1.0), ConfigError);
}

TEST_CASE("model is bounded by eta_s and increasing in power", "[klyshko]") {
  RandomStream rng(88, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const double eta_s = 0.1 + 0.8 * rng.uniform();
    const double alpha = 1000.0 * rng.uniform();
    const double beta = 0.1 * rng.uniform();
    const double l = 1.0 + 30.0 * rng.uniform();
    double previous = 0.0;
    for (double p = 5.0; p <= 100.0; p += 5.0) {
      const double value = model_eta(p, l, eta_s, alpha, beta);
      REQUIRE(value > 0.0);
      REQUIRE(value <= eta_s);
      if (alpha > 0.0 || beta > 0.0) {
        REQUIRE(value < eta_s);
        REQUIRE(value > previous);
      }
      previous = value;
    }
    REQUIRE(model_eta(17.0, l, eta_s, 0.0, 0.0) == eta_s);
  }
}

TEST_CASE("fit recovers the generator on noiseless grid data", "[klyshko]") {
  const auto dataset = grid_dataset(kEtaS, kAlpha, kBeta);
  const auto fit = fit_klyshko(dataset);

  REQUIRE(std::fabs(fit.eta_s - kEtaS) / kEtaS < 1e-3);
  REQUIRE(std::fabs(fit.alpha - kAlpha) / kAlpha < 1e-3);
  REQUIRE(fit.residual_norm < 1e-10);

  // beta's term is ~1e-10 of the others on this grid, so only its
  // confidence interval is meaningful; it must cover the generator.
  const double half_width = 1.96 * fit.sigma_beta();
  REQUIRE(fit.beta - half_width <= kBeta);
  REQUIRE(fit.beta + half_width >= kBeta);
  REQUIRE(fit.sigma_eta_s() < 0.1);  // identifiable parameters stay tight
}

TEST_CASE("fit is idempotent from its own solution", "[klyshko]") {
  const auto dataset = grid_dataset(kEtaS, kAlpha, kBeta);
  const auto fit = fit_klyshko(dataset);
  const auto refit =
      refine_klyshko(dataset, {fit.eta_s, fit.alpha, fit.beta});
  REQUIRE(refit.iterations <= 2);
  REQUIRE(std::fabs(refit.residual_norm - fit.residual_norm) <= 1e-10);
}

TEST_CASE("constant data collapses to the noise-free boundary", "[klyshko]") {
  const auto dataset = grid_dataset(0.27, 0.0, 0.0);
  const auto fit = fit_klyshko(dataset);
  REQUIRE(fit.eta_s == Catch::Approx(0.27).margin(1e-9));
  REQUIRE(fit.alpha == 0.0);
  REQUIRE(fit.beta == 0.0);
  REQUIRE(fit.boundary_alpha);
  REQUIRE(fit.boundary_beta);
  REQUIRE(fit.residual_norm < 1e-10);
}

TEST_CASE("fit under multiplicative noise recovers eta_s", "[klyshko]") {
  RandomStream rng(2121, 0);
  std::vector<double> errors;
  for (int rep = 0; rep < 20; ++rep) {
    KlyshkoDataset dataset;
    for (double p : kPowers) {
      for (double l : kLengths) {
        KlyshkoPoint point;
        point.pump_power_mw = p;
        point.fiber_length_m = l;
        point.detector = "A";
        const double truth = model_eta(p, l, kEtaS, kAlpha, kBeta);
        point.sigma = 0.01 * truth;
        point.eta_k =
            std::clamp(truth * (1.0 + 0.01 * standard_normal(rng)), 0.0, 1.0);
        dataset.points.push_back(point);
      }
    }
    const auto fit = fit_klyshko(dataset);
    errors.push_back(std::fabs(fit.eta_s - kEtaS) / kEtaS);
  }
  std::sort(errors.begin(), errors.end());
  REQUIRE(errors[errors.size() / 2] < 0.05);
}

TEST_CASE("degenerate datasets are rejected", "[klyshko]") {
  KlyshkoDataset tiny;
  for (int i = 0; i < 3; ++i) {
    tiny.points.push_back(KlyshkoPoint{10.0 + i, 5.0, "A", 0.2, 0.01});
  }
  REQUIRE_THROWS_AS(fit_klyshko(tiny), ConfigError);

  KlyshkoDataset single_length;
  for (double p : kPowers) {
    single_length.points.push_back(KlyshkoPoint{p, 20.0, "A", 0.2, 0.01});
  }
  REQUIRE_THROWS_AS(fit_klyshko(single_length), ConfigError);

  KlyshkoDataset bad_sigma = grid_dataset(0.3, 10.0, 0.0);
  bad_sigma.points[0].sigma = 0.0;
  REQUIRE_THROWS_AS(fit_klyshko(bad_sigma), ConfigError);
}

TEST_CASE("covariance agrees with the normal-equations inverse on "
          "well-conditioned data",
          "[klyshko]") {
  // Make both noise terms matter so all three parameters are identifiable.
  const double alpha = 150.0;
  const double beta = 3.0;
  const auto dataset = grid_dataset(0.5, alpha, beta, 1e-3);
  const auto fit = fit_klyshko(dataset);
  REQUIRE(std::fabs(fit.eta_s - 0.5) < 1e-6);
  REQUIRE(std::fabs(fit.alpha - alpha) / alpha < 1e-4);
  REQUIRE(std::fabs(fit.beta - beta) / beta < 1e-4);

  // Oracle: (J^T W J)^-1 with an analytic Jacobian.
  std::array<std::array<double, 3>, 3> normal{};
  for (const auto& point : dataset.points) {
    const double p = point.pump_power_mw;
    const double l = point.fiber_length_m;
    const double pair = p * p * l;
    const double denom = pair + fit.beta * p * l + fit.alpha * p;
    const double d_eta = pair / denom;
    const double d_alpha = -fit.eta_s * pair * p / (denom * denom);
    const double d_beta = -fit.eta_s * pair * p * l / (denom * denom);
    const std::array<double, 3> grad = {d_eta, d_alpha, d_beta};
    const double w = 1.0 / point.sigma;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) normal[i][j] += w * w * grad[i] * grad[j];
    }
  }
  // Invert via the library solver on unit vectors.
  detail::Mat3 m;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m(i, j) = normal[i][j];
  }
  for (int col = 0; col < 3; ++col) {
    std::array<double, 3> e{};
    e[col] = 1.0;
    std::array<double, 3> x{};
    REQUIRE(detail::solve3(m, e, x));
    for (int row = 0; row < 3; ++row) {
      const double expected = x[row];
      const double got = fit.covariance[row * 3 + col];
      REQUIRE(got == Catch::Approx(expected).epsilon(1e-3).margin(1e-30));
    }
  }
}

TEST_CASE("noise budget fractions", "[klyshko]") {
  KlyshkoFitResult clean;
  clean.eta_s = 0.4;
  const auto pure = noise_budget(clean, 30.0, 20.0);
  REQUIRE(pure.frac_pair == 1.0);
  REQUIRE(pure.frac_raman == 0.0);
  REQUIRE(pure.frac_pump == 0.0);

  KlyshkoFitResult noisy_fit_params;
  noisy_fit_params.eta_s = kEtaS;
  noisy_fit_params.alpha = kAlpha;
  noisy_fit_params.beta = kBeta;
  const auto budget = noise_budget(noisy_fit_params, 30.0, 20.0);
  REQUIRE(budget.frac_pair + budget.frac_raman + budget.frac_pump == 1.0);
  REQUIRE(budget.frac_raman / budget.frac_pump ==
          Catch::Approx(kBeta * 20.0 / kAlpha).epsilon(1e-12));
  REQUIRE(budget.frac_raman / budget.frac_pump ==
          Catch::Approx(3.1e-7).margin(2e-9));

  // The pair share grows with power.
  const auto low = noise_budget(noisy_fit_params, 10.0, 5.0);
  const auto high = noise_budget(noisy_fit_params, 50.0, 20.0);
  REQUIRE(high.frac_pair > low.frac_pair);
}
