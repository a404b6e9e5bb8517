#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hpl/coincidence.hpp"
#include "hpl/detector_bank.hpp"
#include "hpl/inversion.hpp"
#include "hpl/rng.hpp"
#include "hpl/source_model.hpp"

using namespace hpl;

namespace {

DetectorBankConfig random_bank(RandomStream& rng, int m = 3) {
  std::vector<Detector> detectors;
  const double keep = 0.6 + 0.4 * rng.uniform();
  std::vector<double> raw(m);
  double total = 0.0;
  for (auto& value : raw) {
    value = 0.2 + rng.uniform();
    total += value;
  }
  for (int i = 0; i < m; ++i) {
    detectors.push_back(Detector{std::string(1, static_cast<char>('A' + i)),
                                 raw[i] / total * keep,
                                 0.2 + 0.8 * rng.uniform()});
  }
  return DetectorBankConfig(std::move(detectors));
}

/// Forward map q = M p (with q_0 closing the normalization) and zero
/// covariance; the exact round-trip input.
ClickFrequencies forward_clicks(const ConditionalProbMatrix& matrix,
                                const std::vector<double>& p) {
  const int n = matrix.n_max();
  ClickFrequencies clicks;
  clicks.q.assign(n + 1, 0.0);
  clicks.support = 1;
  double occupied = 0.0;
  for (int k = 1; k <= n; ++k) {
    double q_k = 0.0;
    for (int j = k; j <= n; ++j) q_k += matrix(k, j) * p[j];
    clicks.q[k] = q_k;
    occupied += q_k;
  }
  clicks.q[0] = 1.0 - occupied;
  clicks.covariance.assign(static_cast<std::size_t>(n + 1) * (n + 1), 0.0);
  return clicks;
}

/// Dense inverse (Gauss-Jordan) for the covariance oracle.
std::vector<double> invert_dense(const std::vector<double>& a, int n) {
  std::vector<double> aug(n * 2 * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) aug[i * 2 * n + j] = a[i * n + j];
    aug[i * 2 * n + n + i] = 1.0;
  }
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int row = col + 1; row < n; ++row) {
      if (std::fabs(aug[row * 2 * n + col]) >
          std::fabs(aug[pivot * 2 * n + col])) {
        pivot = row;
      }
    }
    for (int k = 0; k < 2 * n; ++k) {
      std::swap(aug[col * 2 * n + k], aug[pivot * 2 * n + k]);
    }
    const double diag = aug[col * 2 * n + col];
    for (int k = 0; k < 2 * n; ++k) aug[col * 2 * n + k] /= diag;
    for (int row = 0; row < n; ++row) {
      if (row == col) continue;
      const double factor = aug[row * 2 * n + col];
      for (int k = 0; k < 2 * n; ++k) {
        aug[row * 2 * n + k] -= factor * aug[col * 2 * n + k];
      }
    }
  }
  std::vector<double> inverse(n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) inverse[i * n + j] = aug[i * 2 * n + n + j];
  }
  return inverse;
}

}  // namespace

TEST_CASE("round-trip inversion over random configurations", "[inversion]") {
  RandomStream rng(404, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto bank = random_bank(rng);
    const auto matrix = build_conditional_matrix(bank, 3);

    std::vector<double> p(4, 0.0);
    double occupied = 0.0;
    for (int n = 1; n <= 3; ++n) {
      p[n] = 0.3 * rng.uniform();
      occupied += p[n];
    }
    p[0] = 1.0 - occupied;

    const auto clicks = forward_clicks(matrix, p);
    const auto estimate = invert_clicks(clicks, matrix);

    for (int n = 1; n <= 3; ++n) {
      REQUIRE(estimate.p[n] == Catch::Approx(p[n]).margin(1e-12));
    }
    // Vacuum closes the normalization exactly, by construction.
    const double occupied_out = estimate.p[1] + estimate.p[2] + estimate.p[3];
    REQUIRE(estimate.p[0] == 1.0 - occupied_out);

    // Zero input covariance propagates to exactly zero output covariance.
    for (int i = 0; i <= 3; ++i) {
      for (int j = 0; j <= 3; ++j) REQUIRE(estimate.cov(i, j) == 0.0);
    }
  }
}

TEST_CASE("triangular structure: single-click data inverts by hand",
          "[inversion]") {
  RandomStream rng(405, 0);
  const auto bank = random_bank(rng);
  const auto matrix = build_conditional_matrix(bank, 3);

  ClickFrequencies clicks;
  clicks.q = {0.7, 0.3, 0.0, 0.0};
  clicks.covariance.assign(16, 0.0);
  clicks.support = 1;
  const auto estimate = invert_clicks(clicks, matrix);
  REQUIRE(estimate.p[3] == 0.0);
  REQUIRE(estimate.p[2] == 0.0);
  REQUIRE(estimate.p[1] == Catch::Approx(0.3 / matrix(1, 1)).margin(1e-15));
}

TEST_CASE("inversion does not clamp negative probabilities", "[inversion]") {
  const DetectorBankConfig bank(
      {{"A", 0.30, 0.36}, {"B", 0.35, 0.36}, {"C", 0.35, 0.36}});
  const auto matrix = build_conditional_matrix(bank, 3);

  // More single clicks than one photon per pulse could produce.
  ClickFrequencies clicks;
  clicks.q = {0.5, 0.5, 0.0, 0.0};
  clicks.covariance.assign(16, 0.0);
  clicks.support = 1;
  const auto estimate = invert_clicks(clicks, matrix);
  REQUIRE(estimate.p[1] > 1.0);
  REQUIRE(estimate.p[0] < 0.0);  // honest, unclamped vacuum estimate
}

TEST_CASE("covariance propagation matches a dense-inverse oracle",
          "[inversion]") {
  RandomStream rng(406, 0);
  const auto bank = random_bank(rng);
  const auto matrix = build_conditional_matrix(bank, 3);

  // A plausible multinomial covariance for q = (q0, q1, q2, q3).
  const std::vector<double> q = {0.90, 0.08, 0.015, 0.005};
  const double support = 50'000.0;
  ClickFrequencies clicks;
  clicks.q = q;
  clicks.support = static_cast<std::uint64_t>(support);
  clicks.covariance.assign(16, 0.0);
  for (int i = 0; i <= 3; ++i) {
    for (int j = 0; j <= 3; ++j) {
      clicks.covariance[i * 4 + j] =
          ((i == j ? q[i] : 0.0) - q[i] * q[j]) / support;
    }
  }

  const auto estimate = invert_clicks(clicks, matrix);

  // Oracle: dense M^-1 C M^-T over indices 1..3.
  std::vector<double> m_dense(9, 0.0);
  for (int k = 1; k <= 3; ++k) {
    for (int n = k; n <= 3; ++n) m_dense[(k - 1) * 3 + (n - 1)] = matrix(k, n);
  }
  const auto m_inverse = invert_dense(m_dense, 3);
  std::vector<double> expected(9, 0.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double value = 0.0;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          value += m_inverse[i * 3 + a] *
                   clicks.covariance[(a + 1) * 4 + b + 1] * m_inverse[j * 3 + b];
        }
      }
      expected[i * 3 + j] = value;
    }
  }
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 3; ++j) {
      REQUIRE(estimate.cov(i, j) ==
              Catch::Approx(expected[(i - 1) * 3 + (j - 1)]).margin(1e-18));
    }
  }

  // Vacuum row: Cov(p0, p_j) = -sum_i Cov(p_i, p_j).
  for (int j = 1; j <= 3; ++j) {
    double cross = 0.0;
    for (int i = 1; i <= 3; ++i) cross += estimate.cov(i, j);
    REQUIRE(estimate.cov(0, j) == Catch::Approx(-cross).margin(1e-18));
  }
  double total = 0.0;
  for (int i = 1; i <= 3; ++i) {
    for (int j = 1; j <= 3; ++j) total += estimate.cov(i, j);
  }
  REQUIRE(estimate.cov(0, 0) == Catch::Approx(total).margin(1e-18));
  REQUIRE(estimate.sigma(0) >= 0.0);
}

TEST_CASE("singular matrices are rejected", "[inversion]") {
  const DetectorBankConfig dead({{"A", 0.5, 0.0}, {"B", 0.5, 0.4}});
  const auto matrix = build_conditional_matrix(dead, 2);
  ClickFrequencies clicks;
  clicks.q = {1.0, 0.0, 0.0};
  clicks.covariance.assign(9, 0.0);
  clicks.support = 1;
  REQUIRE_THROWS_AS(invert_clicks(clicks, matrix), ConfigError);
}

TEST_CASE("noise equivalent efficiency", "[inversion]") {
  REQUIRE(noise_equivalent_efficiency(0.42, 1.0, 0.0) == 0.42);
  REQUIRE(noise_equivalent_efficiency(0.42, 2.0, 2.0) ==
          Catch::Approx(0.21).margin(1e-15));
  REQUIRE(noise_equivalent_efficiency(0.42, 3.0, 1.0) ==
          Catch::Approx(0.315).margin(1e-15));
  REQUIRE_THROWS_AS(noise_equivalent_efficiency(0.42, 0.0, 0.0), ConfigError);
  REQUIRE_THROWS_AS(noise_equivalent_efficiency(0.42, -1.0, 1.0), ConfigError);
}

TEST_CASE("klyshko substitution with true efficiencies is the identity",
          "[inversion]") {
  const DetectorBankConfig bank(
      {{"A", 0.30, 0.36}, {"B", 0.35, 0.36}, {"C", 0.35, 0.36}});
  const auto matrix = build_conditional_matrix(bank, 3);

  const std::vector<double> p = {0.93, 0.05, 0.015, 0.005};
  const auto clicks = forward_clicks(matrix, p);

  // Noise-free Klyshko ratios equal R_i * eta_i per detector.
  std::vector<double> etas;
  for (int i = 0; i < 3; ++i) etas.push_back(bank.click_prob(i));

  const auto direct = invert_clicks(clicks, matrix);
  const auto substituted = infer_noise_free(clicks, bank, etas);
  REQUIRE(substituted.efficiency_source == EfficiencySource::Klyshko);
  REQUIRE(direct.efficiency_source == EfficiencySource::Tracer);
  for (int n = 0; n <= 3; ++n) {
    REQUIRE(substituted.p[n] == Catch::Approx(direct.p[n]).margin(1e-12));
  }
}

TEST_CASE("klyshko substitution input validation", "[inversion]") {
  const DetectorBankConfig bank(
      {{"A", 0.30, 0.36}, {"B", 0.35, 0.36}, {"C", 0.35, 0.36}});
  ClickFrequencies clicks;
  clicks.q = {1.0, 0.0, 0.0, 0.0};
  clicks.covariance.assign(16, 0.0);
  clicks.support = 1;

  REQUIRE_THROWS_AS(
      infer_noise_free(clicks, bank, std::vector<double>{0.1, 0.1}),
      ConfigError);
  REQUIRE_THROWS_AS(
      infer_noise_free(clicks, bank, std::vector<double>{0.1, 0.1, 1.5}),
      ConfigError);
  REQUIRE_THROWS_AS(
      infer_noise_free(clicks, bank, std::vector<double>{0.1, 0.1, 0.0}),
      ConfigError);
  // A value above the splitting fraction cannot be a raw coincidence ratio.
  REQUIRE_THROWS_AS(
      infer_noise_free(clicks, bank, std::vector<double>{0.5, 0.1, 0.1}),
      ConfigError);
}

TEST_CASE("noisy double heralds: klyshko substitution restores the two-photon "
          "ordering",
          "[inversion]") {
  SourceParams source;
  source.pump_power_mw = 30.0;
  source.fiber_length_m = 20.0;
  source.pair_gain = 0.05 / (30.0 * 30.0 * 20.0);
  source.pumpleak_coeff = 0.05 / 30.0;  // mu_pump = mu_pair
  // Poissonian pairs: with a thermal source the two-pair bunching
  // enhancement lifts p_2 to p_1 even before any correction, which is a
  // different effect than the false-herald pollution probed here.
  source.pair_family = PairFamily::Poissonian;
  source.n_max = 6;
  const ExperimentScenario scenario{
      source,
      DetectorBankConfig({{"H1", 0.5, 0.6}, {"H2", 0.5, 0.6}}),
      DetectorBankConfig(
          {{"A", 0.30, 0.36}, {"B", 0.35, 0.36}, {"C", 0.35, 0.36}}),
      4'000'000, 2222};

  const auto counts = run_experiment(scenario, 4);
  const auto clicks = extract_exact_k(counts, 2, HeraldRule::Exactly);
  REQUIRE(clicks.support > 2000);

  const auto matrix = build_conditional_matrix(scenario.signal_bank, 3);
  const auto tracer = invert_clicks(clicks, matrix);

  std::vector<double> etas;
  for (const auto& det : scenario.signal_bank.detectors()) {
    const auto kc = klyshko_counts(counts, "H1", det.label);
    etas.push_back(static_cast<double>(kc.n_coincidence) /
                   static_cast<double>(kc.n_herald));
  }
  const auto corrected = infer_noise_free(clicks, scenario.signal_bank, etas);

  // False double heralds leave a dominant one-photon component; the
  // substituted inversion recovers the underlying two-photon state.
  REQUIRE(tracer.p[1] >= tracer.p[2]);
  REQUIRE(corrected.p[2] > corrected.p[1]);
  REQUIRE(corrected.p[2] > 0.5);
}

TEST_CASE("efficiency-band envelope brackets the central estimate",
          "[inversion]") {
  const DetectorBankConfig bank(
      {{"A", 0.30, 0.36}, {"B", 0.35, 0.36}, {"C", 0.35, 0.36}});
  const auto matrix = build_conditional_matrix(bank, 3);
  const std::vector<double> p = {0.9, 0.08, 0.015, 0.005};
  const auto clicks = forward_clicks(matrix, p);
  const auto central = invert_clicks(clicks, matrix);

  const auto envelope = efficiency_band_envelope(clicks, bank, 3, 0.05);
  REQUIRE(envelope.band == 0.05);
  for (int n = 1; n <= 3; ++n) {
    REQUIRE(envelope.p_lo[n] <= central.p[n] + 1e-12);
    REQUIRE(envelope.p_hi[n] >= central.p[n] - 1e-12);
  }
  // A lower assumed efficiency inflates the occupied components.
  REQUIRE(envelope.p_hi[1] > central.p[1]);
  REQUIRE_THROWS_AS(efficiency_band_envelope(clicks, bank, 3, 0.0), ConfigError);
}

TEST_CASE("error-bar calibration smoke test", "[inversion]") {
  // 1 sigma coverage of p_1 over independent repetitions; the acceptance
  // suite runs the full-depth version.
  SourceParams source;
  source.pump_power_mw = 30.0;
  source.fiber_length_m = 20.0;
  source.pair_gain = 0.01 / (30.0 * 30.0 * 20.0);
  source.n_max = 6;
  const DetectorBankConfig herald({{"H1", 0.5, 0.12}, {"H2", 0.5, 0.12}});
  const DetectorBankConfig signal(
      {{"A", 0.30, 0.36}, {"B", 0.35, 0.36}, {"C", 0.35, 0.36}});
  const auto matrix = build_conditional_matrix(signal, 3);
  const double p1_true = 0.01 / (1.01 * 1.01);

  int covered = 0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    const ExperimentScenario scenario{source, herald, signal, 100'000,
                                      9000 + static_cast<std::uint64_t>(rep)};
    const auto counts = run_experiment(scenario, 2);
    const auto clicks = extract_exact_k(counts, 0, HeraldRule::AtLeast);
    const auto estimate = invert_clicks(clicks, matrix);
    if (std::fabs(estimate.p[1] - p1_true) <= estimate.sigma(1)) ++covered;
  }
  const double coverage = static_cast<double>(covered) / reps;
  REQUIRE(coverage > 0.45);
  REQUIRE(coverage < 0.90);
}
