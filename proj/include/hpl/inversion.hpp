#pragma once

// Photon-number recovery by direct inversion of the conditional
// probability matrix.  The click-frequency vector q relates to the
// photon-number probabilities p through q = M p with M upper triangular,
// so p follows by back-substitution; the vacuum component closes the
// normalization, p_0 = 1 - sum_n p_n.  No positivity constraint is
// applied: statistical fluctuations may drive entries (notably p_0)
// negative, and the covariance carries the error bars.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hpl/coincidence.hpp"
#include "hpl/detector_bank.hpp"
#include "hpl/errors.hpp"

namespace hpl {

enum class EfficiencySource { Tracer, Klyshko };

inline std::string to_string(EfficiencySource source) {
  return source == EfficiencySource::Tracer ? "tracer" : "klyshko";
}

struct NumberDistributionEstimate {
  std::vector<double> p;           // p[n], n = 0..n_max
  std::vector<double> covariance;  // (n_max+1) x (n_max+1), row major
  EfficiencySource efficiency_source = EfficiencySource::Tracer;

  int n_max() const { return static_cast<int>(p.size()) - 1; }

  double cov(int i, int j) const {
    return covariance.at(static_cast<std::size_t>(i) * p.size() + j);
  }

  double sigma(int n) const { return std::sqrt(std::max(cov(n, n), 0.0)); }
};

namespace detail {

/// Solve M x = rhs for the upper-triangular click matrix by
/// back-substitution over indices 1..n_max (rhs and out are 1-based like q).
inline void solve_upper(const ConditionalProbMatrix& matrix,
                        std::span<const double> rhs, std::span<double> out) {
  const int n_max = matrix.n_max();
  out[0] = 0.0;
  for (int k = n_max; k >= 1; --k) {
    double value = rhs[k];
    for (int n = k + 1; n <= n_max; ++n) value -= matrix(k, n) * out[n];
    out[k] = value / matrix(k, k);
  }
}

}  // namespace detail

/// Invert click frequencies into photon-number probabilities with full
/// covariance propagation, Cov(p) = M^-1 Cov(q) M^-T.
inline NumberDistributionEstimate invert_clicks(
    const ClickFrequencies& clicks, const ConditionalProbMatrix& matrix) {
  const int n_max = matrix.n_max();
  if (static_cast<int>(clicks.q.size()) < n_max + 1) {
    throw ConfigError("click frequency vector shorter than the matrix range");
  }
  for (int n = 1; n <= n_max; ++n) {
    if (matrix(n, n) < 1e-12) {
      throw ConfigError(
          "conditional matrix is singular at n=" + std::to_string(n) +
          " (zero-efficiency configuration)");
    }
  }

  NumberDistributionEstimate estimate;
  estimate.p.assign(n_max + 1, 0.0);

  const std::size_t dim = static_cast<std::size_t>(n_max) + 1;
  std::vector<double> solved(dim, 0.0);
  detail::solve_upper(matrix, clicks.q, solved);
  double occupied = 0.0;
  for (int n = 1; n <= n_max; ++n) {
    estimate.p[n] = solved[n];
    occupied += solved[n];
  }
  estimate.p[0] = 1.0 - occupied;

  // Cov(p_1..p_n) = M^-1 C M^-T: back-substitute columns of C, then
  // back-substitute the rows of the intermediate (C is symmetric).
  std::vector<double> half(dim * dim, 0.0);
  std::vector<double> column(dim, 0.0);
  std::vector<double> cov_body(dim * dim, 0.0);
  for (int j = 1; j <= n_max; ++j) {
    for (int i = 1; i <= n_max; ++i) column[i] = clicks.cov(i, j);
    detail::solve_upper(matrix, column, solved);
    for (int i = 1; i <= n_max; ++i) half[i * dim + j] = solved[i];
  }
  for (int i = 1; i <= n_max; ++i) {
    for (int j = 1; j <= n_max; ++j) column[j] = half[i * dim + j];
    detail::solve_upper(matrix, column, solved);
    for (int j = 1; j <= n_max; ++j) cov_body[i * dim + j] = solved[j];
  }

  // Extend with the p_0 row/column implied by p_0 = 1 - sum p_n.
  estimate.covariance.assign(dim * dim, 0.0);
  for (int i = 1; i <= n_max; ++i) {
    for (int j = 1; j <= n_max; ++j) {
      estimate.covariance[i * dim + j] = cov_body[i * dim + j];
    }
  }
  double vacuum_var = 0.0;
  for (int i = 1; i <= n_max; ++i) {
    double cross = 0.0;
    for (int j = 1; j <= n_max; ++j) cross += cov_body[j * dim + i];
    estimate.covariance[i] = -cross;            // row 0
    estimate.covariance[i * dim] = -cross;      // column 0
    vacuum_var += cross;
  }
  estimate.covariance[0] = vacuum_var;
  return estimate;
}

/// Systematic envelope from an uncertain arm efficiency: re-invert with
/// every path efficiency shifted by +/- band (absolute, clipped to (0, 1])
/// and take the per-component min/max alongside the central estimate.
struct SystematicBand {
  double band = 0.0;
  std::vector<double> p_lo;
  std::vector<double> p_hi;
};

inline SystematicBand efficiency_band_envelope(const ClickFrequencies& clicks,
                                               const DetectorBankConfig& bank,
                                               int n_max, double band) {
  if (!(band > 0.0)) throw ConfigError("efficiency band must be > 0");
  SystematicBand result;
  result.band = band;
  const int dim = n_max + 1;
  result.p_lo.assign(dim, 0.0);
  result.p_hi.assign(dim, 0.0);
  bool first = true;
  for (double shift : {-band, band}) {
    std::vector<Detector> shifted;
    shifted.reserve(bank.size());
    for (const auto& det : bank.detectors()) {
      const double eta =
          std::clamp(det.path_efficiency + shift, 1e-6, 1.0);
      shifted.push_back(Detector{det.label, det.split_fraction, eta});
    }
    const DetectorBankConfig shifted_bank{std::move(shifted)};
    const auto estimate =
        invert_clicks(clicks, build_conditional_matrix(shifted_bank, n_max));
    for (int n = 0; n < dim; ++n) {
      if (first) {
        result.p_lo[n] = result.p_hi[n] = estimate.p[n];
      } else {
        result.p_lo[n] = std::min(result.p_lo[n], estimate.p[n]);
        result.p_hi[n] = std::max(result.p_hi[n], estimate.p[n]);
      }
    }
    first = false;
  }
  return result;
}

/// Klyshko-calibrated efficiency of a lossless-equivalent signal channel:
/// noise clicks scale the usable efficiency by mu_pair/(mu_pair+mu_noise).
inline double noise_equivalent_efficiency(double eta_s, double mu_pair,
                                          double mu_noise) {
  if (mu_pair < 0.0 || mu_noise < 0.0) {
    throw ConfigError("process means must be >= 0");
  }
  if (mu_pair + mu_noise <= 0.0) {
    throw ConfigError("noise-equivalent efficiency undefined for zero means");
  }
  return eta_s * mu_pair / (mu_pair + mu_noise);
}

/// Bank with the tracer path efficiencies replaced by Klyshko-measured
/// values.  Each input is the raw coincidence ratio for one signal
/// detector and so includes that detector's splitting fraction; the path
/// efficiency becomes eta_K / R_i, with R_i unchanged.
inline DetectorBankConfig klyshko_substituted_bank(
    const DetectorBankConfig& bank, std::span<const double> klyshko_etas) {
  if (static_cast<int>(klyshko_etas.size()) != bank.size()) {
    throw ConfigError("need one Klyshko efficiency per signal detector");
  }
  std::vector<Detector> substituted;
  substituted.reserve(bank.size());
  for (int i = 0; i < bank.size(); ++i) {
    const double eta_k = klyshko_etas[i];
    const Detector& det = bank.at(i);
    if (!(eta_k > 0.0 && eta_k <= 1.0)) {
      throw ConfigError("Klyshko efficiency for '" + det.label +
                        "' must be in (0, 1]");
    }
    if (det.split_fraction <= 0.0) {
      throw ConfigError("detector '" + det.label +
                        "' has zero splitting fraction; its Klyshko efficiency "
                        "cannot be converted to a path efficiency");
    }
    const double path_eta = eta_k / det.split_fraction;
    if (path_eta > 1.0) {
      throw ConfigError(
          "Klyshko efficiency for '" + det.label + "' exceeds its splitting "
          "fraction; expected the raw per-detector coincidence ratio");
    }
    substituted.push_back(Detector{det.label, det.split_fraction, path_eta});
  }
  return DetectorBankConfig{std::move(substituted)};
}

/// Invert with measured per-detector Klyshko heralding efficiencies in
/// place of the tracer-estimated path efficiencies.
inline NumberDistributionEstimate infer_noise_free(
    const ClickFrequencies& clicks, const DetectorBankConfig& bank,
    std::span<const double> klyshko_etas) {
  const auto klyshko_bank = klyshko_substituted_bank(bank, klyshko_etas);
  auto estimate =
      invert_clicks(clicks, build_conditional_matrix(klyshko_bank, bank.size()));
  estimate.efficiency_source = EfficiencySource::Klyshko;
  return estimate;
}

}  // namespace hpl
