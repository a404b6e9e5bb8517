#pragma once

// Analytic treatment of heralding with uncorrelated noise photons in the
// herald channel.
//
// Each herald detection originates from the pair process with probability
// eta_r, independently of the others.  Conditioning the signal channel on
// k herald detections therefore mixes the noise-free conditionals with
// binomial weights.  For an ideal (diagonal) pair source this is exactly
// equivalent to noise-free heralding followed by a binomial loss channel
// of survival probability eta_r on the signal photons; the checker below
// evaluates both sides through independent code paths.

#include <cmath>
#include <vector>

#include "hpl/combinatorics.hpp"
#include "hpl/errors.hpp"
#include "hpl/source_model.hpp"

namespace hpl {

struct HeraldNoiseParams {
  double eta_r = 1.0;  // probability a herald click is from the pair process

  void validate() const {
    if (!(eta_r >= 0.0 && eta_r <= 1.0)) {
      throw ConfigError("eta_r must be in [0, 1]");
    }
  }
};

/// Noise-free conditional P(n_s | n_r) = P(n_s, n_r) / P_r(n_r).
inline double conditional_signal(const JointPhotonDistribution& joint, int n_s,
                                 int n_r) {
  const double marginal = joint.herald_marginal(n_r);
  if (marginal <= 0.0) {
    throw StatisticsError("conditioning on herald count " + std::to_string(n_r) +
                          " which has zero probability");
  }
  return joint.at(n_s, n_r) / marginal;
}

/// Probability that m of k herald detections originate from the pair
/// process: C(k, m) eta_r^m (1 - eta_r)^(k - m).
inline double herald_origin_binomial(int m, int k, HeraldNoiseParams params) {
  params.validate();
  if (k < 0 || m < 0 || m > k) {
    throw ConfigError("herald origin binomial requires 0 <= m <= k");
  }
  const double coefficient = static_cast<double>(binomial_coefficient(k, m));
  return coefficient * std::pow(params.eta_r, m) *
         std::pow(1.0 - params.eta_r, k - m);
}

/// A distribution over signal photon number, 0..n_max of the source joint.
struct ConditionalDistribution {
  std::vector<double> p;
  /// Set when binomial weights were renormalized because some herald
  /// origin counts have zero probability under the joint.
  bool renormalized_weights = false;

  double at(int n) const { return p.at(n); }
};

/// Signal distribution conditioned on k_r herald detections in the
/// presence of noise: the binomial mixture of noise-free conditionals.
/// Terms whose herald count is impossible under the joint (zero marginal,
/// including counts beyond the table) are dropped and the remaining
/// weights renormalized.
inline ConditionalDistribution noisy_herald_distribution(
    const JointPhotonDistribution& joint, HeraldNoiseParams params, int k_r) {
  params.validate();
  if (k_r < 0) throw ConfigError("herald count must be >= 0");

  ConditionalDistribution result;
  result.p.assign(joint.n_max() + 1, 0.0);
  double used_weight = 0.0;
  for (int m = 0; m <= k_r; ++m) {
    const double weight = herald_origin_binomial(m, k_r, params);
    if (weight == 0.0) continue;
    if (m > joint.n_max() || joint.herald_marginal(m) <= 0.0) {
      result.renormalized_weights = true;
      continue;
    }
    used_weight += weight;
    for (int n_s = 0; n_s <= joint.n_max(); ++n_s) {
      result.p[n_s] += weight * conditional_signal(joint, n_s, m);
    }
  }
  if (used_weight <= 0.0) {
    throw StatisticsError("no herald origin count <= " + std::to_string(k_r) +
                          " is possible under the joint distribution");
  }
  if (result.renormalized_weights) {
    for (double& value : result.p) value /= used_weight;
  }
  return result;
}

inline double noisy_herald_conditional(const JointPhotonDistribution& joint,
                                       HeraldNoiseParams params, int n_s,
                                       int k_r) {
  return noisy_herald_distribution(joint, params, k_r).at(n_s);
}

/// Signal distribution after noise-free heralding on k detections followed
/// by a binomial loss channel: each signal photon independently survives
/// with probability 1 - rho_loss.
inline ConditionalDistribution lossy_signal_distribution(
    const JointPhotonDistribution& joint, double rho_loss, int k) {
  if (!(rho_loss >= 0.0 && rho_loss <= 1.0)) {
    throw ConfigError("rho_loss must be in [0, 1]");
  }
  if (k < 0) throw ConfigError("herald count must be >= 0");
  if (k > joint.n_max()) {
    throw StatisticsError("herald count exceeds the joint distribution range");
  }

  const double survival = 1.0 - rho_loss;
  ConditionalDistribution result;
  result.p.assign(joint.n_max() + 1, 0.0);
  for (int j = 0; j <= joint.n_max(); ++j) {
    const double base = conditional_signal(joint, j, k);
    if (base == 0.0) continue;
    for (int n = 0; n <= j; ++n) {
      const double thinning =
          static_cast<double>(binomial_coefficient(j, n)) *
          std::pow(survival, n) * std::pow(rho_loss, j - n);
      result.p[n] += base * thinning;
    }
  }
  return result;
}

inline double lossy_signal_conditional(const JointPhotonDistribution& joint,
                                       double rho_loss, int n, int k) {
  return lossy_signal_distribution(joint, rho_loss, k).at(n);
}

/// Maximum absolute difference between the noisy-heralding conditionals
/// and the equivalent loss channel (rho = 1 - eta_r), over all signal
/// counts n_s <= n_max and herald counts k_r <= n_max.  The equivalence
/// is established for ideal pair sources, so the joint must be diagonal.
inline double check_noise_loss_equivalence(const JointPhotonDistribution& joint,
                                           double eta_r, int n_max) {
  if (!joint.is_diagonal()) {
    throw ConfigError("noise/loss equivalence check requires a diagonal joint");
  }
  if (n_max < 1 || n_max > joint.n_max()) {
    throw ConfigError("check range must satisfy 1 <= n_max <= joint n_max");
  }
  const HeraldNoiseParams params{eta_r};
  params.validate();

  double worst = 0.0;
  for (int k_r = 0; k_r <= n_max; ++k_r) {
    const auto noisy = noisy_herald_distribution(joint, params, k_r);
    const auto lossy = lossy_signal_distribution(joint, 1.0 - eta_r, k_r);
    for (int n_s = 0; n_s <= n_max; ++n_s) {
      worst = std::max(worst, std::fabs(noisy.at(n_s) - lossy.at(n_s)));
    }
  }
  return worst;
}

}  // namespace hpl
