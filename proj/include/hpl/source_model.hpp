#pragma once

// Per-pulse photon statistics of a pulsed photon-pair source with
// independent noise in the herald channel, and the pulse sampler used by
// the Monte Carlo engine.
//
// The pair process emits time-correlated signal/idler pairs with mean
// mu_pair = pair_gain * P^2 * L per pulse.  Two noise processes add
// photons to the herald channel only: broadband scattering in the fiber
// (mean raman_coeff * P * L) and pump light leaking through the filters
// (mean pumpleak_coeff * P).  All three processes are independent.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

enum class PairFamily { Thermal, Poissonian };

inline std::string to_string(PairFamily family) {
  return family == PairFamily::Thermal ? "thermal" : "poissonian";
}

inline PairFamily pair_family_from_string(const std::string& name) {
  if (name == "thermal") return PairFamily::Thermal;
  if (name == "poissonian") return PairFamily::Poissonian;
  throw ConfigError("unknown pair_family '" + name +
                    "' (expected 'thermal' or 'poissonian')");
}

struct SourceParams {
  double pump_power_mw = 30.0;
  double fiber_length_m = 20.0;
  double pair_gain = 5.6e-7;     // pairs / (mW^2 m)
  double raman_coeff = 0.0;      // herald-channel photons / (mW m)
  double pumpleak_coeff = 0.0;   // herald-channel photons / mW
  PairFamily pair_family = PairFamily::Thermal;
  int n_max = 6;
  double signal_noise_mean = 0.0;  // optional, off by default

  void validate() const {
    if (!(pump_power_mw > 0.0)) throw ConfigError("pump_power_mw must be > 0");
    if (!(fiber_length_m > 0.0)) throw ConfigError("fiber_length_m must be > 0");
    if (pair_gain < 0.0) throw ConfigError("pair_gain must be >= 0");
    if (raman_coeff < 0.0) throw ConfigError("raman_coeff must be >= 0");
    if (pumpleak_coeff < 0.0) throw ConfigError("pumpleak_coeff must be >= 0");
    if (signal_noise_mean < 0.0) throw ConfigError("signal_noise_mean must be >= 0");
    if (n_max < 1) throw ConfigError("n_max must be >= 1");
  }

  /// Non-fatal diagnostics; the supported regime is mean pairs per pulse << 1.
  std::vector<std::string> warnings() const {
    std::vector<std::string> notes;
    const double mu = pair_gain * pump_power_mw * pump_power_mw * fiber_length_m;
    if (mu > 0.2) {
      notes.push_back("mean pairs per pulse is " + std::to_string(mu) +
                      "; multi-pair corrections are not negligible above 0.2");
    }
    return notes;
  }
};

struct NoiseMeans {
  double mu_pair = 0.0;
  double mu_raman = 0.0;
  double mu_pump = 0.0;

  double mu_herald_noise() const { return mu_raman + mu_pump; }
};

/// The three per-pulse means (pairs, Raman herald photons, leaked pump
/// herald photons) implied by the power/length scaling of each process.
inline NoiseMeans noise_means(const SourceParams& params) {
  params.validate();
  const double p = params.pump_power_mw;
  const double l = params.fiber_length_m;
  return NoiseMeans{params.pair_gain * p * p * l, params.raman_coeff * p * l,
                    params.pumpleak_coeff * p};
}

/// P(n) of the pair-number family with the given per-pulse mean.
inline double pair_number_pmf(PairFamily family, double mu, int n) {
  if (n < 0) return 0.0;
  if (mu <= 0.0) return n == 0 ? 1.0 : 0.0;
  if (family == PairFamily::Thermal) {
    double p = 1.0 / (1.0 + mu);
    const double ratio = mu / (1.0 + mu);
    for (int i = 0; i < n; ++i) p *= ratio;
    return p;
  }
  double p = std::exp(-mu);
  for (int i = 1; i <= n; ++i) p *= mu / static_cast<double>(i);
  return p;
}

/// Truncated joint probability table P(n_signal, n_herald) for one pulse.
class JointPhotonDistribution {
 public:
  JointPhotonDistribution(int n_max, std::vector<double> table,
                          double truncation_deficit = 0.0)
      : n_max_(n_max),
        table_(std::move(table)),
        truncation_deficit_(truncation_deficit) {
    if (n_max_ < 1) throw ConfigError("joint distribution requires n_max >= 1");
    const std::size_t dim = static_cast<std::size_t>(n_max_) + 1;
    if (table_.size() != dim * dim) {
      throw ConfigError("joint distribution table size does not match n_max");
    }
    double total = 0.0;
    for (double value : table_) {
      if (value < 0.0) throw ConfigError("joint distribution entries must be >= 0");
      total += value;
    }
    if (std::fabs(total - 1.0) > 1e-12) {
      throw ConfigError("joint distribution must sum to 1 within 1e-12");
    }
  }

  int n_max() const { return n_max_; }

  /// P(n_signal = n_s, n_herald = n_r).
  double at(int n_s, int n_r) const {
    check_index(n_s);
    check_index(n_r);
    return table_[static_cast<std::size_t>(n_s) * (n_max_ + 1) + n_r];
  }

  /// Marginal photon-number distribution of the herald channel.
  double herald_marginal(int n_r) const {
    check_index(n_r);
    double sum = 0.0;
    for (int n_s = 0; n_s <= n_max_; ++n_s) sum += at(n_s, n_r);
    return sum;
  }

  /// Marginal photon-number distribution of the signal channel.
  double signal_marginal(int n_s) const {
    check_index(n_s);
    double sum = 0.0;
    for (int n_r = 0; n_r <= n_max_; ++n_r) sum += at(n_s, n_r);
    return sum;
  }

  bool is_diagonal() const {
    for (int n_s = 0; n_s <= n_max_; ++n_s) {
      for (int n_r = 0; n_r <= n_max_; ++n_r) {
        if (n_s != n_r && at(n_s, n_r) != 0.0) return false;
      }
    }
    return true;
  }

  /// Probability mass beyond n_max that was folded into the
  /// renormalization when the table was built.
  double truncation_deficit() const { return truncation_deficit_; }

 private:
  void check_index(int n) const {
    if (n < 0 || n > n_max_) throw ConfigError("photon number out of range");
  }

  int n_max_;
  std::vector<double> table_;
  double truncation_deficit_;
};

/// Joint distribution of an ideal pair source: diagonal, with the marginal
/// given by the configured pair-number family.  Mass beyond n_max is folded
/// into a renormalization; a tail heavier than 1e-6 is rejected as an
/// over-aggressive truncation.
inline JointPhotonDistribution build_sfwm_joint(const SourceParams& params) {
  params.validate();
  const double mu = noise_means(params).mu_pair;
  const int n_max = params.n_max;
  const std::size_t dim = static_cast<std::size_t>(n_max) + 1;

  std::vector<double> marginal(dim);
  double total = 0.0;
  for (int n = 0; n <= n_max; ++n) {
    marginal[n] = pair_number_pmf(params.pair_family, mu, n);
    total += marginal[n];
  }
  const double deficit = 1.0 - total;
  if (deficit > 1e-6) {
    throw ConfigError("truncation at n_max=" + std::to_string(n_max) +
                      " drops probability mass " + std::to_string(deficit) +
                      " (> 1e-6); increase n_max");
  }

  std::vector<double> table(dim * dim, 0.0);
  for (int n = 0; n <= n_max; ++n) table[n * dim + n] = marginal[n] / total;
  return JointPhotonDistribution(n_max, std::move(table),
                                 deficit > 0.0 ? deficit : 0.0);
}

/// Photon content of a single pump pulse.
struct PulseEvent {
  int n_pairs = 0;
  int n_herald_noise = 0;
  int n_signal_noise = 0;

  int n_signal() const { return n_pairs + n_signal_noise; }
  int n_herald() const { return n_pairs + n_herald_noise; }
};

/// Caches the per-pulse sampling constants of a SourceParams so the hot
/// loop avoids recomputing logs and exponentials.
class PulseSampler {
 public:
  explicit PulseSampler(const SourceParams& params)
      : family_(params.pair_family), means_(noise_means(params)) {
    if (family_ == PairFamily::Thermal && means_.mu_pair > 0.0) {
      pair_log_ratio_ = std::log(means_.mu_pair / (1.0 + means_.mu_pair));
    }
    pair_poisson_limit_ = std::exp(-means_.mu_pair);
    herald_noise_limit_ = std::exp(-means_.mu_herald_noise());
    signal_noise_mean_ = params.signal_noise_mean;
    signal_noise_limit_ = std::exp(-signal_noise_mean_);
  }

  PulseEvent sample(RandomStream& rng) const {
    PulseEvent event;
    if (family_ == PairFamily::Thermal) {
      event.n_pairs =
          means_.mu_pair > 0.0
              ? static_cast<int>(std::fmin(
                    std::log1p(-rng.uniform()) / pair_log_ratio_, 1073741824.0))
              : 0;
    } else {
      event.n_pairs = poisson_from_limit(rng, pair_poisson_limit_);
    }
    event.n_herald_noise = poisson_from_limit(rng, herald_noise_limit_);
    if (signal_noise_mean_ > 0.0) {
      event.n_signal_noise = poisson_from_limit(rng, signal_noise_limit_);
    }
    return event;
  }

  const NoiseMeans& means() const { return means_; }

 private:
  // Knuth's method with the exp(-mean) threshold precomputed.
  static int poisson_from_limit(RandomStream& rng, double limit) {
    if (limit >= 1.0) return 0;
    double product = rng.uniform();
    int k = 0;
    while (product > limit) {
      ++k;
      product *= rng.uniform();
    }
    return k;
  }

  PairFamily family_;
  NoiseMeans means_;
  double pair_log_ratio_ = 0.0;
  double pair_poisson_limit_ = 1.0;
  double herald_noise_limit_ = 1.0;
  double signal_noise_mean_ = 0.0;
  double signal_noise_limit_ = 1.0;
};

/// Draw one pulse: pair count from the configured family, herald noise
/// from an independent Poisson process.
inline PulseEvent sample_pulse(const SourceParams& params, RandomStream& rng) {
  return PulseSampler(params).sample(rng);
}

}  // namespace hpl
