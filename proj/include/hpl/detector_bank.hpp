#pragma once

// Spatially multiplexed thresholding detectors.
//
// A bank splits the incoming beam so detector i receives a fraction R_i of
// the light and detects a routed photon with path efficiency eta_i.  A
// photon therefore produces a click at detector i with probability
// a_i = R_i * eta_i, independently of the other photons.  Exact click
// probabilities follow by inclusion-exclusion over the miss events, for
// any number of detectors.

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hpl/combinatorics.hpp"
#include "hpl/errors.hpp"
#include "hpl/rng.hpp"

namespace hpl {

/// Set of clicking detectors, bit i = detector i.
using ClickPattern = std::uint32_t;

struct Detector {
  std::string label;
  double split_fraction = 0.0;   // R_i
  double path_efficiency = 0.0;  // eta_i
};

class DetectorBankConfig {
 public:
  static constexpr int kMaxDetectors = 16;

  explicit DetectorBankConfig(std::vector<Detector> detectors)
      : detectors_(std::move(detectors)) {
    if (detectors_.empty()) throw ConfigError("detector bank must not be empty");
    if (static_cast<int>(detectors_.size()) > kMaxDetectors) {
      throw ConfigError("detector bank supports at most 16 detectors");
    }
    double total_split = 0.0;
    for (const auto& det : detectors_) {
      if (det.label.empty()) throw ConfigError("detector label must not be empty");
      for (char c : det.label) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') {
          throw ConfigError("detector label '" + det.label +
                            "' must be alphanumeric/underscore");
        }
      }
      if (det.split_fraction < 0.0 || det.split_fraction > 1.0) {
        throw ConfigError("split fraction of '" + det.label + "' must be in [0, 1]");
      }
      if (det.path_efficiency < 0.0 || det.path_efficiency > 1.0) {
        throw ConfigError("efficiency of '" + det.label + "' must be in [0, 1]");
      }
      total_split += det.split_fraction;
    }
    // Allow a whisker of rounding above 1; a deficit models pre-split loss.
    if (total_split > 1.0 + 1e-12) {
      throw ConfigError("split fractions must sum to at most 1");
    }
    for (std::size_t i = 0; i < detectors_.size(); ++i) {
      for (std::size_t j = i + 1; j < detectors_.size(); ++j) {
        if (detectors_[i].label == detectors_[j].label) {
          throw ConfigError("duplicate detector label '" + detectors_[i].label + "'");
        }
      }
    }
  }

  int size() const { return static_cast<int>(detectors_.size()); }
  const Detector& at(int i) const { return detectors_.at(i); }
  const std::vector<Detector>& detectors() const { return detectors_; }

  int index_of(std::string_view label) const {
    for (std::size_t i = 0; i < detectors_.size(); ++i) {
      if (detectors_[i].label == label) return static_cast<int>(i);
    }
    throw ConfigError("unknown detector label '" + std::string(label) + "'");
  }

  /// Per-photon click probability a_i = R_i * eta_i.
  double click_prob(int i) const {
    return detectors_.at(i).split_fraction * detectors_.at(i).path_efficiency;
  }

  double total_split() const {
    double sum = 0.0;
    for (const auto& det : detectors_) sum += det.split_fraction;
    return sum;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(detectors_.size());
    for (const auto& det : detectors_) out.push_back(det.label);
    return out;
  }

  ClickPattern mask_of(std::span<const std::string> labels) const {
    ClickPattern mask = 0;
    for (const auto& label : labels) mask |= ClickPattern{1} << index_of(label);
    return mask;
  }

 private:
  std::vector<Detector> detectors_;
};

/// Probability that every detector in `subset` clicks (others unconstrained)
/// given n incident photons:
///   P(S|n) = sum over T subset of S of (-1)^|T| (1 - sum_{i in T} R_i eta_i)^n.
inline double prob_set_clicks(const DetectorBankConfig& bank, ClickPattern subset,
                              int n) {
  if (n < 0) throw ConfigError("photon number must be >= 0");
  if (subset == 0) throw ConfigError("detector subset must not be empty");
  if (subset >> bank.size()) throw ConfigError("detector subset out of range");
  if (n == 0) return 0.0;

  double result = 0.0;
  // Enumerate T over all submasks of `subset`, including the empty set.
  ClickPattern t = subset;
  while (true) {
    double miss = 1.0;
    for (ClickPattern bits = t; bits != 0; bits &= bits - 1) {
      miss -= bank.click_prob(std::countr_zero(bits));
    }
    const int parity = std::popcount(t) & 1 ? -1 : 1;
    result += parity * std::pow(miss, n);
    if (t == 0) break;
    t = (t - 1) & subset;
  }
  return result;
}

inline double prob_set_clicks(const DetectorBankConfig& bank,
                              std::span<const std::string> labels, int n) {
  return prob_set_clicks(bank, bank.mask_of(labels), n);
}

/// Probability of exactly k clicks (regardless of which detectors) given n
/// incident photons, combined from the at-least-set probabilities:
///   P(k|n) = sum_{|T| >= k} (-1)^(|T|-k) C(|T|, k) P(T|n).
inline double prob_exactly_k(const DetectorBankConfig& bank, int k, int n) {
  const int m = bank.size();
  if (k < 1 || k > m) throw ConfigError("click count k out of range");
  if (n < 0) throw ConfigError("photon number must be >= 0");
  if (k > n) return 0.0;  // thresholding detectors cannot over-click

  double result = 0.0;
  const ClickPattern full = (ClickPattern{1} << m) - 1;
  for (ClickPattern t = 1; t <= full; ++t) {
    const int size = std::popcount(t);
    if (size < k) continue;
    const double coefficient =
        static_cast<double>(binomial_coefficient(size, k));
    const double sign = (size - k) & 1 ? -1.0 : 1.0;
    result += sign * coefficient * prob_set_clicks(bank, t, n);
  }
  return result;
}

/// Upper-triangular map from incident photon number n to exactly-k click
/// probability, entries M(k, n) = P(k|n) for 1 <= k <= n <= n_max.
class ConditionalProbMatrix {
 public:
  ConditionalProbMatrix(int n_max, std::vector<double> entries)
      : n_max_(n_max), entries_(std::move(entries)) {
    if (n_max_ < 1) throw ConfigError("conditional matrix requires n_max >= 1");
    const std::size_t dim = static_cast<std::size_t>(n_max_) + 1;
    if (entries_.size() != dim * dim) {
      throw ConfigError("conditional matrix storage does not match n_max");
    }
  }

  int n_max() const { return n_max_; }

  double operator()(int k, int n) const {
    if (k < 1 || k > n_max_ || n < 1 || n > n_max_) {
      throw ConfigError("conditional matrix index out of range");
    }
    return entries_[static_cast<std::size_t>(k) * (n_max_ + 1) + n];
  }

  /// 1 - sum_k P(k|n): the zero-click probability for n incident photons.
  double zero_click_prob(int n) const {
    double sum = 0.0;
    for (int k = 1; k <= std::min(n, n_max_); ++k) sum += (*this)(k, n);
    return 1.0 - sum;
  }

 private:
  int n_max_;
  std::vector<double> entries_;
};

/// Build P(k|n) for n up to n_max.  Requires n_max <= number of detectors:
/// a bank cannot resolve more photons than it has detectors.
inline ConditionalProbMatrix build_conditional_matrix(
    const DetectorBankConfig& bank, int n_max) {
  if (n_max < 1) throw ConfigError("conditional matrix requires n_max >= 1");
  if (n_max > bank.size()) {
    throw ConfigError(
        "n_max=" + std::to_string(n_max) + " exceeds the " +
        std::to_string(bank.size()) +
        " detectors in the bank (under-multiplexed configuration)");
  }
  const std::size_t dim = static_cast<std::size_t>(n_max) + 1;
  std::vector<double> entries(dim * dim, 0.0);
  for (int k = 1; k <= n_max; ++k) {
    for (int n = k; n <= n_max; ++n) {
      entries[static_cast<std::size_t>(k) * dim + n] = prob_exactly_k(bank, k, n);
    }
  }
  return ConditionalProbMatrix(n_max, std::move(entries));
}

/// Sampling counterpart of the analytic probabilities: route each of the n
/// photons to detector i with probability R_i (lost with 1 - sum R_i), then
/// detect with probability eta_i; report the set of detectors that clicked.
inline ClickPattern threshold_detect(const DetectorBankConfig& bank, int n,
                                     RandomStream& rng) {
  if (n < 0) throw ConfigError("photon number must be >= 0");
  ClickPattern pattern = 0;
  for (int photon = 0; photon < n; ++photon) {
    double u = rng.uniform();
    for (int i = 0; i < bank.size(); ++i) {
      const double r = bank.at(i).split_fraction;
      if (u < r) {
        if (rng.bernoulli(bank.at(i).path_efficiency)) {
          pattern |= ClickPattern{1} << i;
        }
        break;
      }
      u -= r;
    }
  }
  return pattern;
}

}  // namespace hpl
