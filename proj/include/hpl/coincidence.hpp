#pragma once

// Pulse-by-pulse Monte Carlo of a heralded pair experiment, emulating the
// counting logic of the acquisition electronics: every pulse yields a
// herald-bank click pattern and a signal-bank click pattern, and the joint
// pattern is tallied.  Exact-k click frequencies and single-detector
// coincidence counts are derived views of the same tally store.
//
// Determinism: pulse i draws from RandomStream(seed, i), so the tally is
// identical for any number of workers.

#include <bit>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "hpl/detector_bank.hpp"
#include "hpl/errors.hpp"
#include "hpl/source_model.hpp"

namespace hpl {

struct ExperimentScenario {
  SourceParams source;
  DetectorBankConfig herald_bank;
  DetectorBankConfig signal_bank;
  std::uint64_t n_pulses = 0;
  std::uint64_t seed = 0;

  void validate() const {
    source.validate();
    if (n_pulses < 1) throw ConfigError("n_pulses must be >= 1");
    if (herald_bank.size() + signal_bank.size() > 24) {
      throw ConfigError("combined bank size is limited to 24 detectors");
    }
  }
};

/// Joint click-pattern tallies for a run.  Storage is dense, indexed by
/// (herald_pattern << m_signal) | signal_pattern, so merging is
/// elementwise addition.
class CoincidenceCounts {
 public:
  CoincidenceCounts(std::vector<std::string> herald_labels,
                    std::vector<std::string> signal_labels)
      : herald_labels_(std::move(herald_labels)),
        signal_labels_(std::move(signal_labels)) {
    const int bits =
        static_cast<int>(herald_labels_.size() + signal_labels_.size());
    if (herald_labels_.empty() || signal_labels_.empty() || bits > 24) {
      throw ConfigError("invalid bank sizes for coincidence tallies");
    }
    tallies_.assign(std::size_t{1} << bits, 0);
  }

  CoincidenceCounts(const DetectorBankConfig& herald_bank,
                    const DetectorBankConfig& signal_bank)
      : CoincidenceCounts(herald_bank.labels(), signal_bank.labels()) {}

  int m_herald() const { return static_cast<int>(herald_labels_.size()); }
  int m_signal() const { return static_cast<int>(signal_labels_.size()); }
  const std::vector<std::string>& herald_labels() const { return herald_labels_; }
  const std::vector<std::string>& signal_labels() const { return signal_labels_; }
  std::uint64_t n_pulses() const { return n_pulses_; }

  void record(ClickPattern herald, ClickPattern signal, std::uint64_t count = 1) {
    tallies_[index(herald, signal)] += count;
    n_pulses_ += count;
  }

  std::uint64_t at(ClickPattern herald, ClickPattern signal) const {
    return tallies_[index(herald, signal)];
  }

  /// Merge tallies from a run over a disjoint pulse range.
  CoincidenceCounts& merge(const CoincidenceCounts& other) {
    if (other.herald_labels_ != herald_labels_ ||
        other.signal_labels_ != signal_labels_) {
      throw ConfigError("cannot merge tallies from different bank layouts");
    }
    for (std::size_t i = 0; i < tallies_.size(); ++i) {
      tallies_[i] += other.tallies_[i];
    }
    n_pulses_ += other.n_pulses_;
    return *this;
  }

 private:
  std::size_t index(ClickPattern herald, ClickPattern signal) const {
    if (herald >> m_herald() || signal >> m_signal()) {
      throw ConfigError("click pattern out of range for the bank layout");
    }
    return (static_cast<std::size_t>(herald) << m_signal()) | signal;
  }

  std::vector<std::string> herald_labels_;
  std::vector<std::string> signal_labels_;
  std::vector<std::uint64_t> tallies_;
  std::uint64_t n_pulses_ = 0;
};

inline CoincidenceCounts merge(CoincidenceCounts a, const CoincidenceCounts& b) {
  a.merge(b);
  return a;
}

namespace detail {

inline void run_pulse_range(const ExperimentScenario& scenario,
                            const PulseSampler& sampler, std::uint64_t first,
                            std::uint64_t last, CoincidenceCounts& out) {
  for (std::uint64_t pulse = first; pulse < last; ++pulse) {
    RandomStream rng(scenario.seed, pulse);
    const PulseEvent event = sampler.sample(rng);
    const ClickPattern herald =
        threshold_detect(scenario.herald_bank, event.n_herald(), rng);
    const ClickPattern signal =
        threshold_detect(scenario.signal_bank, event.n_signal(), rng);
    out.record(herald, signal);
  }
}

}  // namespace detail

/// Run the full pulse loop.  The result is independent of n_workers; the
/// per-pulse stream addressing makes any pulse partition reproducible.
inline CoincidenceCounts run_experiment(const ExperimentScenario& scenario,
                                        int n_workers = 1) {
  scenario.validate();
  const PulseSampler sampler(scenario.source);

  if (n_workers < 1) n_workers = 1;
  const std::uint64_t pulses = scenario.n_pulses;
  if (static_cast<std::uint64_t>(n_workers) > pulses) {
    n_workers = static_cast<int>(pulses);
  }

  std::vector<CoincidenceCounts> partials(
      n_workers, CoincidenceCounts(scenario.herald_bank, scenario.signal_bank));
  if (n_workers == 1) {
    detail::run_pulse_range(scenario, sampler, 0, pulses, partials[0]);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    const std::uint64_t chunk = pulses / n_workers;
    for (int w = 0; w < n_workers; ++w) {
      const std::uint64_t first = chunk * w;
      const std::uint64_t last =
          (w + 1 == n_workers) ? pulses : chunk * (w + 1);
      workers.emplace_back([&, first, last, w] {
        // Accumulate into a thread-local tally and hand it over once;
        // the partials share cache lines and would false-share badly.
        CoincidenceCounts local(scenario.herald_bank, scenario.signal_bank);
        detail::run_pulse_range(scenario, sampler, first, last, local);
        partials[w] = std::move(local);
      });
    }
    for (auto& worker : workers) worker.join();
  }

  CoincidenceCounts result = std::move(partials[0]);
  for (int w = 1; w < n_workers; ++w) result.merge(partials[w]);
  return result;
}

/// How a herald condition selects pulses.
enum class HeraldRule { Exactly, AtLeast };

/// Exactly-k signal-click frequencies under a herald condition, with the
/// multinomial covariance of the observed frequency vector.
struct ClickFrequencies {
  std::vector<double> q;           // q[k], k = 0..m_signal
  std::vector<double> covariance;  // (m+1) x (m+1), row major
  std::uint64_t support = 0;       // pulses meeting the herald condition

  double cov(int i, int j) const {
    const std::size_t dim = q.size();
    return covariance.at(static_cast<std::size_t>(i) * dim + j);
  }
};

/// Click-number frequencies of the signal bank over pulses whose herald
/// click count matches (herald_clicks, rule).
inline ClickFrequencies extract_exact_k(const CoincidenceCounts& counts,
                                        int herald_clicks,
                                        HeraldRule rule = HeraldRule::Exactly) {
  if (herald_clicks < 0 || herald_clicks > counts.m_herald()) {
    throw ConfigError("herald click count out of range");
  }

  const int m = counts.m_signal();
  std::vector<std::uint64_t> by_k(m + 1, 0);
  std::uint64_t support = 0;
  for (ClickPattern h = 0; h < (ClickPattern{1} << counts.m_herald()); ++h) {
    const int h_clicks = std::popcount(h);
    const bool selected = rule == HeraldRule::Exactly
                              ? h_clicks == herald_clicks
                              : h_clicks >= herald_clicks;
    if (!selected) continue;
    for (ClickPattern s = 0; s < (ClickPattern{1} << m); ++s) {
      const std::uint64_t count = counts.at(h, s);
      by_k[std::popcount(s)] += count;
      support += count;
    }
  }
  if (support == 0) {
    throw StatisticsError("no pulses meet the herald condition (clicks " +
                          std::string(rule == HeraldRule::Exactly ? "== " : ">= ") +
                          std::to_string(herald_clicks) + ")");
  }

  ClickFrequencies result;
  result.support = support;
  result.q.resize(m + 1);
  for (int k = 0; k <= m; ++k) {
    result.q[k] = static_cast<double>(by_k[k]) / static_cast<double>(support);
  }
  // Close the normalization through the largest component so the
  // frequencies sum to 1 exactly despite the rounded divisions.
  int largest = 0;
  for (int k = 1; k <= m; ++k) {
    if (by_k[k] > by_k[largest]) largest = k;
  }
  double rest = 0.0;
  for (int k = 0; k <= m; ++k) {
    if (k != largest) rest += result.q[k];
  }
  result.q[largest] = 1.0 - rest;
  result.covariance.assign(static_cast<std::size_t>(m + 1) * (m + 1), 0.0);
  for (int i = 0; i <= m; ++i) {
    for (int j = 0; j <= m; ++j) {
      const double value =
          ((i == j ? result.q[i] : 0.0) - result.q[i] * result.q[j]) /
          static_cast<double>(support);
      result.covariance[static_cast<std::size_t>(i) * (m + 1) + j] = value;
    }
  }
  return result;
}

/// Herald and coincidence counts for one herald/signal detector pair,
/// ignoring all other detectors.
struct KlyshkoCounts {
  std::uint64_t n_herald = 0;       // pulses where the herald detector clicked
  std::uint64_t n_coincidence = 0;  // ... and the signal detector clicked too
};

inline KlyshkoCounts klyshko_counts(const CoincidenceCounts& counts,
                                    std::string_view herald_label,
                                    std::string_view signal_label) {
  int h_index = -1;
  int s_index = -1;
  for (int i = 0; i < counts.m_herald(); ++i) {
    if (counts.herald_labels()[i] == herald_label) h_index = i;
  }
  for (int i = 0; i < counts.m_signal(); ++i) {
    if (counts.signal_labels()[i] == signal_label) s_index = i;
  }
  if (h_index < 0) {
    throw ConfigError("unknown herald detector '" + std::string(herald_label) + "'");
  }
  if (s_index < 0) {
    throw ConfigError("unknown signal detector '" + std::string(signal_label) + "'");
  }

  KlyshkoCounts result;
  for (ClickPattern h = 0; h < (ClickPattern{1} << counts.m_herald()); ++h) {
    if (!(h >> h_index & 1)) continue;
    for (ClickPattern s = 0; s < (ClickPattern{1} << counts.m_signal()); ++s) {
      const std::uint64_t count = counts.at(h, s);
      result.n_herald += count;
      if (s >> s_index & 1) result.n_coincidence += count;
    }
  }
  return result;
}

}  // namespace hpl
