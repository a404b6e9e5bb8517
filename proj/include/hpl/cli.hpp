#pragma once

// Command-line pipeline: simulate -> invert / klyshko, plus the analytic
// theory-check.  Everything is driven by one JSON experiment config; all
// outputs embed the config hash and seed and are byte-identical across
// re-runs with identical inputs.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hpl/coincidence.hpp"
#include "hpl/config.hpp"
#include "hpl/errors.hpp"
#include "hpl/inversion.hpp"
#include "hpl/io.hpp"
#include "hpl/klyshko.hpp"
#include "hpl/noise_theory.hpp"
#include "hpl/source_model.hpp"

namespace hpl::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigExit = 2,
  kIoExit = 3,
  kStatisticsExit = 4,
  kConvergenceExit = 5,
};

/// --workers flag, HPL_WORKERS environment variable, hardware count.
inline int resolve_workers(std::optional<int> flag) {
  if (flag) {
    if (*flag < 1) throw ConfigError("--workers must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv("HPL_WORKERS")) {
    const int value = std::atoi(env);
    if (value < 1) throw ConfigError("HPL_WORKERS must be a positive integer");
    return value;
  }
  const unsigned hardware = std::thread::hardware_concurrency();
  return std::clamp<int>(static_cast<int>(hardware), 1, 16);
}

struct SimulateOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> pulses;
  std::optional<int> workers;
  std::optional<std::string> output_dir;
};

inline std::string point_file_stem(double pump_power_mw, double fiber_length_m) {
  return "counts_P" + detail::format_double(pump_power_mw) + "_L" +
         detail::format_double(fiber_length_m);
}

/// Run the scenario (per sweep point if a sweep is configured) and write a
/// counts CSV plus provenance sidecar per point.  Sweep points are ordered
/// by (power, length); point i runs with seed base_seed + i.
inline std::vector<std::filesystem::path> cmd_simulate(
    const SimulateOptions& options, std::ostream& log) {
  ExperimentConfig config = load_config(options.config_path);
  if (options.seed) config.scenario.seed = *options.seed;
  if (options.pulses) config.scenario.n_pulses = *options.pulses;
  const std::string output_dir =
      options.output_dir ? *options.output_dir : config.output_dir;
  const int workers = resolve_workers(options.workers);

  for (const auto& note : config.scenario.source.warnings()) {
    log << "warning: " << note << "\n";
  }

  std::vector<std::pair<double, double>> points;
  if (config.sweep) {
    auto powers = config.sweep->pump_powers_mw;
    auto lengths = config.sweep->fiber_lengths_m;
    std::sort(powers.begin(), powers.end());
    std::sort(lengths.begin(), lengths.end());
    for (double p : powers) {
      for (double l : lengths) points.emplace_back(p, l);
    }
  } else {
    points.emplace_back(config.scenario.source.pump_power_mw,
                        config.scenario.source.fiber_length_m);
  }

  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + output_dir + "'");

  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < points.size(); ++i) {
    ExperimentScenario scenario = config.scenario;
    scenario.source.pump_power_mw = points[i].first;
    scenario.source.fiber_length_m = points[i].second;
    scenario.seed = config.scenario.seed + i;
    const CoincidenceCounts counts = run_experiment(scenario, workers);
    const auto path = std::filesystem::path(output_dir) /
                      (point_file_stem(points[i].first, points[i].second) + ".csv");
    write_counts(path, counts, scenario);
    log << "wrote " << path.string() << " (" << counts.n_pulses()
        << " pulses)\n";
    written.push_back(path);
  }
  return written;
}

struct InvertOptions {
  std::string counts_path;
  std::optional<std::string> config_path;
  int herald = 0;
  HeraldRule rule = HeraldRule::Exactly;
  std::string efficiencies = "tracer";  // tracer | klyshko | klyshko:<file>
  std::optional<std::string> output_dir;
  std::optional<std::string> klyshko_herald;  // herald detector for self-calibration
  double efficiency_band = 0.0;  // absolute +/- on path efficiencies; 0 = off
};

namespace detail_cli {

inline ExperimentScenario resolve_scenario(const InvertOptions& options) {
  // The provenance sidecar describes exactly the run that produced the
  // counts; fall back to the experiment config only when it is absent
  // (a present-but-broken sidecar stays an error).
  auto sidecar = std::filesystem::path(options.counts_path);
  sidecar.replace_extension(".provenance.json");
  if (!std::filesystem::exists(sidecar)) {
    if (!options.config_path) {
      throw IoError("no provenance sidecar next to '" + options.counts_path +
                    "' and no --config given");
    }
    return load_config(*options.config_path).scenario;
  }
  return read_counts_provenance(options.counts_path).scenario;
}

/// Raw per-detector Klyshko efficiencies for the signal bank.
inline std::vector<double> resolve_klyshko_etas(
    const std::string& selector, const CoincidenceCounts& counts,
    const ExperimentScenario& scenario,
    const std::optional<std::string>& klyshko_herald, std::ostream& log) {
  const DetectorBankConfig& bank = scenario.signal_bank;
  std::vector<double> etas;

  if (selector == "klyshko") {
    // Self-calibration from the same coincidence data.
    const std::string herald_label =
        klyshko_herald ? *klyshko_herald : scenario.herald_bank.at(0).label;
    for (const auto& det : bank.detectors()) {
      const auto kc = klyshko_counts(counts, herald_label, det.label);
      if (kc.n_herald == 0) {
        throw StatisticsError("no herald detections on '" + herald_label +
                              "' for Klyshko calibration");
      }
      const auto estimate = estimate_klyshko(kc.n_coincidence, kc.n_herald);
      log << "klyshko " << det.label << ": " << estimate.eta_k << " +/- "
          << estimate.sigma << " (N_H=" << kc.n_herald << ")\n";
      etas.push_back(estimate.eta_k);
    }
    return etas;
  }

  const std::string path = selector.substr(std::string("klyshko:").size());
  std::ifstream in(path);
  if (!in) throw IoError("cannot open Klyshko efficiency file '" + path + "'");
  json object;
  try {
    in >> object;
  } catch (const json::exception& e) {
    throw IoError("Klyshko efficiency file '" + path + "' is not valid JSON: " +
                  e.what());
  }
  if (object.contains("eta_s") && object.contains("alpha_mw_m")) {
    // A fit result: evaluate the model at this run's operating point.  The
    // fitted eta_s is arm-level (splitting fractions divided out), so the
    // raw per-detector value is R_i * eta_model.
    const double eta_arm = model_eta(
        scenario.source.pump_power_mw, scenario.source.fiber_length_m,
        object.at("eta_s").get<double>(), object.at("alpha_mw_m").get<double>(),
        object.at("beta_mw").get<double>());
    for (const auto& det : bank.detectors()) {
      etas.push_back(det.split_fraction * eta_arm);
    }
    return etas;
  }
  // Otherwise: a plain {label: raw_eta_k} map.
  for (const auto& det : bank.detectors()) {
    if (!object.contains(det.label)) {
      throw ConfigError("Klyshko efficiency file lacks detector '" + det.label +
                        "'");
    }
    etas.push_back(object.at(det.label).get<double>());
  }
  return etas;
}

}  // namespace detail_cli

/// Invert the click statistics of a counts file under a herald condition.
inline std::filesystem::path cmd_invert(const InvertOptions& options,
                                        std::ostream& log) {
  if (options.efficiencies != "tracer" && options.efficiencies != "klyshko" &&
      options.efficiencies.rfind("klyshko:", 0) != 0) {
    throw ConfigError("--efficiencies must be 'tracer', 'klyshko', or "
                      "'klyshko:<file>'");
  }
  const ExperimentScenario scenario = detail_cli::resolve_scenario(options);
  const CoincidenceCounts counts = read_counts(options.counts_path, scenario);
  if (options.herald < 0 || options.herald > counts.m_herald()) {
    throw ConfigError("--herald must be between 0 and the herald bank size");
  }

  const ClickFrequencies clicks =
      extract_exact_k(counts, options.herald, options.rule);
  log << "herald condition: " << clicks.support << " of " << counts.n_pulses()
      << " pulses\n";

  NumberDistributionEstimate estimate;
  json provenance;
  std::optional<SystematicBand> systematic;
  if (options.efficiencies == "tracer") {
    const auto matrix =
        build_conditional_matrix(scenario.signal_bank, counts.m_signal());
    estimate = invert_clicks(clicks, matrix);
    if (options.efficiency_band > 0.0) {
      systematic = efficiency_band_envelope(
          clicks, scenario.signal_bank, counts.m_signal(),
          options.efficiency_band);
    }
  } else {
    const auto etas = detail_cli::resolve_klyshko_etas(
        options.efficiencies, counts, scenario, options.klyshko_herald, log);
    estimate = infer_noise_free(clicks, scenario.signal_bank, etas);
    provenance["klyshko_etas"] = etas;
    if (options.efficiency_band > 0.0) {
      systematic = efficiency_band_envelope(
          clicks, klyshko_substituted_bank(scenario.signal_bank, etas),
          counts.m_signal(), options.efficiency_band);
    }
  }

  provenance["config_hash"] = config_hash_hex(to_json(scenario));
  provenance["seed"] = scenario.seed;
  provenance["herald_condition"] = options.herald;
  provenance["herald_rule"] =
      options.rule == HeraldRule::Exactly ? "exactly" : "at_least";
  provenance["support"] = clicks.support;

  const std::string output_dir = options.output_dir ? *options.output_dir : ".";
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + output_dir + "'");
  const std::string stem =
      "distribution_h" + std::to_string(options.herald) + "_" +
      (options.efficiencies == "tracer" ? "tracer" : "klyshko");
  const auto base = std::filesystem::path(output_dir) / (stem + ".json");
  if (systematic) provenance["efficiency_band"] = options.efficiency_band;
  bool emit_csv = true;
  if (options.config_path) {
    emit_csv = load_config(*options.config_path).emit_plots_data;
  }
  write_distribution(base, estimate, provenance, emit_csv,
                     systematic ? &*systematic : nullptr);
  log << "wrote " << base.string() << "\n";
  return base;
}

struct KlyshkoOptions {
  std::vector<std::string> counts_paths;
  std::optional<std::string> output_dir;
  std::optional<std::string> herald_detector;
  bool unweighted = false;
};

struct KlyshkoOutputs {
  std::filesystem::path dataset_csv;
  std::filesystem::path fit_json;
  std::filesystem::path model_csv;
  KlyshkoFitResult fit;
};

/// Build the Klyshko dataset from sweep counts files and fit the noise
/// model.  Dataset rows are path-normalized (raw coincidence ratio divided
/// by the detector's splitting fraction) so all detectors share one
/// arm-level eta_s.
inline KlyshkoOutputs cmd_klyshko(const KlyshkoOptions& options,
                                  std::ostream& log) {
  if (options.counts_paths.size() < 4) {
    throw ConfigError("need at least 4 sweep counts files");
  }

  KlyshkoDataset dataset;
  std::string config_hash;
  std::uint64_t base_seed = 0;
  for (const auto& path : options.counts_paths) {
    const auto provenance = read_counts_provenance(path);
    const ExperimentScenario& scenario = provenance.scenario;
    if (config_hash.empty()) {
      config_hash = provenance.config_hash;
      base_seed = scenario.seed;
    }
    const CoincidenceCounts counts = read_counts(path, scenario);
    const std::string herald_label = options.herald_detector
                                         ? *options.herald_detector
                                         : scenario.herald_bank.at(0).label;
    for (const auto& det : scenario.signal_bank.detectors()) {
      const auto kc = klyshko_counts(counts, herald_label, det.label);
      if (kc.n_herald == 0) {
        throw StatisticsError("no herald detections in '" + path + "'");
      }
      const auto estimate = estimate_klyshko(kc.n_coincidence, kc.n_herald);
      if (det.split_fraction <= 0.0) {
        throw ConfigError("detector '" + det.label +
                          "' has zero splitting fraction");
      }
      // Additive-smoothing floor on the binomial uncertainty: a ratio of
      // 0/N must not enter the weighted fit with zero sigma.
      const double smoothed = (static_cast<double>(kc.n_coincidence) + 1.0) /
                              (static_cast<double>(kc.n_herald) + 2.0);
      const double sigma_floor = std::sqrt(smoothed * (1.0 - smoothed) /
                                           static_cast<double>(kc.n_herald));
      KlyshkoPoint point;
      point.pump_power_mw = scenario.source.pump_power_mw;
      point.fiber_length_m = scenario.source.fiber_length_m;
      point.detector = det.label;
      point.eta_k = estimate.eta_k / det.split_fraction;
      point.sigma = std::max(estimate.sigma, sigma_floor) / det.split_fraction;
      dataset.points.push_back(std::move(point));
    }
  }

  if (dataset.distinct_powers() < 2 || dataset.distinct_lengths() < 2) {
    throw ConfigError(
        "sweep is degenerate: need at least 2 distinct pump powers and 2 "
        "distinct fiber lengths to separate the noise terms");
  }

  KlyshkoFitOptions fit_options;
  fit_options.weighted = !options.unweighted;
  const KlyshkoFitResult fit = fit_klyshko(dataset, fit_options);
  log << "fit: eta_s=" << fit.eta_s << " alpha=" << fit.alpha
      << " beta=" << fit.beta << " residual_norm=" << fit.residual_norm << "\n";

  const std::string output_dir = options.output_dir ? *options.output_dir : ".";
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + output_dir + "'");

  KlyshkoOutputs outputs;
  outputs.fit = fit;
  outputs.dataset_csv = std::filesystem::path(output_dir) / "klyshko_dataset.csv";
  outputs.fit_json = std::filesystem::path(output_dir) / "klyshko_fit.json";
  outputs.model_csv = std::filesystem::path(output_dir) / "klyshko_model.csv";
  write_klyshko_dataset(outputs.dataset_csv, dataset, config_hash, base_seed);
  write_klyshko_fit(outputs.fit_json, fit, config_hash, base_seed);
  write_klyshko_model_csv(outputs.model_csv, dataset, fit, config_hash,
                          base_seed);
  log << "wrote " << outputs.dataset_csv.string() << ", "
      << outputs.fit_json.string() << ", " << outputs.model_csv.string() << "\n";
  return outputs;
}

struct TheoryCheckOptions {
  double eta_r = 0.5;
  double mu = 0.01;
  int n_max = 5;
  PairFamily family = PairFamily::Thermal;
};

struct TheoryCheckReport {
  double single_herald_presence = 0.0;  // P(n_s >= 1 | 1 herald)
  double double_herald_p1 = 0.0;        // P(n_s = 1 | 2 heralds)
  double double_herald_p2 = 0.0;        // P(n_s = 2 | 2 heralds)
  double max_discrepancy = 0.0;
};

/// Tabulate the noisy-heralding conditionals against the equivalent loss
/// channel and report the worked-example probabilities.
inline TheoryCheckReport cmd_theory_check(const TheoryCheckOptions& options,
                                          std::ostream& out) {
  if (options.n_max < 2 || options.n_max > 20) {
    throw ConfigError("--n-max must be in [2, 20]");
  }
  if (!(options.mu > 0.0)) throw ConfigError("--mu must be > 0");

  // Pick a table size large enough that truncation is far below the
  // discrepancy threshold being certified.
  SourceParams params;
  params.pump_power_mw = 1.0;
  params.fiber_length_m = 1.0;
  params.pair_gain = options.mu;
  params.pair_family = options.family;
  params.n_max = options.n_max;
  int table_n = options.n_max;
  for (; table_n <= 24; ++table_n) {
    double mass = 0.0;
    for (int n = 0; n <= table_n; ++n) {
      mass += pair_number_pmf(options.family, options.mu, n);
    }
    if (1.0 - mass <= 1e-9) break;
  }
  if (table_n > 24) {
    throw ConfigError("--mu too large to truncate the pair distribution");
  }
  params.n_max = table_n;
  const JointPhotonDistribution joint = build_sfwm_joint(params);
  const HeraldNoiseParams noise{options.eta_r};

  out << "#schema=hpl.theory_check.v1\n";
  out << "#eta_r=" << detail::format_double(options.eta_r) << "\n";
  out << "#mu=" << detail::format_double(options.mu) << "\n";
  out << "#family=" << to_string(options.family) << "\n";
  out << "#n_max=" << options.n_max << "\n";
  out << "k_heralds,n_signal,noisy_herald,loss_equivalent,abs_diff\n";

  TheoryCheckReport report;
  for (int k_r = 0; k_r <= options.n_max; ++k_r) {
    const auto noisy = noisy_herald_distribution(joint, noise, k_r);
    const auto lossy = lossy_signal_distribution(joint, 1.0 - options.eta_r, k_r);
    for (int n_s = 0; n_s <= options.n_max; ++n_s) {
      const double difference = std::fabs(noisy.at(n_s) - lossy.at(n_s));
      report.max_discrepancy = std::max(report.max_discrepancy, difference);
      out << k_r << ',' << n_s << ',' << detail::format_double(noisy.at(n_s))
          << ',' << detail::format_double(lossy.at(n_s)) << ','
          << detail::format_double(difference) << "\n";
    }
    if (k_r == 1) {
      report.single_herald_presence = 1.0 - noisy.at(0);
    } else if (k_r == 2) {
      report.double_herald_p1 = noisy.at(1);
      report.double_herald_p2 = noisy.at(2);
    }
  }

  out << "#single_herald_presence="
      << detail::format_double(report.single_herald_presence) << "\n";
  out << "#double_herald_p1=" << detail::format_double(report.double_herald_p1)
      << "\n";
  out << "#double_herald_p2=" << detail::format_double(report.double_herald_p2)
      << "\n";
  out << "#max_discrepancy=" << detail::format_double(report.max_discrepancy)
      << "\n";
  return report;
}

}  // namespace hpl::cli
