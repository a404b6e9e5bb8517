#pragma once

// JSON experiment configuration: source parameters, detector banks, pulse
// budget, and an optional pump-power / fiber-length sweep grid.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpl/coincidence.hpp"
#include "hpl/detector_bank.hpp"
#include "hpl/errors.hpp"
#include "hpl/source_model.hpp"

namespace hpl {

using json = nlohmann::json;

struct SweepGrid {
  std::vector<double> pump_powers_mw;
  std::vector<double> fiber_lengths_m;

  void validate() const {
    if (pump_powers_mw.empty() || fiber_lengths_m.empty()) {
      throw ConfigError("sweep lists must not be empty");
    }
    for (double p : pump_powers_mw) {
      if (!(p > 0.0)) throw ConfigError("sweep pump powers must be > 0");
    }
    for (double l : fiber_lengths_m) {
      if (!(l > 0.0)) throw ConfigError("sweep fiber lengths must be > 0");
    }
  }
};

struct ExperimentConfig {
  ExperimentScenario scenario;
  std::optional<SweepGrid> sweep;
  std::string output_dir = "out";
  bool emit_plots_data = true;

  void validate() const {
    scenario.validate();
    if (sweep) sweep->validate();
  }
};

namespace detail {

template <typename T>
T require_key(const json& object, const std::string& key) {
  if (!object.contains(key)) {
    throw ConfigError("missing config key '" + key + "'");
  }
  try {
    return object.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for config key '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline SourceParams source_params_from_json(const json& object) {
  SourceParams params;
  params.pump_power_mw = detail::require_key<double>(object, "pump_power_mw");
  params.fiber_length_m = detail::require_key<double>(object, "fiber_length_m");
  params.pair_gain = detail::require_key<double>(object, "pair_gain");
  params.raman_coeff = detail::require_key<double>(object, "raman_coeff");
  params.pumpleak_coeff = detail::require_key<double>(object, "pumpleak_coeff");
  params.pair_family = pair_family_from_string(
      detail::require_key<std::string>(object, "pair_family"));
  params.n_max = detail::require_key<int>(object, "n_max");
  if (object.contains("signal_noise_mean")) {
    params.signal_noise_mean = object.at("signal_noise_mean").get<double>();
  }
  params.validate();
  return params;
}

inline json to_json(const SourceParams& params) {
  json object;
  object["pump_power_mw"] = params.pump_power_mw;
  object["fiber_length_m"] = params.fiber_length_m;
  object["pair_gain"] = params.pair_gain;
  object["raman_coeff"] = params.raman_coeff;
  object["pumpleak_coeff"] = params.pumpleak_coeff;
  object["pair_family"] = to_string(params.pair_family);
  object["n_max"] = params.n_max;
  object["signal_noise_mean"] = params.signal_noise_mean;
  return object;
}

inline DetectorBankConfig bank_from_json(const json& array,
                                         const std::string& name) {
  if (!array.is_array() || array.empty()) {
    throw ConfigError("config section '" + name +
                      "' must be a non-empty array of detectors");
  }
  std::vector<Detector> detectors;
  detectors.reserve(array.size());
  for (const auto& entry : array) {
    Detector det;
    det.label = detail::require_key<std::string>(entry, "label");
    det.split_fraction = detail::require_key<double>(entry, "split_fraction");
    det.path_efficiency = detail::require_key<double>(entry, "efficiency");
    detectors.push_back(std::move(det));
  }
  return DetectorBankConfig(std::move(detectors));
}

inline json to_json(const DetectorBankConfig& bank) {
  json array = json::array();
  for (const auto& det : bank.detectors()) {
    array.push_back({{"label", det.label},
                     {"split_fraction", det.split_fraction},
                     {"efficiency", det.path_efficiency}});
  }
  return array;
}

inline ExperimentScenario scenario_from_json(const json& object) {
  ExperimentScenario scenario{
      source_params_from_json(detail::require_key<json>(object, "source")),
      bank_from_json(detail::require_key<json>(object, "herald_bank"),
                     "herald_bank"),
      bank_from_json(detail::require_key<json>(object, "signal_bank"),
                     "signal_bank"),
      detail::require_key<std::uint64_t>(object, "n_pulses"),
      detail::require_key<std::uint64_t>(object, "seed")};
  scenario.validate();
  return scenario;
}

inline json to_json(const ExperimentScenario& scenario) {
  json object;
  object["source"] = to_json(scenario.source);
  object["herald_bank"] = to_json(scenario.herald_bank);
  object["signal_bank"] = to_json(scenario.signal_bank);
  object["n_pulses"] = scenario.n_pulses;
  object["seed"] = scenario.seed;
  return object;
}

inline ExperimentConfig config_from_json(const json& object) {
  ExperimentConfig config{scenario_from_json(object), std::nullopt, "out", true};
  if (object.contains("sweep") && !object.at("sweep").is_null()) {
    const json& sweep = object.at("sweep");
    config.sweep = SweepGrid{
        detail::require_key<std::vector<double>>(sweep, "pump_powers_mw"),
        detail::require_key<std::vector<double>>(sweep, "fiber_lengths_m")};
  }
  if (object.contains("output_dir")) {
    config.output_dir = object.at("output_dir").get<std::string>();
  }
  if (object.contains("emit_plots_data")) {
    config.emit_plots_data = object.at("emit_plots_data").get<bool>();
  }
  config.validate();
  return config;
}

inline json to_json(const ExperimentConfig& config) {
  json object = to_json(config.scenario);
  if (config.sweep) {
    object["sweep"] = {{"pump_powers_mw", config.sweep->pump_powers_mw},
                       {"fiber_lengths_m", config.sweep->fiber_lengths_m}};
  }
  object["output_dir"] = config.output_dir;
  object["emit_plots_data"] = config.emit_plots_data;
  return object;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  json object;
  try {
    in >> object;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " +
                      e.what());
  }
  return config_from_json(object);
}

/// Benchtop defaults: a 2-detector 50/50 herald bank, a 3-detector signal
/// bank splitting 30/35/35 with a 36% arm efficiency, a thermal pair
/// source pumped in the low-gain regime, pump-leak noise comparable to
/// the pair rate at mid sweep, and negligible fiber scattering.
inline ExperimentConfig default_config() {
  ExperimentConfig config{
      ExperimentScenario{
          SourceParams{30.0, 20.0, 5.6e-7, 2.981e-12, 1.926e-4,
                       PairFamily::Thermal, 6, 0.0},
          DetectorBankConfig({{"H1", 0.5, 0.12}, {"H2", 0.5, 0.12}}),
          DetectorBankConfig(
              {{"A", 0.30, 0.36}, {"B", 0.35, 0.36}, {"C", 0.35, 0.36}}),
          1'000'000, 20260810},
      SweepGrid{{10.0, 20.0, 30.0, 40.0, 50.0}, {5.0, 10.0, 15.0, 20.0}},
      "out", true};
  return config;
}

/// FNV-1a hash of the canonical JSON dump; embedded in every output file
/// so artifacts can be traced back to their exact configuration.
inline std::string config_hash_hex(const json& object) {
  const std::string dump = object.dump();
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (unsigned char c : dump) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx",
                static_cast<unsigned long long>(hash));
  return std::string(buffer);
}

}  // namespace hpl
