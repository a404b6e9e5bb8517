#pragma once

// File formats.  All CSVs begin with a `#schema=` header line followed by
// `#`-prefixed provenance comments (config hash, seed), so re-running a
// command with identical inputs reproduces byte-identical files.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hpl/coincidence.hpp"
#include "hpl/config.hpp"
#include "hpl/errors.hpp"
#include "hpl/inversion.hpp"
#include "hpl/klyshko.hpp"

namespace hpl {

namespace detail {

/// Shortest lossless decimal rendering of a double (round-trips exactly).
inline std::string format_double(double value) {
  char buffer[40];
  for (int precision : {15, 16, 17}) {
    std::snprintf(buffer, sizeof(buffer), "%.*g", precision, value);
    if (std::strtod(buffer, nullptr) == value) break;
  }
  return std::string(buffer);
}

inline std::string pattern_to_string(ClickPattern pattern,
                                     const std::vector<std::string>& labels) {
  if (pattern == 0) return "-";
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (pattern >> i & 1) {
      if (!out.empty()) out += '+';
      out += labels[i];
    }
  }
  return out;
}

inline ClickPattern pattern_from_string(const std::string& text,
                                        const std::vector<std::string>& labels) {
  if (text == "-") return 0;
  ClickPattern pattern = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('+', start);
    const std::string label =
        text.substr(start, end == std::string::npos ? end : end - start);
    bool found = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) {
        pattern |= ClickPattern{1} << i;
        found = true;
        break;
      }
    }
    if (!found) throw IoError("unknown detector label '" + label + "' in counts file");
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return pattern;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  return fields;
}

}  // namespace detail

/// Provenance attached to counts files: the scenario that produced them.
struct CountsProvenance {
  ExperimentScenario scenario;
  std::string config_hash;
};

inline void write_counts(const std::filesystem::path& csv_path,
                         const CoincidenceCounts& counts,
                         const ExperimentScenario& scenario) {
  const std::string hash = config_hash_hex(to_json(scenario));

  auto out = detail::open_output(csv_path);
  out << "#schema=hpl.counts.v1\n";
  out << "#config_hash=" << hash << "\n";
  out << "#seed=" << scenario.seed << "\n";
  out << "herald_pattern,signal_pattern,count\n";
  for (ClickPattern h = 0; h < (ClickPattern{1} << counts.m_herald()); ++h) {
    for (ClickPattern s = 0; s < (ClickPattern{1} << counts.m_signal()); ++s) {
      const std::uint64_t count = counts.at(h, s);
      if (count == 0) continue;
      out << detail::pattern_to_string(h, counts.herald_labels()) << ','
          << detail::pattern_to_string(s, counts.signal_labels()) << ','
          << count << "\n";
    }
  }

  json sidecar;
  sidecar["schema"] = "hpl.counts_provenance.v1";
  sidecar["scenario"] = to_json(scenario);
  sidecar["config_hash"] = hash;
  sidecar["seed"] = scenario.seed;
  sidecar["n_pulses"] = counts.n_pulses();
  auto sidecar_path = csv_path;
  sidecar_path.replace_extension(".provenance.json");
  auto side = detail::open_output(sidecar_path);
  side << sidecar.dump(2) << "\n";
}

inline CountsProvenance read_counts_provenance(
    const std::filesystem::path& csv_path) {
  auto sidecar_path = csv_path;
  sidecar_path.replace_extension(".provenance.json");
  std::ifstream in(sidecar_path);
  if (!in) {
    throw IoError("cannot open provenance sidecar '" + sidecar_path.string() +
                  "'");
  }
  json object;
  try {
    in >> object;
  } catch (const json::exception& e) {
    throw IoError("sidecar '" + sidecar_path.string() + "' is not valid JSON: " +
                  e.what());
  }
  CountsProvenance provenance{
      scenario_from_json(detail::require_key<json>(object, "scenario")),
      detail::require_key<std::string>(object, "config_hash")};
  return provenance;
}

inline CoincidenceCounts read_counts(const std::filesystem::path& csv_path,
                                     const ExperimentScenario& scenario) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open counts file '" + csv_path.string() + "'");

  CoincidenceCounts counts(scenario.herald_bank, scenario.signal_bank);
  std::string line;
  bool saw_schema = false;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.rfind("#schema=", 0) == 0) {
        if (line != "#schema=hpl.counts.v1") {
          throw IoError("unsupported counts schema in '" + csv_path.string() + "'");
        }
        saw_schema = true;
      }
      continue;
    }
    if (!saw_header) {
      saw_header = true;  // column header row
      continue;
    }
    const auto fields = detail::split_csv_row(line);
    if (fields.size() != 3) {
      throw IoError("malformed counts row '" + line + "'");
    }
    const ClickPattern h =
        detail::pattern_from_string(fields[0], counts.herald_labels());
    const ClickPattern s =
        detail::pattern_from_string(fields[1], counts.signal_labels());
    counts.record(h, s, std::strtoull(fields[2].c_str(), nullptr, 10));
  }
  if (!saw_schema) {
    throw IoError("counts file '" + csv_path.string() + "' has no schema line");
  }
  return counts;
}

inline json to_json(const NumberDistributionEstimate& estimate) {
  json object;
  object["p"] = estimate.p;
  std::vector<double> sigma;
  sigma.reserve(estimate.p.size());
  for (int n = 0; n <= estimate.n_max(); ++n) sigma.push_back(estimate.sigma(n));
  object["sigma"] = sigma;
  json rows = json::array();
  for (int i = 0; i <= estimate.n_max(); ++i) {
    json row = json::array();
    for (int j = 0; j <= estimate.n_max(); ++j) row.push_back(estimate.cov(i, j));
    rows.push_back(row);
  }
  object["covariance"] = rows;
  object["provenance"] = {
      {"efficiencies", to_string(estimate.efficiency_source)}};
  return object;
}

inline void write_distribution(const std::filesystem::path& base_path,
                               const NumberDistributionEstimate& estimate,
                               const json& provenance_extra, bool emit_csv,
                               const SystematicBand* systematic = nullptr) {
  json object = to_json(estimate);
  for (auto it = provenance_extra.begin(); it != provenance_extra.end(); ++it) {
    object["provenance"][it.key()] = it.value();
  }
  if (systematic) {
    object["systematic"] = {{"band", systematic->band},
                            {"p_lo", systematic->p_lo},
                            {"p_hi", systematic->p_hi}};
  }
  auto json_path = base_path;
  json_path.replace_extension(".json");
  auto out = detail::open_output(json_path);
  out << object.dump(2) << "\n";

  if (!emit_csv) return;
  auto csv_path = base_path;
  csv_path.replace_extension(".csv");
  auto csv = detail::open_output(csv_path);
  csv << (systematic ? "#schema=hpl.distribution_sys.v1\n"
                     : "#schema=hpl.distribution.v1\n");
  if (object["provenance"].contains("config_hash")) {
    csv << "#config_hash="
        << object["provenance"]["config_hash"].get<std::string>() << "\n";
  }
  if (object["provenance"].contains("seed")) {
    csv << "#seed=" << object["provenance"]["seed"].dump() << "\n";
  }
  csv << (systematic ? "n,p,sigma,p_sys_lo,p_sys_hi\n" : "n,p,sigma\n");
  for (int n = 0; n <= estimate.n_max(); ++n) {
    csv << n << ',' << detail::format_double(estimate.p[n]) << ','
        << detail::format_double(estimate.sigma(n));
    if (systematic) {
      csv << ',' << detail::format_double(systematic->p_lo[n]) << ','
          << detail::format_double(systematic->p_hi[n]);
    }
    csv << "\n";
  }
}

inline void write_klyshko_dataset(const std::filesystem::path& path,
                                  const KlyshkoDataset& dataset,
                                  const std::string& config_hash,
                                  std::uint64_t seed) {
  auto out = detail::open_output(path);
  out << "#schema=hpl.klyshko_dataset.v1\n";
  out << "#config_hash=" << config_hash << "\n";
  out << "#seed=" << seed << "\n";
  out << "power_mw,length_m,detector,eta_k,sigma\n";
  for (const auto& point : dataset.points) {
    out << detail::format_double(point.pump_power_mw) << ','
        << detail::format_double(point.fiber_length_m) << ',' << point.detector
        << ',' << detail::format_double(point.eta_k) << ','
        << detail::format_double(point.sigma) << "\n";
  }
}

inline KlyshkoDataset read_klyshko_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  KlyshkoDataset dataset;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    const auto fields = detail::split_csv_row(line);
    if (fields.size() != 5) throw IoError("malformed dataset row '" + line + "'");
    KlyshkoPoint point;
    point.pump_power_mw = std::strtod(fields[0].c_str(), nullptr);
    point.fiber_length_m = std::strtod(fields[1].c_str(), nullptr);
    point.detector = fields[2];
    point.eta_k = std::strtod(fields[3].c_str(), nullptr);
    point.sigma = std::strtod(fields[4].c_str(), nullptr);
    dataset.points.push_back(std::move(point));
  }
  dataset.validate();
  return dataset;
}

inline json to_json(const KlyshkoFitResult& fit) {
  json object;
  object["eta_s"] = fit.eta_s;
  object["alpha_mw_m"] = fit.alpha;
  object["beta_mw"] = fit.beta;
  object["residual_norm"] = fit.residual_norm;
  object["sigma"] = {{"eta_s", fit.sigma_eta_s()},
                     {"alpha_mw_m", fit.sigma_alpha()},
                     {"beta_mw", fit.sigma_beta()}};
  json rows = json::array();
  for (int i = 0; i < 3; ++i) {
    json row = json::array();
    for (int j = 0; j < 3; ++j) row.push_back(fit.covariance[i * 3 + j]);
    rows.push_back(row);
  }
  object["covariance"] = rows;
  object["iterations"] = fit.iterations;
  object["at_boundary"] = {{"eta_s", fit.boundary_eta_s},
                           {"alpha", fit.boundary_alpha},
                           {"beta", fit.boundary_beta}};
  return object;
}

inline void write_klyshko_fit(const std::filesystem::path& path,
                              const KlyshkoFitResult& fit,
                              const std::string& config_hash,
                              std::uint64_t seed) {
  json object = to_json(fit);
  object["schema"] = "hpl.klyshko_fit.v1";
  object["config_hash"] = config_hash;
  object["seed"] = seed;
  auto out = detail::open_output(path);
  out << object.dump(2) << "\n";
}

/// Model-vs-data table for plotting the fitted surface alongside the
/// measured efficiencies.
inline void write_klyshko_model_csv(const std::filesystem::path& path,
                                    const KlyshkoDataset& dataset,
                                    const KlyshkoFitResult& fit,
                                    const std::string& config_hash,
                                    std::uint64_t seed) {
  auto out = detail::open_output(path);
  out << "#schema=hpl.klyshko_model.v1\n";
  out << "#config_hash=" << config_hash << "\n";
  out << "#seed=" << seed << "\n";
  out << "power_mw,length_m,detector,eta_measured,eta_model,residual\n";
  for (const auto& point : dataset.points) {
    const double model = model_eta(point.pump_power_mw, point.fiber_length_m,
                                   fit.eta_s, fit.alpha, fit.beta);
    out << detail::format_double(point.pump_power_mw) << ','
        << detail::format_double(point.fiber_length_m) << ',' << point.detector
        << ',' << detail::format_double(point.eta_k) << ','
        << detail::format_double(model) << ','
        << detail::format_double(point.eta_k - model) << "\n";
  }
}

}  // namespace hpl
