#pragma once

// Argv-level front end for the pipeline commands.

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hpl/cli.hpp"

namespace hpl::cli {

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{
      "hpl: heralded photon-pair click-statistics simulator and inversion "
      "toolkit"};
  app.require_subcommand(1);

  SimulateOptions simulate;
  auto* sim = app.add_subcommand(
      "simulate", "run the Monte Carlo experiment and write counts files");
  sim->add_option("--config", simulate.config_path, "experiment JSON config")
      ->required();
  sim->add_option("--seed", simulate.seed, "override the config seed");
  sim->add_option("--pulses", simulate.pulses, "override the pulse count");
  sim->add_option("--workers", simulate.workers,
                  "worker threads (default: HPL_WORKERS or hardware)");
  sim->add_option("--output-dir", simulate.output_dir,
                  "override the config output directory");

  InvertOptions invert;
  std::string herald_rule = "exactly";
  auto* inv = app.add_subcommand(
      "invert", "recover photon-number probabilities from a counts file");
  inv->add_option("--counts", invert.counts_path, "counts CSV from simulate")
      ->required();
  inv->add_option("--config", invert.config_path,
                  "experiment JSON config (fallback when the provenance "
                  "sidecar is missing)");
  inv->add_option("--herald", invert.herald,
                  "herald click condition (0, 1, 2, ...)")
      ->required();
  inv->add_option("--herald-rule", herald_rule,
                  "'exactly' (default) or 'at-least'");
  inv->add_option("--efficiencies", invert.efficiencies,
                  "'tracer' (default), 'klyshko' (self-calibrated from the "
                  "counts), or 'klyshko:<file>'");
  inv->add_option("--klyshko-herald", invert.klyshko_herald,
                  "herald detector used for self-calibration");
  inv->add_option("--efficiency-band", invert.efficiency_band,
                  "absolute +/- band on the path efficiencies, reported as a "
                  "systematic envelope");
  inv->add_option("--output-dir", invert.output_dir, "output directory");

  KlyshkoOptions klyshko;
  auto* kly = app.add_subcommand(
      "klyshko", "estimate heralding efficiencies over a sweep and fit the "
                 "power/length noise model");
  kly->add_option("counts", klyshko.counts_paths, "sweep counts CSV files")
      ->required()
      ->expected(-1);
  kly->add_option("--herald-detector", klyshko.herald_detector,
                  "herald detector used for the coincidence ratios");
  kly->add_flag("--unweighted", klyshko.unweighted,
                "fit without 1/sigma^2 weights");
  kly->add_option("--output-dir", klyshko.output_dir, "output directory");

  TheoryCheckOptions theory;
  std::string family = "thermal";
  auto* chk = app.add_subcommand(
      "theory-check", "verify the noisy-heralding / lossy-signal equivalence "
                      "and print the conditional table");
  chk->add_option("--eta-r", theory.eta_r,
                  "probability a herald click is from the pair process");
  chk->add_option("--mu", theory.mu, "mean pairs per pulse");
  chk->add_option("--n-max", theory.n_max, "table range");
  chk->add_option("--family", family, "'thermal' or 'poissonian'");

  auto* dump = app.add_subcommand("print-default-config",
                                  "emit the default experiment config");

  std::vector<const char*> argv;
  argv.push_back("hpl");
  for (const auto& arg : args) argv.push_back(arg.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kConfigExit;
  }

  try {
    if (sim->parsed()) {
      cmd_simulate(simulate, out);
      return kOk;
    }
    if (inv->parsed()) {
      if (herald_rule == "exactly") {
        invert.rule = HeraldRule::Exactly;
      } else if (herald_rule == "at-least") {
        invert.rule = HeraldRule::AtLeast;
      } else {
        throw ConfigError("--herald-rule must be 'exactly' or 'at-least'");
      }
      cmd_invert(invert, out);
      return kOk;
    }
    if (kly->parsed()) {
      cmd_klyshko(klyshko, out);
      return kOk;
    }
    if (chk->parsed()) {
      theory.family = pair_family_from_string(family);
      const auto report = cmd_theory_check(theory, out);
      return report.max_discrepancy > 1e-9 ? kCheckFailed : kOk;
    }
    if (dump->parsed()) {
      out << to_json(default_config()).dump(2) << "\n";
      return kOk;
    }
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kIoExit;
  } catch (const StatisticsError& e) {
    err << "statistics error: " << e.what() << "\n";
    return kStatisticsExit;
  } catch (const ConvergenceError& e) {
    err << "convergence error: " << e.what() << "\n";
    return kConvergenceExit;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigExit;
  }
  return kConfigExit;
}

}  // namespace hpl::cli
