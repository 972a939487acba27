// Command-line front end: spec ingestion, analysis, simulation, bound
// search, and the bundled reproduction protocol.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distlearn/cli.hpp"

namespace {

void add_common_options(CLI::App* cmd, distlearn::CliConfig& config,
                        bool needs_spec) {
  if (needs_spec)
    cmd->add_option("--spec", config.spec_path, "problem spec file (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
  cmd->add_option("--out", config.output_dir, "output directory")->required();
  cmd->add_option("--horizon", [&config](const CLI::results_t& values) {
       config.horizon = std::stoll(values[0]);
       return true;
     }, "override the spec horizon");
  cmd->add_option("--trials", [&config](const CLI::results_t& values) {
       config.trials = std::stoll(values[0]);
       return true;
     }, "override the spec trial count");
  cmd->add_option("--seed", [&config](const CLI::results_t& values) {
       config.seed = std::stoull(values[0]);
       return true;
     }, "override the spec master seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "distlearn: learn the distribution of a hidden discrete variable from "
      "indirect samples of known arm functions"};
  app.require_subcommand(1);

  distlearn::CliConfig analyze_config;
  auto* analyze = app.add_subcommand(
      "analyze", "identifiability and redundancy report for a spec");
  add_common_options(analyze, analyze_config, true);

  distlearn::CliConfig simulate_config;
  std::vector<double> alpha_values;
  auto* simulate = app.add_subcommand(
      "simulate", "Monte Carlo simulation of the configured policies");
  add_common_options(simulate, simulate_config, true);
  simulate->add_option("--policies", simulate_config.policies,
                       "comma-separated: rr, ub, lb, fixed")
      ->delimiter(',');
  simulate->add_option("--estimators", simulate_config.estimators,
                       "comma-separated: pi, ml")
      ->delimiter(',');
  simulate->add_option("--target-error", simulate_config.target_error,
                       "squared-error target for pulls-to-target");
  simulate->add_option("--grid-step", simulate_config.grid_step,
                       "allocation grid spacing for the bound curve");
  simulate->add_option("--alpha", alpha_values,
                       "fixed-fraction pull probabilities")
      ->delimiter(',');

  distlearn::CliConfig crlb_config;
  auto* crlb = app.add_subcommand(
      "crlb", "minimize the error lower bound over pull allocations");
  add_common_options(crlb, crlb_config, true);
  crlb->add_option("--grid-step", crlb_config.grid_step,
                   "allocation grid spacing");

  distlearn::CliConfig reproduce_config;
  auto* reproduce = app.add_subcommand(
      "reproduce", "full comparison protocol on the bundled problems");
  add_common_options(reproduce, reproduce_config, false);
  reproduce->add_option("--target-error", reproduce_config.target_error,
                        "squared-error target for pulls-to-target");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) {
      distlearn::cmd_analyze(analyze_config);
    } else if (simulate->parsed()) {
      if (!alpha_values.empty()) {
        Eigen::VectorXd alpha(alpha_values.size());
        for (std::size_t i = 0; i < alpha_values.size(); ++i)
          alpha[i] = alpha_values[i];
        simulate_config.alpha = alpha;
      }
      distlearn::cmd_simulate(simulate_config);
    } else if (crlb->parsed()) {
      distlearn::cmd_crlb(crlb_config);
    } else if (reproduce->parsed()) {
      distlearn::cmd_reproduce(reproduce_config);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
