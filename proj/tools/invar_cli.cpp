// invar: simulate Ito SDEs near level-set manifolds, check strong invariance,
// and inspect the projection / invariantization transforms.
//
//   invar run --config kubo.json [--paths N --seed S --workers W ...]
//   invar check --model ll-stochastic --params '{"epsilon":0.1}'
//   invar transform describe --model kubo --t 0 --x 1,0
//   invar scan-eps --model ll-stochastic --eps 0.1,0.05 --t 1
//   invar models

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "invar/app.hpp"

namespace {

using nlohmann::json;
using namespace invar::app;

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw invar::ConfigError(std::string("cannot parse ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw invar::ConfigError(std::string(what) + " must not be empty");
  return out;
}

json parse_params(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw invar::ConfigError(std::string("--params is not valid JSON: ") + e.what());
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invar::ConfigError("cannot read config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw invar::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

int report(const invar::Error& e) {
  std::cerr << error_json(e).dump() << '\n';
  return exit_code_for(e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ito invariance toolkit: simulation, strong-invariance checks and invariantization"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "simulate an ensemble from a JSON config");
  std::string config_path, model, params_text, transform, csv, summary, x0_text;
  std::optional<double> t0, t1;
  std::optional<std::size_t> steps, paths, workers;
  std::optional<std::uint64_t> seed;
  run_cmd->add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  run_cmd->add_option("--model", model, "model id (overrides config)");
  run_cmd->add_option("--params", params_text, "model parameters as a JSON object (overrides config)");
  run_cmd->add_option("--transform", transform, "none | projection | invariantization | coupled");
  run_cmd->add_option("--t0", t0);
  run_cmd->add_option("--t1", t1);
  run_cmd->add_option("--steps", steps);
  run_cmd->add_option("--paths", paths);
  run_cmd->add_option("--seed", seed);
  run_cmd->add_option("--workers", workers, "threads; 0 = one per hardware thread");
  run_cmd->add_option("--x0", x0_text, "initial state, comma separated");
  run_cmd->add_option("--csv", csv, "trajectory CSV output path");
  run_cmd->add_option("--summary", summary, "summary JSON output path");

  // check
  auto* check_cmd = app.add_subcommand("check", "strong-invariance report for a model on its manifold");
  CheckRequest check_req;
  std::string check_params, check_times;
  check_cmd->add_option("--model", check_req.model)->required();
  check_cmd->add_option("--params", check_params);
  check_cmd->add_option("--tol", check_req.tolerance);
  check_cmd->add_option("--samples", check_req.samples);
  check_cmd->add_option("--seed", check_req.seed);
  check_cmd->add_option("--times", check_times, "comma separated sample times");

  // transform describe
  auto* transform_cmd = app.add_subcommand("transform", "inspect transformed systems");
  transform_cmd->require_subcommand(1);
  auto* describe_cmd = transform_cmd->add_subcommand("describe", "coefficients of the transformed system at (t, x)");
  DescribeRequest describe_req;
  std::string describe_params, describe_x, describe_kind = "invariantization";
  describe_cmd->add_option("--model", describe_req.model)->required();
  describe_cmd->add_option("--params", describe_params);
  describe_cmd->add_option("--transform", describe_kind, "none | projection | invariantization");
  describe_cmd->add_option("--t", describe_req.t);
  describe_cmd->add_option("--x", describe_x, "state, comma separated")->required();
  describe_cmd->add_option("--seed", describe_req.seed);

  // scan-eps
  auto* scan_cmd = app.add_subcommand("scan-eps", "log-log slope of H(t; eps) - 1 against eps");
  ScanRequest scan_req;
  std::string scan_params, scan_eps_text;
  scan_cmd->add_option("--model", scan_req.model)->required();
  scan_cmd->add_option("--params", scan_params);
  scan_cmd->add_option("--eps", scan_eps_text, "comma separated noise amplitudes")->required();
  scan_cmd->add_option("--t", scan_req.t);
  scan_cmd->add_option("--seed", scan_req.seed);

  auto* models_cmd = app.add_subcommand("models", "list registered models and their parameter schemas");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      json base = config_path.empty() ? json::object() : read_json_file(config_path);
      RunConfig config = RunConfig::from_json(base);
      if (!model.empty()) config.model = model;
      if (!params_text.empty()) config.params = parse_params(params_text);
      if (!transform.empty()) config.transform = parse_transform(transform);
      if (t0) config.t0 = *t0;
      if (t1) config.t1 = *t1;
      if (steps) config.steps = *steps;
      if (paths) config.paths = *paths;
      if (seed) config.seed = *seed;
      if (workers) config.workers = *workers;
      if (!x0_text.empty()) config.initial_state = parse_list(x0_text, "--x0");
      if (!csv.empty()) config.csv = csv;
      if (!summary.empty()) config.summary = summary;
      if (config.steps == 0 || config.paths == 0) throw invar::ConfigError("steps and paths must be positive");
      const RunResult result = invar::app::run(config);
      if (!config.summary) std::cout << result.summary.dump(2) << '\n';
      if (result.exit_code != kOk) {
        std::cerr << json{{"error", "simulation_failure"},
                          {"message", "more than 1% of paths aborted"},
                          {"aborted", result.states.aborted_paths.size()},
                          {"exit_code", result.exit_code}}
                         .dump()
                  << '\n';
      }
      return result.exit_code;
    }
    if (check_cmd->parsed()) {
      check_req.params = parse_params(check_params);
      if (!check_times.empty()) check_req.times = parse_list(check_times, "--times");
      std::cout << check(check_req).dump(2) << '\n';
      return kOk;
    }
    if (describe_cmd->parsed()) {
      describe_req.params = parse_params(describe_params);
      describe_req.transform = parse_transform(describe_kind);
      describe_req.x = parse_list(describe_x, "--x");
      std::cout << describe(describe_req).dump(2) << '\n';
      return kOk;
    }
    if (scan_cmd->parsed()) {
      scan_req.params = parse_params(scan_params);
      scan_req.eps = parse_list(scan_eps_text, "--eps");
      std::cout << scan_eps(scan_req).dump(2) << '\n';
      return kOk;
    }
    if (models_cmd->parsed()) {
      json out = json::array();
      for (const auto& m : invar::models::model_registry()) {
        out.push_back({{"id", m.id},
                       {"description", m.description},
                       {"dimension", m.dim},
                       {"schema", m.schema},
                       {"defaults", m.defaults}});
      }
      std::cout << out.dump(2) << '\n';
      return kOk;
    }
  } catch (const invar::Error& e) {
    return report(e);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}, {"exit_code", kGenericFailure}}.dump() << '\n';
    return kGenericFailure;
  }
  return kOk;
}
