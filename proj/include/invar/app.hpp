#pragma once

// Command layer behind the `invar` CLI: run configs, invariance checks,
// transform inspection and epsilon scans. Every command is a plain function
// returning JSON so it can be exercised without a subprocess.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invar/core.hpp"
#include "invar/invariance.hpp"
#include "invar/lab.hpp"
#include "invar/registry.hpp"
#include "invar/simulate.hpp"
#include "invar/transforms.hpp"

namespace invar::app {

using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kGenericFailure = 1,
  kConfigError = 2,
  kTransformPrecondition = 3,
  kSimulationFailure = 4,
};

enum class TransformKind { none, projection, invariantization, coupled };

inline TransformKind parse_transform(const std::string& s) {
  if (s == "none") return TransformKind::none;
  if (s == "projection") return TransformKind::projection;
  if (s == "invariantization") return TransformKind::invariantization;
  if (s == "coupled") return TransformKind::coupled;
  throw ConfigError("unknown transform '" + s + "' (expected none, projection, invariantization, coupled)");
}

inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::none: return "none";
    case TransformKind::projection: return "projection";
    case TransformKind::invariantization: return "invariantization";
    case TransformKind::coupled: return "coupled";
  }
  return "none";
}

/// Fraction of aborted paths above which a run fails.
inline constexpr double kMaxAbortFraction = 0.01;

struct EquilibriaRequest {
  std::vector<std::vector<double>> points;
  std::vector<double> times{0.0};
  double tolerance = 1e-12;
};

struct RunConfig {
  std::string model = "kubo";
  json params = json::object();
  TransformKind transform = TransformKind::none;
  double t0 = 0.0;
  double t1 = 1.0;
  std::size_t steps = 1000;
  std::size_t paths = 100;
  std::uint64_t seed = 1;
  std::vector<double> initial_state;
  std::size_t workers = 1;
  std::optional<std::string> csv;
  std::optional<std::string> summary;
  bool csv_include_F = true;
  std::optional<double> check_tolerance;  ///< present = emit an invariance report
  bool f_growth = false;                  ///< implied by the coupled transform
  std::optional<EquilibriaRequest> equilibria;

  static RunConfig from_json(const json& j);
  json to_json() const;
  /// Fills defaults and checks dimensions and manifold membership.
  void validate();
};

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type: " + e.what());
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown field '" + key + "' in " + where);
  }
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const json& j) {
  using detail::get_or;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"model", "params", "transform", "grid", "paths", "seed", "initial_state", "workers",
                          "outputs", "check", "f_growth", "equilibria"},
                         "config");
  RunConfig c;
  c.model = get_or<std::string>(j, "model", c.model);
  c.params = j.contains("params") ? j.at("params") : json::object();
  c.transform = parse_transform(get_or<std::string>(j, "transform", "none"));
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    detail::reject_unknown(g, {"t0", "t1", "steps"}, "grid");
    c.t0 = get_or<double>(g, "t0", c.t0);
    c.t1 = get_or<double>(g, "t1", c.t1);
    const auto steps = get_or<long long>(g, "steps", static_cast<long long>(c.steps));
    if (steps <= 0) throw ConfigError("grid.steps must be positive");
    c.steps = static_cast<std::size_t>(steps);
  }
  const auto paths = get_or<long long>(j, "paths", static_cast<long long>(c.paths));
  if (paths <= 0) throw ConfigError("paths must be positive");
  c.paths = static_cast<std::size_t>(paths);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.initial_state = get_or<std::vector<double>>(j, "initial_state", {});
  const auto workers = get_or<long long>(j, "workers", 1);
  if (workers < 0) throw ConfigError("workers must be non-negative");
  c.workers = static_cast<std::size_t>(workers);
  if (j.contains("outputs")) {
    const auto& o = j.at("outputs");
    detail::reject_unknown(o, {"csv", "summary", "include_F"}, "outputs");
    if (o.contains("csv")) c.csv = o.at("csv").get<std::string>();
    if (o.contains("summary")) c.summary = o.at("summary").get<std::string>();
    c.csv_include_F = get_or<bool>(o, "include_F", true);
  }
  if (j.contains("check") && !j.at("check").is_null() && j.at("check") != false) {
    const auto& chk = j.at("check");
    if (chk.is_object()) {
      detail::reject_unknown(chk, {"tolerance"}, "check");
      c.check_tolerance = get_or<double>(chk, "tolerance", 1e-9);
    } else {
      c.check_tolerance = 1e-9;
    }
  }
  c.f_growth = get_or<bool>(j, "f_growth", false);
  if (j.contains("equilibria")) {
    const auto& eq = j.at("equilibria");
    detail::reject_unknown(eq, {"points", "times", "tolerance"}, "equilibria");
    EquilibriaRequest r;
    r.points = get_or<std::vector<std::vector<double>>>(eq, "points", {});
    r.times = get_or<std::vector<double>>(eq, "times", r.times);
    r.tolerance = get_or<double>(eq, "tolerance", r.tolerance);
    c.equilibria = r;
  }
  return c;
}

inline json RunConfig::to_json() const {
  json j = {{"model", model},
            {"params", params},
            {"transform", to_string(transform)},
            {"grid", {{"t0", t0}, {"t1", t1}, {"steps", steps}}},
            {"paths", paths},
            {"seed", seed},
            {"initial_state", initial_state},
            {"workers", workers}};
  json outputs = {{"include_F", csv_include_F}};
  if (csv) outputs["csv"] = *csv;
  if (summary) outputs["summary"] = *summary;
  j["outputs"] = outputs;
  if (check_tolerance) j["check"] = {{"tolerance", *check_tolerance}};
  j["f_growth"] = f_growth;
  return j;
}

inline void RunConfig::validate() {
  const auto& entry = models::find_model(model);
  params = entry.resolve(params);
  if (!(t1 > t0) || !std::isfinite(t0) || !std::isfinite(t1)) throw ConfigError("grid needs t1 > t0");
  if (initial_state.empty()) {
    initial_state.assign(entry.dim, 0.0);
    initial_state[0] = 1.0;
  }
  if (initial_state.size() != entry.dim) {
    throw ConfigError("initial state has dimension " + std::to_string(initial_state.size()) + ", model '" + model +
                      "' has " + std::to_string(entry.dim));
  }
  for (double v : initial_state) {
    if (!std::isfinite(v)) throw ConfigError("initial state must be finite");
  }
  if (transform != TransformKind::none) {
    const double f = entry.manifold().value(to_vector(initial_state));
    if (std::abs(f - 1.0) > 1e-9) {
      throw ConfigError("transform '" + std::string(to_string(transform)) +
                        "' needs an initial state on the model's manifold (F = " + std::to_string(f) + ")");
    }
  }
  if (f_growth && transform != TransformKind::coupled) {
    throw ConfigError("f_growth needs the coupled transform (it compares F(y_t) with H(t))");
  }
  if (equilibria) {
    for (const auto& p : equilibria->points) {
      if (p.size() != entry.dim) throw ConfigError("equilibrium point has the wrong dimension");
    }
  }
}

struct RunResult {
  TrajectoryEnsemble states;               ///< what the CSV records
  std::optional<TrajectoryEnsemble> y;     ///< unnormalized stream (coupled only)
  json summary;
  int exit_code = kOk;
};

/// The scale law used by the invariantizing transforms.
inline ScaleLaw law_for(const SdeSystem& system, const ManifoldSpec& manifold, std::uint64_t seed) {
  return scale_law_from_correction(system, manifold, ManifoldSampler(SamplingStrategy::rescale, seed),
                                   default_tolerance(manifold));
}

/// A path whose state is finite but whose level function overflows is
/// treated as aborted from that row on.
inline void abort_on_level_overflow(TrajectoryEnsemble& e, const ManifoldSpec& manifold) {
  for (std::size_t p = 0; p < e.paths; ++p) {
    if (e.is_aborted(p)) continue;
    auto path = e.path(p);
    for (Eigen::Index i = 0; i < path.rows(); ++i) {
      try {
        manifold.value(path.row(i).transpose());
        continue;
      } catch (const EvaluationError&) {
      }
      path.bottomRows(path.rows() - i).setConstant(std::numeric_limits<double>::quiet_NaN());
      const auto row = static_cast<std::size_t>(i);
      e.aborted_paths.push_back({p, row, e.grid.time(row), "level function is not finite"});
      break;
    }
  }
  std::sort(e.aborted_paths.begin(), e.aborted_paths.end(),
            [](const AbortRecord& a, const AbortRecord& b) { return a.path < b.path; });
}

inline std::string csv_string(const RunResult& r, const ManifoldSpec* manifold) {
  std::ostringstream os;
  write_csv(os, r.states, manifold);
  return os.str();
}

/// Builds the model, applies the transform, simulates, and writes artifacts.
inline RunResult run(RunConfig config) {
  config.validate();
  const auto& entry = models::find_model(config.model);
  const SdeSystem system = entry.make(config.params);
  const ManifoldSpec manifold = entry.manifold();
  const TimeGrid grid(config.t0, config.t1, config.steps);
  Vector x0 = to_vector(config.initial_state);
  // Transforms start exactly on the manifold; validate() bounded the offset by 1e-9.
  if (config.transform != TransformKind::none) x0 = project_state(x0, manifold);

  RunResult result;
  std::optional<ScaleLaw> law;
  switch (config.transform) {
    case TransformKind::none:
      result.states = simulate_ensemble(system, x0, grid, config.paths, config.seed, config.workers);
      break;
    case TransformKind::projection:
      result.states = map_states(simulate_ensemble(system, x0, grid, config.paths, config.seed, config.workers),
                                 [&](const Vector& x) { return project_state(x, manifold); });
      break;
    case TransformKind::invariantization: {
      law = law_for(system, manifold, config.seed);
      const SdeSystem inv = invariantize(system, manifold, *law, config.t1);
      result.states = simulate_ensemble(inv, x0, grid, config.paths, config.seed, config.workers);
      break;
    }
    case TransformKind::coupled: {
      law = law_for(system, manifold, config.seed);
      law->require_positive(0.0, config.t1);
      auto coupled = simulate_coupled_ensemble(coupled_step_representation(system, manifold), x0, grid, config.paths,
                                               config.seed, config.workers);
      result.states = std::move(coupled.x);
      result.y = std::move(coupled.y);
      break;
    }
  }

  abort_on_level_overflow(result.states, manifold);
  if (result.y) abort_on_level_overflow(*result.y, manifold);

  json& s = result.summary;
  s["run"] = {{"model", config.model},
              {"params", config.params},
              {"transform", to_string(config.transform)},
              {"grid", {{"t0", config.t0}, {"t1", config.t1}, {"steps", config.steps}, {"dt", grid.dt()}}},
              {"paths", config.paths},
              {"seed", config.seed},
              {"initial_state", config.initial_state}};
  auto aborted = json::array();
  for (const auto& a : result.states.aborted_paths) {
    aborted.push_back({{"path", a.path}, {"step", a.step}, {"t", a.time}, {"reason", a.reason}});
  }
  s["aborted_paths"] = aborted;
  s["deviation"] = lab::to_json(lab::deviation_stats(result.states, manifold));
  if (law && result.y) {
    s["f_growth"] = lab::to_json(lab::f_growth_check(*result.y, manifold, *law));
    s["f_growth"]["law_form"] = to_string(law->form());
  }
  if (config.equilibria) {
    std::vector<Vector> pts;
    for (const auto& p : config.equilibria->points) pts.push_back(to_vector(p));
    s["equilibria"] = lab::to_json(
        lab::equilibrium_residuals(system, pts, config.equilibria->times, config.equilibria->tolerance));
  }
  if (config.check_tolerance) {
    s["invariance_report"] = invar::to_json(strong_invariance_report(
        system, manifold, ManifoldSampler(SamplingStrategy::rescale, config.seed), default_times(system),
        *config.check_tolerance));
  }

  if (config.csv) {
    std::ofstream out(*config.csv, std::ios::binary);
    if (!out) throw ConfigError("cannot open CSV output '" + *config.csv + "'");
    write_csv(out, result.states, config.csv_include_F ? &manifold : nullptr);
  }
  if (config.summary) {
    std::ofstream out(*config.summary, std::ios::binary);
    if (!out) throw ConfigError("cannot open summary output '" + *config.summary + "'");
    out << s.dump(2) << '\n';
  }

  const double abort_fraction =
      static_cast<double>(result.states.aborted_paths.size()) / static_cast<double>(config.paths);
  if (abort_fraction > kMaxAbortFraction) result.exit_code = kSimulationFailure;
  return result;
}

struct CheckRequest {
  std::string model;
  json params = json::object();
  double tolerance = 1e-9;
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> times;
};

inline json check(const CheckRequest& req) {
  const auto& entry = models::find_model(req.model);
  const SdeSystem system = entry.make(req.params);
  const ManifoldSpec manifold = entry.manifold();
  const auto times = req.times ? *req.times : default_times(system);
  auto report = strong_invariance_report(system, manifold,
                                         ManifoldSampler(SamplingStrategy::rescale, req.seed, req.samples), times,
                                         req.tolerance);
  json j = invar::to_json(report);
  j["model"] = req.model;
  j["params"] = entry.resolve(req.params);
  return j;
}

struct DescribeRequest {
  std::string model;
  json params = json::object();
  TransformKind transform = TransformKind::invariantization;
  double t = 0.0;
  std::vector<double> x;
  std::uint64_t seed = 0;
};

/// Coefficients of the transformed system at (t, x).
inline json describe(const DescribeRequest& req) {
  const auto& entry = models::find_model(req.model);
  const SdeSystem system = entry.make(req.params);
  const ManifoldSpec manifold = entry.manifold();
  if (req.x.size() != entry.dim) throw ConfigError("--x must have " + std::to_string(entry.dim) + " components");
  const Vector x = to_vector(req.x);

  json j = {{"model", req.model}, {"params", entry.resolve(req.params)}, {"transform", to_string(req.transform)},
            {"t", req.t},         {"x", req.x},                          {"H", nullptr},
            {"h", nullptr}};
  std::optional<SdeSystem> out;
  switch (req.transform) {
    case TransformKind::none:
      out = system;
      break;
    case TransformKind::projection:
      out = projected_sde(system, manifold);
      break;
    case TransformKind::invariantization:
    case TransformKind::coupled: {
      const ScaleLaw law = law_for(system, manifold, req.seed);
      out = invariantize(system, manifold, law);
      j["H"] = law.H(req.t);
      j["h"] = law.h(req.t);
      j["law_form"] = to_string(law.form());
      break;
    }
  }
  j["drift"] = to_std(out->drift(req.t, x));
  const Matrix sigma = out->diffusion(req.t, x);
  auto rows = json::array();
  for (Eigen::Index i = 0; i < sigma.rows(); ++i) rows.push_back(to_std(sigma.row(i).transpose()));
  j["diffusion"] = rows;
  return j;
}

struct ScanRequest {
  std::string model;
  json params = json::object();
  std::vector<double> eps;
  double t = 1.0;
  std::uint64_t seed = 0;
};

inline json scan_eps(const ScanRequest& req) {
  const auto& entry = models::find_model(req.model);
  if (!entry.epsilon_key) throw ConfigError("model '" + req.model + "' has no noise-amplitude parameter to scan");
  const json base = entry.resolve(req.params);
  const std::string key = *entry.epsilon_key;
  auto family = [&](double e) {
    json p = base;
    p[key] = e;
    return entry.make(p);
  };
  const auto scaling = lab::epsilon_scaling_check(family, entry.manifold(), req.eps, req.t,
                                                  ManifoldSampler(SamplingStrategy::rescale, req.seed));
  json j = lab::to_json(scaling);
  j["model"] = req.model;
  j["parameter"] = key;
  j["t"] = req.t;
  return j;
}

inline int exit_code_for(const Error& e) {
  const std::string& k = e.kind();
  if (k == "config" || k == "contract") return kConfigError;
  if (k == "not_invariantizable" || k == "horizon" || k == "domain" || k == "degenerate_fit") {
    return kTransformPrecondition;
  }
  if (k == "analysis" || k == "path_aborted") return kSimulationFailure;
  return kGenericFailure;
}

/// Machine-readable error document written to stderr by the CLI.
inline json error_json(const Error& e) {
  json j = {{"error", e.kind()}, {"message", e.what()}, {"exit_code", exit_code_for(e)}};
  if (const auto* n = dynamic_cast<const NotInvariantizableError*>(&e)) j["spread"] = n->spread();
  if (const auto* h = dynamic_cast<const HorizonError*>(&e)) j["t"] = h->time();
  if (const auto* d = dynamic_cast<const DomainError*>(&e)) j["point"] = d->point();
  return j;
}

}  // namespace invar::app
