#pragma once

// Analyses over simulated ensembles and model families: drift off the
// manifold, growth of F(y_t) against the scale law, equilibrium residuals
// and the epsilon-scaling of H.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invar/core.hpp"
#include "invar/invariance.hpp"
#include "invar/simulate.hpp"
#include "invar/transforms.hpp"

namespace invar::lab {

/// Per-time statistics of |F(x) - level| over the surviving paths.
struct DeviationSeries {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> max;
  std::vector<double> var;
  std::vector<double> f_mean;
  std::vector<double> f_var;
  std::size_t paths_used = 0;
  std::size_t paths_excluded = 0;
};

inline DeviationSeries deviation_stats(const TrajectoryEnsemble& e, const ManifoldSpec& manifold) {
  if (e.paths == 0) throw ContractError("deviation_stats needs a nonempty ensemble");
  if (e.n != manifold.n()) throw ContractError("ensemble and manifold dimensions differ");
  std::vector<std::size_t> alive;
  for (std::size_t p = 0; p < e.paths; ++p) {
    if (!e.is_aborted(p)) alive.push_back(p);
  }
  if (alive.empty()) throw AnalysisError("every path aborted; no statistics to report");

  DeviationSeries s;
  s.paths_used = alive.size();
  s.paths_excluded = e.paths - alive.size();
  const double count = static_cast<double>(alive.size());
  std::vector<double> dev(alive.size()), f(alive.size());
  for (std::size_t i = 0; i < e.points(); ++i) {
    for (std::size_t j = 0; j < alive.size(); ++j) {
      f[j] = manifold.value(e.path(alive[j]).row(static_cast<Eigen::Index>(i)).transpose());
      dev[j] = std::abs(f[j] - manifold.level());
    }
    double dsum = 0.0, fsum = 0.0, dmax = 0.0;
    for (std::size_t j = 0; j < alive.size(); ++j) {
      dsum += dev[j];
      fsum += f[j];
      dmax = std::max(dmax, dev[j]);
    }
    const double dmean = dsum / count, fmean = fsum / count;
    double dvar = 0.0, fvar = 0.0;
    for (std::size_t j = 0; j < alive.size(); ++j) {
      dvar += (dev[j] - dmean) * (dev[j] - dmean);
      fvar += (f[j] - fmean) * (f[j] - fmean);
    }
    s.times.push_back(e.grid.time(i));
    s.mean.push_back(dmean);
    s.max.push_back(dmax);
    s.var.push_back(dvar / count);
    s.f_mean.push_back(fmean);
    s.f_var.push_back(fvar / count);
  }
  return s;
}

inline nlohmann::json to_json(const DeviationSeries& s) {
  return {{"times", s.times},       {"mean", s.mean},   {"max", s.max},
          {"var", s.var},           {"f_mean", s.f_mean}, {"f_var", s.f_var},
          {"paths_used", s.paths_used}, {"paths_excluded", s.paths_excluded}};
}

struct FGrowth {
  double sup_dev = 0.0;
  std::vector<double> times;
  std::vector<double> H;
  std::vector<double> max_dev;  ///< per time, over paths
};

/// sup over times and surviving paths of |F(y_t) - H(t)|.
inline FGrowth f_growth_check(const TrajectoryEnsemble& y, const ManifoldSpec& manifold, const ScaleLaw& law) {
  if (y.n != manifold.n()) throw ContractError("ensemble and manifold dimensions differ");
  FGrowth g;
  bool any = false;
  for (std::size_t i = 0; i < y.points(); ++i) {
    const double t = y.grid.time(i);
    const double H = law.H(t);
    double worst = 0.0;
    for (std::size_t p = 0; p < y.paths; ++p) {
      if (y.is_aborted(p)) continue;
      any = true;
      worst = std::max(worst, std::abs(manifold.value(y.path(p).row(static_cast<Eigen::Index>(i)).transpose()) - H));
    }
    g.times.push_back(t);
    g.H.push_back(H);
    g.max_dev.push_back(worst);
    g.sup_dev = std::max(g.sup_dev, worst);
  }
  if (!any) throw AnalysisError("every path aborted; no F-growth to report");
  return g;
}

struct FGrowthComparison {
  FGrowth coarse;
  FGrowth fine;
  double ratio = 0.0;  ///< coarse.sup_dev / fine.sup_dev
};

/// Runs f_growth_check at two resolutions of the same span and reports the error ratio.
inline FGrowthComparison f_growth_check(const TrajectoryEnsemble& coarse, const TrajectoryEnsemble& fine,
                                        const ManifoldSpec& manifold, const ScaleLaw& law) {
  if (coarse.grid.t0() != fine.grid.t0() || coarse.grid.t1() != fine.grid.t1() ||
      fine.grid.steps() <= coarse.grid.steps() || fine.grid.steps() % coarse.grid.steps() != 0) {
    throw ContractError("resolution mismatch: the fine grid must refine the coarse grid over the same span");
  }
  FGrowthComparison c{f_growth_check(coarse, manifold, law), f_growth_check(fine, manifold, law), 0.0};
  c.ratio = c.coarse.sup_dev / c.fine.sup_dev;
  return c;
}

inline nlohmann::json to_json(const FGrowth& g) {
  return {{"sup_dev", g.sup_dev}, {"times", g.times}, {"H", g.H}, {"max_dev", g.max_dev}};
}

enum class EquilibriumFlag { stochastic_equilibrium, diffusion_fixed, neither };

inline const char* to_string(EquilibriumFlag f) {
  switch (f) {
    case EquilibriumFlag::stochastic_equilibrium: return "stochastic-equilibrium";
    case EquilibriumFlag::diffusion_fixed: return "diffusion-fixed";
    case EquilibriumFlag::neither: return "neither";
  }
  return "neither";
}

struct EquilibriumRow {
  Vector point;
  double t = 0.0;
  double drift_norm = 0.0;
  double diffusion_norm = 0.0;  ///< max over noise columns of the column 2-norm
  EquilibriumFlag flag = EquilibriumFlag::neither;
};

/// Residual table at each (point, t). Drift and diffusion are reported
/// separately so "noise vanishes here" and "the point is fixed" stay distinct.
inline std::vector<EquilibriumRow> equilibrium_residuals(const SdeSystem& system, const std::vector<Vector>& points,
                                                         const std::vector<double>& times, double tol = 1e-12) {
  std::vector<EquilibriumRow> rows;
  for (const Vector& x : points) {
    for (double t : times) {
      EquilibriumRow r;
      r.point = x;
      r.t = t;
      r.drift_norm = system.drift(t, x).norm();
      const Matrix sigma = system.diffusion(t, x);
      for (Eigen::Index l = 0; l < sigma.cols(); ++l) r.diffusion_norm = std::max(r.diffusion_norm, sigma.col(l).norm());
      if (r.diffusion_norm <= tol) {
        r.flag = r.drift_norm <= tol ? EquilibriumFlag::stochastic_equilibrium : EquilibriumFlag::diffusion_fixed;
      }
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

inline nlohmann::json to_json(const std::vector<EquilibriumRow>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"point", to_std(r.point)},
                   {"t", r.t},
                   {"drift_norm", r.drift_norm},
                   {"diffusion_norm", r.diffusion_norm},
                   {"flag", to_string(r.flag)}});
  }
  return out;
}

struct EpsilonScaling {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> eps;
  std::vector<double> excess;  ///< H(t; eps) - 1
};

/// Log-log least-squares slope of H(t; eps) - 1 against eps.
inline EpsilonScaling epsilon_scaling_check(const std::function<ScaleLaw(double)>& law_for,
                                            const std::vector<double>& eps_list, double t) {
  std::set<double> distinct;
  for (double e : eps_list) {
    if (!(e > 0.0)) throw ContractError("epsilon values must be positive");
    distinct.insert(e);
  }
  if (distinct.size() < 2) throw ContractError("epsilon scan needs at least two distinct values");

  EpsilonScaling s;
  for (double e : eps_list) {
    const double excess = law_for(e).H(t) - 1.0;
    if (excess == 0.0 || !std::isfinite(excess)) {
      throw DegenerateFitError("H(t) - 1 vanishes at eps = " + std::to_string(e) + "; no exponent to fit");
    }
    s.eps.push_back(e);
    s.excess.push_back(excess);
  }
  const auto [lo, hi] = std::minmax_element(s.excess.begin(), s.excess.end());
  if (*hi - *lo <= 1e-12 * std::abs(*hi)) {
    throw DegenerateFitError("H(t) - 1 does not depend on eps; no exponent to fit");
  }
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double m = static_cast<double>(s.eps.size());
  for (std::size_t i = 0; i < s.eps.size(); ++i) {
    const double lx = std::log(s.eps[i]);
    const double ly = std::log(std::abs(s.excess[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  s.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  s.intercept = (sy - s.slope * sx) / m;
  return s;
}

/// Same, with each law extracted from the family member by scale_law_from_correction.
inline EpsilonScaling epsilon_scaling_check(const std::function<SdeSystem(double)>& family,
                                            const ManifoldSpec& manifold, const std::vector<double>& eps_list,
                                            double t, const ManifoldSampler& sampler, double tol = 1e-9) {
  return epsilon_scaling_check(
      [&](double e) { return scale_law_from_correction(family(e), manifold, sampler, tol); }, eps_list, t);
}

inline nlohmann::json to_json(const EpsilonScaling& s) {
  return {{"slope", s.slope}, {"intercept", s.intercept}, {"eps", s.eps}, {"H_minus_1", s.excess}};
}

}  // namespace invar::lab
