#pragma once

// Numerical strong-invariance checks for a manifold {F = level} under an Ito
// SDE. The manifold is strongly invariant iff, on the manifold,
//
//   grad F . f = 0,   grad F . sigma = 0,   1/2 trace(sigma sigma^T Hess F) = 0.
//
// Each condition is sampled over a point set and a time grid; the report
// records the grid so a reader knows exactly what was (and was not) checked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invar/core.hpp"

namespace invar {

struct ResidualStats {
  double max = 0.0;
  double mean = 0.0;
  std::size_t count = 0;

  /// Reduces in index order so the mean is bit-reproducible.
  static ResidualStats from(const std::vector<double>& values) {
    if (values.empty()) throw ContractError("no residuals to summarize");
    ResidualStats s;
    double sum = 0.0;
    for (double v : values) {
      s.max = std::max(s.max, v);
      sum += v;
    }
    s.count = values.size();
    s.mean = sum / static_cast<double>(values.size());
    return s;
  }
};

enum class Verdict { holds, holds_within_tolerance, fails };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::holds: return "holds";
    case Verdict::holds_within_tolerance: return "holds_within_tolerance";
    case Verdict::fails: return "fails";
  }
  return "fails";
}

/// Residuals at or below this are reported as exact ("holds").
inline constexpr double kExactResidual = 16.0 * std::numeric_limits<double>::epsilon();

inline Verdict classify(double max_residual, double tol) {
  if (max_residual <= std::min(tol, kExactResidual)) return Verdict::holds;
  if (max_residual <= tol) return Verdict::holds_within_tolerance;
  return Verdict::fails;
}

inline bool passes(Verdict v) { return v != Verdict::fails; }

struct ConditionResult {
  ResidualStats stats;
  Verdict verdict = Verdict::fails;
};

/// Drift and noise coefficients of dF(x_t) = [grad F . f + correction] dt + grad F . sigma dW.
struct GeneratorResidual {
  ResidualStats drift;
  ResidualStats noise;
};

enum class SamplingStrategy {
  gaussian_normalized,  ///< N(0, I) draws scaled onto {sum x_i^2 = level}
  rescale,              ///< arbitrary draws mapped x -> x (level / F(x))^{1/q}
};

/// Emits seeded points of a homogeneous level set, each with |F(x) - level| <= 1e-12.
class ManifoldSampler {
 public:
  static constexpr double kOnManifoldTolerance = 1e-12;

  explicit ManifoldSampler(SamplingStrategy strategy = SamplingStrategy::rescale, std::uint64_t seed = 0,
                           std::size_t count = 200)
      : strategy_(strategy), seed_(seed), count_(count) {
    if (count_ == 0) throw ContractError("sampler needs a positive point count");
  }

  SamplingStrategy strategy() const noexcept { return strategy_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t count() const noexcept { return count_; }

  std::vector<Vector> sample(const ManifoldSpec& manifold) const {
    if (!(manifold.level() > 0.0)) {
      throw ContractError("sampling needs a positive manifold level; pass explicit points for other levels");
    }
    std::mt19937_64 rng(seed_);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(manifold.n());
    const double inv_q = 1.0 / manifold.degree();
    std::vector<Vector> points;
    points.reserve(count_);
    std::size_t attempts = 0;
    while (points.size() < count_) {
      if (++attempts > 100 * count_ + 1000) {
        throw ContractError("sampler could not place points on the manifold (is F positive anywhere?)");
      }
      Vector x(n);
      for (Eigen::Index i = 0; i < n; ++i) x[i] = normal(rng);
      if (strategy_ == SamplingStrategy::gaussian_normalized) {
        const double norm = x.norm();
        if (norm == 0.0) continue;
        x *= std::sqrt(manifold.level()) / norm;
        if (std::abs(manifold.value(x) - manifold.level()) > kOnManifoldTolerance) {
          throw ContractError("gaussian_normalized sampling only applies to F = sum x_i^2");
        }
      } else {
        bool placed = false;
        for (int pass = 0; pass < 3 && !placed; ++pass) {
          const double f = manifold.value(x);
          if (!(f > 0.0)) break;
          x *= std::pow(manifold.level() / f, inv_q);
          placed = std::abs(manifold.value(x) - manifold.level()) <= kOnManifoldTolerance;
        }
        if (!placed) continue;
      }
      points.push_back(std::move(x));
    }
    return points;
  }

 private:
  SamplingStrategy strategy_;
  std::uint64_t seed_;
  std::size_t count_;
};

/// {0} for autonomous systems, {0, 0.5, 1} otherwise.
inline std::vector<double> default_times(const SdeSystem& system) {
  if (system.autonomous()) return {0.0};
  return {0.0, 0.5, 1.0};
}

/// 1e-9 with analytic derivatives, 1e-5 when finite differences are involved.
inline double default_tolerance(const ManifoldSpec& manifold) {
  return manifold.has_analytic_gradient() && manifold.has_analytic_hessian() ? 1e-9 : 1e-5;
}

namespace detail {

template <typename Residual>
ResidualStats sweep(const std::vector<Vector>& points, const std::vector<double>& times, Residual residual) {
  if (points.empty()) throw ContractError("invariance check needs at least one sample point");
  if (times.empty()) throw ContractError("invariance check needs at least one time");
  std::vector<double> values;
  values.reserve(points.size() * times.size());
  for (double t : times) {
    for (const Vector& x : points) values.push_back(residual(t, x));
  }
  return ResidualStats::from(values);
}

inline double max_column_contraction(const Vector& grad, const Matrix& sigma) {
  double worst = 0.0;
  for (Eigen::Index l = 0; l < sigma.cols(); ++l) worst = std::max(worst, std::abs(grad.dot(sigma.col(l))));
  return worst;
}

}  // namespace detail

/// |grad F . f(t, x)| over the sample grid.
inline ConditionResult check_drift_tangency(const SdeSystem& system, const ManifoldSpec& manifold,
                                            const std::vector<Vector>& points, const std::vector<double>& times,
                                            double tol) {
  detail::check_pair(manifold, system);
  const auto stats = detail::sweep(points, times, [&](double t, const Vector& x) {
    return std::abs(manifold.gradient(x).dot(system.drift(t, x)));
  });
  return {stats, classify(stats.max, tol)};
}

/// max over noise columns of |grad F . sigma_l(t, x)| over the sample grid.
inline ConditionResult check_diffusion_tangency(const SdeSystem& system, const ManifoldSpec& manifold,
                                                const std::vector<Vector>& points,
                                                const std::vector<double>& times, double tol) {
  detail::check_pair(manifold, system);
  const auto stats = detail::sweep(points, times, [&](double t, const Vector& x) {
    return detail::max_column_contraction(manifold.gradient(x), system.diffusion(t, x));
  });
  return {stats, classify(stats.max, tol)};
}

/// |1/2 trace(sigma sigma^T Hess F)| over the sample grid.
inline ConditionResult check_correction_vanishes(const SdeSystem& system, const ManifoldSpec& manifold,
                                                 const std::vector<Vector>& points,
                                                 const std::vector<double>& times, double tol) {
  detail::check_pair(manifold, system);
  const auto stats = detail::sweep(points, times, [&](double t, const Vector& x) {
    return std::abs(ito_correction(manifold, system, t, x));
  });
  return {stats, classify(stats.max, tol)};
}

/// The full dF(x_t) coefficients. This is the right test for systems whose
/// drift is not tangent but whose generator still annihilates F, such as
/// invariantized ones.
inline GeneratorResidual combined_generator_residual(const SdeSystem& system, const ManifoldSpec& manifold,
                                                     const std::vector<Vector>& points,
                                                     const std::vector<double>& times) {
  detail::check_pair(manifold, system);
  GeneratorResidual r;
  r.drift = detail::sweep(points, times, [&](double t, const Vector& x) {
    return std::abs(manifold.gradient(x).dot(system.drift(t, x)) + ito_correction(manifold, system, t, x));
  });
  r.noise = detail::sweep(points, times, [&](double t, const Vector& x) {
    return detail::max_column_contraction(manifold.gradient(x), system.diffusion(t, x));
  });
  return r;
}

/// Frobenius norm of sigma(t, x) over the sample grid. With F = sum x_i^2 the
/// correction is trace(sigma sigma^T), so the sphere is strongly invariant iff
/// this vanishes (given drift tangency).
inline ResidualStats sphere_diffusion_norm(const SdeSystem& system, const std::vector<Vector>& points,
                                           const std::vector<double>& times) {
  return detail::sweep(points, times, [&](double t, const Vector& x) { return system.diffusion(t, x).norm(); });
}

inline ResidualStats sphere_diffusion_norm(const SdeSystem& system, const ManifoldSampler& sampler,
                                           const std::vector<double>& times) {
  return sphere_diffusion_norm(system, sampler.sample(ManifoldSpec::sphere(system.n())), times);
}

struct InvarianceReport {
  ConditionResult drift_tangency;
  ConditionResult diffusion_tangency;
  ConditionResult correction;
  GeneratorResidual combined;
  double tolerance = 0.0;
  std::size_t samples = 0;
  std::vector<double> times;
  std::optional<std::uint64_t> seed;

  bool invariant() const {
    return passes(drift_tangency.verdict) && passes(diffusion_tangency.verdict) && passes(correction.verdict);
  }
};

inline InvarianceReport strong_invariance_report(const SdeSystem& system, const ManifoldSpec& manifold,
                                                 const std::vector<Vector>& points, const std::vector<double>& times,
                                                 double tol) {
  InvarianceReport r;
  r.drift_tangency = check_drift_tangency(system, manifold, points, times, tol);
  r.diffusion_tangency = check_diffusion_tangency(system, manifold, points, times, tol);
  r.correction = check_correction_vanishes(system, manifold, points, times, tol);
  r.combined = combined_generator_residual(system, manifold, points, times);
  r.tolerance = tol;
  r.samples = points.size();
  r.times = times;
  return r;
}

inline InvarianceReport strong_invariance_report(const SdeSystem& system, const ManifoldSpec& manifold,
                                                 const ManifoldSampler& sampler, const std::vector<double>& times,
                                                 double tol) {
  auto r = strong_invariance_report(system, manifold, sampler.sample(manifold), times, tol);
  r.seed = sampler.seed();
  return r;
}

/// Sampler-driven overloads of the individual checks.
inline ConditionResult check_drift_tangency(const SdeSystem& system, const ManifoldSpec& manifold,
                                            const ManifoldSampler& sampler, const std::vector<double>& times,
                                            double tol) {
  return check_drift_tangency(system, manifold, sampler.sample(manifold), times, tol);
}

inline ConditionResult check_diffusion_tangency(const SdeSystem& system, const ManifoldSpec& manifold,
                                                const ManifoldSampler& sampler, const std::vector<double>& times,
                                                double tol) {
  return check_diffusion_tangency(system, manifold, sampler.sample(manifold), times, tol);
}

inline ConditionResult check_correction_vanishes(const SdeSystem& system, const ManifoldSpec& manifold,
                                                 const ManifoldSampler& sampler, const std::vector<double>& times,
                                                 double tol) {
  return check_correction_vanishes(system, manifold, sampler.sample(manifold), times, tol);
}

inline GeneratorResidual combined_generator_residual(const SdeSystem& system, const ManifoldSpec& manifold,
                                                     const ManifoldSampler& sampler,
                                                     const std::vector<double>& times) {
  return combined_generator_residual(system, manifold, sampler.sample(manifold), times);
}

inline nlohmann::json to_json(const ResidualStats& s) {
  return {{"max", s.max}, {"mean", s.mean}, {"count", s.count}};
}

inline nlohmann::json to_json(const ConditionResult& c) {
  auto j = to_json(c.stats);
  j["verdict"] = to_string(c.verdict);
  return j;
}

inline nlohmann::json to_json(const InvarianceReport& r) {
  nlohmann::json j;
  j["drift_tangency"] = to_json(r.drift_tangency);
  j["diffusion_tangency"] = to_json(r.diffusion_tangency);
  j["ito_correction"] = to_json(r.correction);
  j["combined_generator"] = {{"drift", to_json(r.combined.drift)}, {"noise", to_json(r.combined.noise)}};
  j["verdict"] = {{"drift_tangency", to_string(r.drift_tangency.verdict)},
                  {"diffusion_tangency", to_string(r.diffusion_tangency.verdict)},
                  {"ito_correction", to_string(r.correction.verdict)},
                  {"invariant", r.invariant()}};
  j["tolerance"] = r.tolerance;
  j["samples"] = r.samples;
  j["times"] = r.times;
  j["seed"] = r.seed ? nlohmann::json(*r.seed) : nlohmann::json(nullptr);
  return j;
}

}  // namespace invar
