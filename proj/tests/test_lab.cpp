#include <cmath>

#include <gtest/gtest.h>

#include "invar/lab.hpp"
#include "invar/models.hpp"

using namespace invar;
using namespace invar::lab;
using namespace invar::models;

namespace {

SdeSystem blowup() {
  return SdeSystem(
      2, 0, [](double, const Vector& x) { return (x * x.squaredNorm()).eval(); }, {}, true);
}

}  // namespace

// f(x) is orthogonal to x, so each Euler step adds exactly dt^2 |f(x_n)|^2 to |x|^2.
TEST(DeviationStats, DeterministicLLDriftOffIsSecondOrderPerStep) {
  const SdeSystem ll = ll_deterministic({{0, 0, 1}, 0.5, 0});
  const TimeGrid g(0, 1, 1000);
  const TrajectoryEnsemble e = simulate_ensemble(ll, Vector{{1.0, 0.0, 0.0}}, g, 2, 1);
  const DeviationSeries s = deviation_stats(e, sphere());
  EXPECT_EQ(s.times.size(), 1001u);
  EXPECT_EQ(s.max.front(), 0.0);
  double F = 1.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    F += g.dt() * g.dt() * ll.drift(0.0, e.path(0).row(static_cast<Eigen::Index>(i)).transpose()).squaredNorm();
    EXPECT_NEAR(s.max[i + 1], F - 1.0, 1e-13);
  }
  EXPECT_LT(s.max.back(), 1.25e-3);

  // A weaker field keeps |f| small enough for a 1e-4 drift-off at t = 1.
  const DeviationSeries weak = deviation_stats(
      simulate_ensemble(ll_deterministic({{0, 0, 0.25}, 0.5, 0}), Vector{{1.0, 0.0, 0.0}}, g, 2, 1), sphere());
  EXPECT_LT(weak.max.back(), 1e-4);
}

TEST(DeviationStats, KuboMeanTracksEmRecurrence) {
  const KuboParams p{2.0, 0.5};
  const TimeGrid g(0, 1, 1000);
  const DeviationSeries s =
      deviation_stats(simulate_ensemble(kubo_system(p), Vector{{1.0, 0.0}}, g, 10000, 3), circle());
  for (std::size_t i : {250u, 500u, 1000u}) {
    const double t = s.times[i];
    const double dt = g.dt();
    const double oracle = std::pow(1 + p.sigma * p.sigma * dt + p.a * p.a * dt * dt, t / dt);
    EXPECT_NEAR(s.f_mean[i], oracle, 0.02 * oracle) << t;
    EXPECT_NEAR(oracle, std::exp(p.sigma * p.sigma * t), 0.01 * oracle);
  }
  EXPECT_GT(s.f_mean.back(), s.f_mean.front());
  for (std::size_t i = 0; i < s.times.size(); ++i) EXPECT_LE(s.mean[i], s.max[i]);
}

TEST(DeviationStats, CoupledStreamHasNoDeviation) {
  const CoupledEnsemble c = simulate_coupled_ensemble(coupled_step_representation(kubo_system({2.0, 0.5}), circle()),
                                                      Vector{{1.0, 0.0}}, TimeGrid(0, 1, 500), 50, 4);
  const DeviationSeries s = deviation_stats(c.x, circle());
  for (double m : s.max) EXPECT_LE(m, 4 * 2.2e-16);
}

TEST(DeviationStats, AbortedPathsAreExcluded) {
  const TrajectoryEnsemble dead = simulate_ensemble(blowup(), Vector{{1.0, 0.0}}, TimeGrid(0, 2, 200), 3, 1);
  EXPECT_EQ(dead.aborted_paths.size(), 3u);
  EXPECT_THROW(deviation_stats(dead, circle()), AnalysisError);

  TrajectoryEnsemble mixed = simulate_ensemble(kubo_system({}), Vector{{1.0, 0.0}}, TimeGrid(0, 1, 10), 4, 1);
  mixed.aborted_paths.push_back({1, 3, 0.3, "synthetic"});
  mixed.path(1).bottomRows(7).setConstant(std::nan(""));
  const DeviationSeries s = deviation_stats(mixed, circle());
  EXPECT_EQ(s.paths_used, 3u);
  EXPECT_EQ(s.paths_excluded, 1u);
  for (double v : s.f_mean) EXPECT_TRUE(std::isfinite(v));
}

TEST(DeviationStats, JsonKeys) {
  const auto j =
      to_json(deviation_stats(simulate_ensemble(kubo_system({}), Vector{{1.0, 0.0}}, TimeGrid(0, 1, 4), 2, 1), circle()));
  for (const char* key : {"times", "mean", "max", "var", "f_mean"}) {
    EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j[key].size(), 5u);
  }
}

TEST(FGrowth, LandauLifshitzFollowsTheScaleLaw) {
  const LLParams p{{0, 0, 1}, 0.5, 0.1};
  const CoupledEnsemble c = simulate_coupled_ensemble(coupled_step_representation(ll_stochastic(p), sphere()),
                                                      Vector{{1.0, 0.0, 0.0}}, TimeGrid(0, 1, 1000), 100, 12);
  const FGrowth g = f_growth_check(c.y, sphere(), ScaleLaw::constant(p.scale_rate()));
  EXPECT_LT(g.sup_dev, 5e-3);
  EXPECT_EQ(g.times.size(), 1001u);
  EXPECT_NEAR(g.H.back(), 1.025, 1e-15);
  EXPECT_EQ(g.max_dev.front(), 0.0);
}

TEST(FGrowth, ZeroDiffusion) {
  const TimeGrid g(0, 1, 1000);
  const CoupledEnsemble still = simulate_coupled_ensemble(
      coupled_step_representation(SdeSystem::zero(3), sphere()), Vector{{0.0, 1.0, 0.0}}, g, 2, 1);
  EXPECT_EQ(f_growth_check(still.y, sphere(), ScaleLaw::constant(0.0)).sup_dev, 0.0);

  // With a tangent drift the Euler y-stream gains dt^2 |f|^2 per step.
  const CoupledEnsemble c = simulate_coupled_ensemble(
      coupled_step_representation(ll_deterministic({{0, 0, 1}, 0.5, 0}), sphere()), Vector{{0.0, 1.0, 0.0}}, g, 2, 1);
  const double dev = f_growth_check(c.y, sphere(), ScaleLaw::constant(0.0)).sup_dev;
  EXPECT_GT(dev, 0.0);
  EXPECT_LT(dev, 1.25 * g.dt() * g.t1());
}

TEST(FGrowth, KuboAndRefinement) {
  const KuboParams p{2.0, 0.5};
  const CoupledInvariantizedSystem sys = coupled_step_representation(kubo_system(p), circle());
  const ScaleLaw law = ScaleLaw::constant(p.sigma * p.sigma);
  const CoupledEnsemble coarse = simulate_coupled_ensemble(sys, Vector{{1.0, 0.0}}, TimeGrid(0, 1, 500), 100, 8);
  const CoupledEnsemble fine = simulate_coupled_ensemble(sys, Vector{{1.0, 0.0}}, TimeGrid(0, 1, 1000), 100, 8);
  const FGrowthComparison cmp = f_growth_check(coarse.y, fine.y, circle(), law);
  EXPECT_LT(cmp.fine.sup_dev, 5e-2);
  EXPECT_GT(cmp.ratio, 0.0);
  EXPECT_THROW(f_growth_check(fine.y, coarse.y, circle(), law), ContractError);
  const CoupledEnsemble other = simulate_coupled_ensemble(sys, Vector{{1.0, 0.0}}, TimeGrid(0, 2, 1000), 10, 8);
  EXPECT_THROW(f_growth_check(coarse.y, other.y, circle(), law), ContractError);
}

// Same Brownian paths at both resolutions; the sup-error shrinks under refinement.
TEST(FGrowth, ErrorShrinksOnSharedPaths) {
  const LLParams p{{0, 0, 1}, 0.5, 0.1};
  const CoupledInvariantizedSystem sys = coupled_step_representation(ll_stochastic(p), sphere());
  const ScaleLaw law = ScaleLaw::constant(p.scale_rate());
  const std::size_t P = 50;
  const auto run = [&](std::size_t steps) {
    TrajectoryEnsemble e;
    e.grid = TimeGrid(0, 1, steps);
    e.n = 3;
    e.paths = P;
    e.data.resize(P * (steps + 1) * 3);
    for (std::size_t q = 0; q < P; ++q) {
      const NoisePath w = NoisePath::generate(derive_seed(5, q), 2000, 3, 1.0 / 2000).coarsen(2000 / steps);
      e.path(q) = simulate_coupled(sys, Vector{{1.0, 0.0, 0.0}}, e.grid, w).y;
    }
    return e;
  };
  const FGrowthComparison cmp = f_growth_check(run(500), run(2000), sphere(), law);
  EXPECT_GT(cmp.ratio, 1.5);
}

TEST(Equilibria, LandauLifshitzFamily) {
  const LLParams p{{0, 0, 2}, 0.5, 0.1};
  const std::vector<Vector> poles{Vector{{0.0, 0.0, 1.0}}, Vector{{0.0, 0.0, -1.0}}};

  for (const auto& r : equilibrium_residuals(ll_deterministic(p), poles, {0.0})) {
    EXPECT_LT(r.drift_norm, 1e-12);
    EXPECT_EQ(r.diffusion_norm, 0.0);
    EXPECT_EQ(r.flag, EquilibriumFlag::stochastic_equilibrium);
  }
  for (const auto& r : equilibrium_residuals(ll_stochastic(p), poles, {0.0})) {
    EXPECT_LT(r.drift_norm, 1e-12);
    EXPECT_GT(r.diffusion_norm, 0.05);
    EXPECT_EQ(r.flag, EquilibriumFlag::neither);
  }
  const double rate = 2 * 0.01 * 1.25;
  for (const auto& r : equilibrium_residuals(ll_modified(p), poles, {0.0, 1.0})) {
    EXPECT_LT(r.diffusion_norm, 1e-12);
    EXPECT_NEAR(r.drift_norm, rate / (2 * (1 + rate * r.t)), 1e-12);
    EXPECT_EQ(r.flag, EquilibriumFlag::diffusion_fixed);
  }
}

TEST(Equilibria, FlagsStableUnderFieldRescaling) {
  const std::vector<Vector> pts{Vector{{0.0, 0.0, 1.0}}, Vector{{0.0, 0.0, -1.0}}, Vector{{1.0, 0.0, 0.0}},
                                Vector{{0.0, 0.6, 0.8}}};
  const auto a = equilibrium_residuals(ll_deterministic({{0, 0, 1}, 0.5, 0}), pts, {0.0});
  const auto b = equilibrium_residuals(ll_deterministic({{0, 0, 2}, 0.5, 0}), pts, {0.0});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].flag, b[i].flag);
  EXPECT_EQ(a[2].flag, EquilibriumFlag::diffusion_fixed);
}

TEST(Equilibria, Json) {
  const auto j = to_json(equilibrium_residuals(ll_stochastic({}), {Vector{{0.0, 0.0, 1.0}}}, {0.0}));
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["flag"], "neither");
  EXPECT_TRUE(j[0].contains("drift_norm"));
  EXPECT_TRUE(j[0].contains("diffusion_norm"));
}

TEST(EpsilonScaling, LandauLifshitzFamily) {
  const auto family = [](double eps) { return ll_stochastic({{0, 0, 1}, 0.5, eps}); };
  const EpsilonScaling s = epsilon_scaling_check(family, sphere(), {0.1, 0.05}, 1.0, ManifoldSampler());
  EXPECT_NEAR(s.slope, 2.0, 1e-10);
  const EpsilonScaling many = epsilon_scaling_check(family, sphere(), {0.4, 0.2, 0.1, 0.05, 0.01}, 0.3, ManifoldSampler());
  EXPECT_NEAR(many.slope, 2.0, 1e-10);
  EXPECT_NEAR(many.excess[2], 0.025 * 0.3, 1e-15);
}

TEST(EpsilonScaling, KuboFamily) {
  const auto family = [](double eps) { return kubo_system({2.0, eps}); };
  EXPECT_NEAR(epsilon_scaling_check(family, circle(), {0.5, 0.25, 0.1}, 2.0, ManifoldSampler()).slope, 2.0, 1e-10);
}

TEST(EpsilonScaling, DegenerateInputs) {
  EXPECT_THROW(epsilon_scaling_check([](double) { return ScaleLaw::constant(0.3); }, {0.1, 0.2}, 1.0),
               DegenerateFitError);
  EXPECT_THROW(epsilon_scaling_check([](double) { return ScaleLaw::constant(0.0); }, {0.1, 0.2}, 1.0),
               DegenerateFitError);
  EXPECT_THROW(epsilon_scaling_check([](double e) { return ScaleLaw::constant(e); }, {0.1, 0.1}, 1.0), ContractError);
  EXPECT_THROW(epsilon_scaling_check([](double e) { return ScaleLaw::constant(e); }, {0.1, -0.2}, 1.0), ContractError);
  EXPECT_NEAR(epsilon_scaling_check([](double e) { return ScaleLaw::constant(e * e * e); }, {0.1, 0.3}, 1.0).slope, 3.0,
              1e-12);
}

TEST(EpsilonScaling, Json) {
  const auto j = to_json(epsilon_scaling_check([](double e) { return ScaleLaw::constant(e * e); }, {0.1, 0.2}, 1.0));
  EXPECT_TRUE(j.contains("slope"));
  EXPECT_EQ(j["H_minus_1"].size(), 2u);
}
