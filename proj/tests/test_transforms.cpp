#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "invar/invariance.hpp"
#include "invar/models.hpp"
#include "invar/transforms.hpp"

using namespace invar;
using namespace invar::models;

namespace {

// F = (x1^2 + x2^2)^2, degree 4; same level set as the circle.
ManifoldSpec radial_quartic() {
  return ManifoldSpec(
      2, [](const Vector& x) { return std::pow(x.squaredNorm(), 2); }, 4, 1.0,
      [](const Vector& x) { return (4.0 * x.squaredNorm() * x).eval(); },
      [](const Vector& x) {
        Matrix H = 4.0 * x.squaredNorm() * Matrix::Identity(2, 2) + 8.0 * x * x.transpose();
        return H;
      });
}

// A generic, non-tangent system with state-dependent scalar noise.
SdeSystem generic_system() {
  return SdeSystem(
      3, 1,
      [](double t, const Vector& x) {
        return Vector{{x[1] - 0.3 * x[0], std::sin(x[2]) + t, 0.5 * x[0] * x[1]}};
      },
      [](double, const Vector& x) {
        Matrix s(3, 1);
        s << 0.2 * x[2], 1.0 + 0.1 * x[0], -0.4 * x[1];
        return s;
      },
      false);
}

Vector random_point(std::mt19937_64& rng, std::size_t n, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector x(static_cast<Eigen::Index>(n));
  for (auto& v : x) v = u(rng);
  return x;
}

// Ito change of variables for scalar noise with finite-difference
// derivatives of g, independent of the analytic normalization map.
struct FdProjection {
  Vector drift;
  Vector noise;
};

FdProjection fd_projection(const SdeSystem& sys, const ManifoldSpec& m, double t, const Vector& x) {
  const auto n = x.size();
  const double q = m.degree();
  FdProjection out{Vector::Zero(n), Vector::Zero(n)};
  const Vector f = sys.drift(t, x);
  const Vector s = sys.diffusion(t, x).col(0);
  for (Eigen::Index c = 0; c < n; ++c) {
    const ScalarField gc = [&m, c, q](const Vector& z) { return z[c] * std::pow(m.field()(z), -1.0 / q); };
    const Vector grad = grad_fd(gc, x);
    const Matrix hess = hess_fd(gc, x);
    out.drift[c] = grad.dot(f) + 0.5 * s.dot(hess * s);
    out.noise[c] = grad.dot(s);
  }
  return out;
}

// The component formula printed for the projected process, scalar noise only.
Vector printed_projected_drift(const SdeSystem& sys, const ManifoldSpec& m, double t, const Vector& x) {
  const double q = m.degree();
  const double F = m.value(x);
  const Vector dF = m.gradient(x);
  const Matrix HF = m.hessian(x);
  const Vector f = sys.drift(t, x);
  const Vector s = sys.diffusion(t, x).col(0);
  double bracket_sum = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      bracket_sum += s[i] * s[j] *
                     (std::pow(F, -(1 + q) / q) * HF(i, j) -
                      (1 + q) / q * std::pow(F, -(1 + 2 * q) / q) * dF[i] * dF[j]);
    }
  }
  Vector out(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    out[k] = std::pow(F, -1 / q) * f[k] - 1 / (2 * q) * dF[k] * std::pow(F, -(1 + q) / q) * s[k] * s[k] +
             0.5 * (-1 / q) * x[k] * bracket_sum;
  }
  return out;
}

}  // namespace

TEST(ProjectState, Examples) {
  const ManifoldSpec circ = ManifoldSpec::sphere(2);
  EXPECT_TRUE(project_state(Vector{{3.0, 4.0}}, circ).isApprox(Vector{{0.6, 0.8}}, 1e-15));
  EXPECT_EQ(project_state(Vector{{0.0, 0.0, 2.0}}, sphere()), (Vector{{0.0, 0.0, 1.0}}));
  EXPECT_THROW(project_state(Vector{{0.0, 0.0}}, circ), DomainError);
}

TEST(ProjectState, LandsOnTheLevelSet) {
  std::mt19937_64 rng(3);
  const ManifoldSpec quartic(
      3, [](const Vector& x) { return std::pow(x[0], 4) + 2 * std::pow(x[1], 4) + std::pow(x[2], 4); }, 4);
  for (int i = 0; i < 200; ++i) {
    const Vector x = random_point(rng, 3);
    EXPECT_NEAR(sphere().value(project_state(x, sphere())), 1.0, 1e-14);
    EXPECT_NEAR(quartic.value(project_state(x, quartic)), 1.0, 1e-13);
    const Vector y = project_state(x, sphere());
    EXPECT_TRUE(project_state(y, sphere()).isApprox(y, 1e-15));
  }
}

TEST(NormalizationMap, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const SmoothMap g = normalization_map(sphere());
  for (int i = 0; i < 50; ++i) {
    const Vector x = random_point(rng, 3, 0.3, 1.7);
    const Matrix J = g.jacobian(x);
    const auto H = g.hessians(x);
    for (Eigen::Index m = 0; m < 3; ++m) {
      const ScalarField gm = [&g, m](const Vector& z) { return g.value(z)[m]; };
      EXPECT_TRUE(J.row(m).transpose().isApprox(grad_fd(gm, x), 1e-7));
      EXPECT_LT((H[static_cast<std::size_t>(m)] - hess_fd(gm, x)).cwiseAbs().maxCoeff(), 1e-5);
    }
  }
}

TEST(ProjectedSde, TangentDeterministicFlowIsUnchanged) {
  const SdeSystem ll = ll_deterministic({{0.3, -0.2, 1.0}, 0.5, 0.0});
  const SdeSystem proj = projected_sde(ll, sphere());
  for (const Vector& x : ManifoldSampler(SamplingStrategy::rescale, 2, 50).sample(sphere())) {
    EXPECT_LT((proj.drift(0.0, x) - ll.drift(0.0, x)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ProjectedSde, KuboAtUnitPoint) {
  const KuboParams p{2.0, 0.5};
  const SdeSystem proj = projected_sde(kubo_system(p), circle());
  for (double t : {0.0, 1.3}) {
    const Vector d = proj.drift(t, Vector{{1.0, 0.0}});
    const Matrix s = proj.diffusion(t, Vector{{1.0, 0.0}});
    EXPECT_NEAR(d[0], -0.125, 1e-12);
    EXPECT_NEAR(d[1], 2.0, 1e-12);
    EXPECT_NEAR(s(0, 0), 0.0, 1e-12);
    EXPECT_NEAR(s(1, 0), 0.5, 1e-12);
  }
}

TEST(ProjectedSde, NoiseCoefficientOnTheSphereIsSigma) {
  const SdeSystem ll = ll_stochastic({{0.1, 0.7, 1.0}, 0.5, 0.1});
  const SdeSystem proj = projected_sde(ll, sphere());
  for (const Vector& x : ManifoldSampler(SamplingStrategy::gaussian_normalized, 6, 100).sample(sphere())) {
    EXPECT_LT((proj.diffusion(0.0, x) - ll.diffusion(0.0, x)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ProjectedSde, AgreesWithFiniteDifferenceItoOracle) {
  std::mt19937_64 rng(11);
  const SdeSystem sys = generic_system();
  const SdeSystem proj = projected_sde(sys, sphere());
  for (int i = 0; i < 40; ++i) {
    const Vector x = random_point(rng, 3, 0.4, 1.6);
    const double t = 0.25 * i;
    const FdProjection oracle = fd_projection(sys, sphere(), t, x);
    EXPECT_LT((proj.drift(t, x) - oracle.drift).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LT((proj.diffusion(t, x).col(0) - oracle.noise).cwiseAbs().maxCoeff(), 1e-7);
  }
}

// The projected process never leaves the level set: its dF vanishes at
// g(x) for every x, on or off the manifold.
TEST(ProjectedSde, GeneratorOfProjectedProcessAnnihilatesF) {
  std::mt19937_64 rng(17);
  for (const ManifoldSpec& m : {sphere(), sphere().finite_difference_only()}) {
    const double tol = m.has_analytic_hessian() ? 1e-12 : 1e-6;
    const SdeSystem proj = projected_sde(generic_system(), m);
    for (int i = 0; i < 60; ++i) {
      const Vector x = random_point(rng, 3, 0.4, 1.6);
      const Vector y = project_state(x, sphere());
      const Vector grad = sphere().gradient(y);
      const Matrix s = proj.diffusion(0.5, x);
      const double correction = 0.5 * (s * s.transpose() * sphere().hessian(y)).trace();
      EXPECT_LT(std::abs(grad.dot(proj.drift(0.5, x)) + correction), tol);
      EXPECT_LT((grad.transpose() * s).cwiseAbs().maxCoeff(), tol);
    }
  }
}

// Under tangency the printed component formula differs from the Ito
// transform by (1/2q) F_k F^{-(1+q)/q} sigma_k^2.
TEST(ProjectedSde, PrintedComponentFormulaComparison) {
  const double q = 2.0;
  for (double sigma : {0.5, 1.2}) {
    const SdeSystem kubo = kubo_system({2.0, sigma});
    const SdeSystem proj = projected_sde(kubo, circle());
    std::mt19937_64 rng(23);
    double largest_gap = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vector x = random_point(rng, 2, 0.5, 1.5);
      const double F = circle().value(x);
      const Vector dF = circle().gradient(x);
      const Vector s = kubo.diffusion(0.0, x).col(0);
      const Vector printed = printed_projected_drift(kubo, circle(), 0.0, x);
      const Vector generic = proj.drift(0.0, x);
      for (Eigen::Index k = 0; k < 2; ++k) {
        const double gap = 1 / (2 * q) * dF[k] * std::pow(F, -(1 + q) / q) * s[k] * s[k];
        EXPECT_NEAR(generic[k] - printed[k], gap, 1e-12);
        largest_gap = std::max(largest_gap, std::abs(gap));
      }
      EXPECT_LT((proj.diffusion(0.0, x).col(0) - std::pow(F, -1 / q) * s).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_GT(largest_gap, 0.01);
  }
}

TEST(ProjectedSde, Contracts) {
  EXPECT_THROW(projected_sde(kubo_system({}), sphere()), ContractError);
  EXPECT_THROW(projected_sde(ll_stochastic({}), sphere().with_level(2.0)), ContractError);
  const SdeSystem proj = projected_sde(ll_stochastic({}), sphere());
  EXPECT_THROW(proj.drift(0.0, Vector::Zero(3)), DomainError);
  EXPECT_THROW(projected_sde(proj, sphere()), ContractError);
}

TEST(AdaptiveSimpson, Integrals) {
  EXPECT_NEAR(adaptive_simpson([](double t) { return std::exp(t); }, 0.0, 1.0), std::exp(1.0) - 1.0, 1e-10);
  EXPECT_NEAR(adaptive_simpson([](double t) { return std::sin(t); }, 0.0, M_PI), 2.0, 1e-10);
  EXPECT_EQ(adaptive_simpson([](double) { return 3.0; }, 0.0, 2.0), 6.0);
  EXPECT_NEAR(adaptive_simpson([](double t) { return t; }, 1.0, 0.0), -0.5, 1e-15);
}

TEST(ScaleLaw, Forms) {
  const ScaleLaw c = ScaleLaw::constant(0.25);
  EXPECT_EQ(c.H(0.0), 1.0);
  EXPECT_EQ(c.H(2.0), 1.5);
  EXPECT_EQ(c.h(7.0), 0.25);
  EXPECT_EQ(c.form(), ScaleLawForm::closed_form_constant_h);
  EXPECT_EQ(*c.constant_rate(), 0.25);

  const ScaleLaw quad = ScaleLaw::quadrature([](double t) { return std::cos(t); });
  EXPECT_EQ(quad.H(0.0), 1.0);
  EXPECT_NEAR(quad.H(1.2), 1.0 + std::sin(1.2), 1e-10);
  EXPECT_FALSE(quad.constant_rate());
  EXPECT_STREQ(to_string(quad.form()), "numeric_quadrature");

  EXPECT_THROW(ScaleLaw::closed_form([](double) { return 1.0; }, [](double t) { return 2.0 + t; }), ContractError);
  EXPECT_THROW(ScaleLaw::constant(std::nan("")), ContractError);
}

TEST(ScaleLaw, RequirePositive) {
  const ScaleLaw shrinking = ScaleLaw::constant(-1.0);
  EXPECT_NO_THROW(shrinking.require_positive(0.0, 0.5));
  try {
    shrinking.require_positive(0.0, 2.0);
    FAIL() << "expected HorizonError";
  } catch (const HorizonError& e) {
    EXPECT_EQ(e.time(), 2.0);
  }
  const ScaleLaw dip = ScaleLaw::quadrature([](double t) { return -2.0 * t; });
  EXPECT_THROW(dip.require_positive(0.0, 2.0), HorizonError);
}

TEST(ScaleLawFromCorrection, Kubo) {
  const KuboParams p{2.0, 0.5};
  const ScaleLaw law = scale_law_from_correction(kubo_system(p), circle(), ManifoldSampler(), 1e-9);
  EXPECT_EQ(law.form(), ScaleLawForm::closed_form_constant_h);
  EXPECT_NEAR(*law.constant_rate(), 0.25, 1e-12);
  EXPECT_NEAR(law.H(1.0), 1.25, 1e-12);
}

TEST(ScaleLawFromCorrection, LandauLifshitz) {
  for (double alpha : {0.0, 0.5, 2.0}) {
    for (double eps : {0.0, 0.1, 0.3}) {
      const ScaleLaw law =
          scale_law_from_correction(ll_stochastic({{0, 0.5, 1}, alpha, eps}), sphere(), ManifoldSampler(), 1e-9);
      EXPECT_NEAR(*law.constant_rate(), 2 * eps * eps * (alpha * alpha + 1), 1e-12);
    }
  }
}

TEST(ScaleLawFromCorrection, DegreeFourLevelFunction) {
  const KuboParams p{1.5, 0.4};
  const ManifoldSpec m = radial_quartic();
  const ScaleLaw law = scale_law_from_correction(kubo_system(p), m, ManifoldSampler(), 1e-9);
  EXPECT_EQ(law.form(), ScaleLawForm::closed_form_general);
  for (double t : {0.0, 0.3, 1.0, 4.0}) {
    EXPECT_NEAR(law.H(t), std::pow(1 + p.sigma * p.sigma * t, 2), 1e-12);
  }
  // The transformed system does not depend on which level function describes the circle.
  const SdeSystem via_quartic = invariantize(kubo_system(p), m, law);
  const SdeSystem closed = kubo_invariantized_closed_form(p);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vector x = random_point(rng, 2);
    const double t = 0.05 * i;
    EXPECT_LT((via_quartic.drift(t, x) - closed.drift(t, x)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((via_quartic.diffusion(t, x) - closed.diffusion(t, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ScaleLawFromCorrection, TimeDependentNoiseUsesQuadrature) {
  const double sigma = 0.3;
  const SdeSystem growing(
      2, 1, [](double, const Vector& x) { return Vector{{-x[1], x[0]}}; },
      [sigma](double t, const Vector& x) {
        Matrix s(2, 1);
        s << -sigma * (1 + t) * x[1], sigma * (1 + t) * x[0];
        return s;
      },
      false);
  const ScaleLaw law = scale_law_from_correction(growing, circle(), ManifoldSampler(), 1e-9);
  EXPECT_EQ(law.form(), ScaleLawForm::numeric_quadrature);
  for (double t : {0.5, 1.0, 2.0}) {
    EXPECT_NEAR(law.h(t), sigma * sigma * (1 + t) * (1 + t), 1e-12);
    EXPECT_NEAR(law.H(t), 1 + sigma * sigma * (std::pow(1 + t, 3) - 1) / 3, 1e-9);
  }
}

TEST(ScaleLawFromCorrection, FieldDirectedNoiseIsRejected) {
  const LLParams p{{0, 0, 1}, 0.5, 0.1};
  try {
    scale_law_from_correction(ll_field_noise(p), sphere(), ManifoldSampler(), 1e-9);
    FAIL() << "expected NotInvariantizableError";
  } catch (const NotInvariantizableError& e) {
    // eps^2 |sigma(x) b|^2 ranges over [0, eps^2 (1 + alpha^2)]
    EXPECT_GT(e.spread(), 0.5 * p.epsilon * p.epsilon);
    EXPECT_LE(e.spread(), p.epsilon * p.epsilon * 1.25 + 1e-15);
    EXPECT_NE(std::string(e.what()).find("not invariantizable"), std::string::npos);
  }
  // The modified model already carries the restoring drift, so tangency fails first.
  EXPECT_THROW(scale_law_from_correction(ll_modified(p), sphere(), ManifoldSampler(), 1e-9), NotInvariantizableError);
}

TEST(ScaleLawFromCorrection, NonTangentSystemsAreRejected) {
  const SdeSystem radial(
      3, 0, [](double, const Vector& x) { return x; }, {}, true);
  EXPECT_THROW(scale_law_from_correction(radial, sphere(), ManifoldSampler(), 1e-9), NotInvariantizableError);
  const SdeSystem iso(
      3, 3, [](double, const Vector&) { return Vector::Zero(3).eval(); },
      [](double, const Vector&) { return Matrix::Identity(3, 3).eval(); }, true);
  EXPECT_THROW(scale_law_from_correction(iso, sphere(), ManifoldSampler(), 1e-9), NotInvariantizableError);
}

TEST(Invariantize, KuboCoefficients) {
  const KuboParams p{2.0, 0.5};
  const SdeSystem inv = invariantize(kubo_system(p), circle(), ScaleLaw::constant(0.25));
  const double t = 0.8;
  const double H = 1 + 0.25 * t;
  const Vector x{{0.3, -1.1}};
  const Vector d = inv.drift(t, x);
  EXPECT_NEAR(d[0], -0.25 / (2 * H) * x[0] - 2.0 / std::sqrt(H) * x[1], 1e-15);
  EXPECT_NEAR(d[1], 2.0 / std::sqrt(H) * x[0] - 0.25 / (2 * H) * x[1], 1e-15);
  const Matrix s = inv.diffusion(t, x);
  EXPECT_NEAR(s(0, 0), -0.5 * x[1] / std::sqrt(H), 1e-15);
  EXPECT_NEAR(s(1, 0), 0.5 * x[0] / std::sqrt(H), 1e-15);
  EXPECT_FALSE(inv.autonomous());
}

TEST(Invariantize, DriftAtTimeZero) {
  for (const SdeSystem& sys : {ll_stochastic({{0.2, 0.1, 1}, 0.5, 0.1}), ll_stochastic({{1, 0, 0}, 1.5, 0.4})}) {
    const ScaleLaw law = scale_law_from_correction(sys, sphere(), ManifoldSampler(), 1e-9);
    const SdeSystem inv = invariantize(sys, sphere(), law);
    const double h = law.h(0.0);
    std::mt19937_64 rng(8);
    for (int i = 0; i < 50; ++i) {
      const Vector x = random_point(rng, 3);
      const Vector expected = -(h / 2.0) * x + sys.drift(0.0, x);
      EXPECT_EQ(inv.drift(0.0, x), expected);
    }
  }
}

TEST(Invariantize, GeneratorAnnihilatesF) {
  const std::vector<double> times{0.0, 0.5, 1.0};
  const ManifoldSampler sampler(SamplingStrategy::rescale, 41);
  struct Case {
    SdeSystem sys;
    ManifoldSpec m;
  };
  for (const Case& c : {Case{kubo_system({2.0, 0.5}), circle()}, Case{kubo_system({1.5, 0.4}), radial_quartic()},
                        Case{ll_stochastic({{0, 0, 1}, 0.5, 0.1}), sphere()},
                        Case{ll_stochastic({{0.3, -1, 0.2}, 1.0, 0.5}), sphere()}}) {
    const ScaleLaw law = scale_law_from_correction(c.sys, c.m, sampler, 1e-9);
    const auto r = combined_generator_residual(invariantize(c.sys, c.m, law), c.m, sampler, times);
    EXPECT_LT(r.drift.max, 1e-9);
    EXPECT_LT(r.noise.max, 1e-9);
  }
}

TEST(Invariantize, Horizon) {
  const ScaleLaw shrinking = ScaleLaw::constant(-1.0);
  EXPECT_THROW(invariantize(kubo_system({}), circle(), shrinking, 2.0), HorizonError);
  const SdeSystem inv = invariantize(kubo_system({}), circle(), shrinking, 0.5);
  EXPECT_NO_THROW(inv.drift(0.9, Vector{{1.0, 0.0}}));
  EXPECT_THROW(inv.drift(1.0, Vector{{1.0, 0.0}}), HorizonError);
  EXPECT_THROW(invariantize(kubo_system({}), circle().with_level(3.0), ScaleLaw::constant(0.0)), ContractError);
}

TEST(Invariantize, ZeroRateKeepsAutonomy) {
  const SdeSystem inv = invariantize(ll_deterministic({}), sphere(), ScaleLaw::constant(0.0));
  EXPECT_TRUE(inv.autonomous());
  const Vector x{{0.2, 0.4, -0.9}};
  EXPECT_EQ(inv.drift(3.0, x), ll_deterministic({}).drift(3.0, x));
}

TEST(CoupledSystem, EvaluatesAtTheNormalizedState) {
  const SdeSystem ll = ll_stochastic({{0, 0.3, 1}, 0.5, 0.1});
  const CoupledInvariantizedSystem coupled = coupled_step_representation(ll, sphere());
  const SdeSystem ys = coupled.y_system();
  std::mt19937_64 rng(31);
  for (int i = 0; i < 30; ++i) {
    const Vector y = random_point(rng, 3, 0.5, 1.5);
    const Vector x = coupled.normalize(y);
    EXPECT_NEAR(x.norm(), 1.0, 1e-15);
    EXPECT_EQ(ys.drift(0.0, y), ll.drift(0.0, x));
    EXPECT_EQ(ys.diffusion(0.0, y), ll.diffusion(0.0, x));
  }
  EXPECT_THROW(ys.drift(0.0, Vector::Zero(3)), DomainError);
  EXPECT_THROW(coupled_step_representation(kubo_system({}), sphere()), ContractError);
}
