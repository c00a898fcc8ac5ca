#pragma once

// Invariance-restoring constructions for a homogeneous level set
// M = {F = 1}, F(lambda x) = lambda^q F(x):
//
//  * projection:        y = x / F(x)^{1/q} with its Ito SDE (pullback form)
//  * invariantization:  dy = f(t, x) dt + sigma(t, x) dW, x = y / F(y)^{1/q};
//                       when dF(y_t) = h(t) dt, x solves
//                       dx = [-(1/q)(H'/H) x + H^{-1/q} f] dt + H^{-1/q} sigma dW
//                       with H(t) = 1 + int_0^t h.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "invar/core.hpp"
#include "invar/invariance.hpp"

namespace invar {

using TimeFunction = std::function<double(double)>;

/// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance `tol`.
inline double adaptive_simpson(const TimeFunction& f, double a, double b, double tol = 1e-10, int max_depth = 48) {
  if (a == b) return 0.0;
  struct Recurse {
    const TimeFunction& f;
    double run(double a, double fa, double m, double fm, double b, double fb, double whole, double tol,
               int depth) const {
      const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double delta = left + right - whole;
      if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
      return run(a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1) +
             run(m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1);
    }
  };
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return Recurse{f}.run(a, fa, m, fm, b, fb, whole, tol, max_depth);
}

enum class ScaleLawForm { closed_form_constant_h, closed_form_general, numeric_quadrature };

inline const char* to_string(ScaleLawForm f) {
  switch (f) {
    case ScaleLawForm::closed_form_constant_h: return "closed_form_constant_h";
    case ScaleLawForm::closed_form_general: return "closed_form_general";
    case ScaleLawForm::numeric_quadrature: return "numeric_quadrature";
  }
  return "closed_form_general";
}

/// The pair (h, H) with H(t) = 1 + int_0^t h(s) ds. H(0) is exactly 1.
class ScaleLaw {
 public:
  /// h constant: H(t) = 1 + h t.
  static ScaleLaw constant(double h) {
    if (!std::isfinite(h)) throw ContractError("scale rate must be finite");
    return ScaleLaw([h](double) { return h; }, [h](double t) { return 1.0 + h * t; },
                    ScaleLawForm::closed_form_constant_h, h);
  }

  /// Caller-supplied closed forms; H(0) must equal 1.
  static ScaleLaw closed_form(TimeFunction h, TimeFunction H) {
    if (!h || !H) throw ContractError("closed-form scale law needs both h and H");
    if (H(0.0) != 1.0) throw ContractError("scale law must satisfy H(0) = 1");
    return ScaleLaw(std::move(h), std::move(H), ScaleLawForm::closed_form_general, std::nullopt);
  }

  /// H by adaptive Simpson quadrature of h.
  static ScaleLaw quadrature(TimeFunction h, double abs_tol = 1e-10) {
    if (!h) throw ContractError("quadrature scale law needs h");
    auto H = [h, abs_tol](double t) { return t == 0.0 ? 1.0 : 1.0 + adaptive_simpson(h, 0.0, t, abs_tol); };
    return ScaleLaw(std::move(h), std::move(H), ScaleLawForm::numeric_quadrature, std::nullopt);
  }

  double h(double t) const { return h_(t); }
  double H(double t) const { return H_(t); }
  ScaleLawForm form() const noexcept { return form_; }
  std::optional<double> constant_rate() const noexcept { return rate_; }

  /// Throws HorizonError at the first grid time in [t0, t1] with H <= 0.
  void require_positive(double t0, double t1, std::size_t checks = 1000) const {
    if (rate_) {
      for (double t : {t0, t1}) {
        if (!(H(t) > 0.0)) throw HorizonError("scale law H(t) is not positive", t);
      }
      return;
    }
    for (std::size_t i = 0; i <= checks; ++i) {
      const double t = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(checks);
      if (!(H(t) > 0.0)) throw HorizonError("scale law H(t) is not positive", t);
    }
  }

 private:
  ScaleLaw(TimeFunction h, TimeFunction H, ScaleLawForm form, std::optional<double> rate)
      : h_(std::move(h)), H_(std::move(H)), form_(form), rate_(rate) {}

  TimeFunction h_;
  TimeFunction H_;
  ScaleLawForm form_;
  std::optional<double> rate_;
};

namespace detail {

inline void require_unit_level(const ManifoldSpec& manifold) {
  if (manifold.level() != 1.0) throw ContractError("transforms need the level set {F = 1}");
}

inline double positive_level_value(const ManifoldSpec& manifold, const Vector& x) {
  const double f = manifold.value(x);
  if (!(f > 0.0)) {
    throw DomainError("level function is not positive at " + format_point(x) + " (F = " + std::to_string(f) + ")",
                      to_std(x));
  }
  return f;
}

}  // namespace detail

/// x / F(x)^{1/q}; lands on {F = 1} by homogeneity.
inline Vector project_state(const Vector& x, const ManifoldSpec& manifold) {
  const double f = detail::positive_level_value(manifold, x);
  return x * std::pow(f, -1.0 / manifold.degree());
}

/// The normalization map g(x) = x F(x)^{-1/q} with analytic derivatives built
/// from those of F. With s = F^{-1/q}:
///   dg_m/dx_i = delta_mi s + x_m s_i
///   d2g_m/dx_i dx_j = delta_mi s_j + delta_mj s_i + x_m s_ij
inline SmoothMap normalization_map(const ManifoldSpec& manifold) {
  const std::size_t n = manifold.n();
  const double q = manifold.degree();
  struct Parts {
    double s;
    Vector ds;
    Matrix dds;
  };
  auto parts = [manifold, q](const Vector& x) {
    const double f = detail::positive_level_value(manifold, x);
    const Vector g = manifold.gradient(x);
    const Matrix H = manifold.hessian(x);
    const double s = std::pow(f, -1.0 / q);
    const double s1 = -(1.0 / q) * s / f;                           // -(1/q) F^{-1/q-1}
    const double s2 = (1.0 / q) * (1.0 / q + 1.0) * s / (f * f);    // (1/q)(1/q+1) F^{-1/q-2}
    return Parts{s, s1 * g, (s1 * H + s2 * g * g.transpose()).eval()};
  };
  return SmoothMap{
      n, n, [manifold](const Vector& x) { return project_state(x, manifold); },
      [parts](const Vector& x) -> Matrix {
        const Parts p = parts(x);
        Matrix J = x * p.ds.transpose();
        J.diagonal().array() += p.s;
        return J;
      },
      [parts, n](const Vector& x) {
        const Parts p = parts(x);
        std::vector<Matrix> out(n);
        for (std::size_t m = 0; m < n; ++m) {
          const auto mi = static_cast<Eigen::Index>(m);
          Matrix Hm = x[mi] * p.dds;
          Hm.row(mi) += p.ds.transpose();
          Hm.col(mi) += p.ds;
          out[m] = std::move(Hm);
        }
        return out;
      }};
}

/// SDE of the projected process y = x / F(x)^{1/q}, obtained from the generic
/// Ito change of variables. Pullback form: evaluators take the original x.
inline SdeSystem projected_sde(const SdeSystem& system, const ManifoldSpec& manifold) {
  detail::require_unit_level(manifold);
  detail::check_pair(manifold, system);
  return ito_transform(system, normalization_map(manifold));
}

/// On-manifold value of the dF generator, grad F . f + 1/2 trace(sigma sigma^T Hess F).
inline double generator_value(const SdeSystem& system, const ManifoldSpec& manifold, double t, const Vector& x) {
  return manifold.gradient(x).dot(system.drift(t, x)) + ito_correction(manifold, system, t, x);
}

/// Extracts the law of F(y_t) for the invariantized process.
///
/// The system must be tangent to M (drift and diffusion, within `tol`).
/// Then dF(y_t) = F(y)^{1-2/q} c(t, x) dt with c the on-manifold generator
/// value, so F(y_t) is non-random iff c does not depend on x. Independence is
/// decided by the spread max_x c - min_x c over the sample at each time.
///
/// For q = 2 (every shipped model) the law is h = c; autonomous systems get
/// the constant closed form. For q != 2, H = (1 + (2/q) int c)^{q/2}.
inline ScaleLaw scale_law_from_correction(const SdeSystem& system, const ManifoldSpec& manifold,
                                          const ManifoldSampler& sampler, double tol,
                                          std::optional<std::vector<double>> times = std::nullopt) {
  detail::require_unit_level(manifold);
  detail::check_pair(manifold, system);
  const std::vector<double> grid = times ? *times : default_times(system);
  const std::vector<Vector> points = sampler.sample(manifold);

  const auto drift = check_drift_tangency(system, manifold, points, grid, tol);
  if (!passes(drift.verdict)) {
    throw NotInvariantizableError("drift is not tangent to the manifold (max residual " +
                                      std::to_string(drift.stats.max) + ")",
                                  drift.stats.max);
  }
  const auto noise = check_diffusion_tangency(system, manifold, points, grid, tol);
  if (!passes(noise.verdict)) {
    throw NotInvariantizableError("diffusion is not tangent to the manifold (max residual " +
                                      std::to_string(noise.stats.max) + ")",
                                  noise.stats.max);
  }

  double spread = 0.0;
  double rate_at_zero = 0.0;
  for (double t : grid) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0.0;
    for (const Vector& x : points) {
      const double c = generator_value(system, manifold, t, x);
      lo = std::min(lo, c);
      hi = std::max(hi, c);
      sum += c;
    }
    spread = std::max(spread, hi - lo);
    if (t == grid.front()) rate_at_zero = sum / static_cast<double>(points.size());
  }
  if (spread > tol) {
    throw NotInvariantizableError("not invariantizable as stated: dF(y_t) depends on the state (spread " +
                                      std::to_string(spread) + ")",
                                  spread);
  }

  const int q = manifold.degree();
  if (system.autonomous()) {
    const double c = rate_at_zero;
    if (q == 2) return ScaleLaw::constant(c);
    const double p = 2.0 / q;
    return ScaleLaw::closed_form(
        [c, p](double t) { return c * std::pow(1.0 + p * c * t, 1.0 / p - 1.0); },
        [c, p](double t) { return t == 0.0 ? 1.0 : std::pow(1.0 + p * c * t, 1.0 / p); });
  }

  const Vector anchor = points.front();
  TimeFunction c = [system, manifold, anchor](double t) { return generator_value(system, manifold, t, anchor); };
  if (q == 2) return ScaleLaw::quadrature(c);
  const double p = 2.0 / q;
  TimeFunction H = [c, p](double t) {
    return t == 0.0 ? 1.0 : std::pow(1.0 + p * adaptive_simpson(c, 0.0, t), 1.0 / p);
  };
  return ScaleLaw::closed_form([c, H, p](double t) { return c(t) * std::pow(H(t), 1.0 - p); }, H);
}

/// dx = [-(1/q)(h/H) x + H^{-1/q} f(t, x)] dt + H^{-1/q} sigma(t, x) dW.
///
/// When `horizon` is given, H > 0 is verified on [0, horizon] up front;
/// otherwise a non-positive H surfaces as HorizonError at evaluation time.
inline SdeSystem invariantize(const SdeSystem& system, const ManifoldSpec& manifold, const ScaleLaw& law,
                              std::optional<double> horizon = std::nullopt) {
  detail::require_unit_level(manifold);
  detail::check_pair(manifold, system);
  if (horizon) law.require_positive(0.0, *horizon);
  const double q = manifold.degree();
  auto scale = [law](double t) {
    const double H = law.H(t);
    if (!(H > 0.0)) throw HorizonError("scale law H(t) is not positive", t);
    return H;
  };
  const bool autonomous = system.autonomous() && law.constant_rate() && *law.constant_rate() == 0.0;
  return SdeSystem(
      system.n(), system.k(),
      [system, law, scale, q](double t, const Vector& x) -> Vector {
        const double H = scale(t);
        return -(law.h(t) / (q * H)) * x + std::pow(H, -1.0 / q) * system.drift(t, x);
      },
      [system, scale, q](double t, const Vector& x) -> Matrix {
        return std::pow(scale(t), -1.0 / q) * system.diffusion(t, x);
      },
      autonomous);
}

/// The invariantized process in its defining form: y is driven by the
/// coefficients evaluated at the normalized state x = y / F(y)^{1/q}.
class CoupledInvariantizedSystem {
 public:
  CoupledInvariantizedSystem(SdeSystem base, ManifoldSpec manifold)
      : base_(std::move(base)), manifold_(std::move(manifold)) {
    detail::require_unit_level(manifold_);
    detail::check_pair(manifold_, base_);
  }

  const SdeSystem& base() const noexcept { return base_; }
  const ManifoldSpec& manifold() const noexcept { return manifold_; }

  /// x = y / F(y)^{1/q}; DomainError when F(y) <= 0.
  Vector normalize(const Vector& y) const { return project_state(y, manifold_); }

  /// The y-equation as an ordinary SdeSystem in y.
  SdeSystem y_system() const {
    auto self = std::make_shared<const CoupledInvariantizedSystem>(*this);
    return SdeSystem(
        base_.n(), base_.k(),
        [self](double t, const Vector& y) { return self->base_.drift(t, self->normalize(y)); },
        [self](double t, const Vector& y) { return self->base_.diffusion(t, self->normalize(y)); },
        base_.autonomous());
  }

 private:
  SdeSystem base_;
  ManifoldSpec manifold_;
};

inline CoupledInvariantizedSystem coupled_step_representation(const SdeSystem& system, const ManifoldSpec& manifold) {
  return CoupledInvariantizedSystem(system, manifold);
}

}  // namespace invar
