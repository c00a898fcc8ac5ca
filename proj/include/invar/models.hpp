#pragma once

// Built-in models: the Ito Kubo oscillator and the Landau-Lifshitz family,
// together with their closed-form invariantized versions.

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "invar/core.hpp"

namespace invar::models {

using Vector3 = Eigen::Vector3d;

/// Right-handed cross product u ^ v.
inline Vector3 cross(const Vector3& u, const Vector3& v) {
  return {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
}

/// Antisymmetric planar generator J_k = [[0, -k], [k, 0]].
inline Matrix rotation_generator(double k) {
  Matrix J(2, 2);
  J << 0.0, -k, k, 0.0;
  return J;
}

struct KuboParams {
  double a = 2.0;
  double sigma = 0.5;

  void validate() const {
    if (!std::isfinite(a) || !std::isfinite(sigma)) throw ContractError("Kubo parameters must be finite");
  }
};

/// The circle {x1^2 + x2^2 = 1}.
inline ManifoldSpec circle() { return ManifoldSpec::sphere(2); }

/// dX = J_a X dt + J_sigma X dW, scalar noise.
inline SdeSystem kubo_system(const KuboParams& p) {
  p.validate();
  return SdeSystem(
      2, 1, [a = p.a](double, const Vector& x) { return Vector{{-a * x[1], a * x[0]}}; },
      [s = p.sigma](double, const Vector& x) {
        Matrix m(2, 1);
        m << -s * x[1], s * x[0];
        return m;
      },
      true);
}

/// The Kubo system after invariantization on the circle, written out with
/// H(t) = sigma^2 t + 1: diagonal -sigma^2/(2H), off-diagonals -+a/sqrt(H),
/// noise J_sigma x / sqrt(H).
inline SdeSystem kubo_invariantized_closed_form(const KuboParams& p) {
  p.validate();
  auto scale = [s2 = p.sigma * p.sigma](double t) {
    const double H = s2 * t + 1.0;
    if (!(H > 0.0)) throw HorizonError("Kubo scale law H(t) = sigma^2 t + 1 is not positive", t);
    return H;
  };
  return SdeSystem(
      2, 1,
      [a = p.a, s2 = p.sigma * p.sigma, scale](double t, const Vector& x) {
        const double H = scale(t);
        const double diag = -s2 / (2.0 * H);
        const double off = a / std::sqrt(H);
        return Vector{{diag * x[0] - off * x[1], off * x[0] + diag * x[1]}};
      },
      [s = p.sigma, scale](double t, const Vector& x) {
        const double c = s / std::sqrt(scale(t));
        Matrix m(2, 1);
        m << -c * x[1], c * x[0];
        return m;
      },
      false);
}

struct LLParams {
  Vector3 b{0.0, 0.0, 1.0};
  double alpha = 0.5;
  double epsilon = 0.1;

  void validate() const {
    if (!b.allFinite() || !std::isfinite(alpha) || !std::isfinite(epsilon)) {
      throw ContractError("Landau-Lifshitz parameters must be finite");
    }
    if (alpha < 0.0) throw ContractError("damping alpha must be non-negative");
    if (epsilon < 0.0) throw ContractError("noise amplitude epsilon must be non-negative");
  }

  /// Constant rate 2 eps^2 (alpha^2 + 1) of F(y_t) on the sphere.
  double scale_rate() const { return 2.0 * epsilon * epsilon * (alpha * alpha + 1.0); }
};

/// The unit sphere of R^3.
inline ManifoldSpec sphere() { return ManifoldSpec::sphere(3); }

/// -mu ^ b - alpha mu ^ (mu ^ b)
inline Vector3 ll_drift(const Vector3& b, double alpha, const Vector3& mu) {
  const Vector3 mb = cross(mu, b);
  return -mb - alpha * cross(mu, mb);
}

/// The matrix of v -> -x ^ v - alpha x ^ (x ^ v), entry by entry.
inline Matrix ll_sigma_matrix(double alpha, const Vector3& x) {
  const double x1 = x[0], x2 = x[1], x3 = x[2];
  Matrix m(3, 3);
  m << alpha * (x3 * x3 + x2 * x2), x3 - alpha * x1 * x2, -x2 - alpha * x3 * x1,  //
      -x3 - alpha * x1 * x2, alpha * (x3 * x3 + x1 * x1), x1 - alpha * x3 * x2,    //
      x2 - alpha * x1 * x3, -x1 - alpha * x3 * x2, alpha * (x2 * x2 + x1 * x1);
  return m;
}

inline Matrix ll_sigma_matrix(const LLParams& p, const Vector3& x) { return ll_sigma_matrix(p.alpha, x); }

inline SdeSystem ll_deterministic(const LLParams& p) {
  p.validate();
  return SdeSystem(
      3, 0, [b = p.b, alpha = p.alpha](double, const Vector& x) -> Vector { return ll_drift(b, alpha, x); }, {},
      true);
}

/// LL with its effective field perturbed by eps * dW (three Brownian drivers).
inline SdeSystem ll_stochastic(const LLParams& p) {
  p.validate();
  return SdeSystem(
      3, 3, [b = p.b, alpha = p.alpha](double, const Vector& x) -> Vector { return ll_drift(b, alpha, x); },
      [alpha = p.alpha, eps = p.epsilon](double, const Vector& x) -> Matrix {
        return eps * ll_sigma_matrix(alpha, x);
      },
      true);
}

namespace detail {

inline double ll_scale(double rate, double t) {
  const double H = rate * t + 1.0;
  if (!(H > 0.0)) throw HorizonError("LL scale law H(t) = 2 eps^2 (alpha^2 + 1) t + 1 is not positive", t);
  return H;
}

/// -(1/2)(H'/H) x + H^{-1/2} f(x)
inline Vector ll_invariantized_drift(const LLParams& p, double t, const Vector3& x) {
  const double rate = p.scale_rate();
  const double H = ll_scale(rate, t);
  return -0.5 * (rate / H) * x + ll_drift(p.b, p.alpha, x) / std::sqrt(H);
}

}  // namespace detail

/// The invariantized stochastic LL equation with H(t) = 2 eps^2 (alpha^2 + 1) t + 1.
inline SdeSystem ll_invariantized(const LLParams& p) {
  p.validate();
  return SdeSystem(
      3, 3, [p](double t, const Vector& x) { return detail::ll_invariantized_drift(p, t, x); },
      [p](double t, const Vector& x) -> Matrix {
        const double H = detail::ll_scale(p.scale_rate(), t);
        return (p.epsilon / std::sqrt(H)) * ll_sigma_matrix(p.alpha, x);
      },
      false);
}

/// LL drift with scalar noise acting along the field b, eps sigma(x) b dW.
/// Tangent to the sphere, but trace(sigma sigma^T) depends on x.
inline SdeSystem ll_field_noise(const LLParams& p) {
  p.validate();
  return SdeSystem(
      3, 1, [p](double, const Vector& x) { return Vector(ll_drift(p.b, p.alpha, x)); },
      [p](double, const Vector& x) -> Matrix { return Matrix(Vector3(p.epsilon * (ll_sigma_matrix(p.alpha, x) * p.b))); },
      true);
}

/// Invariantized LL drift with scalar noise acting along the field b:
/// diffusion column H^{-1/2} eps sigma(x) b.
inline SdeSystem ll_modified(const LLParams& p) {
  p.validate();
  return SdeSystem(
      3, 1, [p](double t, const Vector& x) { return detail::ll_invariantized_drift(p, t, x); },
      [p](double t, const Vector& x) -> Matrix {
        const double H = detail::ll_scale(p.scale_rate(), t);
        const Vector3 col = (p.epsilon / std::sqrt(H)) * (ll_sigma_matrix(p.alpha, x) * p.b);
        return Matrix(col);
      },
      false);
}

/// Undamped precession d mu/dt = -mu ^ b.
inline SdeSystem larmor_system(const Vector3& b) {
  return ll_deterministic(LLParams{b, 0.0, 0.0});
}

}  // namespace invar::models
