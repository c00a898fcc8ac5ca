#pragma once

// Core data model: state vectors, SDE systems dX = f(t,X)dt + sigma(t,X)dW,
// level-set manifolds {F = level}, and the Ito-calculus primitives the rest
// of the library is built on.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "invar/errors.hpp"

namespace invar {

using Vector = Eigen::VectorXd;
/// Dense row-major storage; every matrix in this library is at most ~16x16.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string format_point(const Vector& x) {
  std::string s = "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(x[i]);
  }
  return s + ")";
}

/// A point of R^n whose components are all finite.
class StateVector {
 public:
  explicit StateVector(Vector values) : values_(std::move(values)) {
    if (!values_.allFinite()) {
      throw ContractError("state vector has non-finite components " + format_point(values_));
    }
  }
  StateVector(std::initializer_list<double> values)
      : StateVector(to_vector(std::vector<double>(values))) {}

  const Vector& values() const noexcept { return values_; }
  operator const Vector&() const noexcept { return values_; }  // NOLINT(google-explicit-constructor)
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }

 private:
  Vector values_;
};

using DriftFn = std::function<Vector(double, const Vector&)>;
using DiffusionFn = std::function<Matrix(double, const Vector&)>;

/// Coefficients of an Ito SDE with n state components and k Brownian drivers.
///
/// `domain_dim` is the length of the coordinate vector the evaluators take.
/// Passing it marks a pullback system (as produced by `ito_transform`): its
/// evaluators take the coordinates of the original process, even when the
/// dimensions happen to agree.
class SdeSystem {
 public:
  SdeSystem(std::size_t n, std::size_t k, DriftFn drift, DiffusionFn diffusion, bool autonomous,
            std::size_t domain_dim = 0)
      : n_(n),
        k_(k),
        domain_dim_(domain_dim == 0 ? n : domain_dim),
        pullback_(domain_dim != 0),
        autonomous_(autonomous),
        drift_(std::move(drift)),
        diffusion_(std::move(diffusion)) {
    if (n_ == 0) throw ContractError("SdeSystem needs a positive state dimension");
    if (!drift_) throw ContractError("SdeSystem needs a drift evaluator");
    if (!diffusion_ && k_ > 0) throw ContractError("SdeSystem with k > 0 needs a diffusion evaluator");
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t domain_dim() const noexcept { return domain_dim_; }
  bool autonomous() const noexcept { return autonomous_; }
  bool is_pullback() const noexcept { return pullback_; }

  Vector drift(double t, const Vector& x) const {
    check_input(x);
    Vector f = drift_(t, x);
    if (static_cast<std::size_t>(f.size()) != n_) {
      throw ContractError("drift returned " + std::to_string(f.size()) + " components, expected " +
                          std::to_string(n_));
    }
    return f;
  }

  Matrix diffusion(double t, const Vector& x) const {
    check_input(x);
    if (k_ == 0) return Matrix(static_cast<Eigen::Index>(n_), 0);
    Matrix s = diffusion_(t, x);
    if (static_cast<std::size_t>(s.rows()) != n_ || static_cast<std::size_t>(s.cols()) != k_) {
      throw ContractError("diffusion returned " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                          ", expected " + std::to_string(n_) + "x" + std::to_string(k_));
    }
    return s;
  }

  /// dX = 0 with k noise channels.
  static SdeSystem zero(std::size_t n, std::size_t k = 1) {
    const auto rows = static_cast<Eigen::Index>(n);
    const auto cols = static_cast<Eigen::Index>(k);
    return SdeSystem(
        n, k, [rows](double, const Vector&) { return Vector::Zero(rows).eval(); },
        [rows, cols](double, const Vector&) { return Matrix::Zero(rows, cols).eval(); }, true);
  }

 private:
  void check_input(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != domain_dim_) {
      throw ContractError("system evaluated at a point of dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(domain_dim_));
    }
  }

  std::size_t n_;
  std::size_t k_;
  std::size_t domain_dim_;
  bool pullback_;
  bool autonomous_;
  DriftFn drift_;
  DiffusionFn diffusion_;
};

using ScalarField = std::function<double(const Vector&)>;
using GradientFn = std::function<Vector(const Vector&)>;
using HessianFn = std::function<Matrix(const Vector&)>;

namespace detail {

inline double checked_eval(const ScalarField& F, const Vector& x) {
  const double v = F(x);
  if (!std::isfinite(v)) {
    throw EvaluationError("scalar field is not finite at " + format_point(x), to_std(x));
  }
  return v;
}

inline double default_grad_step(double xi) {
  return std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(xi));
}

inline double default_hess_step(double xi) {
  return std::pow(std::numeric_limits<double>::epsilon(), 0.25) * std::max(1.0, std::abs(xi));
}

template <typename StepFn>
Vector grad_fd_impl(const ScalarField& F, const Vector& x, StepFn step_for) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step_for(x[i]);
    probe[i] = x[i] + h;
    const double fp = checked_eval(F, probe);
    probe[i] = x[i] - h;
    const double fm = checked_eval(F, probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

template <typename StepFn>
Matrix hess_fd_impl(const ScalarField& F, const Vector& x, StepFn step_for) {
  const Eigen::Index n = x.size();
  Matrix H(n, n);
  Vector probe = x;
  const double f0 = checked_eval(F, x);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double hi = step_for(x[i]);
    probe[i] = x[i] + hi;
    const double fp = checked_eval(F, probe);
    probe[i] = x[i] - hi;
    const double fm = checked_eval(F, probe);
    probe[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double hj = step_for(x[j]);
      auto at = [&](double si, double sj) {
        probe[i] = x[i] + si * hi;
        probe[j] = x[j] + sj * hj;
        const double v = checked_eval(F, probe);
        probe[i] = x[i];
        probe[j] = x[j];
        return v;
      };
      H(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * hj);
      H(j, i) = H(i, j);
    }
  }
  return H;
}

}  // namespace detail

/// Central-difference gradient with a uniform step.
inline Vector grad_fd(const ScalarField& F, const Vector& x, double step) {
  if (!(step > 0.0)) throw ContractError("grad_fd step must be positive");
  return detail::grad_fd_impl(F, x, [step](double) { return step; });
}

/// Central-difference gradient with step cbrt(eps) * max(1, |x_i|) per coordinate.
inline Vector grad_fd(const ScalarField& F, const Vector& x) {
  return detail::grad_fd_impl(F, x, detail::default_grad_step);
}

inline Matrix hess_fd(const ScalarField& F, const Vector& x, double step) {
  if (!(step > 0.0)) throw ContractError("hess_fd step must be positive");
  return detail::hess_fd_impl(F, x, [step](double) { return step; });
}

/// Central-difference Hessian with step eps^(1/4) * max(1, |x_i|) per coordinate.
inline Matrix hess_fd(const ScalarField& F, const Vector& x) {
  return detail::hess_fd_impl(F, x, detail::default_hess_step);
}

/// The level set {x : F(x) = level} of a function F homogeneous of degree q.
///
/// Analytic gradient and Hessian evaluators are used when supplied; otherwise
/// central finite differences stand in. Hessians are always symmetrized.
class ManifoldSpec {
 public:
  ManifoldSpec(std::size_t n, ScalarField F, int degree, double level = 1.0, GradientFn gradient = {},
               HessianFn hessian = {})
      : n_(n),
        F_(std::move(F)),
        degree_(degree),
        level_(level),
        gradient_(std::move(gradient)),
        hessian_(std::move(hessian)) {
    if (n_ == 0) throw ContractError("manifold needs a positive ambient dimension");
    if (!F_) throw ContractError("manifold needs a level function");
    if (degree_ <= 0) throw ContractError("homogeneity degree must be a positive integer");
    if (!std::isfinite(level_)) throw ContractError("manifold level must be finite");
  }

  /// {sum x_i^2 = 1}, degree 2, analytic derivatives.
  static ManifoldSpec sphere(std::size_t n) {
    const auto dim = static_cast<Eigen::Index>(n);
    return ManifoldSpec(
        n, [](const Vector& x) { return x.squaredNorm(); }, 2, 1.0, [](const Vector& x) { return (2.0 * x).eval(); },
        [dim](const Vector&) { return (2.0 * Matrix::Identity(dim, dim)).eval(); });
  }

  ManifoldSpec with_level(double level) const {
    return ManifoldSpec(n_, F_, degree_, level, gradient_, hessian_);
  }

  /// Same F without the analytic derivative evaluators.
  ManifoldSpec finite_difference_only() const { return ManifoldSpec(n_, F_, degree_, level_); }

  std::size_t n() const noexcept { return n_; }
  int degree() const noexcept { return degree_; }
  double level() const noexcept { return level_; }
  bool has_analytic_gradient() const noexcept { return static_cast<bool>(gradient_); }
  bool has_analytic_hessian() const noexcept { return static_cast<bool>(hessian_); }
  const ScalarField& field() const noexcept { return F_; }

  double value(const Vector& x) const {
    check(x);
    return detail::checked_eval(F_, x);
  }

  Vector gradient(const Vector& x) const {
    check(x);
    if (gradient_) return gradient_(x);
    return grad_fd(F_, x);
  }

  Matrix hessian(const Vector& x) const {
    check(x);
    Matrix H = hessian_ ? hessian_(x) : hess_fd(F_, x);
    return (0.5 * (H + H.transpose())).eval();
  }

 private:
  void check(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != n_) {
      throw ContractError("manifold of dimension " + std::to_string(n_) + " evaluated at a point of dimension " +
                          std::to_string(x.size()));
    }
  }

  std::size_t n_;
  ScalarField F_;
  int degree_;
  double level_;
  GradientFn gradient_;
  HessianFn hessian_;
};

namespace detail {

inline void check_pair(const ManifoldSpec& manifold, const SdeSystem& system) {
  if (system.is_pullback()) throw ContractError("manifold checks need a system in its own coordinates");
  if (manifold.n() != system.n()) {
    throw ContractError("manifold dimension " + std::to_string(manifold.n()) + " does not match system dimension " +
                        std::to_string(system.n()));
  }
}

}  // namespace detail

/// Ito second-order term of dF(X_t): 1/2 * trace(sigma sigma^T Hess F).
inline double ito_correction(const ManifoldSpec& manifold, const SdeSystem& system, double t, const Vector& x) {
  detail::check_pair(manifold, system);
  const Matrix sigma = system.diffusion(t, x);
  if (sigma.cols() == 0) return 0.0;
  const Matrix a = sigma * sigma.transpose();
  return 0.5 * manifold.hessian(x).cwiseProduct(a).sum();
}

/// A twice-differentiable map g: R^in -> R^out with its Jacobian (out x in)
/// and one in x in Hessian per output component.
struct SmoothMap {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::function<Vector(const Vector&)> value;
  std::function<Matrix(const Vector&)> jacobian;
  std::function<std::vector<Matrix>(const Vector&)> hessians;
};

inline SmoothMap identity_map(std::size_t n) {
  const auto dim = static_cast<Eigen::Index>(n);
  return SmoothMap{n, n, [](const Vector& x) { return x; },
                   [dim](const Vector&) { return Matrix::Identity(dim, dim).eval(); },
                   [n, dim](const Vector&) { return std::vector<Matrix>(n, Matrix::Zero(dim, dim)); }};
}

/// The level function F of a manifold viewed as a scalar map.
inline SmoothMap scalar_map(const ManifoldSpec& manifold) {
  return SmoothMap{manifold.n(), 1,
                   [manifold](const Vector& x) { return Vector::Constant(1, manifold.value(x)).eval(); },
                   [manifold](const Vector& x) { return Matrix(manifold.gradient(x).transpose()); },
                   [manifold](const Vector& x) { return std::vector<Matrix>{manifold.hessian(x)}; }};
}

/// The SDE satisfied by z = g(X) under the multi-dimensional Ito formula:
///
///   dz_m = [sum_i dg_m/dx_i f_i + 1/2 sum_ij d2g_m/dx_i dx_j (sigma sigma^T)_ij] dt
///          + sum_i dg_m/dx_i sigma_il dW_l
///
/// g need not be invertible, so the result is in pullback form: its
/// evaluators take the original coordinates x (domain_dim = system.n()).
inline SdeSystem ito_transform(const SdeSystem& system, const SmoothMap& g) {
  if (system.is_pullback()) throw ContractError("ito_transform needs a system in its own coordinates");
  if (g.in_dim != system.n()) {
    throw ContractError("map input dimension " + std::to_string(g.in_dim) + " does not match system dimension " +
                        std::to_string(system.n()));
  }
  if (g.out_dim == 0 || !g.jacobian || !g.hessians) throw ContractError("ito_transform needs a complete SmoothMap");

  auto jacobian = [g](const Vector& x) {
    Matrix J = g.jacobian(x);
    if (static_cast<std::size_t>(J.rows()) != g.out_dim || static_cast<std::size_t>(J.cols()) != g.in_dim) {
      throw ContractError("map Jacobian has the wrong shape");
    }
    return J;
  };

  auto drift = [system, g, jacobian](double t, const Vector& x) {
    const Matrix J = jacobian(x);
    Vector out = J * system.drift(t, x);
    if (system.k() == 0) return out;
    const Matrix sigma = system.diffusion(t, x);
    const Matrix a = sigma * sigma.transpose();
    const std::vector<Matrix> hess = g.hessians(x);
    if (hess.size() != g.out_dim) throw ContractError("map returned the wrong number of Hessians");
    for (std::size_t m = 0; m < g.out_dim; ++m) {
      const Matrix sym = 0.5 * (hess[m] + hess[m].transpose());
      out[static_cast<Eigen::Index>(m)] += 0.5 * sym.cwiseProduct(a).sum();
    }
    return out;
  };

  auto diffusion = [system, jacobian](double t, const Vector& x) -> Matrix {
    return jacobian(x) * system.diffusion(t, x);
  };

  return SdeSystem(g.out_dim, system.k(), drift, diffusion, system.autonomous(), system.n());
}

}  // namespace invar
