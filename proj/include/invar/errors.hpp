#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace invar {

/// Root of every error thrown by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

/// Violated pre-condition: dimension mismatch, empty sample set, bad argument.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& message) : Error("contract", message) {}
};

/// A scalar field or evaluator returned a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& message, std::vector<double> point)
      : Error("evaluation", message), point_(std::move(point)) {}

  const std::vector<double>& point() const noexcept { return point_; }

 private:
  std::vector<double> point_;
};

/// The level function is not positive where a projection needs it.
class DomainError : public Error {
 public:
  DomainError(const std::string& message, std::vector<double> point)
      : Error("domain", message), point_(std::move(point)) {}

  const std::vector<double>& point() const noexcept { return point_; }

 private:
  std::vector<double> point_;
};

/// A scale law reached H(t) <= 0.
class HorizonError : public Error {
 public:
  HorizonError(const std::string& message, double t) : Error("horizon", message), t_(t) {}

  double time() const noexcept { return t_; }

 private:
  double t_;
};

/// dF(y_t) is not a deterministic function of time for this system.
class NotInvariantizableError : public Error {
 public:
  NotInvariantizableError(const std::string& message, double spread)
      : Error("not_invariantizable", message), spread_(spread) {}

  /// max - min of the on-manifold generator value, or the failing tangency residual.
  double spread() const noexcept { return spread_; }

 private:
  double spread_;
};

/// Statistics could not be formed (e.g. every path aborted).
class AnalysisError : public Error {
 public:
  explicit AnalysisError(const std::string& message) : Error("analysis", message) {}
};

class DegenerateFitError : public Error {
 public:
  explicit DegenerateFitError(const std::string& message) : Error("degenerate_fit", message) {}
};

/// Raised by a single integration path when the state stops being finite.
class PathAborted : public Error {
 public:
  PathAborted(const std::string& message, std::size_t step, double t)
      : Error("path_aborted", message), step_(step), t_(t) {}

  std::size_t step() const noexcept { return step_; }
  double time() const noexcept { return t_; }

 private:
  std::size_t step_;
  double t_;
};

}  // namespace invar
