#pragma once

// Euler-Maruyama integration: single paths, seeded ensembles, and the
// coupled (y, x) representation of an invariantized process.
//
// Reproducibility contract: path p of an ensemble draws its noise from a
// generator seeded with derive_seed(master_seed, p), and writes only its own
// slice of the output. Results are therefore bit-identical for any worker
// count or scheduling order (within one build).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "invar/core.hpp"
#include "invar/transforms.hpp"

namespace invar {

/// Uniform grid t0 < t1 split into `steps` intervals.
class TimeGrid {
 public:
  TimeGrid(double t0, double t1, std::size_t steps) : t0_(t0), t1_(t1), steps_(steps) {
    if (!std::isfinite(t0_) || !std::isfinite(t1_) || !(t1_ > t0_)) throw ContractError("time grid needs t1 > t0");
    if (steps_ == 0) throw ContractError("time grid needs at least one step");
  }

  double t0() const noexcept { return t0_; }
  double t1() const noexcept { return t1_; }
  std::size_t steps() const noexcept { return steps_; }
  double dt() const noexcept { return (t1_ - t0_) / static_cast<double>(steps_); }
  double time(std::size_t i) const noexcept {
    return i == steps_ ? t1_ : t0_ + (t1_ - t0_) * static_cast<double>(i) / static_cast<double>(steps_);
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  double t0_;
  double t1_;
  std::size_t steps_;
};

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed of path `index` in an ensemble with `master` seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(master ^ mix64(index + 1));
}

/// Brownian increments: row i holds the k-vector W(t_{i+1}) - W(t_i) ~ N(0, dt I).
class NoisePath {
 public:
  NoisePath(double dt, Matrix increments, std::uint64_t seed)
      : dt_(dt), increments_(std::move(increments)), seed_(seed) {
    if (!(dt_ > 0.0)) throw ContractError("noise path needs dt > 0");
  }

  static NoisePath generate(std::uint64_t seed, std::size_t steps, std::size_t k, double dt) {
    if (!(dt > 0.0)) throw ContractError("noise path needs dt > 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = std::sqrt(dt);
    Matrix inc(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < inc.rows(); ++i) {
      for (Eigen::Index l = 0; l < inc.cols(); ++l) inc(i, l) = scale * normal(rng);
    }
    return NoisePath(dt, std::move(inc), seed);
  }

  /// The same Brownian path sampled every `factor` steps.
  NoisePath coarsen(std::size_t factor) const {
    if (factor == 0 || steps() % factor != 0) throw ContractError("coarsening factor must divide the step count");
    const auto f = static_cast<Eigen::Index>(factor);
    Matrix out = Matrix::Zero(increments_.rows() / f, increments_.cols());
    for (Eigen::Index i = 0; i < increments_.rows(); ++i) out.row(i / f) += increments_.row(i);
    return NoisePath(dt_ * static_cast<double>(factor), std::move(out), seed_);
  }

  double dt() const noexcept { return dt_; }
  std::size_t steps() const noexcept { return static_cast<std::size_t>(increments_.rows()); }
  std::size_t k() const noexcept { return static_cast<std::size_t>(increments_.cols()); }
  std::uint64_t seed() const noexcept { return seed_; }
  const Matrix& increments() const noexcept { return increments_; }

 private:
  double dt_;
  Matrix increments_;
  std::uint64_t seed_;
};

/// x + f(t, x) dt + sigma(t, x) dW. Throws PathAborted on a non-finite result.
inline Vector em_step(const SdeSystem& system, double t, const Vector& x, const Vector& dW, double dt) {
  if (static_cast<std::size_t>(dW.size()) != system.k()) {
    throw ContractError("noise increment has " + std::to_string(dW.size()) + " components, expected " +
                        std::to_string(system.k()));
  }
  Vector next = x + dt * system.drift(t, x);
  if (system.k() > 0) next += system.diffusion(t, x) * dW;
  if (!next.allFinite()) throw PathAborted("state became non-finite at t = " + std::to_string(t), 0, t);
  return next;
}

struct AbortRecord {
  std::size_t path = 0;
  std::size_t step = 0;
  double time = 0.0;
  std::string reason;
};

namespace detail {

inline void check_noise(const SdeSystem& system, const TimeGrid& grid, const NoisePath& noise) {
  if (std::abs(noise.dt() - grid.dt()) > 1e-12 * grid.dt()) {
    throw ContractError("noise dt " + std::to_string(noise.dt()) + " does not match grid dt " +
                        std::to_string(grid.dt()));
  }
  if (noise.steps() < grid.steps()) throw ContractError("noise path is shorter than the time grid");
  if (noise.k() != system.k()) throw ContractError("noise path has the wrong number of channels");
}

/// Fills out.row(i) with the state at grid.time(i). On abort the remaining
/// rows are NaN and the abort is returned instead of thrown.
inline std::optional<AbortRecord> integrate(const SdeSystem& system, const Vector& x0, const TimeGrid& grid,
                                            const NoisePath& noise, Eigen::Ref<Matrix> out) {
  const double dt = grid.dt();
  Vector x = x0;
  out.row(0) = x0.transpose();
  Vector dW(static_cast<Eigen::Index>(system.k()));
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double t = grid.time(i);
    const auto row = static_cast<Eigen::Index>(i);
    try {
      dW = noise.increments().row(row).transpose();
      x = em_step(system, t, x, dW, dt);
    } catch (const PathAborted& e) {
      out.bottomRows(out.rows() - row - 1).setConstant(std::numeric_limits<double>::quiet_NaN());
      return AbortRecord{0, i, t, e.what()};
    } catch (const DomainError& e) {
      out.bottomRows(out.rows() - row - 1).setConstant(std::numeric_limits<double>::quiet_NaN());
      return AbortRecord{0, i, t, e.what()};
    } catch (const EvaluationError& e) {
      out.bottomRows(out.rows() - row - 1).setConstant(std::numeric_limits<double>::quiet_NaN());
      return AbortRecord{0, i, t, e.what()};
    }
    out.row(row + 1) = x.transpose();
  }
  return std::nullopt;
}

inline void check_start(const SdeSystem& system, const Vector& x0) {
  if (static_cast<std::size_t>(x0.size()) != system.n()) {
    throw ContractError("initial state has dimension " + std::to_string(x0.size()) + ", system has " +
                        std::to_string(system.n()));
  }
  if (!x0.allFinite()) throw ContractError("initial state is not finite");
}

/// Runs body(p) for p in [0, count) on `workers` threads.
template <typename Body>
void parallel_for(std::size_t count, std::size_t workers, Body body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t p = 0; p < count; ++p) body(p);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t p = next++; p < count; p = next++) {
        try {
          body(p);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// (steps + 1) x n trajectory including x0. Throws PathAborted with the step index.
inline Matrix simulate_path(const SdeSystem& system, const Vector& x0, const TimeGrid& grid, const NoisePath& noise) {
  detail::check_start(system, x0);
  detail::check_noise(system, grid, noise);
  Matrix out(static_cast<Eigen::Index>(grid.steps() + 1), static_cast<Eigen::Index>(system.n()));
  if (auto abort = detail::integrate(system, x0, grid, noise, out)) {
    throw PathAborted(abort->reason, abort->step, abort->time);
  }
  return out;
}

/// P paths x (steps + 1) times x n components, stored path-major.
struct TrajectoryEnsemble {
  TimeGrid grid{0.0, 1.0, 1};
  std::size_t n = 0;
  std::size_t paths = 0;
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> path_seeds;
  std::vector<double> data;
  std::vector<AbortRecord> aborted_paths;

  std::size_t points() const noexcept { return grid.steps() + 1; }

  Eigen::Map<const Matrix> path(std::size_t p) const {
    return {data.data() + p * points() * n, static_cast<Eigen::Index>(points()), static_cast<Eigen::Index>(n)};
  }
  Eigen::Map<Matrix> path(std::size_t p) {
    return {data.data() + p * points() * n, static_cast<Eigen::Index>(points()), static_cast<Eigen::Index>(n)};
  }

  bool is_aborted(std::size_t p) const {
    return std::any_of(aborted_paths.begin(), aborted_paths.end(), [p](const AbortRecord& a) { return a.path == p; });
  }
};

namespace detail {

inline TrajectoryEnsemble allocate(const TimeGrid& grid, std::size_t n, std::size_t P, std::uint64_t master_seed) {
  if (P == 0) throw ContractError("ensemble needs at least one path");
  TrajectoryEnsemble e;
  e.grid = grid;
  e.n = n;
  e.paths = P;
  e.master_seed = master_seed;
  e.path_seeds.resize(P);
  for (std::size_t p = 0; p < P; ++p) e.path_seeds[p] = derive_seed(master_seed, p);
  e.data.assign(P * (grid.steps() + 1) * n, 0.0);
  return e;
}

inline void collect_aborts(TrajectoryEnsemble& e, std::vector<std::optional<AbortRecord>>& aborts) {
  for (std::size_t p = 0; p < aborts.size(); ++p) {
    if (aborts[p]) {
      aborts[p]->path = p;
      e.aborted_paths.push_back(std::move(*aborts[p]));
    }
  }
}

}  // namespace detail

/// P independent Euler-Maruyama paths from x0; path p uses derive_seed(master_seed, p).
/// Aborted paths are recorded, not fatal. `workers` = 0 means one per hardware thread.
inline TrajectoryEnsemble simulate_ensemble(const SdeSystem& system, const Vector& x0, const TimeGrid& grid,
                                            std::size_t P, std::uint64_t master_seed, std::size_t workers = 1) {
  detail::check_start(system, x0);
  TrajectoryEnsemble e = detail::allocate(grid, system.n(), P, master_seed);
  std::vector<std::optional<AbortRecord>> aborts(P);
  detail::parallel_for(P, workers, [&](std::size_t p) {
    const NoisePath noise = NoisePath::generate(e.path_seeds[p], grid.steps(), system.k(), grid.dt());
    aborts[p] = detail::integrate(system, x0, grid, noise, e.path(p));
  });
  detail::collect_aborts(e, aborts);
  return e;
}

struct CoupledTrajectory {
  Matrix y;  ///< unnormalized process
  Matrix x;  ///< y / F(y)^{1/q}, on the manifold
};

namespace detail {

inline void check_coupled_start(const CoupledInvariantizedSystem& coupled, const Vector& y0) {
  check_start(coupled.base(), y0);
  const double f = coupled.manifold().value(y0);
  if (std::abs(f - 1.0) > 1e-12) {
    throw ContractError("coupled simulation must start on the manifold (F(y0) = " + std::to_string(f) + ")");
  }
}

inline void normalize_rows(const CoupledInvariantizedSystem& coupled, const Eigen::Ref<const Matrix>& y,
                           Eigen::Ref<Matrix> x) {
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (!y.row(i).allFinite()) {
      x.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    x.row(i) = coupled.normalize(y.row(i).transpose()).transpose();
  }
}

}  // namespace detail

/// Advances y with coefficients evaluated at x = normalize(y) and records both streams.
inline CoupledTrajectory simulate_coupled(const CoupledInvariantizedSystem& coupled, const Vector& y0,
                                          const TimeGrid& grid, const NoisePath& noise) {
  detail::check_coupled_start(coupled, y0);
  const SdeSystem ysys = coupled.y_system();
  CoupledTrajectory out;
  out.y = simulate_path(ysys, y0, grid, noise);
  out.x.resize(out.y.rows(), out.y.cols());
  detail::normalize_rows(coupled, out.y, out.x);
  return out;
}

struct CoupledEnsemble {
  TrajectoryEnsemble y;
  TrajectoryEnsemble x;
};

inline CoupledEnsemble simulate_coupled_ensemble(const CoupledInvariantizedSystem& coupled, const Vector& y0,
                                                 const TimeGrid& grid, std::size_t P, std::uint64_t master_seed,
                                                 std::size_t workers = 1) {
  detail::check_coupled_start(coupled, y0);
  const SdeSystem ysys = coupled.y_system();
  CoupledEnsemble out{simulate_ensemble(ysys, y0, grid, P, master_seed, workers), {}};
  out.x = out.y;
  for (std::size_t p = 0; p < P; ++p) detail::normalize_rows(coupled, out.y.path(p), out.x.path(p));
  return out;
}

/// Applies `map` to every recorded state (e.g. projection onto the manifold).
template <typename Map>
TrajectoryEnsemble map_states(const TrajectoryEnsemble& e, Map map) {
  TrajectoryEnsemble out = e;
  for (std::size_t p = 0; p < e.paths; ++p) {
    auto src = e.path(p);
    auto dst = out.path(p);
    for (Eigen::Index i = 0; i < src.rows(); ++i) {
      if (!src.row(i).allFinite()) continue;
      dst.row(i) = map(Vector(src.row(i).transpose())).transpose();
    }
  }
  return out;
}

/// CSV with header `path,t,x1,...,xn[,F]`, 17 significant digits, LF endings.
/// Rows after a path abort are omitted.
inline void write_csv(std::ostream& os, const TrajectoryEnsemble& e, const ManifoldSpec* manifold = nullptr) {
  os << "path,t";
  for (std::size_t c = 1; c <= e.n; ++c) os << ",x" << c;
  if (manifold) os << ",F";
  os << '\n';
  os << std::setprecision(17);
  for (std::size_t p = 0; p < e.paths; ++p) {
    const auto path = e.path(p);
    for (Eigen::Index i = 0; i < path.rows(); ++i) {
      if (!path.row(i).allFinite()) break;
      os << p << ',' << e.grid.time(static_cast<std::size_t>(i));
      for (Eigen::Index c = 0; c < path.cols(); ++c) os << ',' << path(i, c);
      if (manifold) os << ',' << manifold->value(path.row(i).transpose());
      os << '\n';
    }
  }
}

}  // namespace invar
