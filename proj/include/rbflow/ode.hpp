#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "rbflow/common.hpp"
#include "rbflow/control.hpp"
#include "rbflow/field.hpp"
#include "rbflow/scheme.hpp"

namespace rbflow {

enum class Method { Euler, RK2Midpoint, RK4 };

inline int method_stages(Method m) {
  switch (m) {
    case Method::Euler: return 1;
    case Method::RK2Midpoint: return 2;
    case Method::RK4: return 4;
  }
  return 0;
}

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Euler: return "euler";
    case Method::RK2Midpoint: return "rk2";
    case Method::RK4: return "rk4";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  if (s == "euler") return Method::Euler;
  if (s == "rk2") return Method::RK2Midpoint;
  if (s == "rk4") return Method::RK4;
  throw std::invalid_argument("unknown method: " + s);
}

/// Fixed-step solver grid. T/dt must be an integer (within rounding slack);
/// the step count is always derived by rounding, never by float comparison.
struct SolverConfig {
  Method method = Method::RK4;
  double dt = 0.0;
  double T = 0.0;

  SolverConfig() = default;
  SolverConfig(Method m, double step, double horizon) : method(m), dt(step), T(horizon) {
    detail::require(dt > 0.0 && T > 0.0 && dt <= T, "solver: need 0 < dt <= T");
    const double ratio = T / dt;
    detail::require(std::abs(ratio - std::round(ratio)) <= 1e-9 * ratio + 1e-12,
                    "solver: T/dt must be an integer");
  }

  int steps() const { return static_cast<int>(std::round(T / dt)); }
};

/// Sampled dropout schedule: n_s active sets, one per subinterval of
/// length h = T/n_s. Stores resolved active sets so every scheme kind
/// shares one representation. Regenerating from (scheme, seed, n_s) is
/// bit-exact.
struct DropoutSchedule {
  double h = 0.0;
  int n_s = 0;
  std::vector<std::vector<int>> active_sets;
  uint64_t seed = 0;

  static DropoutSchedule sample(const BatchScheme& scheme, double T, int n_s, uint64_t seed) {
    detail::require(n_s >= 1 && T > 0.0, "schedule: need n_s >= 1 and T > 0");
    DropoutSchedule s;
    s.h = T / n_s;
    s.n_s = n_s;
    s.seed = seed;
    s.active_sets.reserve(static_cast<size_t>(n_s));
    Rng rng = derive_rng(seed, 0);
    for (int k = 0; k < n_s; ++k) s.active_sets.push_back(scheme.sample(rng));
    return s;
  }

  /// 1-based interval index k_t = 1 + floor(t/h), clamped to n_s at t = T.
  int interval_index(double t) const {
    detail::require_domain(t >= 0.0 && t <= h * n_s + 1e-12 * n_s, "interval_index: t outside [0, T]");
    const int k = 1 + static_cast<int>(std::floor(t / h));
    return std::min(k, n_s);
  }

  /// Solver steps per dropout interval; throws if h is not an integer
  /// multiple of dt or the grids do not tile [0, T] together.
  int steps_per_interval(const SolverConfig& solver) const {
    const double ratio = h / solver.dt;
    const int m = static_cast<int>(std::round(ratio));
    if (m < 1 || std::abs(ratio - m) > 1e-9 * ratio + 1e-12)
      throw AlignmentError("schedule: h must be a positive integer multiple of dt");
    if (m * n_s != solver.steps())
      throw AlignmentError("schedule: n_s * h must equal the solver horizon");
    return m;
  }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;

  const Vec& back() const { return states.back(); }

  /// Forward state at time t by linear interpolation between grid points.
  Vec at(double t) const {
    const double t0 = times.front(), t1 = times.back();
    detail::require_domain(t >= t0 - 1e-12 && t <= t1 + 1e-12, "trajectory: t outside grid");
    const double dt = times[1] - times[0];
    const int n = static_cast<int>(times.size()) - 1;
    int k = static_cast<int>(std::floor((t - t0) / dt));
    k = std::clamp(k, 0, n - 1);
    const double w = (t - times[static_cast<size_t>(k)]) / dt;
    return (1.0 - w) * states[static_cast<size_t>(k)] + w * states[static_cast<size_t>(k + 1)];
  }
};

using RhsFn = std::function<Vec(double, const Vec&)>;

namespace detail {

constexpr double kBlowupNorm = 1e12;

// One explicit step from (t, x). The rhs owns any mask selection.
inline Vec rk_step(Method method, const RhsFn& rhs, double t, const Vec& x, double dt) {
  switch (method) {
    case Method::Euler:
      return x + dt * rhs(t, x);
    case Method::RK2Midpoint: {
      const Vec k1 = rhs(t, x);
      return x + dt * rhs(t + 0.5 * dt, x + 0.5 * dt * k1);
    }
    case Method::RK4: {
      const Vec k1 = rhs(t, x);
      const Vec k2 = rhs(t + 0.5 * dt, x + 0.5 * dt * k1);
      const Vec k3 = rhs(t + 0.5 * dt, x + 0.5 * dt * k2);
      const Vec k4 = rhs(t + dt, x + dt * k3);
      return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  return x;
}

}  // namespace detail

/// Integrates a generic right-hand side on the fixed grid. Aborts with
/// BlowupError (carrying the step index) once ||x|| exceeds 1e12.
inline Trajectory integrate(const RhsFn& rhs, const Vec& x0, const SolverConfig& solver) {
  const int n = solver.steps();
  Trajectory out;
  out.times.resize(static_cast<size_t>(n) + 1);
  out.states.resize(static_cast<size_t>(n) + 1);
  out.times[0] = 0.0;
  out.states[0] = x0;
  for (int k = 0; k < n; ++k) {
    const double t = k * solver.dt;
    Vec next = detail::rk_step(solver.method, rhs, t, out.states[static_cast<size_t>(k)], solver.dt);
    if (!next.allFinite() || next.norm() > detail::kBlowupNorm) throw BlowupError(k);
    out.times[static_cast<size_t>(k + 1)] = (k + 1 == n) ? solver.T : (k + 1) * solver.dt;
    out.states[static_cast<size_t>(k + 1)] = std::move(next);
  }
  return out;
}

/// Full model: x' = F(x, theta_t).
inline Trajectory integrate_full(const NeuronField& f, const Control& control, const Vec& x0,
                                 const SolverConfig& solver, EvalCounter* counter = nullptr) {
  detail::require(std::abs(control.T - solver.T) <= 1e-12 * solver.T,
                  "integrate_full: control horizon != solver horizon");
  auto traj = integrate(
      [&](double t, const Vec& x) { return eval(f, x, control.eval(std::min(t, control.T)), counter); },
      x0, solver);
  if (counter) counter->steps += static_cast<uint64_t>(solver.steps());
  return traj;
}

/// Random model: on each dropout interval the right-hand side is the masked
/// field with that interval's active set. All stages of a step use the mask
/// of the interval containing the step's start time (left-closed intervals,
/// selected by integer step index).
inline Trajectory integrate_random(const NeuronField& f, const BatchScheme& scheme,
                                   const Control& control, const Vec& x0,
                                   const DropoutSchedule& schedule, const SolverConfig& solver,
                                   EvalCounter* counter = nullptr) {
  detail::require(std::abs(control.T - solver.T) <= 1e-12 * solver.T,
                  "integrate_random: control horizon != solver horizon");
  const int m = schedule.steps_per_interval(solver);
  const int n = solver.steps();
  Trajectory out;
  out.times.resize(static_cast<size_t>(n) + 1);
  out.states.resize(static_cast<size_t>(n) + 1);
  out.times[0] = 0.0;
  out.states[0] = x0;
  for (int k = 0; k < n; ++k) {
    const auto& active = schedule.active_sets[static_cast<size_t>(k / m)];
    const double t = k * solver.dt;
    auto rhs = [&](double ts, const Vec& x) {
      return masked_eval(f, scheme, active, x, control.eval(std::min(ts, control.T)), counter);
    };
    Vec next = detail::rk_step(solver.method, rhs, t, out.states[static_cast<size_t>(k)], solver.dt);
    if (!next.allFinite() || next.norm() > detail::kBlowupNorm) throw BlowupError(k);
    out.times[static_cast<size_t>(k + 1)] = (k + 1 == n) ? solver.T : (k + 1) * solver.dt;
    out.states[static_cast<size_t>(k + 1)] = std::move(next);
  }
  if (counter) counter->steps += static_cast<uint64_t>(n);
  return out;
}

inline double sup_squared_distance(const Trajectory& a, const Trajectory& b) {
  detail::require(a.states.size() == b.states.size(), "trajectories on different grids");
  double m = 0.0;
  for (size_t k = 0; k < a.states.size(); ++k)
    m = std::max(m, (a.states[k] - b.states[k]).squaredNorm());
  return m;
}

struct McErrorResult {
  double mean_sq_sup_error = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimate of E[max_t ||x_t - x_hat_t||^2] over K schedule
/// realizations. The full trajectory is integrated once and shared; each
/// realization derives its RNG stream from (master_seed, index).
inline McErrorResult trajectory_error_mc(const NeuronField& f, const BatchScheme& scheme,
                                         const Control& control, const Vec& x0, double h,
                                         const SolverConfig& solver, int realizations,
                                         uint64_t master_seed, int threads = 1) {
  detail::require(realizations >= 2, "trajectory_error_mc: need K >= 2");
  const int n_s = static_cast<int>(std::round(solver.T / h));
  detail::require(std::abs(n_s * h - solver.T) <= 1e-9 * solver.T,
                  "trajectory_error_mc: h must divide T");
  const Trajectory full = integrate_full(f, control, x0, solver);
  std::vector<double> errs(static_cast<size_t>(realizations));
  parallel_for(realizations, threads, [&](int k) {
    const auto schedule =
        DropoutSchedule::sample(scheme, solver.T, n_s, derive_seed(master_seed, static_cast<uint64_t>(k)));
    const Trajectory rnd = integrate_random(f, scheme, control, x0, schedule, solver);
    errs[static_cast<size_t>(k)] = sup_squared_distance(full, rnd);
  });
  const double mean =
      detail::pairwise_sum_scalar(0, realizations, [&](int k) { return errs[static_cast<size_t>(k)]; }) /
      realizations;
  double var = 0.0;
  for (double e : errs) var += (e - mean) * (e - mean);
  var /= (realizations - 1);
  return {mean, std::sqrt(var / realizations)};
}

struct CoupledErrorResult {
  double mean_sq_sup_error = 0.0;
  double std_error = 0.0;
  double control_l1_distance = 0.0;
};

/// Error between the full model under theta_1 and the random model under
/// theta_2, plus ||theta_1 - theta_2||_{L1} by trapezoid on the solver grid.
inline CoupledErrorResult coupled_error_different_controls(
    const NeuronField& f, const BatchScheme& scheme, const Control& c1, const Control& c2,
    const Vec& x0, double h, const SolverConfig& solver, int realizations, uint64_t master_seed,
    int threads = 1) {
  detail::require(std::abs(c1.T - c2.T) <= 1e-12 * c1.T, "controls must share the horizon");
  const int n_s = static_cast<int>(std::round(solver.T / h));
  detail::require(std::abs(n_s * h - solver.T) <= 1e-9 * solver.T, "h must divide T");
  const Trajectory full = integrate_full(f, c1, x0, solver);
  std::vector<double> errs(static_cast<size_t>(realizations));
  parallel_for(realizations, threads, [&](int k) {
    const auto schedule =
        DropoutSchedule::sample(scheme, solver.T, n_s, derive_seed(master_seed, static_cast<uint64_t>(k)));
    const Trajectory rnd = integrate_random(f, scheme, c2, x0, schedule, solver);
    errs[static_cast<size_t>(k)] = sup_squared_distance(full, rnd);
  });
  const double mean =
      detail::pairwise_sum_scalar(0, realizations, [&](int k) { return errs[static_cast<size_t>(k)]; }) /
      realizations;
  double var = 0.0;
  for (double e : errs) var += (e - mean) * (e - mean);
  var /= std::max(1, realizations - 1);

  double l1 = 0.0;
  const int n = solver.steps();
  for (int k = 0; k <= n; ++k) {
    const double t = std::min(k * solver.dt, solver.T);
    const double w = (k == 0 || k == n) ? 0.5 : 1.0;
    l1 += w * solver.dt * (c1.eval(t) - c2.eval(t)).norm();
  }
  return {mean, std::sqrt(var / realizations), l1};
}

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares on (ln h, ln error).
inline LogLogFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  detail::require(points.size() >= 3, "fit_loglog_slope: need at least 3 points");
  for (const auto& [h, e] : points)
    detail::require_domain(h > 0.0 && e > 0.0, "fit_loglog_slope: values must be positive");
  const int n = static_cast<int>(points.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [h, e] : points) {
    const double x = std::log(h), y = std::log(e);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  const double den = n * sxx - sx * sx;
  LogLogFit fit;
  fit.slope = (n * sxy - sx * sy) / den;
  fit.intercept = (sy - fit.slope * sx) / n;
  const double ss_tot = syy - sy * sy / n;
  double ss_res = 0.0;
  for (const auto& [h, e] : points) {
    const double r = std::log(e) - (fit.intercept + fit.slope * std::log(h));
    ss_res += r * r;
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

/// ||Lambda(x0, control)||_{L1(0,T)}: composite trapezoid of the masking
/// variance along the full-model trajectory on the solver grid.
inline double mask_variance_l1(const NeuronField& f, const BatchScheme& scheme,
                               const Control& control, const Vec& x0,
                               const SolverConfig& solver) {
  const Trajectory traj = integrate_full(f, control, x0, solver);
  const int n = solver.steps();
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double t = traj.times[static_cast<size_t>(k)];
    const double w = (k == 0 || k == n) ? 0.5 : 1.0;
    acc += w * solver.dt *
           mask_variance(f, scheme, traj.states[static_cast<size_t>(k)], control.eval(t));
  }
  return acc;
}

/// Design levers of a scheme along the full trajectory: sup_t Lambda on the
/// solver grid plus the scheme's closed-form imbalance and pi_min.
inline DesignLevers design_levers(const NeuronField& f, const BatchScheme& scheme,
                                  const Control& control, const Vec& x0,
                                  const SolverConfig& solver) {
  const Trajectory traj = integrate_full(f, control, x0, solver);
  double sup = 0.0;
  for (size_t k = 0; k < traj.states.size(); ++k)
    sup = std::max(sup, mask_variance(f, scheme, traj.states[k], control.eval(traj.times[k])));
  return {sup, scheme.sampling_imbalance(), scheme.pi_min(), scheme.mean_batch_size()};
}

}  // namespace rbflow
