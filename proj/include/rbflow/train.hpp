#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "rbflow/common.hpp"
#include "rbflow/control.hpp"
#include "rbflow/field.hpp"
#include "rbflow/ode.hpp"
#include "rbflow/scheme.hpp"

namespace rbflow {

enum class LossKind { SquaredDistance };

/// Supervised objective
///   J = alpha/2 ||theta||_{L2}^2 + sum_m g_m(x_{m,T}) + beta sum_m int l_m(x_{m,t}) dt
/// with g_m(x) = l_m(x) = ||x - y_m||^2.
struct CostConfig {
  double alpha = 0.0;
  double beta = 0.0;
  LossKind terminal_loss = LossKind::SquaredDistance;
  LossKind running_loss = LossKind::SquaredDistance;
  std::vector<Vec> inputs;
  std::vector<Vec> targets;

  CostConfig() = default;
  CostConfig(double a, double b, std::vector<Vec> xs, std::vector<Vec> ys)
      : alpha(a), beta(b), inputs(std::move(xs)), targets(std::move(ys)) {
    detail::require(alpha > 0.0, "cost: alpha must be positive");
    detail::require(beta >= 0.0, "cost: beta must be nonnegative");
    detail::require(!inputs.empty() && inputs.size() == targets.size(),
                    "cost: dataset must be nonempty with matching targets");
  }

  int n_data() const { return static_cast<int>(inputs.size()); }
  double loss(int m, const Vec& x) const { return (x - targets[static_cast<size_t>(m)]).squaredNorm(); }
  Vec loss_grad(int m, const Vec& x) const { return 2.0 * (x - targets[static_cast<size_t>(m)]); }
};

namespace detail {

// alpha/2 ||theta||_{L2}^2; exact for constant / piecewise-constant
// representations, trapezoid on the solver grid otherwise.
inline double control_l2_sq(const Control& c, const SolverConfig& solver) {
  if (c.repr == ControlRepr::Constant || c.repr == ControlRepr::PiecewiseConstant)
    return c.l2_inner(c);
  double acc = 0.0;
  const int n = solver.steps();
  for (int k = 0; k <= n; ++k) {
    const double t = std::min(k * solver.dt, c.T);
    const double w = (k == 0 || k == n) ? 0.5 : 1.0;
    acc += w * solver.dt * c.eval(t).squaredNorm();
  }
  return acc;
}

inline double trapezoid_running_loss(const CostConfig& cost, int m, const Trajectory& traj,
                                     double dt) {
  double acc = 0.0;
  const int n = static_cast<int>(traj.states.size()) - 1;
  for (int k = 0; k <= n; ++k) {
    const double w = (k == 0 || k == n) ? 0.5 : 1.0;
    acc += w * dt * cost.loss(m, traj.states[static_cast<size_t>(k)]);
  }
  return acc;
}

}  // namespace detail

/// Forward trajectories for every datum (full model, or the random model
/// when a schedule is given).
inline std::vector<Trajectory> forward_all(const NeuronField& f, const CostConfig& cost,
                                           const Control& control, const SolverConfig& solver,
                                           const DropoutSchedule* schedule,
                                           const BatchScheme* scheme, int threads = 1,
                                           EvalCounter* counter = nullptr) {
  std::vector<Trajectory> out(static_cast<size_t>(cost.n_data()));
  parallel_for(cost.n_data(), threads, [&](int m) {
    out[static_cast<size_t>(m)] =
        schedule ? integrate_random(f, *scheme, control, cost.inputs[static_cast<size_t>(m)],
                                    *schedule, solver, counter)
                 : integrate_full(f, control, cost.inputs[static_cast<size_t>(m)], solver, counter);
  });
  return out;
}

inline double evaluate_cost_with(const CostConfig& cost, const Control& control,
                                 const SolverConfig& solver,
                                 const std::vector<Trajectory>& trajs) {
  double j = 0.5 * cost.alpha * detail::control_l2_sq(control, solver);
  for (int m = 0; m < cost.n_data(); ++m) {
    j += cost.loss(m, trajs[static_cast<size_t>(m)].back());
    if (cost.beta > 0.0)
      j += cost.beta * detail::trapezoid_running_loss(cost, m, trajs[static_cast<size_t>(m)], solver.dt);
  }
  return j;
}

inline double evaluate_cost(const NeuronField& f, const CostConfig& cost, const Control& control,
                            const SolverConfig& solver, const DropoutSchedule* schedule = nullptr,
                            const BatchScheme* scheme = nullptr, int threads = 1) {
  const auto trajs = forward_all(f, cost, control, solver, schedule, scheme, threads);
  return evaluate_cost_with(cost, control, solver, trajs);
}

/// Costates per datum, stored on the forward grid (times ascending).
struct AdjointTrajectory {
  std::vector<double> times;
  std::vector<std::vector<Vec>> costates;  // [datum][grid point]
};

/// Backward integration of p' = -grad_x F^T p - beta grad l_m(x_t) from
/// p_T = grad g_m(x_T), with the solver's own method. Forward states at
/// backward stage times come from linear interpolation; with a schedule the
/// Jacobian uses the same masks as the forward pass (per-step selection).
inline AdjointTrajectory integrate_adjoint(const NeuronField& f, const CostConfig& cost,
                                           const Control& control,
                                           const std::vector<Trajectory>& forward,
                                           const SolverConfig& solver,
                                           const DropoutSchedule* schedule = nullptr,
                                           const BatchScheme* scheme = nullptr, int threads = 1) {
  detail::require(static_cast<int>(forward.size()) == cost.n_data(),
                  "integrate_adjoint: one forward trajectory per datum");
  const int n = solver.steps();
  for (const auto& traj : forward)
    detail::require(static_cast<int>(traj.states.size()) == n + 1,
                    "integrate_adjoint: forward grid mismatch");
  const int m_steps = schedule ? schedule->steps_per_interval(solver) : 0;

  AdjointTrajectory adj;
  adj.times = forward.front().times;
  adj.costates.assign(static_cast<size_t>(cost.n_data()), {});
  parallel_for(cost.n_data(), threads, [&](int m) {
    const Trajectory& traj = forward[static_cast<size_t>(m)];
    std::vector<Vec> costate(static_cast<size_t>(n) + 1);
    costate[static_cast<size_t>(n)] = cost.loss_grad(m, traj.back());
    for (int k = n - 1; k >= 0; --k) {
      const std::vector<int>* active =
          schedule ? &schedule->active_sets[static_cast<size_t>(k / m_steps)] : nullptr;
      auto rhs = [&](double t, const Vec& p) -> Vec {
        const double tc = std::clamp(t, 0.0, solver.T);
        const Vec x = traj.at(tc);
        const Vec theta = control.eval(tc);
        const Mat J = active ? masked_jacobian_x(f, *scheme, *active, x, theta)
                             : jacobian_x(f, x, theta);
        Vec dp = -J.transpose() * p;
        if (cost.beta > 0.0) dp -= cost.beta * cost.loss_grad(m, x);
        return dp;
      };
      const double t_hi = traj.times[static_cast<size_t>(k + 1)];
      Vec prev = detail::rk_step(solver.method, rhs, t_hi, costate[static_cast<size_t>(k + 1)],
                                 -solver.dt);
      if (!prev.allFinite() || prev.norm() > detail::kBlowupNorm) throw BlowupError(k);
      costate[static_cast<size_t>(k)] = std::move(prev);
    }
    adj.costates[static_cast<size_t>(m)] = std::move(costate);
  });
  return adj;
}

/// The cost gradient, both as grid values of
///   grad J(theta)_t = alpha theta_t + sum_m (grad_theta F)^T p_{m,t}
/// and L2-projected onto the control's representation class (interval
/// averages for piecewise-constant, the [0,T] average for constant).
struct GradientResult {
  std::vector<Vec> grid_values;
  Control projected;
  double l2_norm = 0.0;
};

inline GradientResult gradient(const NeuronField& f, const CostConfig& cost,
                               const Control& control, const SolverConfig& solver,
                               const DropoutSchedule* schedule = nullptr,
                               const BatchScheme* scheme = nullptr, int threads = 1) {
  detail::require(control.repr != ControlRepr::AffineBias,
                  "gradient: AffineBias controls are not trainable here");
  const auto forward = forward_all(f, cost, control, solver, schedule, scheme, threads);
  const auto adjoint = integrate_adjoint(f, cost, control, forward, solver, schedule, scheme, threads);
  const int n = solver.steps();
  const int m_steps = schedule ? schedule->steps_per_interval(solver) : 0;

  // Integrand at a grid point, under the mask of the step it belongs to.
  auto integrand = [&](int k, const std::vector<int>* active) -> Vec {
    const double t = std::min(k * solver.dt, solver.T);
    const Vec theta = control.eval(t);
    Vec g = cost.alpha * theta;
    for (int m = 0; m < cost.n_data(); ++m) {
      const Vec& x = forward[static_cast<size_t>(m)].states[static_cast<size_t>(k)];
      const Vec& p = adjoint.costates[static_cast<size_t>(m)][static_cast<size_t>(k)];
      g += active ? masked_grad_theta_transpose_apply(f, *scheme, *active, x, theta, p)
                  : grad_theta_transpose_apply(f, x, theta, p);
    }
    return g;
  };

  GradientResult out;
  out.grid_values.resize(static_cast<size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    const std::vector<int>* active = nullptr;
    if (schedule) {
      const int step = std::min(k, n - 1);  // grid point value shown under its step's mask
      active = &schedule->active_sets[static_cast<size_t>(step / m_steps)];
    }
    out.grid_values[static_cast<size_t>(k)] = integrand(k, active);
  }

  // Per-step trapezoid with the step's own mask at both endpoints, so each
  // smooth piece is integrated separately; then interval averages.
  std::vector<double> bounds = control.repr == ControlRepr::PiecewiseConstant
                                   ? control.grid
                                   : std::vector<double>{0.0, control.T};
  std::vector<Vec> avg(bounds.size() - 1, Vec::Zero(control.dim));
  size_t interval = 0;
  for (int k = 0; k < n; ++k) {
    const double t_lo = k * solver.dt;
    while (interval + 2 < bounds.size() && t_lo >= bounds[interval + 1] - 1e-12) ++interval;
    const std::vector<int>* active =
        schedule ? &schedule->active_sets[static_cast<size_t>(k / m_steps)] : nullptr;
    const Vec lo = integrand(k, active);
    const Vec hi = integrand(k + 1, active);
    avg[interval] += 0.5 * solver.dt * (lo + hi);
  }
  double norm_sq = 0.0;
  for (size_t j = 0; j + 1 < bounds.size(); ++j) {
    const double len = bounds[j + 1] - bounds[j];
    avg[j] /= len;
    norm_sq += len * avg[j].squaredNorm();
  }
  out.l2_norm = std::sqrt(norm_sq);

  if (control.repr == ControlRepr::Constant) {
    out.projected = Control::constant(avg[0], control.T);
  } else {
    out.projected = Control::piecewise(bounds, std::move(avg));
  }
  return out;
}

struct TrainOptions {
  double eta = 0.01;
  int iters = 100;
  double stop_tol = 0.0;
  int threads = 1;
};

struct TrainRecord {
  int iteration;
  double cost;
  double grad_norm;
};

struct TrainState {
  Control control;
  int iteration = 0;
  std::vector<TrainRecord> history;
  bool converged = false;  // stopped by grad tolerance
};

/// Plain gradient descent theta <- theta - eta grad J(theta). When a
/// schedule is supplied it is sampled once by the caller and held fixed for
/// every forward/adjoint pass and iteration. Throws after 10 consecutive
/// cost increases (step size too large).
inline TrainState train_gd(const NeuronField& f, const CostConfig& cost, Control init,
                           const SolverConfig& solver, const TrainOptions& opt,
                           const DropoutSchedule* schedule = nullptr,
                           const BatchScheme* scheme = nullptr) {
  detail::require(opt.eta > 0.0, "train_gd: eta must be positive");
  TrainState state;
  state.control = std::move(init);
  double last_cost = std::numeric_limits<double>::infinity();
  int rising = 0;
  for (int it = 0; it <= opt.iters; ++it) {
    const auto trajs = forward_all(f, cost, state.control, solver, schedule, scheme, opt.threads);
    const double j = evaluate_cost_with(cost, state.control, solver, trajs);
    const auto grad = gradient(f, cost, state.control, solver, schedule, scheme, opt.threads);
    state.history.push_back({it, j, grad.l2_norm});
    state.iteration = it;
    if (j > last_cost) {
      if (++rising >= 10)
        throw std::runtime_error("train_gd: cost increased for 10 consecutive iterations; reduce eta");
    } else {
      rising = 0;
    }
    last_cost = j;
    if (grad.l2_norm < opt.stop_tol) {
      state.converged = true;
      break;
    }
    if (it == opt.iters) break;
    state.control.axpy(-opt.eta, grad.projected);
  }
  return state;
}

struct GapRow {
  double h = 0.0;
  double sq_cost_gap = 0.0;
  bool valid = false;
  double cost_full = 0.0;
  double cost_random = 0.0;
};

/// Random constant control, N(0, scale^2) entries.
inline Control random_constant_control(const NeuronField& f, double horizon, double scale,
                                       Rng& rng) {
  std::normal_distribution<double> gauss(0.0, scale);
  Vec theta(f.theta_dim());
  for (int i = 0; i < theta.size(); ++i) theta[i] = gauss(rng);
  return Control::constant(theta, horizon);
}

/// Trains the full and the random problem from one shared init and reports
/// the squared optimal-cost gap per dropout step h. A row is valid only if
/// both trainings reached the gradient tolerance.
inline std::vector<GapRow> optimal_cost_gap(const NeuronField& f, const CostConfig& cost,
                                            const SolverConfig& solver, const BatchScheme& scheme,
                                            const std::vector<double>& h_levels,
                                            const TrainOptions& opt, uint64_t seed,
                                            double init_scale = 0.3) {
  Rng rng = derive_rng(seed, 0);
  const Control init = random_constant_control(f, solver.T, init_scale, rng);
  const TrainState full = train_gd(f, cost, init, solver, opt);
  std::vector<GapRow> rows;
  for (size_t level = 0; level < h_levels.size(); ++level) {
    const double h = h_levels[level];
    const int n_s = static_cast<int>(std::round(solver.T / h));
    const auto schedule = DropoutSchedule::sample(scheme, solver.T, n_s, derive_seed(seed, level + 1));
    GapRow row;
    row.h = h;
    try {
      const TrainState rnd = train_gd(f, cost, init, solver, opt, &schedule, &scheme);
      row.cost_full = full.history.back().cost;
      row.cost_random = rnd.history.back().cost;
      const double gap = row.cost_full - row.cost_random;
      row.sq_cost_gap = gap * gap;
      row.valid = full.converged && rnd.converged;
    } catch (const std::runtime_error&) {
      row.valid = false;
    }
    rows.push_back(row);
  }
  return rows;
}

struct ControlGapResult {
  double mean_sq_gap = 0.0;
  double std_error = 0.0;
};

/// E ||theta* - theta_hat*||_{L2}^2 over K schedule realizations, trained
/// from a shared init. Requires the weights-only (control-affine) field.
inline ControlGapResult control_gap_mc(const NeuronField& f, const CostConfig& cost,
                                       const SolverConfig& solver, const BatchScheme& scheme,
                                       double h, int realizations, uint64_t seed,
                                       const TrainOptions& opt, double init_scale = 0.3) {
  detail::require(f.weights_only, "control_gap_mc: weights-only field required (affine in theta)");
  Rng rng = derive_rng(seed, 0);
  const Control init = random_constant_control(f, solver.T, init_scale, rng);
  const TrainState full = train_gd(f, cost, init, solver, opt);
  const int n_s = static_cast<int>(std::round(solver.T / h));
  std::vector<double> gaps(static_cast<size_t>(realizations));
  for (int k = 0; k < realizations; ++k) {
    const auto schedule =
        DropoutSchedule::sample(scheme, solver.T, n_s, derive_seed(seed, static_cast<uint64_t>(k) + 1));
    const TrainState rnd = train_gd(f, cost, init, solver, opt, &schedule, &scheme);
    Control diff = full.control;
    diff.axpy(-1.0, rnd.control);
    gaps[static_cast<size_t>(k)] = diff.l2_inner(diff);
  }
  double mean = 0.0;
  for (double g : gaps) mean += g;
  mean /= realizations;
  double var = 0.0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  var /= std::max(1, realizations - 1);
  return {mean, std::sqrt(var / realizations)};
}

}  // namespace rbflow
