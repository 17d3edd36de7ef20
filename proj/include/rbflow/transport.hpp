#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "rbflow/common.hpp"
#include "rbflow/control.hpp"
#include "rbflow/field.hpp"
#include "rbflow/ode.hpp"
#include "rbflow/scheme.hpp"

namespace rbflow {

/// Weighted particle cloud representing a density: positions x_i (rows) and
/// log weights log(alpha_i). Weights are only normalized at render time so
/// the raw Liouville factors stay observable.
struct ParticleEnsemble {
  Mat positions;    // N x d
  Vec log_weights;  // N

  int size() const { return static_cast<int>(positions.rows()); }
  int dim() const { return static_cast<int>(positions.cols()); }

  /// Sum of raw weights (1 at t = 0, drifts with the Liouville factors).
  double total_weight() const { return log_weights.array().exp().sum(); }

  /// Weights scaled to sum to one.
  Vec normalized_weights() const {
    Vec w = log_weights.array().exp();
    return w / w.sum();
  }
};

/// Compactly supported initial bump 1 - (x+1)^2 - (y+1)^2 on the unit disk
/// centered at (-1, -1).
inline double bump_density(double x, double y) {
  const double v = 1.0 - (x + 1.0) * (x + 1.0) - (y + 1.0) * (y + 1.0);
  return v > 0.0 ? v : 0.0;
}

using PointSampler = std::function<Vec(Rng&)>;

/// The paper bump via rejection on its bounding box.
inline PointSampler bump_sampler() {
  return [](Rng& rng) -> Vec {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int attempt = 0; attempt < 100000; ++attempt) {
      const double x = -2.0 + 2.0 * unif(rng);
      const double y = -2.0 + 2.0 * unif(rng);
      if (unif(rng) < bump_density(x, y)) return Eigen::Vector2d(x, y);
    }
    throw std::runtime_error("bump sampler: rejection acceptance below 1e-3");
  };
}

/// Three-Gaussian target used by the transport demo.
inline PointSampler mixture_target_sampler() {
  return [](Rng& rng) -> Vec {
    static const Eigen::Vector2d mu[3] = {{6.0, 0.0}, {4.5, 3.0}, {6.0, 2.0}};
    // Cholesky factors of [[0.2,0.05],[0.05,0.2]] and 0.05 I.
    static const double c11 = std::sqrt(0.2);
    static const double c21 = 0.05 / c11;
    static const double c22 = std::sqrt(0.2 - c21 * c21);
    static const double s3 = std::sqrt(0.05);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int k = std::uniform_int_distribution<int>(0, 2)(rng);
    const double z1 = gauss(rng), z2 = gauss(rng);
    if (k == 2) return mu[2] + Eigen::Vector2d(s3 * z1, s3 * z2);
    return mu[k] + Eigen::Vector2d(c11 * z1, c21 * z1 + c22 * z2);
  };
}

/// N i.i.d. samples with uniform weights 1/N.
inline ParticleEnsemble sample_initial(const PointSampler& sampler, int N, Rng& rng) {
  detail::require(N >= 1, "sample_initial: N must be positive");
  Vec first = sampler(rng);
  ParticleEnsemble ens;
  ens.positions.resize(N, first.size());
  ens.positions.row(0) = first.transpose();
  for (int i = 1; i < N; ++i) ens.positions.row(i) = sampler(rng).transpose();
  ens.log_weights = Vec::Constant(N, -std::log(static_cast<double>(N)));
  return ens;
}

enum class DivergenceMode { Exact, Hutchinson };

struct DivergenceConfig {
  DivergenceMode mode = DivergenceMode::Exact;
  int probes = 1;
  uint64_t seed = 0;
};

/// Midpoint-RK2 particle transport for the continuity equation:
/// positions x' = F, log-weights (log a)' = -div F, both read at the
/// midpoint state and time. With a schedule both use the masked field.
/// `first_step` offsets the global step index so windowed pushes stay
/// aligned with the dropout grid.
inline ParticleEnsemble push_ensemble(const NeuronField& f, const Control& control,
                                      const ParticleEnsemble& init, const SolverConfig& solver,
                                      const DropoutSchedule* schedule = nullptr,
                                      const BatchScheme* scheme = nullptr,
                                      const DivergenceConfig& div_cfg = {}, int threads = 1,
                                      int first_step = 0, int n_steps = -1) {
  if (!f.activation.is_c1())
    throw std::invalid_argument("push_ensemble: activation is not C^1");
  const int total = solver.steps();
  if (n_steps < 0) n_steps = total - first_step;
  detail::require(first_step >= 0 && first_step + n_steps <= total, "push_ensemble: step window out of range");
  const int m_steps = schedule ? schedule->steps_per_interval(solver) : 0;

  ParticleEnsemble ens = init;
  const int N = ens.size();
  parallel_for(N, threads, [&](int i) {
    Rng probe_rng = derive_rng(div_cfg.seed, static_cast<uint64_t>(i));
    Vec x = ens.positions.row(i).transpose();
    double logw = ens.log_weights[i];
    for (int k = first_step; k < first_step + n_steps; ++k) {
      const std::vector<int>* active =
          schedule ? &schedule->active_sets[static_cast<size_t>(k / m_steps)] : nullptr;
      const double t = k * solver.dt;
      const Vec theta_t = control.eval(std::min(t, control.T));
      const Vec k1 = active ? masked_eval(f, *scheme, *active, x, theta_t)
                            : eval(f, x, theta_t);
      const Vec x_mid = x + 0.5 * solver.dt * k1;
      const double t_mid = std::min(t + 0.5 * solver.dt, control.T);
      const Vec theta_mid = control.eval(t_mid);
      const Vec k2 = active ? masked_eval(f, *scheme, *active, x_mid, theta_mid)
                            : eval(f, x_mid, theta_mid);
      double div;
      if (div_cfg.mode == DivergenceMode::Exact) {
        div = active ? masked_divergence_x(f, *scheme, *active, x_mid, theta_mid)
                     : divergence_x(f, x_mid, theta_mid);
      } else {
        const Mat J = active ? masked_jacobian_x(f, *scheme, *active, x_mid, theta_mid)
                             : jacobian_x(f, x_mid, theta_mid);
        std::normal_distribution<double> gauss(0.0, 1.0);
        double acc = 0.0;
        Vec e(f.d);
        for (int q = 0; q < div_cfg.probes; ++q) {
          for (int j = 0; j < f.d; ++j) e[j] = gauss(probe_rng);
          acc += e.dot(J * e);
        }
        div = acc / div_cfg.probes;
      }
      x += solver.dt * k2;
      logw -= solver.dt * div;
      if (!x.allFinite() || x.norm() > detail::kBlowupNorm) throw BlowupError(k);
    }
    ens.positions.row(i) = x.transpose();
    ens.log_weights[i] = logw;
  });
  return ens;
}

/// Axis-aligned render grid; values live at cell centers.
struct GridSpec {
  Eigen::Vector2d lo{0.0, 0.0};
  Eigen::Vector2d hi{1.0, 1.0};
  int nx = 0;
  int ny = 0;

  double cell_volume() const { return (hi.x() - lo.x()) / nx * ((hi.y() - lo.y()) / ny); }
};

struct DensityGrid {
  GridSpec spec;
  Mat values;  // ny x nx, row-major in y

  double mass() const { return values.sum() * spec.cell_volume(); }
};

/// Silverman's per-axis bandwidth for d = 2, from the weighted spread.
inline Eigen::Vector2d silverman_bandwidth(const ParticleEnsemble& ens) {
  const Vec w = ens.normalized_weights();
  Eigen::Vector2d mean = Eigen::Vector2d::Zero(), var = Eigen::Vector2d::Zero();
  for (int i = 0; i < ens.size(); ++i) mean += w[i] * ens.positions.row(i).transpose();
  for (int i = 0; i < ens.size(); ++i) {
    const Eigen::Vector2d c = ens.positions.row(i).transpose() - mean;
    var += w[i] * c.cwiseProduct(c);
  }
  const double n_factor = std::pow(static_cast<double>(ens.size()), -1.0 / 6.0);
  Eigen::Vector2d bw = var.cwiseSqrt() * n_factor;
  for (int a = 0; a < 2; ++a)
    if (bw[a] <= 0.0) bw[a] = 1e-3;
  return bw;
}

/// Grid bounds covering the given ensembles, padded by `pad_bandwidths`
/// times the bandwidth on each side.
inline GridSpec bounds_for(const std::vector<const ParticleEnsemble*>& groups,
                           const Eigen::Vector2d& bandwidth, int nx, int ny,
                           double pad_bandwidths = 3.0) {
  Eigen::Vector2d lo(1e300, 1e300), hi(-1e300, -1e300);
  for (const auto* e : groups) {
    lo = lo.cwiseMin(Eigen::Vector2d(e->positions.col(0).minCoeff(), e->positions.col(1).minCoeff()));
    hi = hi.cwiseMax(Eigen::Vector2d(e->positions.col(0).maxCoeff(), e->positions.col(1).maxCoeff()));
  }
  lo -= pad_bandwidths * bandwidth;
  hi += pad_bandwidths * bandwidth;
  return {lo, hi, nx, ny};
}

/// Weighted Gaussian KDE at cell centers. Weights are normalized here and
/// only here.
inline DensityGrid render_kde(const ParticleEnsemble& ens, const GridSpec& spec,
                              const Eigen::Vector2d& bandwidth) {
  detail::require(ens.dim() == 2, "render_kde: 2-d ensembles only");
  detail::require(bandwidth.x() > 0.0 && bandwidth.y() > 0.0, "render_kde: bandwidth must be positive");
  const Vec w = ens.normalized_weights();
  const double dx = (spec.hi.x() - spec.lo.x()) / spec.nx;
  const double dy = (spec.hi.y() - spec.lo.y()) / spec.ny;
  const double norm = 1.0 / (2.0 * M_PI * bandwidth.x() * bandwidth.y());
  DensityGrid grid;
  grid.spec = spec;
  grid.values = Mat::Zero(spec.ny, spec.nx);
  for (int i = 0; i < ens.size(); ++i) {
    const double px = ens.positions(i, 0), py = ens.positions(i, 1);
    const double wi = w[i] * norm;
    for (int iy = 0; iy < spec.ny; ++iy) {
      const double cy = spec.lo.y() + (iy + 0.5) * dy;
      const double uy = (cy - py) / bandwidth.y();
      if (uy * uy > 80.0) continue;
      const double ey = std::exp(-0.5 * uy * uy);
      for (int ix = 0; ix < spec.nx; ++ix) {
        const double cx = spec.lo.x() + (ix + 0.5) * dx;
        const double ux = (cx - px) / bandwidth.x();
        if (ux * ux > 80.0) continue;
        grid.values(iy, ix) += wi * ey * std::exp(-0.5 * ux * ux);
      }
    }
  }
  return grid;
}

inline double l1_distance(const DensityGrid& a, const DensityGrid& b) {
  detail::require(a.values.rows() == b.values.rows() && a.values.cols() == b.values.cols(),
                  "l1_distance: grid shapes differ");
  return (a.values - b.values).cwiseAbs().sum() * a.spec.cell_volume();
}

struct L1RateRow {
  double h = 0.0;
  double mean_l1 = 0.0;
  double std_error = 0.0;
};

/// L1 error between the full and dropout densities at the final time,
/// coupled through identical initial particles. The full push and the
/// render bandwidth are shared across every realization and level.
inline std::vector<L1RateRow> l1_error_mc(const NeuronField& f, const Control& control,
                                          const BatchScheme& scheme,
                                          const std::vector<double>& h_levels, int N,
                                          int grid_res, int realizations, uint64_t seed,
                                          const SolverConfig& solver, int threads = 1) {
  Rng init_rng = derive_rng(seed, 0);
  const ParticleEnsemble init = sample_initial(bump_sampler(), N, init_rng);
  const ParticleEnsemble full = push_ensemble(f, control, init, solver, nullptr, nullptr, {}, threads);
  const Eigen::Vector2d bw = silverman_bandwidth(full);

  std::vector<L1RateRow> rows;
  for (size_t level = 0; level < h_levels.size(); ++level) {
    const double h = h_levels[level];
    const int n_s = static_cast<int>(std::round(solver.T / h));
    std::vector<double> errs(static_cast<size_t>(realizations));
    for (int k = 0; k < realizations; ++k) {
      const auto schedule = DropoutSchedule::sample(
          scheme, solver.T, n_s, derive_seed(seed, (level + 1) * 1000 + static_cast<uint64_t>(k)));
      const ParticleEnsemble dropped =
          push_ensemble(f, control, init, solver, &schedule, &scheme, {}, threads);
      const GridSpec spec = bounds_for({&full, &dropped}, bw, grid_res, grid_res);
      errs[static_cast<size_t>(k)] =
          l1_distance(render_kde(full, spec, bw), render_kde(dropped, spec, bw));
    }
    double mean = 0.0;
    for (double e : errs) mean += e;
    mean /= realizations;
    double var = 0.0;
    for (double e : errs) var += (e - mean) * (e - mean);
    var /= std::max(1, realizations - 1);
    rows.push_back({h, mean, std::sqrt(var / realizations)});
  }
  return rows;
}

struct FlowMatchConfig {
  int pair_count = 250;
  int time_samples = 8;
  int iterations = 400;
  double learning_rate = 0.05;
  uint64_t seed = 0;
};

/// Flow-matching training: straight-line interpolants between sampled
/// (x_0, x_T) pairs with target velocity (x_T - x_0)/T, squared loss, Adam
/// on the control parameters. Gradients come from the closed-form
/// grad_theta blocks.
inline Control flow_match_train(const NeuronField& f, const PointSampler& source,
                                const PointSampler& target, Control init,
                                const FlowMatchConfig& cfg) {
  detail::require(cfg.pair_count >= 1, "flow_match: pair_count must be positive");
  detail::require(init.repr == ControlRepr::AffineBias || init.repr == ControlRepr::Constant,
                  "flow_match: control must be AffineBias or Constant");
  Rng rng = derive_rng(cfg.seed, 0);
  Mat x0(cfg.pair_count, f.d), x1(cfg.pair_count, f.d);
  for (int k = 0; k < cfg.pair_count; ++k) {
    x0.row(k) = source(rng).transpose();
    x1.row(k) = target(rng).transpose();
  }
  const double T = init.T;

  // Flat Adam state over the control parameters.
  const bool affine = init.repr == ControlRepr::AffineBias;
  const int pdim = affine ? 2 * f.p * f.d + 2 * f.p : init.dim;
  Vec m = Vec::Zero(pdim), v = Vec::Zero(pdim);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  std::uniform_real_distribution<double> unif_t(0.0, T);
  Control ctrl = std::move(init);
  for (int it = 1; it <= cfg.iterations; ++it) {
    Vec g = Vec::Zero(pdim);
    for (int s = 0; s < cfg.time_samples; ++s) {
      const double t = unif_t(rng);
      const double frac = t / T;
      const Vec theta = ctrl.eval(t);
      for (int k = 0; k < cfg.pair_count; ++k) {
        const Vec a = x0.row(k).transpose(), b = x1.row(k).transpose();
        const Vec xs = (1.0 - frac) * a + frac * b;
        const Vec target_v = (b - a) / T;
        const Vec resid = eval(f, xs, theta) - target_v;
        const Vec gt = grad_theta_transpose_apply(f, xs, theta, resid);  // 1/2 d||resid||^2
        if (affine) {
          for (int i = 0; i < f.p; ++i) {
            const int bs = 2 * f.d + 1;
            g.segment(i * f.d, f.d) += gt.segment(i * bs, f.d);                      // W0
            g.segment(f.p * f.d + i * f.d, f.d) += gt.segment(i * bs + f.d, f.d);    // A0
            g[2 * f.p * f.d + i] += gt[i * bs + 2 * f.d];                            // b0
            g[2 * f.p * f.d + f.p + i] += t * gt[i * bs + 2 * f.d];                  // b1
          }
        } else {
          g += gt;
        }
      }
    }
    g *= 2.0 / (cfg.pair_count * cfg.time_samples);

    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1, it), bc2 = 1.0 - std::pow(beta2, it);
    const Vec denom = (v / bc2).cwiseSqrt() + Vec::Constant(pdim, eps);
    const Vec step = (cfg.learning_rate / bc1) * m.cwiseQuotient(denom);
    if (affine) {
      for (int i = 0; i < f.p; ++i) {
        ctrl.W0.col(i) -= step.segment(i * f.d, f.d);
        ctrl.A0.row(i) -= step.segment(f.p * f.d + i * f.d, f.d).transpose();
        ctrl.b0[i] -= step[2 * f.p * f.d + i];
        ctrl.b1[i] -= step[2 * f.p * f.d + f.p + i];
      }
    } else {
      ctrl.value -= step;
    }
  }
  return ctrl;
}

/// Flow-matching loss at the current control, MC estimate over the given
/// pairs and uniformly drawn times.
inline double flow_match_loss(const NeuronField& f, const Control& ctrl, const Mat& x0,
                              const Mat& x1, int time_samples, Rng& rng) {
  std::uniform_real_distribution<double> unif_t(0.0, ctrl.T);
  double acc = 0.0;
  for (int s = 0; s < time_samples; ++s) {
    const double t = unif_t(rng);
    const double frac = t / ctrl.T;
    const Vec theta = ctrl.eval(t);
    for (int k = 0; k < x0.rows(); ++k) {
      const Vec a = x0.row(k).transpose(), b = x1.row(k).transpose();
      const Vec xs = (1.0 - frac) * a + frac * b;
      acc += (eval(f, xs, theta) - (b - a) / ctrl.T).squaredNorm();
    }
  }
  return acc / (x0.rows() * time_samples);
}

}  // namespace rbflow
