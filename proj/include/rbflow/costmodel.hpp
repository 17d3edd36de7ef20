#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "rbflow/common.hpp"
#include "rbflow/field.hpp"

namespace rbflow {

/// Inputs of the cost-accuracy model. All quantities are real-valued; only
/// measured_cost below is an exact counter.
struct CostModelParams {
  double S = 0.0;        // convergence factor of the trajectory bound
  double c_int = 0.0;    // first-order integration constant of the random model
  double gamma = 1.0;    // dt = gamma * h
  double T = 1.0;
  double r = 1.0;        // mean batch size
  double p = 1.0;        // width
  double pi_min = 1.0;
  double lam_F_x = 0.0;
  double lam_F_0 = 0.0;
  double lam_gradx_F_x = 0.0;
  double x0_norm = 0.0;

  double eps_c() const {
    const double den = c_int * gamma;
    return den > 0.0 ? S / den : std::numeric_limits<double>::infinity();
  }
};

/// First-order Euler constant along the random trajectory,
///   lam_gradx/(2 pi) e^{lam T/pi} (e^{lam T/pi} - 1) (||x0|| + lam0/lam),
/// zero when lam_F_x = 0 (a constant-in-x field has no Euler error).
inline double integration_constant(double lam_gradx_F_x, double lam_F_x, double lam_F_0,
                                   double pi_min, double T, double x0_norm) {
  if (lam_F_x == 0.0) return 0.0;
  const double e = std::exp(lam_F_x * T / pi_min);
  return lam_gradx_F_x / (2.0 * pi_min) * e * (e - 1.0) * (x0_norm + lam_F_0 / lam_F_x);
}

/// Same constant for the full model (pi_min = 1).
inline double integration_constant_fm(const CostModelParams& pr) {
  return integration_constant(pr.lam_gradx_F_x, pr.lam_F_x, pr.lam_F_0, 1.0, pr.T, pr.x0_norm);
}

/// Builds the model inputs from Lipschitz data and scheme levers. The
/// stability cap gamma <= c_stab pi_min / lam_F_x (default c_stab = 2,
/// explicit Euler heuristic) is applied on top of gamma <= 1.
inline CostModelParams build_cost_model(const LipschitzBounds& lip, double S, double gamma,
                                        double T, double r, double p, double pi_min,
                                        double x0_norm, double c_stab = 2.0) {
  CostModelParams pr;
  pr.S = S;
  pr.T = T;
  pr.r = r;
  pr.p = p;
  pr.pi_min = pi_min;
  pr.lam_F_x = lip.lam_F_x;
  pr.lam_F_0 = lip.lam_F_0;
  pr.lam_gradx_F_x = lip.lam_gradx_F_x.value_or(0.0);
  pr.x0_norm = x0_norm;
  double cap = 1.0;
  if (lip.lam_F_x > 0.0) cap = std::min(cap, c_stab * pi_min / lip.lam_F_x);
  pr.gamma = std::min(gamma, cap);
  pr.c_int = integration_constant(pr.lam_gradx_F_x, pr.lam_F_x, pr.lam_F_0, pi_min, T, x0_norm);
  return pr;
}

/// RMS error envelope E(h) = sqrt(S h) + c_int gamma h.
inline double error_envelope(const CostModelParams& pr, double h) {
  detail::require_domain(h > 0.0, "error_envelope: h must be positive");
  return std::sqrt(pr.S * h) + pr.c_int * pr.gamma * h;
}

/// Largest admissible step, the root of E(h) = eps:
///   h* = 4 eps^2 / S (1 + sqrt(1 + 4 c gamma eps / S))^{-2}
/// with the degenerate branches S = 0 -> eps/(c gamma) and
/// c gamma = 0 -> eps^2 / S. Throws UnboundedError when both vanish.
inline double optimal_step(const CostModelParams& pr, double eps) {
  detail::require_domain(eps > 0.0, "optimal_step: eps must be positive");
  const double cg = pr.c_int * pr.gamma;
  if (pr.S == 0.0 && cg == 0.0)
    throw UnboundedError("optimal_step: every h is admissible (S = 0 and c_int gamma = 0)");
  if (pr.S == 0.0) return eps / cg;
  if (cg == 0.0) return eps * eps / pr.S;
  const double root = 1.0 + std::sqrt(1.0 + 4.0 * cg * eps / pr.S);
  return 4.0 * eps * eps / (pr.S * root * root);
}

/// Suboptimal but simple step splitting the two error sources evenly.
inline double balanced_step(const CostModelParams& pr, double eps) {
  detail::require_domain(eps > 0.0, "balanced_step: eps must be positive");
  const double cg = pr.c_int * pr.gamma;
  if (pr.S == 0.0 && cg == 0.0)
    throw UnboundedError("balanced_step: every h is admissible");
  if (eps >= 2.0 * pr.eps_c()) return eps / (2.0 * cg);
  return eps * eps / (4.0 * pr.S);
}

enum class CostRegime { DiscretizationLimited, VarianceLimited };

inline const char* regime_name(CostRegime r) {
  return r == CostRegime::DiscretizationLimited ? "discretization_limited" : "variance_limited";
}

struct CostReport {
  double h_star = 0.0;
  double C_RM_star = 0.0;
  double C_FM_star = 0.0;
  double ratio = 0.0;
  CostRegime regime = CostRegime::DiscretizationLimited;
  double eps_c = 0.0;
};

/// Optimal costs of both models and their ratio:
///   C_RM* = T r / (gamma h*),  C_FM* = T p c_int_FM / eps,
///   ratio = 4 p c_FM gamma eps / (r S (1 + sqrt(1 + 4 c_RM gamma eps / S))^2)
/// which collapses to p c_FM / (r c_RM) when S = 0. The ratio expression is
/// algebraically C_FM*/C_RM* and the two are cross-checked to 1e-12.
inline CostReport optimal_cost(const CostModelParams& pr, double eps) {
  detail::require_domain(eps > 0.0, "optimal_cost: eps must be positive");
  const double c_fm = integration_constant_fm(pr);
  CostReport rep;
  rep.eps_c = pr.eps_c();
  rep.regime = eps >= rep.eps_c ? CostRegime::DiscretizationLimited : CostRegime::VarianceLimited;
  rep.h_star = optimal_step(pr, eps);
  rep.C_RM_star = pr.T * pr.r / (pr.gamma * rep.h_star);
  rep.C_FM_star = pr.T * pr.p * c_fm / eps;
  if (pr.S == 0.0) {
    rep.ratio = pr.c_int > 0.0 ? pr.p * c_fm / (pr.r * pr.c_int)
                               : std::numeric_limits<double>::quiet_NaN();
  } else {
    const double root = 1.0 + std::sqrt(1.0 + 4.0 * pr.c_int * pr.gamma * eps / pr.S);
    rep.ratio = 4.0 * pr.p * c_fm * pr.gamma * eps / (pr.r * pr.S * root * root);
  }
  const double direct = rep.C_FM_star / rep.C_RM_star;
  if (std::isfinite(rep.ratio) && std::isfinite(direct) && direct != 0.0) {
    if (std::abs(rep.ratio - direct) > 1e-12 * std::max(std::abs(direct), 1.0))
      throw std::logic_error("optimal_cost: ratio formula disagrees with C_FM*/C_RM*");
  }
  return rep;
}

/// Practical batch-size rule: the smallest r whose critical tolerance
/// satisfies eps >= 2 eps_c(r); p when no r qualifies.
inline int practical_batch_size(const std::function<CostModelParams(int)>& params_for_r,
                                double eps, int p) {
  for (int r = 1; r <= p; ++r) {
    if (eps >= 2.0 * params_for_r(r).eps_c()) return r;
  }
  return p;
}

/// Exact neuron-evaluation count of an executed run.
inline uint64_t measured_cost(const EvalCounter& counter) { return counter.neuron_evals; }

}  // namespace rbflow
