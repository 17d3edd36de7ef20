#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rbflow/activation.hpp"
#include "rbflow/common.hpp"
#include "rbflow/control.hpp"

namespace rbflow {

/// Counts elementary neuron evaluations during integration runs.
struct EvalCounter {
  uint64_t neuron_evals = 0;
  uint64_t steps = 0;
};

/// Neuron-decomposed vector field F(x, theta) = sum_i w_i sigma(<a_i, x> + b_i).
///
/// FullParams: theta = (w_i, a_i, b_i)_i, flat length p*(2d+1).
/// WeightsOnly: theta = (w_i)_i, flat length p*d; (a_i, b_i) are frozen in
/// the field itself. In that mode F is affine in theta.
struct NeuronField {
  int d = 0;
  int p = 0;
  Activation activation = Activation::tanh();
  bool weights_only = false;
  Mat fixed_a;  // p x d, WeightsOnly
  Vec fixed_b;  // p,     WeightsOnly

  static NeuronField full(int d, int p, Activation act) {
    detail::require(d >= 1 && p >= 1, "field dims must be positive");
    NeuronField f;
    f.d = d;
    f.p = p;
    f.activation = act;
    return f;
  }

  static NeuronField weights_only_field(int d, int p, Activation act, Mat a, Vec b) {
    detail::require(d >= 1 && p >= 1, "field dims must be positive");
    detail::require(a.rows() == p && a.cols() == d, "fixed a must be p x d");
    detail::require(b.size() == p, "fixed b must have length p");
    NeuronField f;
    f.d = d;
    f.p = p;
    f.activation = act;
    f.weights_only = true;
    f.fixed_a = std::move(a);
    f.fixed_b = std::move(b);
    return f;
  }

  int theta_dim() const { return weights_only ? p * d : p * (2 * d + 1); }
  int block_size() const { return weights_only ? d : 2 * d + 1; }

  void check_args(const Vec& x, const Vec& theta) const {
    if (x.size() != d || theta.size() != theta_dim())
      throw std::invalid_argument("field: dimension mismatch");
    if (!x.allFinite() || !theta.allFinite())
      throw std::domain_error("field: non-finite input");
  }

  // Per-neuron accessors into the flat parameter vector.
  Eigen::Map<const Vec> w_i(const Vec& theta, int i) const {
    return Eigen::Map<const Vec>(theta.data() + i * block_size(), d);
  }
  Vec a_i(const Vec& theta, int i) const {
    if (weights_only) return fixed_a.row(i).transpose();
    return Eigen::Map<const Vec>(theta.data() + i * block_size() + d, d);
  }
  double b_i(const Vec& theta, int i) const {
    if (weights_only) return fixed_b[i];
    return theta[i * block_size() + 2 * d];
  }
  double z_i(const Vec& x, const Vec& theta, int i) const {
    return a_i(theta, i).dot(x) + b_i(theta, i);
  }
};

/// Single-neuron value f_i(x, theta_i) = w_i sigma(<a_i, x> + b_i).
inline Vec eval_neuron(const NeuronField& f, int i, const Vec& x, const Vec& theta) {
  return f.w_i(theta, i) * f.activation.value(f.z_i(x, theta, i));
}

/// F(x, theta); neurons are summed in ascending i with pairwise association.
inline Vec eval(const NeuronField& f, const Vec& x, const Vec& theta,
                EvalCounter* counter = nullptr) {
  f.check_args(x, theta);
  if (counter) counter->neuron_evals += static_cast<uint64_t>(f.p);
  return detail::pairwise_sum(0, f.p, f.d, [&](int i) { return eval_neuron(f, i, x, theta); });
}

/// dF/dx = sum_i w_i sigma'(z_i) a_i^T (d x d).
inline Mat jacobian_x(const NeuronField& f, const Vec& x, const Vec& theta) {
  f.check_args(x, theta);
  Mat J = Mat::Zero(f.d, f.d);
  for (int i = 0; i < f.p; ++i)
    J.noalias() += f.activation.deriv(f.z_i(x, theta, i)) * (f.w_i(theta, i) * f.a_i(theta, i).transpose());
  return J;
}

/// (grad_theta F)^T v, laid out like theta. Blocks per neuron
/// (z_i = <a_i,x> + b_i, s = <w_i, v>):
///   d/dw_i = sigma(z_i) v,  d/da_i = sigma'(z_i) s x,  d/db_i = sigma'(z_i) s.
/// WeightsOnly keeps only the w blocks.
inline Vec grad_theta_transpose_apply(const NeuronField& f, const Vec& x, const Vec& theta,
                                      const Vec& v) {
  f.check_args(x, theta);
  detail::require(v.size() == f.d, "grad_theta: v must have length d");
  Vec g = Vec::Zero(f.theta_dim());
  const int bs = f.block_size();
  for (int i = 0; i < f.p; ++i) {
    const double z = f.z_i(x, theta, i);
    Eigen::Map<Vec>(g.data() + i * bs, f.d) = f.activation.value(z) * v;
    if (!f.weights_only) {
      const double s = f.activation.deriv(z) * f.w_i(theta, i).dot(v);
      Eigen::Map<Vec>(g.data() + i * bs + f.d, f.d) = s * x;
      g[i * bs + 2 * f.d] = s;
    }
  }
  return g;
}

/// trace dF/dx = sum_i sigma'(z_i) <w_i, a_i>. Needs a C^1 activation.
inline double divergence_x(const NeuronField& f, const Vec& x, const Vec& theta) {
  if (!f.activation.is_c1())
    throw std::invalid_argument("divergence_x: activation is not C^1");
  f.check_args(x, theta);
  double tr = 0.0;
  for (int i = 0; i < f.p; ++i)
    tr += f.activation.deriv(f.z_i(x, theta, i)) * f.w_i(theta, i).dot(f.a_i(theta, i));
  return tr;
}

/// Randomized trace estimate: mean over probes of e^T (dF/dx) e with
/// e ~ N(0, Id). Unbiased for divergence_x.
inline double hutchinson_divergence(const NeuronField& f, const Vec& x, const Vec& theta,
                                    int probes, Rng& rng) {
  detail::require(probes >= 1, "hutchinson: probes must be positive");
  if (!f.activation.is_c1())
    throw std::invalid_argument("hutchinson: activation is not C^1");
  const Mat J = jacobian_x(f, x, theta);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double acc = 0.0;
  Vec e(f.d);
  for (int k = 0; k < probes; ++k) {
    for (int j = 0; j < f.d; ++j) e[j] = gauss(rng);
    acc += e.dot(J * e);
  }
  return acc / probes;
}

/// A-priori Lipschitz data for the single-layer field under a control:
///   lam_F_x       = lam_sigma * sum_i sup_t||w_i|| * sup_t||a_i||
///   lam_F_0       = sum_i sup_t ||w_i sigma(b_i)||
///   lam_gradx_F_x = lam_sigma' * sum_i sup_t||w_i|| * sup_t||a_i||^2  (C^1 only)
struct LipschitzBounds {
  double lam_F_x = 0.0;
  double lam_F_0 = 0.0;
  std::optional<double> lam_gradx_F_x;
};

namespace detail {

// sup_t |sigma(b_i(t))| over [0, T], exact per control representation.
inline double sup_abs_sigma_b(const Activation& act, const Control& c, const NeuronField& f,
                              int i) {
  switch (c.repr) {
    case ControlRepr::Constant: {
      const double b = f.b_i(c.value, i);
      return std::abs(act.value(b));
    }
    case ControlRepr::AffineBias: {
      const double blo = std::min(c.b0[i], c.b0[i] + c.b1[i] * c.T);
      const double bhi = std::max(c.b0[i], c.b0[i] + c.b1[i] * c.T);
      return act.abs_sup_on(blo, bhi);
    }
    case ControlRepr::PiecewiseConstant: {
      double m = 0.0;
      for (const Vec& v : c.values) m = std::max(m, std::abs(act.value(f.b_i(v, i))));
      return m;
    }
  }
  return 0.0;
}

}  // namespace detail

inline LipschitzBounds lipschitz_bounds(const NeuronField& f, const Control& c) {
  detail::require(c.dim == f.theta_dim(), "lipschitz_bounds: control/field layout mismatch");
  LipschitzBounds out;
  double gradx = 0.0;
  for (int i = 0; i < f.p; ++i) {
    double w_sup = 0.0, a_sup = 0.0, f0_sup = 0.0;
    switch (c.repr) {
      case ControlRepr::Constant: {
        w_sup = f.w_i(c.value, i).norm();
        a_sup = f.a_i(c.value, i).norm();
        f0_sup = w_sup * detail::sup_abs_sigma_b(f.activation, c, f, i);
        break;
      }
      case ControlRepr::AffineBias: {
        w_sup = c.W0.col(i).norm();
        a_sup = c.A0.row(i).norm();
        f0_sup = w_sup * detail::sup_abs_sigma_b(f.activation, c, f, i);
        break;
      }
      case ControlRepr::PiecewiseConstant: {
        for (const Vec& v : c.values) {
          w_sup = std::max(w_sup, f.w_i(v, i).norm());
          a_sup = std::max(a_sup, f.a_i(v, i).norm());
          f0_sup = std::max(f0_sup, f.w_i(v, i).norm() * std::abs(f.activation.value(f.b_i(v, i))));
        }
        break;
      }
    }
    out.lam_F_x += f.activation.lipschitz_sigma * w_sup * a_sup;
    out.lam_F_0 += f0_sup;
    gradx += w_sup * a_sup * a_sup;
  }
  if (f.activation.lipschitz_sigma_prime)
    out.lam_gradx_F_x = *f.activation.lipschitz_sigma_prime * gradx;
  return out;
}

}  // namespace rbflow
