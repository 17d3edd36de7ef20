#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "rbflow/common.hpp"
#include "rbflow/field.hpp"

namespace rbflow {

enum class SchemeKind {
  Explicit,
  SingleBatch,
  DropOne,
  PickOne,
  BalancedAllSubsets,
  BalancedDisjoint,
  AllSubsets,
  Bernoulli,
};

/// A covering of the neuron indices [0, p) together with a sampling law.
/// Canonical kinds use uniform q; Explicit takes arbitrary batches/q.
/// Implicit kinds with more than 2^20 outcomes refuse enumeration and
/// only support sampling plus closed forms.
struct BatchScheme {
  SchemeKind kind = SchemeKind::SingleBatch;
  int p = 0;
  int r = 0;          // Balanced*
  double q_B = 0.0;   // Bernoulli
  std::vector<std::vector<int>> batches;  // Explicit
  std::vector<double> q;                  // Explicit

  static constexpr int64_t kEnumerationCutoff = int64_t(1) << 20;

  static BatchScheme single_batch(int p) { return canonical(SchemeKind::SingleBatch, p); }
  static BatchScheme drop_one(int p) { return canonical(SchemeKind::DropOne, p); }
  static BatchScheme pick_one(int p) { return canonical(SchemeKind::PickOne, p); }
  static BatchScheme all_subsets(int p) { return canonical(SchemeKind::AllSubsets, p); }

  static BatchScheme balanced(int p, int r) {
    detail::require(p >= 2 && r >= 1 && r <= p - 1, "balanced: need 1 <= r <= p-1");
    BatchScheme s;
    s.kind = SchemeKind::BalancedAllSubsets;
    s.p = p;
    s.r = r;
    return s;
  }

  /// Canonical partition {0..r-1}, {r..2r-1}, ... (r must divide p).
  static BatchScheme balanced_disjoint(int p, int r) {
    detail::require(p >= 1 && r >= 1 && r <= p && p % r == 0, "disjoint: r must divide p");
    BatchScheme s;
    s.kind = SchemeKind::BalancedDisjoint;
    s.p = p;
    s.r = r;
    return s;
  }

  static BatchScheme bernoulli(int p, double q_keep) {
    detail::require(q_keep > 0.0 && q_keep <= 1.0, "bernoulli: q_B must be in (0, 1]");
    BatchScheme s;
    s.kind = SchemeKind::Bernoulli;
    s.p = p;
    s.q_B = q_keep;
    return s;
  }

  static BatchScheme explicit_scheme(int p, std::vector<std::vector<int>> batches_in,
                                     std::vector<double> q_in) {
    detail::require(p >= 1, "explicit: p must be positive");
    detail::require(!batches_in.empty() && batches_in.size() == q_in.size(),
                    "explicit: need matching batches and q");
    std::vector<bool> covered(static_cast<size_t>(p), false);
    double qsum = 0.0;
    for (size_t j = 0; j < batches_in.size(); ++j) {
      auto& b = batches_in[j];
      detail::require(!b.empty(), "explicit: empty batch");
      std::sort(b.begin(), b.end());
      detail::require(std::adjacent_find(b.begin(), b.end()) == b.end(),
                      "explicit: duplicate index within a batch");
      for (int i : b) {
        detail::require(i >= 0 && i < p, "explicit: index out of range");
        covered[static_cast<size_t>(i)] = true;
      }
      detail::require(q_in[j] > 0.0 && q_in[j] <= 1.0, "explicit: q_j must be in (0, 1]");
      qsum += q_in[j];
    }
    detail::require(std::abs(qsum - 1.0) <= 1e-12, "explicit: q must sum to 1");
    detail::require(std::all_of(covered.begin(), covered.end(), [](bool c) { return c; }),
                    "explicit: batches must cover [p]");
    BatchScheme s;
    s.kind = SchemeKind::Explicit;
    s.p = p;
    s.batches = std::move(batches_in);
    s.q = std::move(q_in);
    return s;
  }

  /// Number of batches in the sampling law (2^p for subset-valued kinds).
  double n_batches() const {
    switch (kind) {
      case SchemeKind::Explicit: return static_cast<double>(batches.size());
      case SchemeKind::SingleBatch: return 1.0;
      case SchemeKind::DropOne:
      case SchemeKind::PickOne: return static_cast<double>(p);
      case SchemeKind::BalancedAllSubsets: return binomial(p, r);
      case SchemeKind::BalancedDisjoint: return static_cast<double>(p / r);
      case SchemeKind::AllSubsets: return std::ldexp(1.0, p);
      case SchemeKind::Bernoulli: return q_B == 1.0 ? 1.0 : std::ldexp(1.0, p);
    }
    return 0.0;
  }

  bool enumerable() const { return n_batches() <= static_cast<double>(kEnumerationCutoff); }

  double inclusion_prob(int i) const {
    detail::require(i >= 0 && i < p, "inclusion_prob: index out of range");
    switch (kind) {
      case SchemeKind::Explicit: {
        double pi = 0.0;
        for (size_t j = 0; j < batches.size(); ++j)
          if (std::binary_search(batches[j].begin(), batches[j].end(), i)) pi += q[j];
        return pi;
      }
      case SchemeKind::SingleBatch: return 1.0;
      case SchemeKind::DropOne: return 1.0 - 1.0 / p;
      case SchemeKind::PickOne: return 1.0 / p;
      case SchemeKind::BalancedAllSubsets:
      case SchemeKind::BalancedDisjoint: return static_cast<double>(r) / p;
      case SchemeKind::AllSubsets: return 0.5;
      case SchemeKind::Bernoulli: return q_B;
    }
    return 0.0;
  }

  double pi_min() const {
    double m = 1.0;
    for (int i = 0; i < p; ++i) m = std::min(m, inclusion_prob(i));
    return m;
  }

  /// Mean batch size sum_j q_j |B_j|.
  double mean_batch_size() const {
    switch (kind) {
      case SchemeKind::Explicit: {
        double s = 0.0;
        for (size_t j = 0; j < batches.size(); ++j) s += q[j] * batches[j].size();
        return s;
      }
      case SchemeKind::SingleBatch: return static_cast<double>(p);
      case SchemeKind::DropOne: return static_cast<double>(p - 1);
      case SchemeKind::PickOne: return 1.0;
      case SchemeKind::BalancedAllSubsets:
      case SchemeKind::BalancedDisjoint: return static_cast<double>(r);
      case SchemeKind::AllSubsets: return p / 2.0;
      case SchemeKind::Bernoulli: return q_B * p;
    }
    return 0.0;
  }

  /// Sampling imbalance sum_j 1/q_j, by closed form (never enumerates).
  double sampling_imbalance() const {
    switch (kind) {
      case SchemeKind::Explicit: {
        double s = 0.0;
        for (double qj : q) s += 1.0 / qj;
        return s;
      }
      case SchemeKind::SingleBatch: return 1.0;
      case SchemeKind::DropOne:
      case SchemeKind::PickOne: return static_cast<double>(p) * p;
      case SchemeKind::BalancedAllSubsets: {
        const double nb = binomial(p, r);
        return nb * nb;
      }
      case SchemeKind::BalancedDisjoint: {
        const double nb = static_cast<double>(p) / r;
        return nb * nb;
      }
      case SchemeKind::AllSubsets: return std::ldexp(1.0, 2 * p);
      case SchemeKind::Bernoulli:
        return q_B == 1.0 ? 1.0 : std::pow(q_B * (1.0 - q_B), -p);
    }
    return 0.0;
  }

  /// Draws one active set. Subset-valued kinds flip p independent coins.
  std::vector<int> sample(Rng& rng) const {
    std::vector<int> active;
    switch (kind) {
      case SchemeKind::Explicit: {
        std::discrete_distribution<int> pick(q.begin(), q.end());
        return batches[static_cast<size_t>(pick(rng))];
      }
      case SchemeKind::SingleBatch: {
        active.resize(static_cast<size_t>(p));
        std::iota(active.begin(), active.end(), 0);
        return active;
      }
      case SchemeKind::DropOne: {
        const int drop = std::uniform_int_distribution<int>(0, p - 1)(rng);
        active.reserve(static_cast<size_t>(p - 1));
        for (int i = 0; i < p; ++i)
          if (i != drop) active.push_back(i);
        return active;
      }
      case SchemeKind::PickOne:
        return {std::uniform_int_distribution<int>(0, p - 1)(rng)};
      case SchemeKind::BalancedAllSubsets: {
        // Partial Fisher-Yates over [0, p), first r entries kept, sorted.
        std::vector<int> idx(static_cast<size_t>(p));
        std::iota(idx.begin(), idx.end(), 0);
        for (int k = 0; k < r; ++k) {
          const int j = std::uniform_int_distribution<int>(k, p - 1)(rng);
          std::swap(idx[static_cast<size_t>(k)], idx[static_cast<size_t>(j)]);
        }
        active.assign(idx.begin(), idx.begin() + r);
        std::sort(active.begin(), active.end());
        return active;
      }
      case SchemeKind::BalancedDisjoint: {
        const int block = std::uniform_int_distribution<int>(0, p / r - 1)(rng);
        active.resize(static_cast<size_t>(r));
        std::iota(active.begin(), active.end(), block * r);
        return active;
      }
      case SchemeKind::AllSubsets:
      case SchemeKind::Bernoulli: {
        const double keep = kind == SchemeKind::AllSubsets ? 0.5 : q_B;
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int i = 0; i < p; ++i)
          if (unif(rng) < keep) active.push_back(i);
        return active;
      }
    }
    return active;
  }

  /// Enumerates the sampling law: fn(q_j, batch_j) over every outcome with
  /// positive probability. Throws for kinds past the enumeration cutoff.
  void for_each_batch(const std::function<void(double, const std::vector<int>&)>& fn) const {
    if (!enumerable())
      throw std::invalid_argument("scheme: enumeration refused (more than 2^20 batches)");
    std::vector<int> buf;
    switch (kind) {
      case SchemeKind::Explicit:
        for (size_t j = 0; j < batches.size(); ++j) fn(q[j], batches[j]);
        return;
      case SchemeKind::SingleBatch:
        buf.resize(static_cast<size_t>(p));
        std::iota(buf.begin(), buf.end(), 0);
        fn(1.0, buf);
        return;
      case SchemeKind::DropOne:
        for (int drop = 0; drop < p; ++drop) {
          buf.clear();
          for (int i = 0; i < p; ++i)
            if (i != drop) buf.push_back(i);
          fn(1.0 / p, buf);
        }
        return;
      case SchemeKind::PickOne:
        for (int i = 0; i < p; ++i) {
          buf = {i};
          fn(1.0 / p, buf);
        }
        return;
      case SchemeKind::BalancedAllSubsets: {
        const double qj = 1.0 / binomial(p, r);
        buf.resize(static_cast<size_t>(r));
        std::iota(buf.begin(), buf.end(), 0);
        while (true) {
          fn(qj, buf);
          int k = r - 1;
          while (k >= 0 && buf[static_cast<size_t>(k)] == p - r + k) --k;
          if (k < 0) break;
          ++buf[static_cast<size_t>(k)];
          for (int j = k + 1; j < r; ++j)
            buf[static_cast<size_t>(j)] = buf[static_cast<size_t>(j - 1)] + 1;
        }
        return;
      }
      case SchemeKind::BalancedDisjoint:
        for (int blockStart = 0; blockStart < p; blockStart += r) {
          buf.resize(static_cast<size_t>(r));
          std::iota(buf.begin(), buf.end(), blockStart);
          fn(static_cast<double>(r) / p, buf);
        }
        return;
      case SchemeKind::AllSubsets:
      case SchemeKind::Bernoulli: {
        if (kind == SchemeKind::Bernoulli && q_B == 1.0) {
          buf.resize(static_cast<size_t>(p));
          std::iota(buf.begin(), buf.end(), 0);
          fn(1.0, buf);
          return;
        }
        const double keep = kind == SchemeKind::AllSubsets ? 0.5 : q_B;
        const uint64_t total = uint64_t(1) << p;
        for (uint64_t mask = 0; mask < total; ++mask) {
          buf.clear();
          for (int i = 0; i < p; ++i)
            if (mask & (uint64_t(1) << i)) buf.push_back(i);
          const int k = static_cast<int>(buf.size());
          fn(std::pow(keep, k) * std::pow(1.0 - keep, p - k), buf);
        }
        return;
      }
    }
  }

  /// 1/pi_i for every neuron, the Horvitz-Thompson reweighting.
  Vec inverse_inclusion() const {
    Vec inv(p);
    for (int i = 0; i < p; ++i) inv[i] = 1.0 / inclusion_prob(i);
    return inv;
  }

  static double binomial(int n, int k) {
    double v = 1.0;
    for (int j = 1; j <= k; ++j) v *= static_cast<double>(n - k + j) / j;
    return std::round(v);
  }
};

/// Masked field F^(B)(x, theta) = sum_{i in B} f_i(x, theta_i) / pi_i.
/// An empty active set yields the zero field (subset-valued kinds only).
inline Vec masked_eval(const NeuronField& f, const BatchScheme& scheme,
                       const std::vector<int>& active, const Vec& x, const Vec& theta,
                       EvalCounter* counter = nullptr) {
  f.check_args(x, theta);
  for (int i : active)
    detail::require(i >= 0 && i < f.p, "masked_eval: active index out of range");
  if (counter) counter->neuron_evals += active.size();
  const int n = static_cast<int>(active.size());
  return detail::pairwise_sum(0, n, f.d, [&](int k) {
    const int i = active[static_cast<size_t>(k)];
    return Vec(eval_neuron(f, i, x, theta) / scheme.inclusion_prob(i));
  });
}

inline Mat masked_jacobian_x(const NeuronField& f, const BatchScheme& scheme,
                             const std::vector<int>& active, const Vec& x, const Vec& theta) {
  Mat J = Mat::Zero(f.d, f.d);
  for (int i : active)
    J.noalias() += (f.activation.deriv(f.z_i(x, theta, i)) / scheme.inclusion_prob(i)) *
                   (f.w_i(theta, i) * f.a_i(theta, i).transpose());
  return J;
}

inline double masked_divergence_x(const NeuronField& f, const BatchScheme& scheme,
                                  const std::vector<int>& active, const Vec& x,
                                  const Vec& theta) {
  if (!f.activation.is_c1())
    throw std::invalid_argument("masked_divergence_x: activation is not C^1");
  double tr = 0.0;
  for (int i : active)
    tr += f.activation.deriv(f.z_i(x, theta, i)) / scheme.inclusion_prob(i) *
          f.w_i(theta, i).dot(f.a_i(theta, i));
  return tr;
}

/// (grad_theta F^(B))^T v: per-neuron blocks scaled by 1/pi_i for active
/// neurons, zero elsewhere.
inline Vec masked_grad_theta_transpose_apply(const NeuronField& f, const BatchScheme& scheme,
                                             const std::vector<int>& active, const Vec& x,
                                             const Vec& theta, const Vec& v) {
  Vec g = Vec::Zero(f.theta_dim());
  const int bs = f.block_size();
  for (int i : active) {
    const double inv_pi = 1.0 / scheme.inclusion_prob(i);
    const double z = f.z_i(x, theta, i);
    Eigen::Map<Vec>(g.data() + i * bs, f.d) = inv_pi * f.activation.value(z) * v;
    if (!f.weights_only) {
      const double s = inv_pi * f.activation.deriv(z) * f.w_i(theta, i).dot(v);
      Eigen::Map<Vec>(g.data() + i * bs + f.d, f.d) = s * x;
      g[i * bs + 2 * f.d] = s;
    }
  }
  return g;
}

/// Per-point neuron statistics: mu = ||mean_i f_i||, sigma2 = mean squared
/// deviation of the f_i around their mean (two-pass).
struct NeuronStats {
  double mu = 0.0;
  double sigma2 = 0.0;
};

inline NeuronStats neuron_stats(const NeuronField& f, const Vec& x, const Vec& theta) {
  f.check_args(x, theta);
  std::vector<Vec> fi(static_cast<size_t>(f.p));
  for (int i = 0; i < f.p; ++i) fi[static_cast<size_t>(i)] = eval_neuron(f, i, x, theta);
  Vec mean = Vec::Zero(f.d);
  for (const Vec& v : fi) mean += v;
  mean /= f.p;
  double s2 = 0.0;
  for (const Vec& v : fi) s2 += (v - mean).squaredNorm();
  return {mean.norm(), s2 / f.p};
}

inline double mask_variance_enumerated(const NeuronField& f, const BatchScheme& scheme,
                                       const Vec& x, const Vec& theta);

/// Masking variance Lambda(x) = sum_j q_j ||F - F^(j)||^2.
///
/// Closed forms per scheme (sigma2/mu from neuron_stats):
///   drop-one   p^2/(p-1)^2 sigma2         pick-one  p^2 sigma2
///   balanced r p^2(p-r)/((p-1)r) sigma2   all subsets p (sigma2 + mu^2)
///   bernoulli  (1-q_B)/q_B p (sigma2 + mu^2)
/// The disjoint partition is evaluated exactly per block,
/// (p/r) sum_j ||sum_{i in B_j} (f_i - mean)||^2; the balanced-r expression
/// equals its average over random partitions only.
inline double mask_variance(const NeuronField& f, const BatchScheme& scheme, const Vec& x,
                            const Vec& theta) {
  switch (scheme.kind) {
    case SchemeKind::SingleBatch:
      return 0.0;
    case SchemeKind::DropOne: {
      const auto st = neuron_stats(f, x, theta);
      const double p = scheme.p;
      return p * p / ((p - 1.0) * (p - 1.0)) * st.sigma2;
    }
    case SchemeKind::PickOne: {
      const auto st = neuron_stats(f, x, theta);
      const double p = scheme.p;
      return p * p * st.sigma2;
    }
    case SchemeKind::BalancedAllSubsets: {
      const auto st = neuron_stats(f, x, theta);
      const double p = scheme.p, r = scheme.r;
      return p * p * (p - r) / ((p - 1.0) * r) * st.sigma2;
    }
    case SchemeKind::BalancedDisjoint: {
      Vec mean = Vec::Zero(f.d);
      std::vector<Vec> fi(static_cast<size_t>(f.p));
      for (int i = 0; i < f.p; ++i) {
        fi[static_cast<size_t>(i)] = eval_neuron(f, i, x, theta);
        mean += fi[static_cast<size_t>(i)];
      }
      mean /= f.p;
      const double scale = static_cast<double>(f.p) / scheme.r;
      double acc = 0.0;
      for (int blockStart = 0; blockStart < f.p; blockStart += scheme.r) {
        Vec g = Vec::Zero(f.d);
        for (int i = blockStart; i < blockStart + scheme.r; ++i)
          g += fi[static_cast<size_t>(i)] - mean;
        acc += g.squaredNorm();
      }
      return scale * acc;
    }
    case SchemeKind::AllSubsets: {
      const auto st = neuron_stats(f, x, theta);
      return f.p * (st.sigma2 + st.mu * st.mu);
    }
    case SchemeKind::Bernoulli: {
      const auto st = neuron_stats(f, x, theta);
      return (1.0 - scheme.q_B) / scheme.q_B * f.p * (st.sigma2 + st.mu * st.mu);
    }
    case SchemeKind::Explicit:
      return mask_variance_enumerated(f, scheme, x, theta);
  }
  return 0.0;
}

/// Lambda by direct enumeration of the sampling law.
inline double mask_variance_enumerated(const NeuronField& f, const BatchScheme& scheme,
                                       const Vec& x, const Vec& theta) {
  const Vec full = eval(f, x, theta);
  double acc = 0.0;
  scheme.for_each_batch([&](double qj, const std::vector<int>& batch) {
    acc += qj * (full - masked_eval(f, scheme, batch, x, theta)).squaredNorm();
  });
  return acc;
}

/// Gamma(x) = sum_j q_j ||grad_x F - grad_x F^(j)||_F^2. The Frobenius norm
/// upper-bounds the operator norm, so bounds stated with Gamma stay valid.
inline double jacobian_mask_variance(const NeuronField& f, const BatchScheme& scheme,
                                     const Vec& x, const Vec& theta) {
  if (!f.activation.is_c1())
    throw std::invalid_argument("jacobian_mask_variance: activation is not C^1");
  const Mat full = jacobian_x(f, x, theta);
  double acc = 0.0;
  scheme.for_each_batch([&](double qj, const std::vector<int>& batch) {
    acc += qj * (full - masked_jacobian_x(f, scheme, batch, x, theta)).squaredNorm();
  });
  return acc;
}

/// Explicit convergence factor for the trajectory bound
/// E[sup ||x - x_hat||^2] <= S h:
///   lam > 0 : (2 lam / pi_min) e^{2 lam T / pi_min}
///             [ T L sqrt(sum_j 1/q_j) + sqrt(T L) (||x0|| + lam0/lam) ]
///   lam = 0 : 2 (lam0 / pi_min) sqrt(T L)
/// with L = ||Lambda||_{L1(0,T)}.
struct ConvergenceFactorInputs {
  double lam_F_x = 0.0;
  double lam_F_0 = 0.0;
  double T = 0.0;
  double lambda_l1 = 0.0;
  double sum_inv_q = 1.0;
  double pi_min = 1.0;
  double x0_norm = 0.0;
};

inline double convergence_factor(const ConvergenceFactorInputs& in) {
  detail::require_domain(in.pi_min > 0.0 && in.pi_min <= 1.0, "convergence_factor: pi_min must be in (0, 1]");
  detail::require_domain(in.T > 0.0, "convergence_factor: T must be positive");
  detail::require_domain(in.lambda_l1 >= 0.0, "convergence_factor: ||Lambda||_L1 must be nonnegative");
  if (in.lam_F_x == 0.0)
    return 2.0 * in.lam_F_0 / in.pi_min * std::sqrt(in.T * in.lambda_l1);
  const double rate = 2.0 * in.lam_F_x / in.pi_min;
  return rate * std::exp(rate * in.T) *
         (in.T * in.lambda_l1 * std::sqrt(in.sum_inv_q) +
          std::sqrt(in.T * in.lambda_l1) * (in.x0_norm + in.lam_F_0 / in.lam_F_x));
}

/// The three design levers plus the mean batch size.
struct DesignLevers {
  double lambda_sup = 0.0;
  double sum_inv_q = 1.0;
  double pi_min = 1.0;
  double mean_batch_size = 0.0;
};

}  // namespace rbflow
