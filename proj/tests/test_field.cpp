#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "rbflow/field.hpp"

using namespace rbflow;

namespace {

Vec random_theta(const NeuronField& f, uint64_t seed, double scale = 1.0) {
  Rng rng = derive_rng(seed, 0);
  std::normal_distribution<double> gauss(0.0, scale);
  Vec theta(f.theta_dim());
  for (int i = 0; i < theta.size(); ++i) theta[i] = gauss(rng);
  return theta;
}

Vec random_x(int d, uint64_t seed, double scale = 1.0) {
  Rng rng = derive_rng(seed, 1);
  std::normal_distribution<double> gauss(0.0, scale);
  Vec x(d);
  for (int i = 0; i < d; ++i) x[i] = gauss(rng);
  return x;
}

// Scalar-loop reference for F(x, theta): plain double arithmetic, no Eigen,
// left-to-right accumulation. Independent of the library path.
std::vector<double> eval_oracle(int d, int p, const Activation& act, const double* theta,
                                const double* x) {
  std::vector<double> out(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < p; ++i) {
    const double* w = theta + i * (2 * d + 1);
    const double* a = w + d;
    const double b = w[2 * d];
    double z = b;
    for (int j = 0; j < d; ++j) z += a[j] * x[j];
    const double s = act.value(z);
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += w[j] * s;
  }
  return out;
}

}  // namespace

TEST(Field, EvalReluNegativeArgument) {
  auto f = NeuronField::full(1, 1, Activation::relu());
  Vec theta(3);
  theta << 1.0, 1.0, 0.0;  // w=1, a=1, b=0
  Vec x(1);
  x << -2.0;
  EXPECT_EQ(eval(f, x, theta)[0], 0.0);
}

TEST(Field, EvalIdentityLikeDecomposition) {
  auto f = NeuronField::full(2, 2, Activation::relu());
  Vec theta(10);
  // neuron 1: w=(1,0), a=(1,0), b=0 ; neuron 2: w=(0,1), a=(0,1), b=0
  theta << 1, 0, 1, 0, 0, 0, 1, 0, 1, 0;
  Vec x(2);
  x << 1.0, 1.0;
  const Vec y = eval(f, x, theta);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(Field, EvalMatchesScalarOracle) {
  auto f = NeuronField::full(2, 3, Activation::tanh());
  const Vec theta = random_theta(f, 42);
  Vec x(2);
  x << 0.5, -0.5;
  const auto ref = eval_oracle(2, 3, f.activation, theta.data(), x.data());
  const Vec y = eval(f, x, theta);
  EXPECT_NEAR(y[0], ref[0], 1e-12);
  EXPECT_NEAR(y[1], ref[1], 1e-12);
}

// Replicates the documented summation: ascending i, pairwise association
// splitting at lo + (hi-lo)/2. Must agree bit-for-bit.
namespace {
Vec pairwise_ref(const NeuronField& f, const Vec& x, const Vec& theta, int lo, int hi) {
  if (hi - lo == 1) return eval_neuron(f, lo, x, theta);
  const int mid = lo + (hi - lo) / 2;
  return pairwise_ref(f, x, theta, lo, mid) + pairwise_ref(f, x, theta, mid, hi);
}
}  // namespace

TEST(Field, EvalIsExactPairwiseSumOfNeurons) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const int d = 1 + static_cast<int>(seed % 4);
    const int p = 1 + static_cast<int>((seed * 7) % 8);
    auto f = NeuronField::full(d, p, Activation::tanh());
    const Vec theta = random_theta(f, 100 + seed);
    const Vec x = random_x(d, 200 + seed);
    const Vec lhs = eval(f, x, theta);
    const Vec rhs = pairwise_ref(f, x, theta, 0, p);
    for (int j = 0; j < d; ++j) EXPECT_EQ(lhs[j], rhs[j]);
  }
}

TEST(Field, EvalShapeAndDomainErrors) {
  auto f = NeuronField::full(2, 2, Activation::tanh());
  Vec theta = Vec::Zero(f.theta_dim());
  EXPECT_THROW(eval(f, Vec::Zero(3), theta), std::invalid_argument);
  EXPECT_THROW(eval(f, Vec::Zero(2), Vec::Zero(3)), std::invalid_argument);
  Vec bad_x = Vec::Zero(2);
  bad_x[0] = std::nan("");
  EXPECT_THROW(eval(f, bad_x, theta), std::domain_error);
}

TEST(Field, JacobianTanhAtZero) {
  auto f = NeuronField::full(1, 1, Activation::tanh());
  Vec theta(3);
  theta << 1.0, 1.0, 0.0;
  const Mat J = jacobian_x(f, Vec::Zero(1), theta);
  EXPECT_DOUBLE_EQ(J(0, 0), 1.0);  // sigma'(0) = 1
}

TEST(Field, WeightsOnlyJacobianMatchesFull) {
  Rng rng = derive_rng(7, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = 3, p = 4;
  Mat a(p, d);
  Vec b(p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = gauss(rng);
    b[i] = gauss(rng);
  }
  auto fw = NeuronField::weights_only_field(d, p, Activation::tanh(), a, b);
  auto ff = NeuronField::full(d, p, Activation::tanh());
  Vec theta_w(p * d), theta_f(p * (2 * d + 1));
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < d; ++j) {
      const double w = gauss(rng);
      theta_w[i * d + j] = w;
      theta_f[i * (2 * d + 1) + j] = w;
      theta_f[i * (2 * d + 1) + d + j] = a(i, j);
    }
    theta_f[i * (2 * d + 1) + 2 * d] = b[i];
  }
  const Vec x = random_x(d, 7);
  EXPECT_LT((jacobian_x(fw, x, theta_w) - jacobian_x(ff, x, theta_f)).norm(), 1e-14);
  EXPECT_LT((eval(fw, x, theta_w) - eval(ff, x, theta_f)).norm(), 1e-14);
}

// Central finite differences of eval; the derivative oracle.
namespace {
Mat jacobian_fd(const NeuronField& f, const Vec& x, const Vec& theta, double step) {
  Mat J(f.d, f.d);
  for (int j = 0; j < f.d; ++j) {
    Vec xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    J.col(j) = (eval(f, xp, theta) - eval(f, xm, theta)) / (2.0 * step);
  }
  return J;
}
}  // namespace

TEST(Field, JacobianMatchesFiniteDifferences) {
  int checked = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const int d = 1 + static_cast<int>(seed % 4);
    const int p = 1 + static_cast<int>((3 * seed) % 8);
    auto f = NeuronField::full(d, p, seed % 2 == 0 ? Activation::tanh() : Activation::gelu());
    const Vec theta = random_theta(f, 300 + seed);
    const Vec x = random_x(d, 400 + seed);
    const Mat J = jacobian_x(f, x, theta);
    const Mat Jfd = jacobian_fd(f, x, theta, 1e-6);
    const double scale = std::max(1.0, J.norm());
    EXPECT_LT((J - Jfd).norm() / scale, 1e-5) << "seed " << seed;
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(Field, GradThetaZeroDirection) {
  auto f = NeuronField::full(2, 3, Activation::tanh());
  const Vec theta = random_theta(f, 5);
  EXPECT_EQ(grad_theta_transpose_apply(f, random_x(2, 5), theta, Vec::Zero(2)).norm(), 0.0);
}

TEST(Field, GradThetaAnalyticCase) {
  // p=1, d=1, tanh, w=1, a=1, b=0, x=0, v=1: sigma(0)=0, sigma'(0)=1, x=0
  auto f = NeuronField::full(1, 1, Activation::tanh());
  Vec theta(3);
  theta << 1.0, 1.0, 0.0;
  Vec v(1);
  v << 1.0;
  const Vec g = grad_theta_transpose_apply(f, Vec::Zero(1), theta, v);
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], 0.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
}

TEST(Field, GradThetaMatchesFiniteDifferences) {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const int d = 1 + static_cast<int>(seed % 4);
    const int p = 1 + static_cast<int>((5 * seed) % 8);
    const bool wo = seed % 3 == 0;
    NeuronField f = NeuronField::full(d, p, Activation::tanh());
    if (wo) {
      Rng rng = derive_rng(900 + seed, 0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      Mat a(p, d);
      Vec b(p);
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < d; ++j) a(i, j) = gauss(rng);
        b[i] = gauss(rng);
      }
      f = NeuronField::weights_only_field(d, p, Activation::tanh(), a, b);
    }
    const Vec theta = random_theta(f, 500 + seed);
    const Vec x = random_x(d, 600 + seed);
    const Vec v = random_x(d, 700 + seed);
    const Vec g = grad_theta_transpose_apply(f, x, theta, v);
    // FD of <F(x, theta), v> in theta.
    const double step = 1e-6;
    Vec gfd(f.theta_dim());
    for (int j = 0; j < f.theta_dim(); ++j) {
      Vec tp = theta, tm = theta;
      tp[j] += step;
      tm[j] -= step;
      gfd[j] = (eval(f, x, tp).dot(v) - eval(f, x, tm).dot(v)) / (2.0 * step);
    }
    const double scale = std::max(1.0, g.norm());
    EXPECT_LT((g - gfd).norm() / scale, 1e-5) << "seed " << seed;
  }
}

TEST(Field, DivergenceOrthogonalNeuronsIsZero) {
  auto f = NeuronField::full(2, 2, Activation::tanh());
  Vec theta(10);
  // w perpendicular to a for both neurons
  theta << 1, 0, 0, 1, 0.3, 0, 1, 1, 0, -0.2;
  EXPECT_DOUBLE_EQ(divergence_x(f, random_x(2, 8), theta), 0.0);
}

TEST(Field, DivergenceTanhUnit) {
  auto f = NeuronField::full(2, 1, Activation::tanh());
  Vec theta(5);
  theta << 1, 0, 1, 0, 0;  // w=a=(1,0), b=0
  EXPECT_DOUBLE_EQ(divergence_x(f, Vec::Zero(2), theta), 1.0);
}

TEST(Field, DivergenceEqualsJacobianTrace) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const int d = 1 + static_cast<int>(seed % 4);
    auto f = NeuronField::full(d, 5, Activation::gelu());
    const Vec theta = random_theta(f, 800 + seed);
    const Vec x = random_x(d, 810 + seed);
    EXPECT_NEAR(divergence_x(f, x, theta), jacobian_x(f, x, theta).trace(), 1e-12);
  }
}

TEST(Field, DivergenceRejectsRelu) {
  auto f = NeuronField::full(2, 2, Activation::relu());
  EXPECT_THROW(divergence_x(f, Vec::Zero(2), Vec::Zero(f.theta_dim())), std::invalid_argument);
}

TEST(Field, HutchinsonUnbiased) {
  auto f = NeuronField::full(3, 6, Activation::tanh());
  const Vec theta = random_theta(f, 11);
  const Vec x = random_x(3, 11);
  const double exact = divergence_x(f, x, theta);
  // e^T J e has known finite variance; check the 1e4-probe mean lands
  // within 3 standard errors estimated from the probe draws themselves.
  Rng rng = derive_rng(12, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Mat J = jacobian_x(f, x, theta);
  const int n = 10000;
  double s = 0.0, s2 = 0.0;
  for (int k = 0; k < n; ++k) {
    Vec e(3);
    for (int j = 0; j < 3; ++j) e[j] = gauss(rng);
    const double q = e.dot(J * e);
    s += q;
    s2 += q * q;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  Rng rng2 = derive_rng(12, 0);
  const double est = hutchinson_divergence(f, x, theta, n, rng2);
  EXPECT_NEAR(est, mean, 1e-9);  // same stream, same draws
  EXPECT_LT(std::abs(est - exact), 3.0 * se);
}

TEST(Field, HutchinsonDeterministicPerSeed) {
  auto f = NeuronField::full(2, 3, Activation::tanh());
  const Vec theta = random_theta(f, 21);
  const Vec x = random_x(2, 21);
  Rng a = derive_rng(99, 3), b = derive_rng(99, 3);
  EXPECT_EQ(hutchinson_divergence(f, x, theta, 1, a), hutchinson_divergence(f, x, theta, 1, b));
}

TEST(Field, HutchinsonZeroFieldAndBadProbes) {
  auto f = NeuronField::full(2, 2, Activation::tanh());
  Rng rng = derive_rng(1, 0);
  EXPECT_EQ(hutchinson_divergence(f, random_x(2, 1), Vec::Zero(f.theta_dim()), 17, rng), 0.0);
  EXPECT_THROW(hutchinson_divergence(f, random_x(2, 1), Vec::Zero(f.theta_dim()), 0, rng),
               std::invalid_argument);
}

TEST(Field, LipschitzBoundSimpleProduct) {
  auto f = NeuronField::full(1, 1, Activation::tanh());  // lam_sigma = 1
  Vec theta(3);
  theta << 2.0, 3.0, 0.5;
  const auto lb = lipschitz_bounds(f, Control::constant(theta, 1.0));
  EXPECT_DOUBLE_EQ(lb.lam_F_x, 6.0);
}

TEST(Field, LipschitzBoundZeroWeights) {
  auto f = NeuronField::full(2, 3, Activation::tanh());
  Vec theta = Vec::Zero(f.theta_dim());
  theta[3] = 1.0;  // a entries only
  const auto lb = lipschitz_bounds(f, Control::constant(theta, 2.0));
  EXPECT_DOUBLE_EQ(lb.lam_F_x, 0.0);
  EXPECT_DOUBLE_EQ(lb.lam_F_0, 0.0);
}

TEST(Field, LipschitzBoundDominatesSampledJacobians) {
  auto f = NeuronField::full(3, 5, Activation::tanh());
  const Vec theta = random_theta(f, 31);
  const Control c = Control::constant(theta, 1.0);
  const auto lb = lipschitz_bounds(f, c);
  Rng rng = derive_rng(32, 0);
  std::normal_distribution<double> gauss(0.0, 2.0);
  for (int k = 0; k < 1000; ++k) {
    Vec x(3);
    for (int j = 0; j < 3; ++j) x[j] = gauss(rng);
    const Mat J = jacobian_x(f, x, theta);
    const double opnorm = J.jacobiSvd().singularValues()[0];
    EXPECT_LE(opnorm, lb.lam_F_x * (1.0 + 1e-12));
  }
}

TEST(Field, LipschitzBoundGradxPresence) {
  auto ftanh = NeuronField::full(2, 2, Activation::tanh());
  auto frelu = NeuronField::full(2, 2, Activation::relu());
  const Vec theta = random_theta(ftanh, 41);
  EXPECT_TRUE(lipschitz_bounds(ftanh, Control::constant(theta, 1.0)).lam_gradx_F_x.has_value());
  EXPECT_FALSE(lipschitz_bounds(frelu, Control::constant(theta, 1.0)).lam_gradx_F_x.has_value());
}

TEST(Activation, LipschitzPropertySampled) {
  Rng rng = derive_rng(55, 0);
  std::uniform_real_distribution<double> unif(-6.0, 6.0);
  for (const auto& act : {Activation::relu(), Activation::tanh(), Activation::gelu()}) {
    for (int k = 0; k < 2000; ++k) {
      const double a = unif(rng), b = unif(rng);
      EXPECT_LE(std::abs(act.value(a) - act.value(b)),
                act.lipschitz_sigma * std::abs(a - b) + 1e-12);
      if (act.lipschitz_sigma_prime)
        EXPECT_LE(std::abs(act.deriv(a) - act.deriv(b)),
                  *act.lipschitz_sigma_prime * std::abs(a - b) + 1e-12);
    }
  }
}

TEST(Activation, DerivativeConstantsMatchDenseMaximization) {
  // Re-derive the frozen lambda_sigma' constants on a coarse grid.
  for (const auto& act : {Activation::tanh(), Activation::gelu()}) {
    double max_d = 0.0, max_dd = 0.0;
    const int n = 200001;
    for (int k = 0; k < n; ++k) {
      const double x = -20.0 + 40.0 * k / (n - 1);
      max_d = std::max(max_d, std::abs(act.deriv(x)));
      const double h = 1e-5;
      max_dd = std::max(max_dd, std::abs(act.deriv(x + h) - act.deriv(x - h)) / (2.0 * h));
    }
    EXPECT_NEAR(max_d, act.lipschitz_sigma, 1e-6);
    EXPECT_NEAR(max_dd, *act.lipschitz_sigma_prime, 1e-4);
  }
}

TEST(Control, PiecewiseLeftClosedEvaluation) {
  Vec v1 = Vec::Constant(1, 1.0), v2 = Vec::Constant(1, 2.0);
  const Control c = Control::piecewise({0.0, 0.5, 1.0}, {v1, v2});
  EXPECT_DOUBLE_EQ(c.eval(0.0)[0], 1.0);
  EXPECT_DOUBLE_EQ(c.eval(0.49999)[0], 1.0);
  EXPECT_DOUBLE_EQ(c.eval(0.5)[0], 2.0);  // left-closed: [0.5, 1.0)
  EXPECT_DOUBLE_EQ(c.eval(1.0)[0], 2.0);  // t = T returns the last value
  EXPECT_THROW(c.eval(1.5), std::domain_error);
}

TEST(Control, AffineBiasLayout) {
  const int d = 2, p = 2;
  Mat W(d, p), A(p, d);
  W << 1, 2, 3, 4;
  A << 5, 6, 7, 8;
  Vec b0(p), b1(p);
  b0 << 9, 10;
  b1 << 1, -1;
  const Control c = Control::affine_bias(W, A, b0, b1, 2.0);
  ASSERT_EQ(c.dim, p * (2 * d + 1));
  const Vec th = c.eval(0.5);
  // block i: (w_i, a_i, b_i)
  EXPECT_DOUBLE_EQ(th[0], 1.0);
  EXPECT_DOUBLE_EQ(th[1], 3.0);
  EXPECT_DOUBLE_EQ(th[2], 5.0);
  EXPECT_DOUBLE_EQ(th[3], 6.0);
  EXPECT_DOUBLE_EQ(th[4], 9.5);
  EXPECT_DOUBLE_EQ(th[5], 2.0);
  EXPECT_DOUBLE_EQ(th[6], 4.0);
  EXPECT_DOUBLE_EQ(th[7], 7.0);
  EXPECT_DOUBLE_EQ(th[8], 8.0);
  EXPECT_DOUBLE_EQ(th[9], 9.5);
}
