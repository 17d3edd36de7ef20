#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace rbflow {

enum class ActivationKind { ReLU, Tanh, GeLU };

/// Scalar activation with its Lipschitz moduli.
///
/// lipschitz_sigma bounds |sigma(a)-sigma(b)| / |a-b|; lipschitz_sigma_prime
/// bounds the same ratio for sigma' and is absent for ReLU (not C^1).
/// The non-obvious constants below were obtained by dense maximization of
/// |sigma'| and |sigma''| on [-20, 20] with 1e6 samples:
///   tanh : sup|sigma''| = 4/(3*sqrt(3))
///   gelu : sup|sigma'|  = Phi(sqrt(2)) + sqrt(2)*phi(sqrt(2))
///          sup|sigma''| = 2/sqrt(2*pi)  (attained at 0)
struct Activation {
  ActivationKind kind;
  double lipschitz_sigma;
  std::optional<double> lipschitz_sigma_prime;

  static Activation relu() { return {ActivationKind::ReLU, 1.0, std::nullopt}; }
  static Activation tanh() { return {ActivationKind::Tanh, 1.0, 0.769800358919501}; }
  static Activation gelu() { return {ActivationKind::GeLU, 1.128904145185155, 0.7978845608028654}; }

  bool is_c1() const { return kind != ActivationKind::ReLU; }

  double value(double z) const {
    switch (kind) {
      case ActivationKind::ReLU: return z > 0.0 ? z : 0.0;
      case ActivationKind::Tanh: return std::tanh(z);
      case ActivationKind::GeLU: return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2));
    }
    return 0.0;
  }

  // ReLU subgradient convention: sigma'(0) = 0.
  double deriv(double z) const {
    switch (kind) {
      case ActivationKind::ReLU: return z > 0.0 ? 1.0 : 0.0;
      case ActivationKind::Tanh: {
        const double t = std::tanh(z);
        return 1.0 - t * t;
      }
      case ActivationKind::GeLU: {
        const double cdf = 0.5 * (1.0 + std::erf(z * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * z * z) * 0.3989422804014327;  // 1/sqrt(2*pi)
        return cdf + z * pdf;
      }
    }
    return 0.0;
  }

  const char* name() const {
    switch (kind) {
      case ActivationKind::ReLU: return "relu";
      case ActivationKind::Tanh: return "tanh";
      case ActivationKind::GeLU: return "gelu";
    }
    return "?";
  }

  static Activation from_name(const std::string& s) {
    if (s == "relu") return relu();
    if (s == "tanh") return tanh();
    if (s == "gelu") return gelu();
    throw std::invalid_argument("unknown activation: " + s);
  }

  /// Largest |sigma| over {b_lo, b_hi} plus any interior critical point.
  /// Exact for the three supported activations: relu and tanh are monotone,
  /// gelu has a single interior minimum at x ~ -0.75179.
  double abs_sup_on(double lo, double hi) const {
    double m = std::max(std::abs(value(lo)), std::abs(value(hi)));
    if (kind == ActivationKind::GeLU) {
      const double x_min = -0.7517915280268221;
      if (lo < x_min && x_min < hi) m = std::max(m, std::abs(value(x_min)));
    }
    return m;
  }
};

}  // namespace rbflow
