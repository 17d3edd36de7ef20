#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rbflow/common.hpp"

namespace rbflow {

/// Two noisy concentric circles with one-hot targets. Class 0 sits at
/// radius 1 with target (-1, 0), class 1 at radius 2 with target (0, 1);
/// the noise is Gaussian and radial. Classes alternate so the balance is
/// exact up to one point.
struct CirclesDataset {
  std::vector<Vec> inputs;   // R^2 points
  std::vector<Vec> targets;  // exactly (-1,0) or (0,1)
  double noise = 0.0;
  uint64_t seed = 0;

  int size() const { return static_cast<int>(inputs.size()); }
};

inline CirclesDataset make_circles(int n_d, double noise, uint64_t seed) {
  detail::require(n_d >= 2, "make_circles: need at least 2 points");
  CirclesDataset ds;
  ds.noise = noise;
  ds.seed = seed;
  Rng rng = derive_rng(seed, 0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n_d; ++i) {
    const int cls = i % 2;
    const double phi = angle(rng);
    const double radius = (cls == 0 ? 1.0 : 2.0) + noise * gauss(rng);
    ds.inputs.push_back(Eigen::Vector2d(radius * std::cos(phi), radius * std::sin(phi)));
    ds.targets.push_back(cls == 0 ? Eigen::Vector2d(-1.0, 0.0) : Eigen::Vector2d(0.0, 1.0));
  }
  return ds;
}

/// Nearest-target classification of a terminal state.
inline int classify(const Vec& x_T) {
  const double d0 = (x_T - Eigen::Vector2d(-1.0, 0.0)).squaredNorm();
  const double d1 = (x_T - Eigen::Vector2d(0.0, 1.0)).squaredNorm();
  return d0 <= d1 ? 0 : 1;
}

inline int label_of(const Vec& target) { return target[0] < 0.0 ? 0 : 1; }

}  // namespace rbflow
