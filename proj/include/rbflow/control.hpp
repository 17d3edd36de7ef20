#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rbflow/common.hpp"

namespace rbflow {

enum class ControlRepr { Constant, AffineBias, PiecewiseConstant };

/// Time-dependent parameter path theta_t on [0, T].
///
/// The flat layout is fixed: for full parameters, the concatenation over
/// i in [p] of (w_i, a_i, b_i), total length p*(2d+1); for weights-only
/// fields just the w_i blocks, length p*d.
///
/// PiecewiseConstant holds values v_k on left-closed intervals
/// [t_{k-1}, t_k); eval(T) returns the last value. AffineBias keeps W and A
/// frozen and moves only the bias, b_t = b0 + b1*t (full layout only).
struct Control {
  ControlRepr repr = ControlRepr::Constant;
  double T = 1.0;
  int dim = 0;  // flat parameter length

  Vec value;  // Constant

  // AffineBias: W0 is d x p (outer weights), A0 is p x d (inner weights).
  Mat W0, A0;
  Vec b0, b1;

  // PiecewiseConstant: boundaries 0 = t_0 < ... < t_K = T, values v_1..v_K.
  std::vector<double> grid;
  std::vector<Vec> values;

  static Control constant(Vec theta, double horizon) {
    detail::require(horizon > 0.0, "control horizon must be positive");
    Control c;
    c.repr = ControlRepr::Constant;
    c.T = horizon;
    c.dim = static_cast<int>(theta.size());
    c.value = std::move(theta);
    return c;
  }

  static Control affine_bias(Mat W, Mat A, Vec bias0, Vec bias1, double horizon) {
    detail::require(horizon > 0.0, "control horizon must be positive");
    const int d = static_cast<int>(W.rows());
    const int p = static_cast<int>(W.cols());
    detail::require(A.rows() == p && A.cols() == d, "AffineBias: A must be p x d");
    detail::require(bias0.size() == p && bias1.size() == p, "AffineBias: bias length != p");
    Control c;
    c.repr = ControlRepr::AffineBias;
    c.T = horizon;
    c.dim = p * (2 * d + 1);
    c.W0 = std::move(W);
    c.A0 = std::move(A);
    c.b0 = std::move(bias0);
    c.b1 = std::move(bias1);
    return c;
  }

  static Control piecewise(std::vector<double> boundaries, std::vector<Vec> vals) {
    detail::require(boundaries.size() == vals.size() + 1, "piecewise: need K+1 boundaries for K values");
    detail::require(!vals.empty(), "piecewise: no intervals");
    detail::require(boundaries.front() == 0.0, "piecewise: grid must start at 0");
    for (size_t k = 0; k + 1 < boundaries.size(); ++k)
      detail::require(boundaries[k] < boundaries[k + 1], "piecewise: grid not increasing");
    for (const Vec& v : vals)
      detail::require(v.size() == vals.front().size(), "piecewise: inconsistent value lengths");
    Control c;
    c.repr = ControlRepr::PiecewiseConstant;
    c.T = boundaries.back();
    c.dim = static_cast<int>(vals.front().size());
    c.grid = std::move(boundaries);
    c.values = std::move(vals);
    return c;
  }

  /// Uniform piecewise-constant control with n_intervals copies of `theta`.
  static Control piecewise_uniform(const Vec& theta, double horizon, int n_intervals) {
    detail::require(n_intervals >= 1, "piecewise: need at least one interval");
    std::vector<double> bounds(n_intervals + 1);
    for (int k = 0; k <= n_intervals; ++k) bounds[k] = horizon * k / n_intervals;
    bounds[n_intervals] = horizon;
    return piecewise(std::move(bounds), std::vector<Vec>(n_intervals, theta));
  }

  int n_intervals() const {
    return repr == ControlRepr::PiecewiseConstant ? static_cast<int>(values.size()) : 1;
  }

  Vec eval(double t) const {
    detail::require_domain(t >= 0.0 && t <= T, "control evaluated outside [0, T]");
    switch (repr) {
      case ControlRepr::Constant:
        return value;
      case ControlRepr::AffineBias: {
        const int p = static_cast<int>(W0.cols());
        const int d = static_cast<int>(W0.rows());
        Vec theta(p * (2 * d + 1));
        for (int i = 0; i < p; ++i) {
          double* blk = theta.data() + i * (2 * d + 1);
          Eigen::Map<Vec>(blk, d) = W0.col(i);
          Eigen::Map<Vec>(blk + d, d) = A0.row(i).transpose();
          blk[2 * d] = b0[i] + b1[i] * t;
        }
        return theta;
      }
      case ControlRepr::PiecewiseConstant: {
        // Left-closed intervals; t = T falls into the last one.
        auto it = std::upper_bound(grid.begin(), grid.end(), t);
        int k = static_cast<int>(it - grid.begin()) - 1;
        k = std::clamp(k, 0, static_cast<int>(values.size()) - 1);
        return values[static_cast<size_t>(k)];
      }
    }
    return Vec();
  }

  /// L2(0,T) inner product with a control of the same representation.
  /// Exact for Constant and PiecewiseConstant.
  double l2_inner(const Control& other) const {
    detail::require(repr == other.repr && dim == other.dim, "l2_inner: representation mismatch");
    switch (repr) {
      case ControlRepr::Constant:
        return T * value.dot(other.value);
      case ControlRepr::PiecewiseConstant: {
        detail::require(grid == other.grid, "l2_inner: piecewise grids differ");
        double s = 0.0;
        for (size_t k = 0; k < values.size(); ++k)
          s += (grid[k + 1] - grid[k]) * values[k].dot(other.values[k]);
        return s;
      }
      case ControlRepr::AffineBias:
        throw std::invalid_argument("l2_inner: not defined for AffineBias");
    }
    return 0.0;
  }

  double l2_norm() const { return std::sqrt(l2_inner(*this)); }

  /// this <- this + s * other (same representation and shape).
  void axpy(double s, const Control& other) {
    detail::require(repr == other.repr && dim == other.dim, "axpy: representation mismatch");
    switch (repr) {
      case ControlRepr::Constant:
        value += s * other.value;
        break;
      case ControlRepr::PiecewiseConstant:
        detail::require(grid == other.grid, "axpy: piecewise grids differ");
        for (size_t k = 0; k < values.size(); ++k) values[k] += s * other.values[k];
        break;
      case ControlRepr::AffineBias:
        W0 += s * other.W0;
        A0 += s * other.A0;
        b0 += s * other.b0;
        b1 += s * other.b1;
        break;
    }
  }
};

}  // namespace rbflow
