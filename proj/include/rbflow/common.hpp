#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rbflow {

inline constexpr const char* kVersion = "0.1.0";

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when a trajectory leaves the finite range during integration.
struct BlowupError : std::runtime_error {
  int step;
  explicit BlowupError(int step_index)
      : std::runtime_error("state norm exceeded 1e12 at step " + std::to_string(step_index)),
        step(step_index) {}
};

/// Thrown when a dropout schedule does not land on the solver grid.
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when any admissible value exists (no finite optimum to report).
struct UnboundedError : std::domain_error {
  using std::domain_error::domain_error;
};

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_domain(bool cond, const char* msg) {
  if (!cond) throw std::domain_error(msg);
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Pairwise (tree) reduction over [lo, hi). Fixed association for
// bit-reproducible sums regardless of accumulation hardware.
template <class Get>
Vec pairwise_sum(int lo, int hi, int dim, const Get& get) {
  if (hi - lo == 0) return Vec::Zero(dim);
  if (hi - lo == 1) return get(lo);
  const int mid = lo + (hi - lo) / 2;
  return pairwise_sum(lo, mid, dim, get) + pairwise_sum(mid, hi, dim, get);
}

template <class Get>
double pairwise_sum_scalar(int lo, int hi, const Get& get) {
  if (hi - lo == 0) return 0.0;
  if (hi - lo == 1) return get(lo);
  const int mid = lo + (hi - lo) / 2;
  return pairwise_sum_scalar(lo, mid, get) + pairwise_sum_scalar(mid, hi, get);
}

}  // namespace detail

using Rng = std::mt19937_64;

/// Derives an independent stream from (master seed, stream index).
/// Counter-based: two splitmix64 rounds over the pair, so streams for
/// consecutive indices share no statistical structure.
inline Rng derive_rng(uint64_t master_seed, uint64_t stream_index) {
  uint64_t s = master_seed;
  uint64_t a = detail::splitmix64(s);
  s ^= 0x6a09e667f3bcc909ULL + stream_index * 0x9e3779b97f4a7c15ULL;
  uint64_t b = detail::splitmix64(s);
  return Rng(a ^ (b + 0x2545f4914f6cdd1dULL));
}

inline uint64_t derive_seed(uint64_t master_seed, uint64_t stream_index) {
  uint64_t s = master_seed;
  uint64_t a = detail::splitmix64(s);
  s ^= 0x6a09e667f3bcc909ULL + stream_index * 0x9e3779b97f4a7c15ULL;
  uint64_t b = detail::splitmix64(s);
  return a ^ (b + 0x2545f4914f6cdd1dULL);
}

/// Runs body(i) for i in [0, n). Results must be written to per-index
/// slots; reductions happen after the join so the outcome does not
/// depend on the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < n; i += workers) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Formats a double with 17 significant digits (lossless round trip);
/// used for all CSV output.
inline std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace rbflow
