#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ulab/common.hpp"

namespace ulab {

/// Deterministic random source. The engine is std::mt19937_64 (its output is
/// pinned by the C++ standard), and every distribution here is hand-rolled so
/// that streams are bit-identical across compilers and standard libraries --
/// the std::*_distribution classes make no such guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) {
    if (!(lo <= hi)) throw parameter_error("Rng::uniform: lo > hi");
    return lo + (hi - lo) * uniform01();
  }

  /// Uniform integer in [0, n). Uses the multiply-shift reduction; the bias is
  /// of order n / 2^64 and irrelevant at the sizes used here.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw parameter_error("Rng::uniform_int: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller. Draws two uniforms per pair and caches
  /// the spare, so consumption order is fixed.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (!(stddev >= 0.0)) throw parameter_error("Rng::normal: stddev < 0");
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    // Guard against log(0); 2^-53 keeps the branch unreachable in practice
    // without perturbing the stream.
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  /// Fisher-Yates shuffle with this stream.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Sample k distinct indices from [0, n), in selection order.
  std::vector<idx> sample_without_replacement(idx n, idx k) {
    if (k < 0 || n < 0 || k > n)
      throw parameter_error("Rng::sample_without_replacement: need 0 <= k <= n");
    std::vector<idx> pool(static_cast<std::size_t>(n));
    for (idx i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<idx> out;
    out.reserve(static_cast<std::size_t>(k));
    for (idx i = 0; i < k; ++i) {
      std::size_t j = static_cast<std::size_t>(
          uniform_int(static_cast<std::uint64_t>(n - i)));
      out.push_back(pool[j]);
      pool[j] = pool[static_cast<std::size_t>(n - 1 - i)];
    }
    return out;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ulab
