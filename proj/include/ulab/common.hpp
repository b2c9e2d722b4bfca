#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <stdexcept>
#include <string>

#if defined(__GNUC__) || defined(__clang__)
#define ULAB_NOINLINE __attribute__((noinline))
#define ULAB_RESTRICT __restrict__
#else
#define ULAB_NOINLINE
#define ULAB_RESTRICT
#endif

namespace ulab {

using idx = std::int64_t;

template <class T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

/// Dimension or index disagreement between operands.
class shape_error : public std::runtime_error {
 public:
  explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure (non-finite values, non-convergence).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid argument value (out-of-range knob, malformed probability vector).
class parameter_error : public std::runtime_error {
 public:
  explicit parameter_error(const std::string& what) : std::runtime_error(what) {}
};

template <Scalar T>
inline bool is_finite(T v) {
  return std::isfinite(v);
}

}  // namespace ulab
