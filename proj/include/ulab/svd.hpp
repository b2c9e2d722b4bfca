#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ulab/common.hpp"
#include "ulab/matrix.hpp"

namespace ulab {

/// Thin SVD: u is d x m, s holds m singular values sorted descending, vt is
/// m x k, with m = min(d, k). Columns of u and rows of vt are orthonormal.
template <Scalar T>
struct SvdFactors {
  Matrix<T> u;
  std::vector<T> s;
  Matrix<T> vt;

  idx rank_bound() const { return static_cast<idx>(s.size()); }
};

namespace detail {

inline double col_dot(const std::vector<double>& g, idx rows, idx cols, idx a, idx b) {
  double acc = 0.0;
  for (idx i = 0; i < rows; ++i)
    acc += g[static_cast<std::size_t>(i * cols + a)] * g[static_cast<std::size_t>(i * cols + b)];
  return acc;
}

// One-sided Jacobi on the columns of g (rows x cols, rows >= cols). v
// accumulates the right rotations (cols x cols, columns are right singular
// vectors). Returns the number of sweeps used; throws on non-convergence.
inline int jacobi_orthogonalize(std::vector<double>& g, std::vector<double>& v, idx rows,
                                idx cols) {
  constexpr double kTol = 1e-12;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 1; sweep <= kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (idx p = 0; p < cols - 1; ++p) {
      for (idx q = p + 1; q < cols; ++q) {
        double app = col_dot(g, rows, cols, p, p);
        double aqq = col_dot(g, rows, cols, q, q);
        double apq = col_dot(g, rows, cols, p, q);
        if (std::abs(apq) <= kTol * std::sqrt(app * aqq)) continue;
        rotated = true;
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        for (idx i = 0; i < rows; ++i) {
          double gp = g[static_cast<std::size_t>(i * cols + p)];
          double gq = g[static_cast<std::size_t>(i * cols + q)];
          g[static_cast<std::size_t>(i * cols + p)] = c * gp - s * gq;
          g[static_cast<std::size_t>(i * cols + q)] = s * gp + c * gq;
        }
        for (idx i = 0; i < cols; ++i) {
          double vp = v[static_cast<std::size_t>(i * cols + p)];
          double vq = v[static_cast<std::size_t>(i * cols + q)];
          v[static_cast<std::size_t>(i * cols + p)] = c * vp - s * vq;
          v[static_cast<std::size_t>(i * cols + q)] = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return sweep;
  }
  throw numeric_error("svd: Jacobi sweeps did not converge within 100 sweeps");
}

}  // namespace detail

/// Singular value decomposition via one-sided Jacobi, computed in 64-bit
/// regardless of T. Matrices with more columns than rows are factored through
/// their transpose. Sign convention: the largest-magnitude entry of each u
/// column is non-negative.
template <Scalar T>
SvdFactors<T> svd(const Matrix<T>& input) {
  if (input.rows() == 0 || input.cols() == 0) throw shape_error("svd: empty matrix");
  if (!input.all_finite()) throw numeric_error("svd: non-finite input");

  const bool flip = input.rows() < input.cols();
  const Matrix<T> m = flip ? input.transpose() : input;
  const idx rows = m.rows(), cols = m.cols();  // rows >= cols

  std::vector<double> g(static_cast<std::size_t>(rows * cols));
  for (idx i = 0; i < rows * cols; ++i) g[static_cast<std::size_t>(i)] = static_cast<double>(m.data()[i]);
  std::vector<double> v(static_cast<std::size_t>(cols * cols), 0.0);
  for (idx i = 0; i < cols; ++i) v[static_cast<std::size_t>(i * cols + i)] = 1.0;

  detail::jacobi_orthogonalize(g, v, rows, cols);

  std::vector<double> sigma(static_cast<std::size_t>(cols));
  for (idx j = 0; j < cols; ++j)
    sigma[static_cast<std::size_t>(j)] = std::sqrt(detail::col_dot(g, rows, cols, j, j));

  // Order singular triplets by descending value.
  std::vector<idx> order(static_cast<std::size_t>(cols));
  std::iota(order.begin(), order.end(), idx(0));
  std::stable_sort(order.begin(), order.end(), [&](idx a, idx b) {
    return sigma[static_cast<std::size_t>(a)] > sigma[static_cast<std::size_t>(b)];
  });

  double smax = cols > 0 ? sigma[static_cast<std::size_t>(order[0])] : 0.0;
  const double tiny = smax > 0.0 ? smax * 1e-300 : 0.0;

  Matrix<double> u64(rows, cols);
  Matrix<double> v64(cols, cols);  // columns are right singular vectors
  std::vector<double> s64(static_cast<std::size_t>(cols));
  for (idx jj = 0; jj < cols; ++jj) {
    idx src = order[static_cast<std::size_t>(jj)];
    double sv = sigma[static_cast<std::size_t>(src)];
    s64[static_cast<std::size_t>(jj)] = sv;
    if (sv > tiny && sv > 0.0) {
      double inv = 1.0 / sv;
      for (idx i = 0; i < rows; ++i) u64(i, jj) = g[static_cast<std::size_t>(i * cols + src)] * inv;
    }
    for (idx i = 0; i < cols; ++i) v64(i, jj) = v[static_cast<std::size_t>(i * cols + src)];
  }

  // Complete u's columns for exactly-zero singular values so u stays
  // orthonormal: Gram-Schmidt standard basis vectors against existing columns.
  for (idx j = 0; j < cols; ++j) {
    if (s64[static_cast<std::size_t>(j)] > tiny && s64[static_cast<std::size_t>(j)] > 0.0) continue;
    for (idx cand = 0; cand < rows; ++cand) {
      std::vector<double> e(static_cast<std::size_t>(rows), 0.0);
      e[static_cast<std::size_t>(cand)] = 1.0;
      for (idx jj = 0; jj < cols; ++jj) {
        if (jj == j) continue;
        double proj = 0.0;
        for (idx i = 0; i < rows; ++i) proj += e[static_cast<std::size_t>(i)] * u64(i, jj);
        for (idx i = 0; i < rows; ++i) e[static_cast<std::size_t>(i)] -= proj * u64(i, jj);
      }
      double nrm = 0.0;
      for (double x : e) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (idx i = 0; i < rows; ++i) u64(i, j) = e[static_cast<std::size_t>(i)] / nrm;
        break;
      }
    }
    s64[static_cast<std::size_t>(j)] = 0.0;
  }

  // Deterministic sign: flip so each output-u column's largest-|entry| is
  // positive. When the factorization went through the transpose the output u
  // is v64, so normalize that factor; the partner column flips with it to
  // keep the product unchanged.
  Matrix<double>& uo = flip ? v64 : u64;
  Matrix<double>& vo = flip ? u64 : v64;
  for (idx j = 0; j < cols; ++j) {
    idx arg = 0;
    for (idx i = 1; i < uo.rows(); ++i)
      if (std::abs(uo(i, j)) > std::abs(uo(arg, j))) arg = i;
    if (uo(arg, j) < 0.0) {
      for (idx i = 0; i < uo.rows(); ++i) uo(i, j) = -uo(i, j);
      for (idx i = 0; i < vo.rows(); ++i) vo(i, j) = -vo(i, j);
    }
  }

  SvdFactors<T> out;
  if (!flip) {
    out.u = u64.template cast<T>();
    out.vt = v64.transpose().template cast<T>();
  } else {
    // input = (input^T)^T = (u64 S v64^T)^T = v64 S u64^T
    out.u = v64.template cast<T>();
    out.vt = u64.transpose().template cast<T>();
  }
  out.s.resize(static_cast<std::size_t>(cols));
  for (idx j = 0; j < cols; ++j) out.s[static_cast<std::size_t>(j)] = static_cast<T>(s64[static_cast<std::size_t>(j)]);
  return out;
}

/// Keep the top-r singular triplets.
template <Scalar T>
SvdFactors<T> truncate(const SvdFactors<T>& f, idx r) {
  if (r < 1 || r > f.rank_bound())
    throw shape_error("truncate: rank " + std::to_string(r) + " out of range [1, " +
                      std::to_string(f.rank_bound()) + "]");
  SvdFactors<T> out;
  out.u = Matrix<T>(f.u.rows(), r);
  out.vt = Matrix<T>(r, f.vt.cols());
  out.s.assign(f.s.begin(), f.s.begin() + r);
  for (idx i = 0; i < f.u.rows(); ++i)
    for (idx j = 0; j < r; ++j) out.u(i, j) = f.u(i, j);
  for (idx i = 0; i < r; ++i)
    for (idx j = 0; j < f.vt.cols(); ++j) out.vt(i, j) = f.vt(i, j);
  return out;
}

/// u . diag(s) . vt, for reconstruction checks and low-rank products.
template <Scalar T>
Matrix<T> reconstruct(const SvdFactors<T>& f) {
  Matrix<T> us = f.u;
  for (idx i = 0; i < us.rows(); ++i)
    for (idx j = 0; j < us.cols(); ++j) us(i, j) *= f.s[static_cast<std::size_t>(j)];
  return matmul(us, f.vt);
}

}  // namespace ulab
