#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <string>
#include <vector>

#include "ulab/common.hpp"

namespace ulab {

/// Dense row-major matrix over float or double. Values must be finite on
/// construction from user data; operations assume (and preserve, absent
/// overflow) finiteness but do not re-validate on every call.
template <Scalar T>
class Matrix {
 public:
  Matrix() : rows_(0), cols_(0) {}

  Matrix(idx rows, idx cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0)
      throw shape_error("Matrix: negative dimension " + dim_str(rows, cols));
    data_.assign(static_cast<std::size_t>(rows * cols), T(0));
  }

  Matrix(idx rows, idx cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows < 0 || cols < 0)
      throw shape_error("Matrix: negative dimension " + dim_str(rows, cols));
    if (data_.size() != static_cast<std::size_t>(rows * cols))
      throw shape_error("Matrix: data size " + std::to_string(data_.size()) +
                        " does not match " + dim_str(rows, cols));
    validate_finite();
  }

  /// Build from nested braces: Matrix<double>::from_rows({{1,2},{3,4}}).
  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    idx r = static_cast<idx>(rows.size());
    idx c = r > 0 ? static_cast<idx>(rows.begin()->size()) : 0;
    Matrix m(r, c);
    idx i = 0;
    for (const auto& row : rows) {
      if (static_cast<idx>(row.size()) != c)
        throw shape_error("Matrix::from_rows: ragged rows");
      idx j = 0;
      for (T v : row) m(i, j++) = v;
      ++i;
    }
    m.validate_finite();
    return m;
  }

  static Matrix identity(idx n) {
    Matrix m(n, n);
    for (idx i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  idx rows() const { return rows_; }
  idx cols() const { return cols_; }
  idx size() const { return rows_ * cols_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* row(idx i) { return data_.data() + i * cols_; }
  const T* row(idx i) const { return data_.data() + i * cols_; }

  T& operator()(idx i, idx j) { return data_[static_cast<std::size_t>(i * cols_ + j)]; }
  T operator()(idx i, idx j) const { return data_[static_cast<std::size_t>(i * cols_ + j)]; }

  T& at(idx i, idx j) {
    check_index(i, j);
    return (*this)(i, j);
  }
  T at(idx i, idx j) const {
    check_index(i, j);
    return (*this)(i, j);
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (T v : data_)
      if (!is_finite(v)) return false;
    return true;
  }

  void validate_finite() const {
    if (!all_finite()) throw numeric_error("Matrix: non-finite entry");
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (idx i = 0; i < rows_; ++i)
      for (idx j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void add_(const Matrix& o) {
    require_same_shape(o, "add_");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }

  void sub_(const Matrix& o) {
    require_same_shape(o, "sub_");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  }

  void scale_(T s) {
    for (T& v : data_) v *= s;
  }

  double max_abs() const {
    double m = 0.0;
    for (T v : data_) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (T v : data_) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  template <Scalar U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (idx i = 0; i < size(); ++i) out.data()[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  static std::string dim_str(idx r, idx c) {
    return "(" + std::to_string(r) + " x " + std::to_string(c) + ")";
  }
  void check_index(idx i, idx j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_)
      throw shape_error("Matrix: index (" + std::to_string(i) + ", " + std::to_string(j) +
                        ") out of range for " + dim_str(rows_, cols_));
  }
  void require_same_shape(const Matrix& o, const char* op) const {
    if (!same_shape(o))
      throw shape_error(std::string("Matrix::") + op + ": shape mismatch " +
                        dim_str(rows_, cols_) + " vs " + dim_str(o.rows_, o.cols_));
  }

  idx rows_, cols_;
  std::vector<T> data_;
};

namespace detail {

// Every dot product in the library reduces through this fixed scheme: eight
// interleaved double-precision lanes (index i feeds lane i mod 8, fma only),
// lanes folded pairwise, then the scalar tail appended in order. Because the
// scheme depends only on the operand length, an output element has exactly one
// possible bit pattern no matter how the surrounding loops are blocked -- which
// is what lets incremental decoding, adapter no-ops, and cached evaluations
// promise bitwise equality with the straightforward full computation.
inline constexpr idx kLanes = 8;

template <Scalar T>
inline double dot_fixed(const T* ULAB_RESTRICT a, const T* ULAB_RESTRICT b, idx n) {
  double lane[kLanes] = {0, 0, 0, 0, 0, 0, 0, 0};
  const idx n8 = n - (n % kLanes);
  for (idx i = 0; i < n8; i += kLanes) {
    for (idx l = 0; l < kLanes; ++l)
      lane[l] = std::fma(static_cast<double>(a[i + l]), static_cast<double>(b[i + l]), lane[l]);
  }
  double s = ((lane[0] + lane[4]) + (lane[2] + lane[6])) +
             ((lane[1] + lane[5]) + (lane[3] + lane[7]));
  for (idx i = n8; i < n; ++i)
    s = std::fma(static_cast<double>(a[i]), static_cast<double>(b[i]), s);
  return s;
}

// 4x4 register tile of the same per-element scheme. lane[ib][jb][l] traces the
// identical fma sequence dot_fixed would produce for that element.
template <Scalar T>
inline void gemm_nt_tile4x4(const T* ULAB_RESTRICT a, idx lda, const T* ULAB_RESTRICT b,
                            idx ldb, double* ULAB_RESTRICT out, idx n_out, idx k) {
  double lane[4][4][kLanes] = {};
  const idx k8 = k - (k % kLanes);
  for (idx p = 0; p < k8; p += kLanes) {
    for (idx ib = 0; ib < 4; ++ib) {
      const T* ap = a + ib * lda + p;
      for (idx jb = 0; jb < 4; ++jb) {
        const T* bp = b + jb * ldb + p;
        for (idx l = 0; l < kLanes; ++l)
          lane[ib][jb][l] = std::fma(static_cast<double>(ap[l]), static_cast<double>(bp[l]),
                                     lane[ib][jb][l]);
      }
    }
  }
  for (idx ib = 0; ib < 4; ++ib) {
    for (idx jb = 0; jb < 4; ++jb) {
      double* ln = lane[ib][jb];
      double s = ((ln[0] + ln[4]) + (ln[2] + ln[6])) + ((ln[1] + ln[5]) + (ln[3] + ln[7]));
      const T* ap = a + ib * lda;
      const T* bp = b + jb * ldb;
      for (idx p = k8; p < k; ++p)
        s = std::fma(static_cast<double>(ap[p]), static_cast<double>(bp[p]), s);
      out[ib * n_out + jb] = s;
    }
  }
}

// 1x4 tile for leftover rows (notably the single-row decode case); same
// per-element fma sequence as above.
template <Scalar T>
inline void gemm_nt_tile1x4(const T* ULAB_RESTRICT a, const T* ULAB_RESTRICT b, idx ldb,
                            double* ULAB_RESTRICT out, idx k) {
  double lane[4][kLanes] = {};
  const idx k8 = k - (k % kLanes);
  for (idx p = 0; p < k8; p += kLanes) {
    const T* ap = a + p;
    for (idx jb = 0; jb < 4; ++jb) {
      const T* bp = b + jb * ldb + p;
      for (idx l = 0; l < kLanes; ++l)
        lane[jb][l] = std::fma(static_cast<double>(ap[l]), static_cast<double>(bp[l]),
                               lane[jb][l]);
    }
  }
  for (idx jb = 0; jb < 4; ++jb) {
    double* ln = lane[jb];
    double s = ((ln[0] + ln[4]) + (ln[2] + ln[6])) + ((ln[1] + ln[5]) + (ln[3] + ln[7]));
    const T* bp = b + jb * ldb;
    for (idx p = k8; p < k; ++p)
      s = std::fma(static_cast<double>(a[p]), static_cast<double>(bp[p]), s);
    out[jb] = s;
  }
}

// C (m x n) = A (m x k) . B (n x k)^T with strided row access. noinline keeps a
// single compiled instance per scalar type so all call sites share rounding.
template <Scalar T>
ULAB_NOINLINE void gemm_nt_strided(const T* a, idx lda, const T* b, idx ldb, T* c, idx ldc,
                                   idx m, idx n, idx k) {
  const idx m4 = m - (m % 4);
  const idx n4 = n - (n % 4);
  double tile[16];
  for (idx i = 0; i < m4; i += 4) {
    for (idx j = 0; j < n4; j += 4) {
      gemm_nt_tile4x4(a + i * lda, lda, b + j * ldb, ldb, tile, 4, k);
      for (idx ib = 0; ib < 4; ++ib)
        for (idx jb = 0; jb < 4; ++jb)
          c[(i + ib) * ldc + (j + jb)] = static_cast<T>(tile[ib * 4 + jb]);
    }
    for (idx j = n4; j < n; ++j)
      for (idx ib = 0; ib < 4; ++ib)
        c[(i + ib) * ldc + j] = static_cast<T>(dot_fixed(a + (i + ib) * lda, b + j * ldb, k));
  }
  for (idx i = m4; i < m; ++i) {
    for (idx j = 0; j < n4; j += 4) {
      gemm_nt_tile1x4(a + i * lda, b + j * ldb, ldb, tile, k);
      for (idx jb = 0; jb < 4; ++jb) c[i * ldc + (j + jb)] = static_cast<T>(tile[jb]);
    }
    for (idx j = n4; j < n; ++j)
      c[i * ldc + j] = static_cast<T>(dot_fixed(a + i * lda, b + j * ldb, k));
  }
}

}  // namespace detail

/// C = A . B^T. This is the library's one real kernel: row-major A against
/// row-major B whose rows are the output columns, the natural layout for
/// "activations times weight matrix stored out x in".
template <Scalar T>
Matrix<T> gemm_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols())
    throw shape_error("gemm_nt: inner dimensions " + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.cols()));
  Matrix<T> c(a.rows(), b.rows());
  if (a.rows() == 0 || b.rows() == 0 || a.cols() == 0) return c;
  detail::gemm_nt_strided(a.data(), a.cols(), b.data(), b.cols(), c.data(), c.cols(), a.rows(),
                          b.rows(), a.cols());
  return c;
}

/// Plain product A . B, routed through the same kernel via an explicit
/// transpose. Convenience for cold paths; hot paths keep operands in NT form.
template <Scalar T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows())
    throw shape_error("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()));
  return gemm_nt(a, b.transpose());
}

/// A^T . B, for gradient accumulations of the form dW = dY^T X.
template <Scalar T>
Matrix<T> gemm_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows())
    throw shape_error("gemm_tn: row counts " + std::to_string(a.rows()) + " vs " +
                      std::to_string(b.rows()));
  return gemm_nt(a.transpose(), b.transpose());
}

/// Row sums accumulated in double precision.
template <Scalar T>
std::vector<double> row_sums(const Matrix<T>& m) {
  std::vector<double> s(static_cast<std::size_t>(m.rows()), 0.0);
  for (idx i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    const T* r = m.row(i);
    for (idx j = 0; j < m.cols(); ++j) acc += static_cast<double>(r[j]);
    s[static_cast<std::size_t>(i)] = acc;
  }
  return s;
}

/// softmax over a contiguous row, shift-invariant, double-precision reduction.
/// Output sums to 1 within 1e-12 at 64-bit.
template <Scalar T>
void softmax_row(const T* in, T* out, idx n) {
  if (n <= 0) throw shape_error("softmax_row: empty row");
  double mx = static_cast<double>(in[0]);
  for (idx i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(in[i]));
  double sum = 0.0;
  for (idx i = 0; i < n; ++i) {
    double e = std::exp(static_cast<double>(in[i]) - mx);
    out[i] = static_cast<T>(e);
    sum += e;
  }
  double inv = 1.0 / sum;
  for (idx i = 0; i < n; ++i) out[i] = static_cast<T>(static_cast<double>(out[i]) * inv);
}

/// Vector convenience form of softmax_row.
template <Scalar T>
std::vector<T> softmax_row(const std::vector<T>& logits) {
  for (T v : logits)
    if (!is_finite(v)) throw numeric_error("softmax_row: non-finite logit");
  std::vector<T> out(logits.size());
  softmax_row(logits.data(), out.data(), static_cast<idx>(logits.size()));
  return out;
}

/// Stable log softmax: x - max - log(sum exp(x - max)), double accumulation.
template <Scalar T>
void log_softmax_row(const T* in, T* out, idx n) {
  if (n <= 0) throw shape_error("log_softmax_row: empty row");
  double mx = static_cast<double>(in[0]);
  for (idx i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(in[i]));
  double sum = 0.0;
  for (idx i = 0; i < n; ++i) sum += std::exp(static_cast<double>(in[i]) - mx);
  const double lse = mx + std::log(sum);
  for (idx i = 0; i < n; ++i) out[i] = static_cast<T>(static_cast<double>(in[i]) - lse);
}

template <Scalar T>
std::vector<T> log_softmax_row(const std::vector<T>& logits) {
  for (T v : logits)
    if (!is_finite(v)) throw numeric_error("log_softmax_row: non-finite logit");
  std::vector<T> out(logits.size());
  log_softmax_row(logits.data(), out.data(), static_cast<idx>(logits.size()));
  return out;
}

/// log softmax of one entry of a row: log p[target] computed stably.
template <Scalar T>
double log_softmax_at(const T* in, idx n, idx target) {
  if (target < 0 || target >= n) throw shape_error("log_softmax_at: target out of range");
  double mx = static_cast<double>(in[0]);
  for (idx i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(in[i]));
  double sum = 0.0;
  for (idx i = 0; i < n; ++i) sum += std::exp(static_cast<double>(in[i]) - mx);
  return static_cast<double>(in[target]) - mx - std::log(sum);
}

/// argmax with lowest-index tie-breaking (strict > keeps the first maximum).
template <Scalar T>
idx argmax_row(const T* in, idx n) {
  if (n <= 0) throw shape_error("argmax_row: empty row");
  idx best = 0;
  for (idx i = 1; i < n; ++i)
    if (in[i] > in[best]) best = i;
  return best;
}

}  // namespace ulab
