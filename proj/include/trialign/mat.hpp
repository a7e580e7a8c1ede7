#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "trialign/error.hpp"

namespace trialign {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major 3x3

// Dense row-major matrix of doubles. Sized for desk-scale batches; all loops
// below keep the inner stride contiguous so the compiler can vectorize.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  std::span<double> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>(m.data)); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// C = A * B^T. B is accessed row-wise, so both inner loops are contiguous.
inline Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) throw_invalid_input("matmul_nt: inner dimensions differ");
  Mat c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    auto ai = a.row(i);
    for (int j = 0; j < b.rows; ++j) c(i, j) = dot(ai, b.row(j));
  }
  return c;
}

// C = A * B, accumulated row-by-row to stay contiguous.
inline Mat matmul_nn(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw_invalid_input("matmul_nn: inner dimensions differ");
  Mat c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    auto ci = c.row(i);
    for (int k = 0; k < a.cols; ++k) axpy(a(i, k), b.row(k), ci);
  }
  return c;
}

// C = A^T * B (useful for weight gradients: dW = dZ^T * X).
inline Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows != b.rows) throw_invalid_input("matmul_tn: outer dimensions differ");
  Mat c(a.cols, b.cols);
  for (int n = 0; n < a.rows; ++n) {
    for (int i = 0; i < a.cols; ++i) axpy(a(n, i), b.row(n), c.row(i));
  }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline void add_inplace(Mat& a, const Mat& b, double scale = 1.0) {
  if (!a.same_shape(b)) throw_invalid_input("add_inplace: shape mismatch");
  axpy(scale, std::span<const double>(b.data), std::span<double>(a.data));
}

inline void scale_inplace(Mat& a, double s) {
  for (double& x : a.data) x *= s;
}

// --- fixed 3-vector / 3x3 helpers shared by the small-matrix code ----------

inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Vec3 cross3(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

inline Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

inline Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

inline Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

inline Vec3 mat3_mul_vec(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      c[i * 3 + j] = s;
    }
  return c;
}

inline Mat3 mat3_transpose(const Mat3& a) {
  return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

inline double mat3_det(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

inline Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

}  // namespace trialign
