#pragma once

#include <algorithm>
#include <cmath>

#include "trialign/error.hpp"
#include "trialign/mat.hpp"

namespace trialign {

// Symmetric 3x3 matrix, upper triangle storage.
struct Sym3 {
  double a00 = 0, a01 = 0, a02 = 0, a11 = 0, a12 = 0, a22 = 0;

  static Sym3 from_dense(const Mat3& m) {
    return {m[0], m[1], m[2], m[4], m[5], m[8]};
  }

  // Gram matrix M * M^T of a 3xD matrix.
  static Sym3 gram(const Mat& m) {
    if (m.rows != 3 || m.cols < 1) throw_invalid_input("Sym3::gram: expected a 3xD matrix, D >= 1");
    auto r0 = m.row(0), r1 = m.row(1), r2 = m.row(2);
    return {dot(r0, r0), dot(r0, r1), dot(r0, r2), dot(r1, r1), dot(r1, r2), dot(r2, r2)};
  }

  Mat3 dense() const { return {a00, a01, a02, a01, a11, a12, a02, a12, a22}; }

  Vec3 mul(const Vec3& v) const {
    return {a00 * v[0] + a01 * v[1] + a02 * v[2],
            a01 * v[0] + a11 * v[1] + a12 * v[2],
            a02 * v[0] + a12 * v[1] + a22 * v[2]};
  }

  double max_abs() const {
    return std::max({std::abs(a00), std::abs(a01), std::abs(a02), std::abs(a11), std::abs(a12),
                     std::abs(a22)});
  }

  bool finite() const {
    return std::isfinite(a00) && std::isfinite(a01) && std::isfinite(a02) && std::isfinite(a11) &&
           std::isfinite(a12) && std::isfinite(a22);
  }
};

// Eigenvalues descending, eigenvectors orthonormal.
struct EigSys3 {
  Vec3 lambda{};            // lambda[0] >= lambda[1] >= lambda[2]
  std::array<Vec3, 3> u{};  // u[i] is the unit eigenvector of lambda[i]
};

namespace detail {

// Eigenvalues of a symmetric 3x3 via the trigonometric solution of the
// characteristic cubic. Branch-free aside from the diagonal shortcut, and
// deterministic for a fixed input.
inline Vec3 sym_eig3_values(const Sym3& s) {
  const double p1 = s.a01 * s.a01 + s.a02 * s.a02 + s.a12 * s.a12;
  if (p1 == 0.0) {
    Vec3 v{s.a00, s.a11, s.a22};
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
  }
  const double q = (s.a00 + s.a11 + s.a22) / 3.0;
  const double b00 = s.a00 - q, b11 = s.a11 - q, b22 = s.a22 - q;
  const double p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  // r = det(B/p) / 2, clamped against roundoff outside [-1, 1]
  const double inv_p = 1.0 / p;
  const double c00 = b00 * inv_p, c01 = s.a01 * inv_p, c02 = s.a02 * inv_p;
  const double c11 = b11 * inv_p, c12 = s.a12 * inv_p, c22 = b22 * inv_p;
  double r = 0.5 * (c00 * (c11 * c22 - c12 * c12) - c01 * (c01 * c22 - c12 * c02) +
                    c02 * (c01 * c12 - c11 * c02));
  r = std::clamp(r, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double two_pi_3 = 2.0943951023931953;
  const double l0 = q + 2.0 * p * std::cos(phi);
  const double l2 = q + 2.0 * p * std::cos(phi + two_pi_3);
  const double l1 = 3.0 * q - l0 - l2;
  return {l0, l1, l2};
}

// Eigenvector for an isolated eigenvalue: the null direction of (S - lambda I),
// recovered as the largest cross product of its rows.
inline Vec3 eigvec_cross(const Sym3& s, double lambda) {
  const Vec3 r0{s.a00 - lambda, s.a01, s.a02};
  const Vec3 r1{s.a01, s.a11 - lambda, s.a12};
  const Vec3 r2{s.a02, s.a12, s.a22 - lambda};
  Vec3 c01 = cross3(r0, r1), c02 = cross3(r0, r2), c12 = cross3(r1, r2);
  const double n01 = dot3(c01, c01), n02 = dot3(c02, c02), n12 = dot3(c12, c12);
  Vec3 best = c01;
  double nbest = n01;
  if (n02 > nbest) { best = c02; nbest = n02; }
  if (n12 > nbest) { best = c12; nbest = n12; }
  if (nbest <= 0.0) return {1, 0, 0};  // rank-deficient beyond expectation
  return scale3(best, 1.0 / std::sqrt(nbest));
}

inline void orthonormal_complement(const Vec3& w, Vec3& p, Vec3& q) {
  const Vec3 axis = std::abs(w[0]) <= std::abs(w[1]) && std::abs(w[0]) <= std::abs(w[2])
                        ? Vec3{1, 0, 0}
                        : (std::abs(w[1]) <= std::abs(w[2]) ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
  p = cross3(w, axis);
  p = scale3(p, 1.0 / norm3(p));
  q = cross3(w, p);
}

}  // namespace detail

// Closed-form symmetric 3x3 eigendecomposition. Eigenvalues come from the
// trigonometric cubic; the most isolated eigenvector is recovered by cross
// products and the remaining pair by a 2x2 solve in its orthogonal
// complement, which stays stable near repeated eigenvalues.
inline EigSys3 sym_eig3(const Sym3& s_in) {
  if (!s_in.finite()) throw_invalid_input("sym_eig3: non-finite input");

  const double scale = s_in.max_abs();
  if (scale == 0.0) {
    return {{0, 0, 0}, {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}};
  }
  const double inv_scale = 1.0 / scale;
  Sym3 s{s_in.a00 * inv_scale, s_in.a01 * inv_scale, s_in.a02 * inv_scale,
         s_in.a11 * inv_scale, s_in.a12 * inv_scale, s_in.a22 * inv_scale};

  const Vec3 l = detail::sym_eig3_values(s);
  EigSys3 out;

  if (l[0] - l[2] <= 1e-14 * std::max(1.0, std::abs(l[0]))) {
    // Numerically a multiple of the identity: any orthonormal basis works.
    out.u = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    out.lambda = {l[0] * scale, l[1] * scale, l[2] * scale};
    return out;
  }

  // Anchor on the eigenvalue farthest from the middle one, then diagonalize
  // the 2x2 restriction of S to its orthogonal complement.
  const bool anchor_top = (l[0] - l[1]) >= (l[1] - l[2]);
  const double anchor_l = anchor_top ? l[0] : l[2];
  const Vec3 w = detail::eigvec_cross(s, anchor_l);

  Vec3 p, q;
  detail::orthonormal_complement(w, p, q);
  const Vec3 sp = s.mul(p), sq = s.mul(q);
  const double app = dot3(p, sp), apq = dot3(p, sq), aqq = dot3(q, sq);
  const double theta = 0.5 * std::atan2(2.0 * apq, app - aqq);
  const double ct = std::cos(theta), st = std::sin(theta);
  Vec3 v1 = add3(scale3(p, ct), scale3(q, st));
  Vec3 v2 = add3(scale3(p, -st), scale3(q, ct));
  double m1 = app * ct * ct + 2.0 * apq * ct * st + aqq * st * st;
  double m2 = app * st * st - 2.0 * apq * ct * st + aqq * ct * ct;
  if (m2 > m1) {
    std::swap(m1, m2);
    std::swap(v1, v2);
  }

  if (anchor_top) {
    out.lambda = {l[0], m1, m2};
    out.u = {w, v1, v2};
  } else {
    out.lambda = {m1, m2, l[2]};
    out.u = {v1, v2, w};
  }

  // Rayleigh polish in the original scale, then restore descending order.
  for (int i = 0; i < 3; ++i) out.lambda[i] = dot3(out.u[i], s.mul(out.u[i])) * scale;
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return out.lambda[a] > out.lambda[b]; });
  EigSys3 sorted;
  for (int i = 0; i < 3; ++i) {
    sorted.lambda[i] = out.lambda[order[i]];
    sorted.u[i] = out.u[order[i]];
  }
  return sorted;
}

inline EigSys3 sym_eig3(const Mat3& dense) { return sym_eig3(Sym3::from_dense(dense)); }

// Largest eigenvalue of M M^T for a 3xD matrix. With unit-norm rows this lies
// in [1, 3] and the three eigenvalues sum to 3 (trace of the Gram matrix).
inline double top_eigenvalue(const Mat& m) {
  if (!all_finite(m)) throw_invalid_input("top_eigenvalue: non-finite input");
  return sym_eig3(Sym3::gram(m)).lambda[0];
}

// d(lambda1)/dM = 2 u1 u1^T M, valid while lambda1 is simple. Near an
// eigenvalue crossing the derivative is undefined; `degenerate` flags that
// and the caller decides (training zeroes the contribution).
struct TopEigGrad {
  Mat grad;        // 3xD
  double lambda1 = 0;
  double gap = 0;  // lambda1 - lambda2
  bool degenerate = false;
};

inline TopEigGrad top_eigenvalue_grad(const Mat& m, double gap_threshold = 1e-6) {
  if (!all_finite(m)) throw_invalid_input("top_eigenvalue_grad: non-finite input");
  const EigSys3 eig = sym_eig3(Sym3::gram(m));
  TopEigGrad out;
  out.lambda1 = eig.lambda[0];
  out.gap = eig.lambda[0] - eig.lambda[1];
  out.degenerate = out.gap < gap_threshold;
  const Vec3& u = eig.u[0];
  out.grad = Mat(3, m.cols);
  for (int j = 0; j < m.cols; ++j) {
    const double uTm = u[0] * m(0, j) + u[1] * m(1, j) + u[2] * m(2, j);
    out.grad(0, j) = 2.0 * u[0] * uTm;
    out.grad(1, j) = 2.0 * u[1] * uTm;
    out.grad(2, j) = 2.0 * u[2] * uTm;
  }
  return out;
}

// SVD of a 3x3 matrix built on the symmetric eigensolver of A^T A.
// Sigma is non-negative and descending. V always has det +1; U matches when
// det(A) >= 0 (for negative determinants the reflection necessarily sits in
// U and the Procrustes solver applies the determinant correction).
struct Svd3 {
  Mat3 u{};
  Vec3 sigma{};
  Mat3 v{};
};

inline Svd3 svd3(const Mat3& a) {
  for (double x : a)
    if (!std::isfinite(x)) throw_invalid_input("svd3: non-finite input");

  const EigSys3 eig = sym_eig3(Sym3::from_dense(mat3_mul(mat3_transpose(a), a)));
  Vec3 sigma{};
  for (int i = 0; i < 3; ++i) sigma[i] = std::sqrt(std::max(eig.lambda[i], 0.0));

  std::array<Vec3, 3> v = eig.u;
  std::array<Vec3, 3> u;
  const double tol = std::max(sigma[0], 1.0) * 1e-13;

  u[0] = sigma[0] > tol ? scale3(mat3_mul_vec(a, v[0]), 1.0 / sigma[0]) : Vec3{1, 0, 0};
  if (sigma[1] > tol) {
    u[1] = scale3(mat3_mul_vec(a, v[1]), 1.0 / sigma[1]);
    // guard orthogonality against accumulated roundoff
    u[1] = sub3(u[1], scale3(u[0], dot3(u[0], u[1])));
    u[1] = scale3(u[1], 1.0 / norm3(u[1]));
  } else {
    Vec3 p, q;
    detail::orthonormal_complement(u[0], p, q);
    u[1] = p;
  }
  if (sigma[2] > tol) {
    u[2] = scale3(mat3_mul_vec(a, v[2]), 1.0 / sigma[2]);
    u[2] = sub3(u[2], scale3(u[0], dot3(u[0], u[2])));
    u[2] = sub3(u[2], scale3(u[1], dot3(u[1], u[2])));
    u[2] = scale3(u[2], 1.0 / norm3(u[2]));
  } else {
    u[2] = cross3(u[0], u[1]);
  }

  Svd3 out;
  auto pack = [](const std::array<Vec3, 3>& cols) {
    Mat3 m{};
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) m[i * 3 + c] = cols[c][i];
    return m;
  };
  out.u = pack(u);
  out.v = pack(v);
  out.sigma = sigma;

  // Flipping the last column of both factors preserves the product; use it to
  // keep det(V) = +1.
  if (mat3_det(out.v) < 0.0) {
    for (int i = 0; i < 3; ++i) {
      out.v[i * 3 + 2] = -out.v[i * 3 + 2];
      out.u[i * 3 + 2] = -out.u[i * 3 + 2];
    }
  }
  // When the smallest singular value vanishes the sign of u3 is free.
  if (sigma[2] <= tol && mat3_det(out.u) < 0.0) {
    for (int i = 0; i < 3; ++i) out.u[i * 3 + 2] = -out.u[i * 3 + 2];
  }
  return out;
}

// Similarity transform q ~ s R p + t with R a proper rotation and s > 0.
struct SimilarityTransform {
  Mat3 rotation = mat3_identity();
  double scale = 1.0;
  Vec3 translation{};

  Vec3 apply(const Vec3& p) const {
    return add3(scale3(mat3_mul_vec(rotation, p), scale), translation);
  }

  // Applies to a Jx3 pose, row per joint.
  Mat apply(const Mat& pose) const {
    Mat out(pose.rows, 3);
    for (int j = 0; j < pose.rows; ++j) {
      const Vec3 p = apply(Vec3{pose(j, 0), pose(j, 1), pose(j, 2)});
      out(j, 0) = p[0];
      out(j, 1) = p[1];
      out(j, 2) = p[2];
    }
    return out;
  }
};

// Least-squares similarity alignment of P onto Q (closed form): centers both
// clouds, recovers the rotation from the SVD of the cross-covariance with a
// determinant correction, then scale and translation.
inline SimilarityTransform procrustes_align(const Mat& p, const Mat& q) {
  if (p.rows != q.rows || p.cols != 3 || q.cols != 3)
    throw_invalid_input("procrustes_align: expected matching Jx3 point sets");
  if (p.rows < 3) throw_invalid_input("procrustes_align: need at least 3 points");
  if (!all_finite(p) || !all_finite(q)) throw_invalid_input("procrustes_align: non-finite input");

  const int n = p.rows;
  Vec3 mp{}, mq{};
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < 3; ++c) {
      mp[c] += p(j, c);
      mq[c] += q(j, c);
    }
  for (int c = 0; c < 3; ++c) {
    mp[c] /= n;
    mq[c] /= n;
  }

  double var_p = 0.0;
  Mat3 h{};  // cross-covariance, target x source
  for (int j = 0; j < n; ++j) {
    const Vec3 pc = {p(j, 0) - mp[0], p(j, 1) - mp[1], p(j, 2) - mp[2]};
    const Vec3 qc = {q(j, 0) - mq[0], q(j, 1) - mq[1], q(j, 2) - mq[2]};
    var_p += dot3(pc, pc);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) h[r * 3 + c] += qc[r] * pc[c];
  }
  var_p /= n;
  for (double& x : h) x /= n;

  if (var_p < 1e-24) throw_invalid_input("procrustes_align: degenerate source (zero variance)");

  const Svd3 svd = svd3(h);
  const double d = (mat3_det(svd.u) * mat3_det(svd.v) < 0.0) ? -1.0 : 1.0;

  Mat3 dv_t{};  // diag(1,1,d) * V^T
  const Mat3 vt = mat3_transpose(svd.v);
  for (int i = 0; i < 9; ++i) dv_t[i] = vt[i];
  for (int c = 0; c < 3; ++c) dv_t[2 * 3 + c] *= d;

  SimilarityTransform out;
  out.rotation = mat3_mul(svd.u, dv_t);
  out.scale = (svd.sigma[0] + svd.sigma[1] + d * svd.sigma[2]) / var_p;
  if (!(out.scale > 0.0) || !std::isfinite(out.scale))
    throw_invalid_input("procrustes_align: degenerate alignment (non-positive scale)");
  out.translation = sub3(mq, scale3(mat3_mul_vec(out.rotation, mp), out.scale));
  return out;
}

}  // namespace trialign
