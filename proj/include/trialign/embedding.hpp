#pragma once

#include <cmath>
#include <vector>

#include "trialign/error.hpp"
#include "trialign/mat.hpp"

namespace trialign {

enum class Modality { Image = 0, Pose2D = 1, Pose3D = 2 };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Image: return "image";
    case Modality::Pose2D: return "pose2d";
    case Modality::Pose3D: return "pose3d";
  }
  return "?";
}

// A unit-norm point on the shared embedding sphere, tagged with its source.
struct Embedding {
  std::vector<double> values;
  Modality modality = Modality::Pose3D;

  int dim() const { return static_cast<int>(values.size()); }
};

inline std::vector<double> normalize(std::span<const double> v) {
  if (!all_finite(v)) throw_invalid_input("normalize: non-finite input");
  const double n = norm2(v);
  if (n <= 1e-12) throw_invalid_input("normalize: degenerate near-zero vector");
  std::vector<double> out(v.begin(), v.end());
  const double inv = 1.0 / n;
  for (double& x : out) x *= inv;
  return out;
}

inline Embedding make_embedding(std::span<const double> v, Modality m) {
  return {normalize(v), m};
}

inline double cosine(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw_invalid_input("cosine: dimension mismatch");
  return dot(a.values, b.values);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw_invalid_input("cosine: dimension mismatch");
  return dot(a, b);
}

// Row-stacked (image, 2D, 3D) embedding triple for one candidate. The triple
// is positive exactly when all three rows come from the same sample.
struct TripletMatrix {
  Mat rows;  // 3xD, fixed row order: image, 2D, 3D
  int i_img = 0, i_2d = 0, i_3d = 0;

  bool is_positive() const { return i_img == i_2d && i_2d == i_3d; }
};

inline TripletMatrix make_triplet(const Embedding& x_img, const Embedding& x_2d,
                                  const Embedding& x_3d, int i_img, int i_2d, int i_3d) {
  const int d = x_img.dim();
  if (x_2d.dim() != d || x_3d.dim() != d)
    throw_invalid_input("make_triplet: embedding dimensions differ");
  TripletMatrix t;
  t.rows = Mat(3, d);
  for (int j = 0; j < d; ++j) {
    t.rows(0, j) = x_img.values[j];
    t.rows(1, j) = x_2d.values[j];
    t.rows(2, j) = x_3d.values[j];
  }
  t.i_img = i_img;
  t.i_2d = i_2d;
  t.i_3d = i_3d;
  return t;
}

// Builds the 3xD matrix for batch rows (i_img, i_2d, i_3d) of three BxD
// embedding batches; the hot path of the triplet loss.
inline Mat stack_triplet_rows(const Mat& x_img, const Mat& x_2d, const Mat& x_3d, int i_img,
                              int i_2d, int i_3d) {
  Mat m(3, x_img.cols);
  std::copy_n(x_img.row(i_img).data(), x_img.cols, m.row(0).data());
  std::copy_n(x_2d.row(i_2d).data(), x_2d.cols, m.row(1).data());
  std::copy_n(x_3d.row(i_3d).data(), x_3d.cols, m.row(2).data());
  return m;
}

// Spherical interpolation at constant angular speed. Endpoints are returned
// exactly; antipodal inputs have no unique geodesic and are rejected.
inline Embedding interpolate(const Embedding& a, const Embedding& b, double t) {
  if (a.dim() != b.dim()) throw_invalid_input("interpolate: dimension mismatch");
  if (t < 0.0 || t > 1.0) throw_invalid_input("interpolate: t outside [0, 1]");
  if (t == 0.0) return a;
  if (t == 1.0) return b;

  const double c = std::clamp(dot(a.values, b.values), -1.0, 1.0);
  if (c <= -1.0 + 1e-12)
    throw_invalid_input("interpolate: ambiguous geodesic between antipodal embeddings");

  const double theta = std::acos(c);
  std::vector<double> out(a.values.size());
  if (theta < 1e-9) {
    // nearly parallel: chord and arc coincide to machine precision
    for (size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * a.values[i] + t * b.values[i];
    return {normalize(out), a.modality};
  }
  const double inv_sin = 1.0 / std::sin(theta);
  const double wa = std::sin((1.0 - t) * theta) * inv_sin;
  const double wb = std::sin(t * theta) * inv_sin;
  for (size_t i = 0; i < out.size(); ++i) out[i] = wa * a.values[i] + wb * b.values[i];
  Embedding e{std::move(out), a.modality};
  return e;
}

}  // namespace trialign
