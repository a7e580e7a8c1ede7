#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "trialign/binio.hpp"
#include "trialign/error.hpp"
#include "trialign/mat.hpp"
#include "trialign/rng.hpp"

namespace trialign {

// ---- skeleton and forward kinematics -----------------------------------

// Articulated body as a tree. offset[j] is the bone vector from parent[j] to
// joint j in the rest pose, expressed in the parent's frame. A joint's
// rotation turns the bones of its children: hinge joints flex about a fixed
// local axis through [0, max_angle], ball joints rotate about a random axis
// through [-max_angle, max_angle]. Leaf joints get max_angle 0.
struct Skeleton {
  std::vector<int> parent;        // -1 for the root
  std::vector<Vec3> offset;       // meters
  std::vector<Vec3> axis;         // hinge axis (unit, local frame)
  std::vector<double> max_angle;  // radians
  std::vector<uint8_t> hinge;     // 1 = single-axis flex joint

  int joints() const { return static_cast<int>(parent.size()); }

  double bone_length(int j) const { return norm3(offset[j]); }

  void validate() const {
    const int J = joints();
    if (J < 2) throw_invalid_input("Skeleton: need at least 2 joints");
    if (static_cast<int>(offset.size()) != J || static_cast<int>(axis.size()) != J ||
        static_cast<int>(max_angle.size()) != J || static_cast<int>(hinge.size()) != J)
      throw_invalid_input("Skeleton: field lengths disagree");
    int roots = 0;
    for (int j = 0; j < J; ++j) {
      if (parent[j] == -1) {
        ++roots;
        if (j != 0) throw_invalid_input("Skeleton: root must be joint 0");
        continue;
      }
      if (parent[j] < 0 || parent[j] >= j)
        throw_invalid_input("Skeleton: parents must precede children (tree order)");
      if (!(bone_length(j) > 0.0)) throw_invalid_input("Skeleton: bone lengths must be positive");
    }
    if (roots != 1) throw_invalid_input("Skeleton: exactly one root required");
  }

  // 17-joint human body in a Human3.6M-style layout, y up, meters.
  static Skeleton human17() {
    Skeleton s;
    auto add = [&](int par, Vec3 off, double max_a, bool is_hinge, Vec3 ax = {1, 0, 0}) {
      s.parent.push_back(par);
      s.offset.push_back(off);
      s.axis.push_back(ax);
      s.max_angle.push_back(max_a);
      s.hinge.push_back(is_hinge ? 1 : 0);
    };
    add(-1, {0.00, 0.00, 0.00}, std::numbers::pi, false);  //  0 pelvis (whole-body orientation)
    add(0, {-0.13, 0.00, 0.00}, 0.60, false);              //  1 r_hip
    add(1, {0.00, -0.45, 0.00}, 2.00, true, {1, 0, 0});    //  2 r_knee (bends the shin)
    add(2, {0.00, -0.45, 0.00}, 0.00, false);              //  3 r_ankle (leaf)
    add(0, {0.13, 0.00, 0.00}, 0.60, false);               //  4 l_hip
    add(4, {0.00, -0.45, 0.00}, 2.00, true, {1, 0, 0});    //  5 l_knee
    add(5, {0.00, -0.45, 0.00}, 0.00, false);              //  6 l_ankle (leaf)
    add(0, {0.00, 0.25, 0.00}, 0.25, false);               //  7 spine
    add(7, {0.00, 0.25, 0.00}, 0.25, false);               //  8 thorax
    add(8, {0.00, 0.12, 0.00}, 0.40, false);               //  9 neck
    add(9, {0.00, 0.12, 0.00}, 0.00, false);               // 10 head (leaf)
    add(8, {0.18, 0.05, 0.00}, 1.10, false);               // 11 l_shoulder
    add(11, {0.28, 0.00, 0.00}, 2.20, true, {0, 0, 1});    // 12 l_elbow (bends the forearm)
    add(12, {0.25, 0.00, 0.00}, 0.00, false);              // 13 l_wrist (leaf)
    add(8, {-0.18, 0.05, 0.00}, 1.10, false);              // 14 r_shoulder
    add(14, {-0.28, 0.00, 0.00}, 2.20, true, {0, 0, 1});   // 15 r_elbow
    add(15, {-0.25, 0.00, 0.00}, 0.00, false);             // 16 r_wrist (leaf)
    s.validate();
    return s;
  }

  // Serial chain used when a non-default joint count is requested.
  static Skeleton chain(int J) {
    if (J < 2) throw_invalid_input("Skeleton::chain: need at least 2 joints");
    Skeleton s;
    for (int j = 0; j < J; ++j) {
      s.parent.push_back(j == 0 ? -1 : j - 1);
      s.offset.push_back(j == 0 ? Vec3{0, 0, 0} : Vec3{0.02 * (j % 3), 0.25, 0.0});
      s.axis.push_back({1, 0, 0});
      s.max_angle.push_back(j == 0 ? std::numbers::pi : 0.7);
      s.hinge.push_back(0);
    }
    s.validate();
    return s;
  }
};

inline Mat3 axis_angle_to_mat3(const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
          t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
          t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

inline Vec3 random_unit_vec3(RngEngine& rng) {
  for (;;) {
    Vec3 v{uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
    const double n2 = dot3(v, v);
    if (n2 > 1e-4 && n2 <= 1.0) return scale3(v, 1.0 / std::sqrt(n2));
  }
}

// One rotation per joint as axis-angle; zero angle means identity.
struct JointRotations {
  std::vector<Vec3> axis;
  std::vector<double> angle;
};

inline JointRotations zero_rotations(const Skeleton& sk) {
  JointRotations r;
  r.axis.assign(sk.joints(), Vec3{1.0, 0.0, 0.0});
  r.angle.assign(sk.joints(), 0.0);
  return r;
}

inline JointRotations sample_joint_rotations(const Skeleton& sk, RngEngine& rng) {
  JointRotations r = zero_rotations(sk);
  for (int j = 0; j < sk.joints(); ++j) {
    if (sk.max_angle[j] <= 0.0) continue;
    if (sk.hinge[j]) {
      r.axis[j] = sk.axis[j];
      r.angle[j] = uniform(rng, 0.0, sk.max_angle[j]);  // flex-only
    } else {
      r.axis[j] = random_unit_vec3(rng);
      r.angle[j] = uniform(rng, -sk.max_angle[j], sk.max_angle[j]);
    }
  }
  return r;
}

// Forward kinematics. Joint j's rotation is composed into the frame its
// children inherit, so zero angles reproduce the rest pose and every bone
// length is exact by construction. Root lands at the origin.
inline Mat fk_pose(const Skeleton& sk, const JointRotations& rot) {
  const int J = sk.joints();
  if (static_cast<int>(rot.angle.size()) != J || static_cast<int>(rot.axis.size()) != J)
    throw_invalid_input("fk_pose: rotation count does not match skeleton");
  std::vector<Mat3> frame(J);
  Mat pose(J, 3);
  for (int j = 0; j < J; ++j) {
    const Mat3 local = axis_angle_to_mat3(rot.axis[j], rot.angle[j]);
    if (sk.parent[j] < 0) {
      frame[j] = local;
      continue;  // root stays at the origin
    }
    const Mat3& pf = frame[sk.parent[j]];
    const Vec3 bone = mat3_mul_vec(pf, sk.offset[j]);
    const int p = sk.parent[j];
    pose(j, 0) = pose(p, 0) + bone[0];
    pose(j, 1) = pose(p, 1) + bone[1];
    pose(j, 2) = pose(p, 2) + bone[2];
    frame[j] = mat3_mul(pf, local);
  }
  return pose;
}

inline Mat sample_pose3d(const Skeleton& sk, RngEngine& rng) {
  return fk_pose(sk, sample_joint_rotations(sk, rng));
}

// ---- camera and projection ---------------------------------------------

// Pinhole camera. Rows of rot are (right, down, forward), so camera-frame z
// is depth and the image y axis points down; pos is the optical center.
struct Camera {
  Mat3 rot{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 pos{0, 0, 0};
  double focal = 1.0;

  Vec3 to_camera(const Vec3& p) const { return mat3_mul_vec(rot, sub3(p, pos)); }
};

inline Camera look_at_origin(const Vec3& pos, double focal) {
  const double n = norm3(pos);
  if (!(n > 1e-9)) throw_invalid_input("look_at_origin: camera at the origin");
  const Vec3 f = scale3(pos, -1.0 / n);
  Vec3 r = cross3(f, Vec3{0, 1, 0});
  const double rn = norm3(r);
  if (!(rn > 1e-9)) throw_invalid_input("look_at_origin: view direction parallel to up vector");
  r = scale3(r, 1.0 / rn);
  const Vec3 d = cross3(f, r);
  Camera cam;
  cam.rot = {r[0], r[1], r[2], d[0], d[1], d[2], f[0], f[1], f[2]};
  cam.pos = pos;
  cam.focal = focal;
  return cam;
}

inline Camera sample_camera(RngEngine& rng, double dist_min, double dist_max, double elev_max,
                            double focal) {
  const double az = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double el = uniform(rng, -elev_max, elev_max);
  const double dist = uniform(rng, dist_min, dist_max);
  const Vec3 pos{dist * std::cos(el) * std::sin(az), dist * std::sin(el),
                 dist * std::cos(el) * std::cos(az)};
  return look_at_origin(pos, focal);
}

// Raw pinhole projection onto the image plane (before bbox normalization).
inline Mat project_raw(const Mat& pose3d_world, const Camera& cam, double near_plane = 1e-3) {
  if (pose3d_world.cols != 3) throw_invalid_input("project_raw: pose must be J x 3");
  Mat uv(pose3d_world.rows, 2);
  for (int j = 0; j < pose3d_world.rows; ++j) {
    const Vec3 q =
        cam.to_camera({pose3d_world(j, 0), pose3d_world(j, 1), pose3d_world(j, 2)});
    if (!(q[2] > near_plane))
      throw_invalid_input("project_to_2d: joint behind camera (invalid camera)");
    uv(j, 0) = cam.focal * q[0] / q[2];
    uv(j, 1) = cam.focal * q[1] / q[2];
  }
  return uv;
}

// Tight bounding box of raw 2D keypoints: center + size in image-plane units.
struct Bbox {
  double cx = 0, cy = 0, w = 0, h = 0;
};

inline Bbox tight_bbox(const Mat& uv) {
  if (uv.rows < 1 || uv.cols != 2) throw_invalid_input("tight_bbox: need J x 2 keypoints");
  double xmin = uv(0, 0), xmax = xmin, ymin = uv(0, 1), ymax = ymin;
  for (int j = 1; j < uv.rows; ++j) {
    xmin = std::min(xmin, uv(j, 0));
    xmax = std::max(xmax, uv(j, 0));
    ymin = std::min(ymin, uv(j, 1));
    ymax = std::max(ymax, uv(j, 1));
  }
  return {0.5 * (xmin + xmax), 0.5 * (ymin + ymax), xmax - xmin, ymax - ymin};
}

// Per-axis normalization into [0,1]^2 by the tight bbox.
inline Mat normalize_by_bbox(const Mat& uv, const Bbox& box) {
  if (!(box.w > 1e-12) || !(box.h > 1e-12))
    throw_invalid_input("normalize_by_bbox: degenerate bounding box");
  Mat out(uv.rows, 2);
  for (int j = 0; j < uv.rows; ++j) {
    out(j, 0) = (uv(j, 0) - (box.cx - 0.5 * box.w)) / box.w;
    out(j, 1) = (uv(j, 1) - (box.cy - 0.5 * box.h)) / box.h;
  }
  return out;
}

// Projection + bbox normalization in one step (the on-disk 2D convention).
inline Mat project_to_2d(const Mat& pose3d_world, const Camera& cam) {
  const Mat uv = project_raw(pose3d_world, cam);
  return normalize_by_bbox(uv, tight_bbox(uv));
}

// ---- image-proxy featurizer ---------------------------------------------

// Frozen random two-layer tanh map standing in for an image pathway. Input is
// the normalized 2D pose concatenated with amplitude-scaled nuisance channels
// (4 bbox-jitter-like plus `nuisance` appearance-like); at amplitude zero the
// feature is a deterministic function of the 2D pose alone.
struct ImageProxy {
  int joints = 0, nuisance = 0, hidden = 0, out = 0;
  double amp = 0.0;
  std::vector<double> w1, b1, w2, b2;

  int in_dim() const { return 2 * joints + 4 + nuisance; }

  static ImageProxy create(int joints, int nuisance, int hidden, int out, double amp,
                           uint64_t seed) {
    if (joints < 1 || nuisance < 0 || hidden < 1 || out < 1)
      throw_invalid_input("ImageProxy: bad dimensions");
    if (amp < 0.0) throw_invalid_input("ImageProxy: negative nuisance amplitude");
    ImageProxy p;
    p.joints = joints;
    p.nuisance = nuisance;
    p.hidden = hidden;
    p.out = out;
    p.amp = amp;
    RngEngine rng = make_rng(seed);
    const int in = p.in_dim();
    p.w1.resize(static_cast<size_t>(hidden) * in);
    p.b1.resize(hidden);
    p.w2.resize(static_cast<size_t>(out) * hidden);
    p.b2.resize(out);
    const double s1 = 1.5 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.5 / std::sqrt(static_cast<double>(hidden));
    for (double& v : p.w1) v = gauss(rng, 0.0, s1);
    for (double& v : p.b1) v = gauss(rng, 0.0, 0.1);
    for (double& v : p.w2) v = gauss(rng, 0.0, s2);
    for (double& v : p.b2) v = gauss(rng, 0.0, 0.1);
    return p;
  }

  std::vector<double> apply(std::span<const double> pose2d, RngEngine& noise_rng) const {
    if (pose2d.size() != static_cast<size_t>(2 * joints))
      throw_invalid_input("ImageProxy::apply: pose2d length mismatch");
    std::vector<double> x(in_dim());
    std::copy(pose2d.begin(), pose2d.end(), x.begin());
    for (int i = 0; i < 4 + nuisance; ++i) x[2 * joints + i] = amp * gauss(noise_rng);
    std::vector<double> h(hidden);
    for (int o = 0; o < hidden; ++o) {
      double acc = b1[o];
      const double* w = w1.data() + static_cast<size_t>(o) * x.size();
      for (size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
      h[o] = std::tanh(acc);
    }
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      double acc = b2[o];
      const double* w = w2.data() + static_cast<size_t>(o) * h.size();
      for (size_t i = 0; i < h.size(); ++i) acc += w[i] * h[i];
      y[o] = acc;
    }
    return y;
  }
};

// ---- dataset --------------------------------------------------------------

struct SynthConfig {
  int n_samples = 5000;
  double test_fraction = 0.2;
  int joints = 17;
  int img_feat_dim = 64;
  int img_hidden = 96;
  int nuisance_dim = 8;
  double nuisance_amp = 0.5;
  double cam_dist_min = 3.5, cam_dist_max = 5.5;
  double cam_elev_max = 0.4;  // camera viewpoint spread (elevation half-range)
  double focal = 1.2;
  uint64_t seed = 1;

  void validate() const {
    if (n_samples < 0) throw_invalid_input("SynthConfig: n_samples must be >= 0");
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0))
      throw_invalid_input("SynthConfig: test_fraction must be in [0,1]");
    if (joints < 2) throw_invalid_input("SynthConfig: joints must be >= 2");
    if (img_feat_dim < 1 || img_hidden < 1 || nuisance_dim < 0)
      throw_invalid_input("SynthConfig: bad feature dims");
    if (nuisance_amp < 0.0) throw_invalid_input("SynthConfig: nuisance_amp must be >= 0");
    if (!(cam_dist_min > 0.0) || !(cam_dist_max >= cam_dist_min))
      throw_invalid_input("SynthConfig: bad camera distance range");
    if (!(cam_elev_max >= 0.0 && cam_elev_max <= 1.2))
      throw_invalid_input("SynthConfig: cam_elev_max must be in [0, 1.2]");
    if (!(focal > 0.0)) throw_invalid_input("SynthConfig: focal must be positive");
  }
};

// One tri-modal frame. pose3d is camera-frame and root-centered (a rigid
// transform of the world pose, so bone lengths are preserved); pose2d is
// bbox-normalized; img is the proxy feature vector.
struct Sample {
  uint32_t frame_id = 0;
  Camera camera;
  std::vector<double> pose3d;      // 3J
  std::vector<double> pose2d;      // 2J, in [0,1]
  std::array<double, 4> bbox{};    // cx, cy, w, h (image-plane units)
  std::vector<double> img;         // F
};

struct Dataset {
  uint64_t seed = 0;
  Skeleton skeleton;
  int img_dim = 0;
  std::vector<Sample> samples;
  std::vector<int> train_idx, test_idx;

  int joints() const { return skeleton.joints(); }
  int p2d_dim() const { return 2 * joints() + 4; }  // pose2d ++ bbox (encoder input)
  int p3d_dim() const { return 3 * joints(); }
};

enum class Split { Train, Test };

inline const std::vector<int>& split_indices(const Dataset& ds, Split s) {
  return s == Split::Train ? ds.train_idx : ds.test_idx;
}

namespace detail {

inline void fisher_yates(std::vector<int>& v, RngEngine& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
    std::swap(v[i], v[uniform_int(rng, 0, i)]);
}

}  // namespace detail

// Pure function of (config, seed): every sample draws from its own derived
// substream, so generation order cannot leak between samples.
inline Dataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.seed = cfg.seed;
  ds.skeleton = cfg.joints == 17 ? Skeleton::human17() : Skeleton::chain(cfg.joints);
  ds.img_dim = cfg.img_feat_dim;
  const ImageProxy proxy =
      ImageProxy::create(cfg.joints, cfg.nuisance_dim, cfg.img_hidden, cfg.img_feat_dim,
                         cfg.nuisance_amp, derive_seed(cfg.seed, 0x1316));
  const int J = cfg.joints;
  ds.samples.resize(cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) {
    RngEngine rng = make_rng(derive_seed(cfg.seed, 0xDA7A, static_cast<uint64_t>(i)));
    RngEngine noise_rng = make_rng(derive_seed(cfg.seed, 0x01AE, static_cast<uint64_t>(i)));
    Sample& s = ds.samples[i];
    s.frame_id = static_cast<uint32_t>(i);
    bool ok = false;
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
      const Mat pose = sample_pose3d(ds.skeleton, rng);
      const Camera cam =
          sample_camera(rng, cfg.cam_dist_min, cfg.cam_dist_max, cfg.cam_elev_max, cfg.focal);
      try {
        const Mat uv = project_raw(pose, cam);
        const Bbox box = tight_bbox(uv);
        const Mat p2d = normalize_by_bbox(uv, box);
        s.camera = cam;
        s.bbox = {box.cx, box.cy, box.w, box.h};
        s.pose2d.assign(p2d.data.begin(), p2d.data.end());
        s.pose3d.resize(3 * static_cast<size_t>(J));
        const Vec3 root = cam.to_camera({pose(0, 0), pose(0, 1), pose(0, 2)});
        for (int j = 0; j < J; ++j) {
          const Vec3 q = cam.to_camera({pose(j, 0), pose(j, 1), pose(j, 2)});
          s.pose3d[3 * j + 0] = q[0] - root[0];
          s.pose3d[3 * j + 1] = q[1] - root[1];
          s.pose3d[3 * j + 2] = q[2] - root[2];
        }
        s.img = proxy.apply(s.pose2d, noise_rng);
        ok = true;
      } catch (const Error&) {
        // behind-camera or degenerate bbox: draw a fresh pose and camera
      }
    }
    if (!ok)
      throw_numerical("generate_dataset: could not produce a visible pose after 32 attempts");
  }
  // deterministic shuffled split
  std::vector<int> order(cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) order[i] = i;
  RngEngine split_rng = make_rng(derive_seed(cfg.seed, 0x5917));
  detail::fisher_yates(order, split_rng);
  const int n_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.n_samples));
  ds.test_idx.assign(order.begin(), order.begin() + n_test);
  ds.train_idx.assign(order.begin() + n_test, order.end());
  std::sort(ds.test_idx.begin(), ds.test_idx.end());
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
  return ds;
}

// ---- serialization ---------------------------------------------------------

inline constexpr char kDatasetMagic[9] = "TALNDAT1";

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  ByteWriter w;
  w.put_magic(kDatasetMagic);
  w.put_u32(1);  // format version
  w.put_u64(ds.seed);
  const int J = ds.joints();
  w.put_i32(J);
  w.put_i32(ds.img_dim);
  for (int j = 0; j < J; ++j) {
    w.put_i32(ds.skeleton.parent[j]);
    w.put_f64_span(ds.skeleton.offset[j]);
    w.put_f64_span(ds.skeleton.axis[j]);
    w.put_f64(ds.skeleton.max_angle[j]);
    w.put_u8(ds.skeleton.hinge[j]);
  }
  w.put_u64(ds.samples.size());
  for (const Sample& s : ds.samples) {
    w.put_u32(s.frame_id);
    w.put_f64_span(s.camera.rot);
    w.put_f64_span(s.camera.pos);
    w.put_f64(s.camera.focal);
    w.put_f64_span(s.pose3d);
    w.put_f64_span(s.pose2d);
    w.put_f64_span(s.bbox);
    w.put_f64_span(s.img);
  }
  auto put_idx = [&](const std::vector<int>& idx) {
    w.put_u64(idx.size());
    for (int i : idx) w.put_i32(i);
  };
  put_idx(ds.train_idx);
  put_idx(ds.test_idx);
  atomic_write_file(path, seal_with_crc(std::move(w)));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r{unseal_checked(bytes)};
  if (!r.check_magic(kDatasetMagic)) throw_invalid_input("dataset: unrecognized file magic");
  const uint32_t version = r.get_u32();
  if (version != 1) throw_invalid_input("dataset: unsupported format version");
  Dataset ds;
  ds.seed = r.get_u64();
  const int32_t J = r.get_i32();
  ds.img_dim = r.get_i32();
  if (J < 2 || J > 4096 || ds.img_dim < 1 || ds.img_dim > (1 << 20))
    throw_invalid_input("dataset: implausible header dimensions");
  ds.skeleton.parent.resize(J);
  ds.skeleton.offset.resize(J);
  ds.skeleton.axis.resize(J);
  ds.skeleton.max_angle.resize(J);
  ds.skeleton.hinge.resize(J);
  for (int j = 0; j < J; ++j) {
    ds.skeleton.parent[j] = r.get_i32();
    r.get_f64_span(ds.skeleton.offset[j]);
    r.get_f64_span(ds.skeleton.axis[j]);
    ds.skeleton.max_angle[j] = r.get_f64();
    ds.skeleton.hinge[j] = r.get_u8();
  }
  ds.skeleton.validate();
  const uint64_t n = r.get_u64();
  if (n > (1ull << 32)) throw_invalid_input("dataset: implausible sample count");
  ds.samples.resize(n);
  std::set<uint32_t> seen_frames;
  for (Sample& s : ds.samples) {
    s.frame_id = r.get_u32();
    if (!seen_frames.insert(s.frame_id).second)
      throw_invalid_input("dataset: duplicate frame id");
    r.get_f64_span(s.camera.rot);
    r.get_f64_span(s.camera.pos);
    s.camera.focal = r.get_f64();
    s.pose3d.resize(3 * static_cast<size_t>(J));
    r.get_f64_span(s.pose3d);
    s.pose2d.resize(2 * static_cast<size_t>(J));
    r.get_f64_span(s.pose2d);
    r.get_f64_span(s.bbox);
    s.img.resize(ds.img_dim);
    r.get_f64_span(s.img);
  }
  auto get_idx = [&](std::vector<int>& idx) {
    const uint64_t k = r.get_u64();
    if (k > n) throw_invalid_input("dataset: split larger than sample count");
    idx.resize(k);
    for (auto& i : idx) {
      i = r.get_i32();
      if (i < 0 || static_cast<uint64_t>(i) >= n)
        throw_invalid_input("dataset: split index out of range");
    }
  };
  get_idx(ds.train_idx);
  get_idx(ds.test_idx);
  std::set<int> all(ds.train_idx.begin(), ds.train_idx.end());
  for (int i : ds.test_idx)
    if (!all.insert(i).second) throw_invalid_input("dataset: splits overlap");
  if (all.size() != n) throw_invalid_input("dataset: splits do not cover all samples");
  return ds;
}

// ---- batching ---------------------------------------------------------------

struct Batch {
  Mat img;  // n x F
  Mat p2d;  // n x (2J + 4): normalized pose ++ bbox
  Mat p3d;  // n x 3J
  std::vector<int> idx;

  int size() const { return static_cast<int>(idx.size()); }
};

inline Batch gather_batch(const Dataset& ds, std::span<const int> indices) {
  const int n = static_cast<int>(indices.size());
  const int J = ds.joints();
  Batch b;
  b.img = Mat(n, ds.img_dim);
  b.p2d = Mat(n, ds.p2d_dim());
  b.p3d = Mat(n, ds.p3d_dim());
  b.idx.assign(indices.begin(), indices.end());
  for (int r = 0; r < n; ++r) {
    const int i = indices[r];
    if (i < 0 || i >= static_cast<int>(ds.samples.size()))
      throw_invalid_input("gather_batch: index out of range");
    const Sample& s = ds.samples[i];
    std::copy(s.img.begin(), s.img.end(), b.img.row(r).begin());
    auto p2 = b.p2d.row(r);
    std::copy(s.pose2d.begin(), s.pose2d.end(), p2.begin());
    std::copy(s.bbox.begin(), s.bbox.end(), p2.begin() + 2 * J);
    std::copy(s.pose3d.begin(), s.pose3d.end(), b.p3d.row(r).begin());
  }
  return b;
}

// Shuffled non-overlapping index batches covering the whole split once per
// epoch; the final batch may be short when B does not divide the split size.
inline std::vector<std::vector<int>> make_batches(std::span<const int> indices, int batch_size,
                                                  uint64_t seed, uint64_t epoch) {
  const int n = static_cast<int>(indices.size());
  if (batch_size < 1) throw_invalid_input("make_batches: batch size must be >= 1");
  if (batch_size > n) throw_invalid_input("make_batches: batch size exceeds split size");
  std::vector<int> order(indices.begin(), indices.end());
  RngEngine rng = make_rng(derive_seed(seed, 0xE90C, epoch));
  detail::fisher_yates(order, rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

inline std::vector<std::vector<int>> make_batches(const Dataset& ds, Split split, int batch_size,
                                                  uint64_t seed, uint64_t epoch) {
  return make_batches(split_indices(ds, split), batch_size, seed, epoch);
}

}  // namespace trialign
