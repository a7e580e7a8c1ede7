#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trialign/embedding.hpp"
#include "trialign/error.hpp"
#include "trialign/linalg3.hpp"
#include "trialign/nn.hpp"
#include "trialign/synth.hpp"

namespace trialign {

// ---- pose metrics -----------------------------------------------------------

inline Mat pose_from_flat(std::span<const double> flat) {
  if (flat.size() % 3 != 0 || flat.empty())
    throw_invalid_input("pose_from_flat: length must be a positive multiple of 3");
  Mat p(static_cast<int>(flat.size() / 3), 3);
  std::copy(flat.begin(), flat.end(), p.data.begin());
  return p;
}

// Mean per-joint position error: mean Euclidean distance over joints.
inline double mpjpe(const Mat& pred, const Mat& gt) {
  if (!pred.same_shape(gt) || pred.cols != 3 || pred.rows < 1)
    throw_invalid_input("mpjpe: expected matching Jx3 poses");
  double s = 0.0;
  for (int j = 0; j < pred.rows; ++j) {
    const double dx = pred(j, 0) - gt(j, 0);
    const double dy = pred(j, 1) - gt(j, 1);
    const double dz = pred(j, 2) - gt(j, 2);
    s += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return s / pred.rows;
}

// MPJPE after the optimal similarity alignment of pred onto gt.
inline double pa_mpjpe(const Mat& pred, const Mat& gt) {
  const SimilarityTransform t = procrustes_align(pred, gt);
  return mpjpe(t.apply(pred), gt);
}

// ---- galleries and nearest-neighbor retrieval --------------------------------

// Unit-norm embeddings with their source dataset rows as payload.
struct Gallery {
  Mat embeddings;  // N x D, unit rows
  Modality modality = Modality::Pose3D;
  std::vector<int> sample_idx;  // dataset sample index per row

  int size() const { return embeddings.rows; }
};

// Encodes the given dataset rows with the modality's encoder, in chunks.
inline Mat embed_samples(const ModelBundle& b, const Dataset& ds, std::span<const int> indices,
                         Modality m, int chunk = 512) {
  Mat out(static_cast<int>(indices.size()), b.dims.embed);
  for (size_t start = 0; start < indices.size(); start += chunk) {
    const size_t end = std::min(indices.size(), start + chunk);
    const Batch batch = gather_batch(ds, indices.subspan(start, end - start));
    const Mat* in = nullptr;
    switch (m) {
      case Modality::Image: in = &batch.img; break;
      case Modality::Pose2D: in = &batch.p2d; break;
      case Modality::Pose3D: in = &batch.p3d; break;
    }
    const Mat e = b.encoder(m).encode(*in);
    for (int r = 0; r < e.rows; ++r)
      std::copy(e.row(r).begin(), e.row(r).end(), out.row(static_cast<int>(start) + r).begin());
  }
  return out;
}

inline Gallery build_gallery(const ModelBundle& b, const Dataset& ds, std::span<const int> indices,
                             Modality m) {
  Gallery g;
  g.embeddings = embed_samples(b, ds, indices, m);
  g.modality = m;
  g.sample_idx.assign(indices.begin(), indices.end());
  return g;
}

// Exact top-k by cosine (dot product on the unit sphere); ties broken by the
// lower gallery position, so rankings are deterministic.
inline std::vector<int> retrieve_topk(std::span<const double> query, const Gallery& g, int k) {
  const int n = g.size();
  if (n < 1) throw_invalid_input("retrieve_topk: empty gallery");
  if (k < 1 || k > n) throw_invalid_input("retrieve_topk: k out of range");
  if (query.size() != static_cast<size_t>(g.embeddings.cols))
    throw_invalid_input("retrieve_topk: query dimension mismatch");
  std::vector<double> score(n);
  for (int i = 0; i < n; ++i) score[i] = dot(query, g.embeddings.row(i));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  order.resize(k);
  return order;
}

// ---- metric reports -----------------------------------------------------------

// `baseline` is the random-retrieval reference where one applies (NaN = none).
struct MetricReport {
  std::string name;
  double value = 0.0;
  std::string units;  // "m" for pose errors, "fraction" for accuracies
  int n = 0;
  double baseline = std::numeric_limits<double>::quiet_NaN();
};

inline std::string metrics_to_json(const std::vector<MetricReport>& reports) {
  std::string s = "{\n  \"metrics\": [\n";
  char buf[64];
  auto num = [&](double v) -> std::string {
    if (std::isnan(v)) return "null";
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (size_t i = 0; i < reports.size(); ++i) {
    const MetricReport& r = reports[i];
    s += "    {\"name\": \"" + r.name + "\", \"value\": " + num(r.value) + ", \"units\": \"" +
         r.units + "\", \"n\": " + std::to_string(r.n) + ", \"baseline\": " + num(r.baseline) +
         "}";
    s += (i + 1 < reports.size()) ? ",\n" : "\n";
  }
  s += "  ]\n}\n";
  return s;
}

inline std::string metrics_to_csv(const std::vector<MetricReport>& reports) {
  std::string s = "name,value,units,n,baseline\n";
  char buf[64];
  for (const MetricReport& r : reports) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    s += r.name + "," + buf + "," + r.units + "," + std::to_string(r.n) + ",";
    if (!std::isnan(r.baseline)) {
      std::snprintf(buf, sizeof buf, "%.17g", r.baseline);
      s += buf;
    }
    s += "\n";
  }
  return s;
}

// ---- pose retrieval (2D -> 3D, image -> 3D) ------------------------------------

enum class PoseQuery { Pose2D, Image };

struct PoseRetrievalResult {
  double mpjpe_mean = 0.0;
  double pa_mpjpe_mean = 0.0;
  double baseline_mpjpe = 0.0;  // closed-form expected error of uniform random retrieval
  int n_queries = 0;
};

// Retrieval core over explicit query embeddings, so null-model tests can feed
// random embeddings through the same code path.
inline PoseRetrievalResult pose_retrieval_run(const Mat& queries,
                                              std::span<const int> query_sample_idx,
                                              const Gallery& gallery, const Dataset& ds) {
  if (queries.rows != static_cast<int>(query_sample_idx.size()))
    throw_invalid_input("pose_retrieval_run: query index count mismatch");
  if (queries.rows < 1) throw_invalid_input("pose_retrieval_run: no queries");
  PoseRetrievalResult res;
  res.n_queries = queries.rows;

  std::vector<Mat> gallery_poses;
  gallery_poses.reserve(gallery.size());
  for (int i : gallery.sample_idx) gallery_poses.push_back(pose_from_flat(ds.samples[i].pose3d));

  double base = 0.0;
  for (int q = 0; q < queries.rows; ++q) {
    const Mat gt = pose_from_flat(ds.samples[query_sample_idx[q]].pose3d);
    const int hit = retrieve_topk(queries.row(q), gallery, 1)[0];
    res.mpjpe_mean += mpjpe(gallery_poses[hit], gt);
    res.pa_mpjpe_mean += pa_mpjpe(gallery_poses[hit], gt);
    for (const Mat& gp : gallery_poses) base += mpjpe(gp, gt);
  }
  res.mpjpe_mean /= res.n_queries;
  res.pa_mpjpe_mean /= res.n_queries;
  res.baseline_mpjpe = base / (static_cast<double>(res.n_queries) * gallery.size());
  return res;
}

// Table-style protocol: queries are the full test split in the query
// modality; the gallery is the full test split's 3D poses.
inline std::vector<MetricReport> eval_pose_retrieval(const ModelBundle& b, const Dataset& ds,
                                                     PoseQuery direction) {
  const auto& test = ds.test_idx;
  if (test.empty()) throw_invalid_input("eval_pose_retrieval: empty test split");
  const Modality qm = direction == PoseQuery::Pose2D ? Modality::Pose2D : Modality::Image;
  const Mat queries = embed_samples(b, ds, test, qm);
  const Gallery gallery = build_gallery(b, ds, test, Modality::Pose3D);
  const PoseRetrievalResult r = pose_retrieval_run(queries, test, gallery, ds);

  const std::string tag =
      direction == PoseQuery::Pose2D ? "pose_retrieval_2d_to_3d" : "pose_retrieval_image_to_3d";
  std::vector<MetricReport> out;
  out.push_back({tag + "_mpjpe", r.mpjpe_mean, "m", r.n_queries, r.baseline_mpjpe});
  out.push_back({tag + "_pa_mpjpe", r.pa_mpjpe_mean, "m", r.n_queries,
                 std::numeric_limits<double>::quiet_NaN()});
  return out;
}

// ---- image retrieval (2D -> image, 3D -> image) ---------------------------------

enum class ImageQuery { Pose2D, Pose3D };

struct ImageRetrievalResult {
  std::vector<int> ks;
  std::vector<double> accuracy;  // hit rate at each k (hit = own frame id)
  int n_queries = 0;
  int gallery_size = 0;
};

inline ImageRetrievalResult image_retrieval_run(const Mat& queries,
                                                std::span<const int> query_sample_idx,
                                                const Gallery& gallery, const Dataset& ds,
                                                std::span<const int> ks) {
  if (queries.rows != static_cast<int>(query_sample_idx.size()) || queries.rows < 1)
    throw_invalid_input("image_retrieval_run: bad query set");
  if (ks.empty()) throw_invalid_input("image_retrieval_run: need at least one k");
  ImageRetrievalResult res;
  res.ks.assign(ks.begin(), ks.end());
  res.accuracy.assign(ks.size(), 0.0);
  res.n_queries = queries.rows;
  res.gallery_size = gallery.size();
  const int kmax = *std::max_element(res.ks.begin(), res.ks.end());

  for (int q = 0; q < queries.rows; ++q) {
    const uint32_t want = ds.samples[query_sample_idx[q]].frame_id;
    const std::vector<int> top = retrieve_topk(queries.row(q), gallery, kmax);
    int first_hit = -1;
    for (size_t rank = 0; rank < top.size(); ++rank)
      if (ds.samples[gallery.sample_idx[top[rank]]].frame_id == want) {
        first_hit = static_cast<int>(rank);
        break;
      }
    if (first_hit < 0) continue;
    for (size_t i = 0; i < res.ks.size(); ++i)
      if (first_hit < res.ks[i]) res.accuracy[i] += 1.0;
  }
  for (double& a : res.accuracy) a /= res.n_queries;
  return res;
}

// Deterministic subsample of the test split used as the image gallery (and
// as the query set, so every query's own frame is present exactly once).
inline std::vector<int> subsample_split(const Dataset& ds, Split split, int count, uint64_t tag) {
  const auto& idx = split_indices(ds, split);
  if (idx.empty()) throw_invalid_input("subsample_split: empty split");
  if (count >= static_cast<int>(idx.size())) return idx;
  std::vector<int> pool = idx;
  RngEngine rng = make_rng(derive_seed(ds.seed, tag));
  detail::fisher_yates(pool, rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::vector<MetricReport> eval_image_retrieval(const ModelBundle& b, const Dataset& ds,
                                                      ImageQuery direction,
                                                      std::span<const int> ks,
                                                      int gallery_size = 500) {
  const std::vector<int> subset = subsample_split(ds, Split::Test, gallery_size, 0x6A11);
  const Modality qm = direction == ImageQuery::Pose2D ? Modality::Pose2D : Modality::Pose3D;
  const Mat queries = embed_samples(b, ds, subset, qm);
  const Gallery gallery = build_gallery(b, ds, subset, Modality::Image);
  const ImageRetrievalResult r = image_retrieval_run(queries, subset, gallery, ds, ks);

  const std::string tag = direction == ImageQuery::Pose2D ? "image_retrieval_2d_to_image"
                                                          : "image_retrieval_3d_to_image";
  std::vector<MetricReport> out;
  for (size_t i = 0; i < r.ks.size(); ++i) {
    const double chance = static_cast<double>(r.ks[i]) / r.gallery_size;
    out.push_back({tag + "_top" + std::to_string(r.ks[i]), r.accuracy[i], "fraction",
                   r.n_queries, chance});
  }
  return out;
}

// ---- pose estimation (decode) ---------------------------------------------------

// Decode the 3D pose from the ground-truth-2D branch and from the image
// branch over the test split.
inline std::vector<MetricReport> eval_hpe(const ModelBundle& b, const Dataset& ds) {
  const auto& test = ds.test_idx;
  if (test.empty()) throw_invalid_input("eval_hpe: empty test split");
  struct BranchSpec {
    Modality source;
    const char* tag;
  };
  const BranchSpec branches[2] = {{Modality::Pose2D, "hpe_from_2d"},
                                  {Modality::Image, "hpe_from_image"}};
  std::vector<MetricReport> out;
  for (const BranchSpec& br : branches) {
    const Mat emb = embed_samples(b, ds, test, br.source);
    const Mat pred = b.dec_3d.decode(emb, b.tokens, br.source);
    double err = 0.0, err_pa = 0.0;
    for (int q = 0; q < pred.rows; ++q) {
      const Mat p = pose_from_flat(pred.row(q));
      const Mat gt = pose_from_flat(ds.samples[test[q]].pose3d);
      err += mpjpe(p, gt);
      err_pa += pa_mpjpe(p, gt);
    }
    const int n = static_cast<int>(test.size());
    out.push_back({std::string(br.tag) + "_mpjpe", err / n, "m", n,
                   std::numeric_limits<double>::quiet_NaN()});
    out.push_back({std::string(br.tag) + "_pa_mpjpe", err_pa / n, "m", n,
                   std::numeric_limits<double>::quiet_NaN()});
  }
  return out;
}

// ---- embedding interpolation ------------------------------------------------------

struct InterpolationResult {
  std::vector<Mat> poses;            // one J x 3 pose per interpolation step
  std::vector<double> step_mean_disp;  // mean joint displacement between consecutive steps
  double max_step_disp = 0.0;
  double mean_step_disp = 0.0;
  double bone_dev_mean = 0.0;  // mean |len - skeleton len| / skeleton len over decoded bones
  double bone_dev_max = 0.0;
};

// Encodes two 3D poses, walks the great-circle arc between their embeddings
// at `steps` uniform t values, and decodes each point back to a pose.
inline InterpolationResult eval_interpolation(const ModelBundle& b, const Skeleton& sk,
                                              std::span<const double> pose_a,
                                              std::span<const double> pose_b, int steps) {
  if (steps < 2) throw_invalid_input("eval_interpolation: need at least 2 steps");
  if (pose_a.size() != pose_b.size() ||
      pose_a.size() != static_cast<size_t>(3 * sk.joints()))
    throw_invalid_input("eval_interpolation: pose length does not match skeleton");

  Mat in(2, static_cast<int>(pose_a.size()));
  std::copy(pose_a.begin(), pose_a.end(), in.row(0).begin());
  std::copy(pose_b.begin(), pose_b.end(), in.row(1).begin());
  const Mat emb = b.enc_3d.encode(in);
  const Embedding ea{std::vector<double>(emb.row(0).begin(), emb.row(0).end()), Modality::Pose3D};
  const Embedding eb{std::vector<double>(emb.row(1).begin(), emb.row(1).end()), Modality::Pose3D};

  InterpolationResult res;
  res.poses.reserve(steps);
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / (steps - 1);
    const Embedding e = interpolate(ea, eb, t);
    Mat row(1, e.dim());
    std::copy(e.values.begin(), e.values.end(), row.row(0).begin());
    const Mat decoded = b.dec_3d.decode(row, b.tokens, Modality::Pose3D);
    res.poses.push_back(pose_from_flat(decoded.row(0)));
  }

  const int J = sk.joints();
  for (int s = 0; s + 1 < steps; ++s) {
    double mean_disp = 0.0;
    for (int j = 0; j < J; ++j) {
      const double dx = res.poses[s + 1](j, 0) - res.poses[s](j, 0);
      const double dy = res.poses[s + 1](j, 1) - res.poses[s](j, 1);
      const double dz = res.poses[s + 1](j, 2) - res.poses[s](j, 2);
      mean_disp += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    mean_disp /= J;
    res.step_mean_disp.push_back(mean_disp);
    res.max_step_disp = std::max(res.max_step_disp, mean_disp);
    res.mean_step_disp += mean_disp;
  }
  res.mean_step_disp /= static_cast<double>(steps - 1);

  int bones = 0;
  for (const Mat& p : res.poses) {
    for (int j = 0; j < J; ++j) {
      if (sk.parent[j] < 0) continue;
      const int par = sk.parent[j];
      const double dx = p(j, 0) - p(par, 0);
      const double dy = p(j, 1) - p(par, 1);
      const double dz = p(j, 2) - p(par, 2);
      const double len = std::sqrt(dx * dx + dy * dy + dz * dz);
      const double ref = sk.bone_length(j);
      const double dev = std::abs(len - ref) / ref;
      res.bone_dev_mean += dev;
      res.bone_dev_max = std::max(res.bone_dev_max, dev);
      ++bones;
    }
  }
  if (bones > 0) res.bone_dev_mean /= bones;
  return res;
}

inline std::string interpolation_to_csv(const InterpolationResult& res) {
  std::string s = "step,joint,x,y,z\n";
  char buf[64];
  auto add_f = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    s += buf;
  };
  for (size_t step = 0; step < res.poses.size(); ++step) {
    const Mat& p = res.poses[step];
    for (int j = 0; j < p.rows; ++j) {
      s += std::to_string(step);
      s += ",";
      s += std::to_string(j);
      add_f(p(j, 0));
      add_f(p(j, 1));
      add_f(p(j, 2));
      s += "\n";
    }
  }
  return s;
}

}  // namespace trialign
