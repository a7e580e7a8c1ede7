#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "trialign/embedding.hpp"
#include "trialign/error.hpp"
#include "trialign/linalg3.hpp"
#include "trialign/mat.hpp"
#include "trialign/rng.hpp"

namespace trialign {

// Learnable temperature. The trainable parameter is log(tau) so tau stays
// positive; after every optimizer step the value is clamped back into
// [tau_min, tau_max].
struct Temperature {
  double log_tau = 0.0;
  double tau_min = 1e-2;
  double tau_max = 1e4;
  double tau0 = 1.0;

  static Temperature init(double tau0, double tau_min, double tau_max) {
    if (!(tau_min > 0.0) || !(tau_max >= tau_min))
      throw_invalid_input("Temperature: bounds must satisfy 0 < tau_min <= tau_max");
    if (tau0 < tau_min || tau0 > tau_max)
      throw_invalid_input("Temperature: tau0 outside clamp bounds");
    return {std::log(tau0), tau_min, tau_max, tau0};
  }

  double value() const { return std::exp(log_tau); }

  void clamp() {
    const double t = std::clamp(value(), tau_min, tau_max);
    log_tau = std::log(t);
  }
};

// Pairwise InfoNCE over two aligned batches, symmetrized over both anchor
// directions and averaged over the batch. grad_tau is d(loss)/d(tau); the
// log-parameterized gradient is tau * grad_tau.
struct PairLoss {
  double value = 0.0;
  Mat grad_s, grad_t;
  double grad_tau = 0.0;
};

inline PairLoss info_nce_pair(const Mat& xs, const Mat& xt, const Temperature& tau) {
  if (xs.rows != xt.rows || xs.cols != xt.cols)
    throw_invalid_input("info_nce_pair: batch shapes differ");
  if (xs.rows < 1) throw_invalid_input("info_nce_pair: empty batch");

  const int b = xs.rows;
  const double t = tau.value();
  const double inv_t = 1.0 / t;

  Mat sim = matmul_nt(xs, xt);  // sim(i,j) = xs_i . xt_j
  Mat z = sim;
  scale_inplace(z, inv_t);

  PairLoss out;
  out.grad_s = Mat(xs.rows, xs.cols);
  out.grad_t = Mat(xt.rows, xt.cols);
  Mat dz(b, b);

  double loss = 0.0;
  // anchor over rows (S -> T)
  for (int i = 0; i < b; ++i) {
    double m = z(i, 0);
    for (int j = 1; j < b; ++j) m = std::max(m, z(i, j));
    double sum = 0.0;
    for (int j = 0; j < b; ++j) sum += std::exp(z(i, j) - m);
    const double lse = m + std::log(sum);
    loss += lse - z(i, i);
    for (int j = 0; j < b; ++j) {
      const double p = std::exp(z(i, j) - lse);
      dz(i, j) += p - (i == j ? 1.0 : 0.0);
    }
  }
  // anchor over columns (T -> S)
  for (int j = 0; j < b; ++j) {
    double m = z(0, j);
    for (int i = 1; i < b; ++i) m = std::max(m, z(i, j));
    double sum = 0.0;
    for (int i = 0; i < b; ++i) sum += std::exp(z(i, j) - m);
    const double lse = m + std::log(sum);
    loss += lse - z(j, j);
    for (int i = 0; i < b; ++i) {
      const double p = std::exp(z(i, j) - lse);
      dz(i, j) += p - (i == j ? 1.0 : 0.0);
    }
  }

  const double w = 1.0 / (2.0 * b);  // mean over anchors, both directions averaged
  out.value = loss * w;

  double dtau = 0.0;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      const double g = dz(i, j) * w;
      if (g == 0.0) continue;
      axpy(g * inv_t, xt.row(j), out.grad_s.row(i));
      axpy(g * inv_t, xs.row(i), out.grad_t.row(j));
      dtau += g * (-sim(i, j) * inv_t * inv_t);
    }
  }
  out.grad_tau = dtau;
  return out;
}

// One candidate (i_img, i_2d, i_3d) for the triplet loss.
struct IndexTriple {
  int img = 0, p2d = 0, p3d = 0;
  friend auto operator<=>(const IndexTriple&, const IndexTriple&) = default;
};

// Per anchor b: B-1 distinct negatives sharing at least one index with b,
// the positive (b,b,b) excluded.
struct NegativeTripletSet {
  int batch = 0;
  std::vector<std::vector<IndexTriple>> per_anchor;
};

// Uniform draw from the anchor-sharing pool of size 3B^2 - 3B, without
// enumeration: pick how many coordinates equal the anchor (one with weight
// (B-1)/B, two with weight 1/B), then which, then the non-anchor values.
inline IndexTriple sample_one_negative(int b, int anchor, RngEngine& rng) {
  std::uniform_int_distribution<int> pick_b(0, b - 1);
  std::uniform_int_distribution<int> pick_other(0, b - 2);
  std::uniform_int_distribution<int> pick_coord(0, 2);
  auto other = [&](int v) { return v >= anchor ? v + 1 : v; };  // value != anchor

  IndexTriple t{anchor, anchor, anchor};
  int* coords[3] = {&t.img, &t.p2d, &t.p3d};
  if (pick_b(rng) != 0) {
    // exactly one coordinate equals the anchor
    const int keep = pick_coord(rng);
    for (int c = 0; c < 3; ++c)
      if (c != keep) *coords[c] = other(pick_other(rng));
  } else {
    // exactly two coordinates equal the anchor
    const int change = pick_coord(rng);
    *coords[change] = other(pick_other(rng));
  }
  return t;
}

inline std::vector<IndexTriple> sample_negative_triplets(int b, int anchor, RngEngine& rng) {
  if (b < 2) throw_invalid_input("sample_negative_triplets: batch size must be >= 2");
  if (anchor < 0 || anchor >= b) throw_invalid_input("sample_negative_triplets: anchor out of range");
  std::set<IndexTriple> seen;
  std::vector<IndexTriple> out;
  out.reserve(b - 1);
  while (static_cast<int>(out.size()) < b - 1) {
    const IndexTriple t = sample_one_negative(b, anchor, rng);
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

// Per-anchor substreams derived from (seed, step, anchor) keep the sample
// reproducible regardless of evaluation order.
inline NegativeTripletSet sample_negative_set(int b, uint64_t seed, uint64_t step) {
  NegativeTripletSet set;
  set.batch = b;
  set.per_anchor.resize(b);
  for (int anchor = 0; anchor < b; ++anchor) {
    RngEngine rng(derive_seed(seed, step, static_cast<uint64_t>(anchor)));
    set.per_anchor[anchor] = sample_negative_triplets(b, anchor, rng);
  }
  return set;
}

// Triplet InfoNCE driven by the top eigenvalue of M M^T per candidate
// triplet. The denominator contains the positive plus the B-1 sampled
// negatives. Candidates whose eigen-gap is below the threshold keep their
// loss term but contribute no embedding gradient (counted in
// degenerate_skips); tau still receives its full gradient.
struct TripletLoss {
  double value = 0.0;
  Mat grad_img, grad_2d, grad_3d;
  double grad_tau = 0.0;
  int degenerate_skips = 0;
};

inline TripletLoss info_nce_triplet(const Mat& x_img, const Mat& x_2d, const Mat& x_3d,
                                    const Temperature& tau, const NegativeTripletSet& negatives,
                                    double gap_threshold = 1e-6) {
  const int b = x_img.rows;
  const int d = x_img.cols;
  if (x_2d.rows != b || x_3d.rows != b || x_2d.cols != d || x_3d.cols != d)
    throw_invalid_input("info_nce_triplet: batch shapes differ");
  if (negatives.batch != b || static_cast<int>(negatives.per_anchor.size()) != b)
    throw_invalid_input("info_nce_triplet: negative set does not match batch");

  const double t = tau.value();
  const double inv_t = 1.0 / t;

  TripletLoss out;
  out.grad_img = Mat(b, d);
  out.grad_2d = Mat(b, d);
  out.grad_3d = Mat(b, d);

  const double anchor_w = 1.0 / b;

  for (int anchor = 0; anchor < b; ++anchor) {
    const auto& negs = negatives.per_anchor[anchor];
    const int n_terms = 1 + static_cast<int>(negs.size());

    std::vector<TopEigGrad> eig(n_terms);
    std::vector<IndexTriple> idx(n_terms);
    idx[0] = {anchor, anchor, anchor};
    eig[0] = top_eigenvalue_grad(stack_triplet_rows(x_img, x_2d, x_3d, anchor, anchor, anchor),
                                 gap_threshold);
    for (int k = 1; k < n_terms; ++k) {
      idx[k] = negs[k - 1];
      if (idx[k] == idx[0])
        throw_invalid_input("info_nce_triplet: negative set contains the positive triplet");
      eig[k] = top_eigenvalue_grad(
          stack_triplet_rows(x_img, x_2d, x_3d, idx[k].img, idx[k].p2d, idx[k].p3d), gap_threshold);
    }

    // softmax over lambda/tau with the positive at slot 0
    double m = -1e300;
    for (int k = 0; k < n_terms; ++k) m = std::max(m, eig[k].lambda1 * inv_t);
    double sum = 0.0;
    for (int k = 0; k < n_terms; ++k) sum += std::exp(eig[k].lambda1 * inv_t - m);
    const double lse = m + std::log(sum);
    out.value += (lse - eig[0].lambda1 * inv_t) * anchor_w;

    for (int k = 0; k < n_terms; ++k) {
      const double p = std::exp(eig[k].lambda1 * inv_t - lse);
      const double dz = (p - (k == 0 ? 1.0 : 0.0)) * anchor_w;  // d(loss)/d(lambda_k / tau)
      out.grad_tau += dz * (-eig[k].lambda1 * inv_t * inv_t);
      if (eig[k].degenerate) {
        ++out.degenerate_skips;
        continue;
      }
      const double c = dz * inv_t;  // d(loss)/d(lambda_k)
      axpy(c, eig[k].grad.row(0), out.grad_img.row(idx[k].img));
      axpy(c, eig[k].grad.row(1), out.grad_2d.row(idx[k].p2d));
      axpy(c, eig[k].grad.row(2), out.grad_3d.row(idx[k].p3d));
    }
  }
  return out;
}

// Which loss terms a training stage activates.
struct StageLossFlags {
  bool pair_2d3d = false;
  bool pair_img2d = false;
  bool pair_img3d = false;
  bool triplet = false;

  int active_pairs() const {
    return (pair_2d3d ? 1 : 0) + (pair_img2d ? 1 : 0) + (pair_img3d ? 1 : 0);
  }
};

// Combined contrastive loss: mean of the active pairwise terms plus
// alpha * triplet term, with separate temperatures for the two families.
struct ContrastiveLoss {
  double value = 0.0;
  double pair_value = 0.0;
  double triplet_value = 0.0;
  Mat grad_img, grad_2d, grad_3d;
  double grad_tau_pair = 0.0;
  double grad_tau_trip = 0.0;
  int degenerate_skips = 0;
};

inline ContrastiveLoss contrastive_loss(const Mat& x_img, const Mat& x_2d, const Mat& x_3d,
                                        const Temperature& tau_pair, const Temperature& tau_trip,
                                        double alpha, const StageLossFlags& flags,
                                        const NegativeTripletSet* negatives = nullptr,
                                        double gap_threshold = 1e-6) {
  const int b = x_2d.rows;
  const int d = x_2d.cols;
  ContrastiveLoss out;
  out.grad_img = Mat(b, d);
  out.grad_2d = Mat(b, d);
  out.grad_3d = Mat(b, d);

  const int n_pairs = flags.active_pairs();
  if (n_pairs > 0) {
    const double w = 1.0 / n_pairs;
    if (flags.pair_2d3d) {
      PairLoss pl = info_nce_pair(x_2d, x_3d, tau_pair);
      out.pair_value += pl.value * w;
      add_inplace(out.grad_2d, pl.grad_s, w);
      add_inplace(out.grad_3d, pl.grad_t, w);
      out.grad_tau_pair += pl.grad_tau * w;
    }
    if (flags.pair_img2d) {
      PairLoss pl = info_nce_pair(x_img, x_2d, tau_pair);
      out.pair_value += pl.value * w;
      add_inplace(out.grad_img, pl.grad_s, w);
      add_inplace(out.grad_2d, pl.grad_t, w);
      out.grad_tau_pair += pl.grad_tau * w;
    }
    if (flags.pair_img3d) {
      PairLoss pl = info_nce_pair(x_img, x_3d, tau_pair);
      out.pair_value += pl.value * w;
      add_inplace(out.grad_img, pl.grad_s, w);
      add_inplace(out.grad_3d, pl.grad_t, w);
      out.grad_tau_pair += pl.grad_tau * w;
    }
  }

  if (flags.triplet) {
    if (negatives == nullptr)
      throw_invalid_input("contrastive_loss: triplet term active but no negative set supplied");
    TripletLoss tl = info_nce_triplet(x_img, x_2d, x_3d, tau_trip, *negatives, gap_threshold);
    out.triplet_value = tl.value;
    add_inplace(out.grad_img, tl.grad_img, alpha);
    add_inplace(out.grad_2d, tl.grad_2d, alpha);
    add_inplace(out.grad_3d, tl.grad_3d, alpha);
    out.grad_tau_trip = tl.grad_tau * alpha;
    out.degenerate_skips = tl.degenerate_skips;
  }

  out.value = out.pair_value + alpha * out.triplet_value;
  return out;
}

// Mean squared error over all joint coordinates.
struct L2Loss {
  double value = 0.0;
  Mat grad;
};

inline L2Loss l2_pose_loss(const Mat& pred, const Mat& target) {
  if (!pred.same_shape(target)) throw_invalid_input("l2_pose_loss: shape mismatch");
  if (pred.rows < 1 || (pred.cols != 2 && pred.cols != 3))
    throw_invalid_input("l2_pose_loss: expected JxK pose with K in {2,3}");
  const double inv_n = 1.0 / (static_cast<double>(pred.rows) * pred.cols);
  L2Loss out;
  out.grad = Mat(pred.rows, pred.cols);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double r = pred.data[i] - target.data[i];
    out.value += r * r * inv_n;
    out.grad.data[i] = 2.0 * r * inv_n;
  }
  return out;
}

// Batch version over flattened poses (B x J*K): mean squared error over all
// entries, which equals the batch mean of per-sample means.
inline L2Loss l2_pose_loss_batch(const Mat& pred, const Mat& target) {
  if (!pred.same_shape(target)) throw_invalid_input("l2_pose_loss_batch: shape mismatch");
  if (pred.rows < 1 || pred.cols < 1) throw_invalid_input("l2_pose_loss_batch: empty batch");
  const double inv_n = 1.0 / static_cast<double>(pred.data.size());
  L2Loss out;
  out.grad = Mat(pred.rows, pred.cols);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double r = pred.data[i] - target.data[i];
    out.value += r * r * inv_n;
    out.grad.data[i] = 2.0 * r * inv_n;
  }
  return out;
}

}  // namespace trialign
