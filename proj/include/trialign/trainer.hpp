#pragma once

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "trialign/config.hpp"
#include "trialign/losses.hpp"
#include "trialign/nn.hpp"
#include "trialign/synth.hpp"

namespace trialign {

// Fixed loss schedule: stage 1 aligns the two pose modalities pairwise,
// stage 2 aligns the image encoder against both frozen pose encoders with the
// pairwise and triplet terms, the finetune stage runs everything plus the
// decode losses. The triplet weight (train.alpha) is the ablation knob; the
// term structure itself never changes.
inline StageLossFlags stage_flags(int stage_no) {
  switch (stage_no) {
    case 1: return {true, false, false, false};
    case 2: return {false, true, true, true};
    case 3: return {true, true, true, true};
  }
  throw_invalid_input("stage_flags: stage must be 1, 2 or 3");
}

inline const StageConfig& stage_config(const TrainConfig& cfg, int stage_no) {
  switch (stage_no) {
    case 1: return cfg.stage1;
    case 2: return cfg.stage2;
    case 3: return cfg.stage3;
  }
  throw_invalid_input("stage_config: stage must be 1, 2 or 3");
}

inline const char* stage_name(int stage_no) {
  switch (stage_no) {
    case 1: return "step1";
    case 2: return "step2";
    case 3: return "finetune";
  }
  throw_invalid_input("stage_name: stage must be 1, 2 or 3");
}

inline ModelDims dims_from(const Dataset& ds, const ModelConfig& mc) {
  ModelDims d;
  d.img_in = ds.img_dim;
  d.p2d_in = ds.p2d_dim();
  d.p3d_in = ds.p3d_dim();
  d.embed = mc.embed_dim;
  d.p2d_out = 2 * ds.joints();
  d.p3d_out = ds.p3d_dim();
  d.enc_hidden = mc.enc_hidden;
  d.dec_hidden = mc.dec_hidden;
  return d;
}

// The 2D decode target is the normalized keypoints alone (the bbox columns
// are encoder input, not something to reconstruct).
inline Mat pose2d_targets(const Batch& batch, int joints) {
  Mat t(batch.p2d.rows, 2 * joints);
  for (int r = 0; r < batch.p2d.rows; ++r) {
    auto src = batch.p2d.row(r);
    std::copy_n(src.begin(), 2 * joints, t.row(r).begin());
  }
  return t;
}

// ---- run logging -----------------------------------------------------------

struct StepLog {
  int stage = 0;
  int step = 0;
  double loss_total = 0.0;
  double loss_pair = 0.0;
  double loss_triplet = 0.0;
  double loss_task_2d = 0.0;
  double loss_task_3d = 0.0;
  double tau_pair = 0.0;
  double tau_triplet = 0.0;
  double cos_img_2d = 0.0;
  double cos_img_3d = 0.0;
  double cos_2d_3d = 0.0;
  int degenerate_skips = 0;
  double wall_ms = 0.0;
};

struct RunLog {
  uint64_t config_fingerprint = 0;
  std::vector<StepLog> steps;
};

inline void save_runlog_csv(const std::filesystem::path& path, const RunLog& log) {
  std::string s;
  {
    char buf[64];
    std::snprintf(buf, sizeof buf, "# config_fingerprint = %016" PRIx64 "\n",
                  log.config_fingerprint);
    s += buf;
  }
  s +=
      "stage,step,loss_total,loss_pair,loss_triplet,loss_task_2d,loss_task_3d,"
      "tau_pair,tau_triplet,cos_img_2d,cos_img_3d,cos_2d_3d,degenerate_skips,wall_ms\n";
  char num[64];
  auto add_f = [&](double v) {
    std::snprintf(num, sizeof num, ",%.17g", v);
    s += num;
  };
  for (const StepLog& r : log.steps) {
    s += std::to_string(r.stage);
    s += ",";
    s += std::to_string(r.step);
    add_f(r.loss_total);
    add_f(r.loss_pair);
    add_f(r.loss_triplet);
    add_f(r.loss_task_2d);
    add_f(r.loss_task_3d);
    add_f(r.tau_pair);
    add_f(r.tau_triplet);
    add_f(r.cos_img_2d);
    add_f(r.cos_img_3d);
    add_f(r.cos_2d_3d);
    s += ",";
    s += std::to_string(r.degenerate_skips);
    add_f(r.wall_ms);
    s += "\n";
  }
  atomic_write_text(path, s);
}

// Mean cosine between aligned (positive-pair) rows of two embedding batches.
inline double mean_row_cosine(const Mat& a, const Mat& b) {
  if (!a.same_shape(b) || a.rows < 1) throw_invalid_input("mean_row_cosine: shape mismatch");
  double s = 0.0;
  for (int r = 0; r < a.rows; ++r) s += dot(a.row(r), b.row(r));
  return s / a.rows;
}

// Mean positive-pair cosines over a whole split, computed in chunks with the
// current (post-training) encoders. This is the batch-independent alignment
// summary the regression thresholds are stated against.
struct PairCosines {
  double img_2d = 0.0, img_3d = 0.0, p2d_3d = 0.0;
  double tri_mean() const { return (img_2d + img_3d + p2d_3d) / 3.0; }
};

inline PairCosines mean_pair_cosines(const ModelBundle& b, const Dataset& ds, Split split,
                                     int chunk = 512) {
  const auto& idx = split_indices(ds, split);
  if (idx.empty()) throw_invalid_input("mean_pair_cosines: empty split");
  PairCosines acc;
  for (size_t start = 0; start < idx.size(); start += chunk) {
    const size_t end = std::min(idx.size(), start + chunk);
    const Batch batch = gather_batch(ds, std::span<const int>(idx).subspan(start, end - start));
    const Mat e_img = b.enc_img.encode(batch.img);
    const Mat e_2d = b.enc_2d.encode(batch.p2d);
    const Mat e_3d = b.enc_3d.encode(batch.p3d);
    for (int r = 0; r < batch.size(); ++r) {
      acc.img_2d += dot(e_img.row(r), e_2d.row(r));
      acc.img_3d += dot(e_img.row(r), e_3d.row(r));
      acc.p2d_3d += dot(e_2d.row(r), e_3d.row(r));
    }
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  acc.img_2d *= inv;
  acc.img_3d *= inv;
  acc.p2d_3d *= inv;
  return acc;
}

// ---- stage loop --------------------------------------------------------------

namespace detail {

// Hands out full-coverage shuffled batches, reshuffling at each epoch
// boundary with an epoch-derived substream.
struct BatchCursor {
  const Dataset* ds = nullptr;
  int batch_size = 0;
  uint64_t seed = 0;
  uint64_t epoch = 0;
  size_t next = 0;
  std::vector<std::vector<int>> batches;

  BatchCursor(const Dataset& d, int bs, uint64_t s) : ds(&d), batch_size(bs), seed(s) {
    batches = make_batches(*ds, Split::Train, batch_size, seed, epoch);
  }

  const std::vector<int>& take() {
    if (next >= batches.size()) {
      ++epoch;
      next = 0;
      batches = make_batches(*ds, Split::Train, batch_size, seed, epoch);
    }
    return batches[next++];
  }
};

inline void adam_step_temperature(Adam& opt, Temperature& t, double grad_tau) {
  double p[1] = {t.log_tau};
  const double g[1] = {grad_tau * t.value()};  // d/d log(tau) = tau * d/d tau
  opt.step(std::span<double>(p, 1), std::span<const double>(g, 1));
  t.log_tau = p[0];
  t.clamp();
}

}  // namespace detail

// Runs one stage in place. Frozen groups are never touched by an optimizer,
// so they stay bitwise identical. Temperatures restart from the stage's tau0.
// Zero steps returns an empty log before any mutation.
inline RunLog run_stage(ModelBundle& b, const Dataset& ds, int stage_no, const TrainConfig& cfg) {
  cfg.validate();
  const StageConfig& sc = stage_config(cfg, stage_no);
  const StageLossFlags flags = stage_flags(stage_no);

  RunLog log;
  log.config_fingerprint = config_fingerprint(cfg);
  if (sc.steps == 0) return log;
  if (ds.train_idx.empty()) throw_invalid_input("run_stage: training split is empty");
  if (sc.batch > static_cast<int>(ds.train_idx.size()))
    throw_invalid_input("run_stage: batch size exceeds training split size");

  b.tau_pair = Temperature::init(sc.tau0, sc.tau_min, sc.tau_max);
  b.tau_trip = Temperature::init(sc.tau0, sc.tau_min, sc.tau_max);

  const bool train_img = stage_no >= 2;
  const bool train_poses = stage_no != 2;  // frozen during stage 2
  const bool train_decoders = stage_no == 3;
  const bool train_tokens = stage_no == 3 && b.tokens.enabled;

  const double lr = cfg.train.lr;
  Adam opt_enc_img(b.enc_img.net.param_count(), lr);
  Adam opt_enc_2d(b.enc_2d.net.param_count(), lr);
  Adam opt_enc_3d(b.enc_3d.net.param_count(), lr);
  Adam opt_dec_2d(b.dec_2d.net.param_count(), lr);
  Adam opt_dec_3d(b.dec_3d.net.param_count(), lr);
  Adam opt_tok_img(b.tokens.img.size(), lr);
  Adam opt_tok_p2d(b.tokens.p2d.size(), lr);
  Adam opt_tok_p3d(b.tokens.p3d.size(), lr);
  Adam opt_tau_pair(1, lr);
  Adam opt_tau_trip(1, lr);

  const uint64_t stage_seed =
      derive_seed(cfg.train.seed, 0x57A6E, static_cast<uint64_t>(stage_no));
  const uint64_t neg_seed = derive_seed(stage_seed, 0x7217);
  detail::BatchCursor cursor(ds, sc.batch, stage_seed);
  ModelGrads g = ModelGrads::zeros_like(b);

  const int J = ds.joints();
  log.steps.reserve(sc.steps);

  for (int step = 0; step < sc.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<int>& batch_idx = cursor.take();
    const Batch batch = gather_batch(ds, batch_idx);
    const int n = batch.size();
    g.zero();

    // forward
    EncodeCache c_img, c_2d, c_3d;
    const Mat e_img = train_img ? b.enc_img.encode(batch.img, &c_img) : b.enc_img.encode(batch.img);
    const Mat e_2d = train_poses ? b.enc_2d.encode(batch.p2d, &c_2d) : b.enc_2d.encode(batch.p2d);
    const Mat e_3d = train_poses ? b.enc_3d.encode(batch.p3d, &c_3d) : b.enc_3d.encode(batch.p3d);

    // A tail batch can be too small for the triplet term (no negatives
    // exist); its contribution is exactly zero there, so drop it.
    StageLossFlags step_flags = flags;
    if (n < 2) step_flags.triplet = false;
    NegativeTripletSet negs;
    if (step_flags.triplet)
      negs = sample_negative_set(n, neg_seed, static_cast<uint64_t>(step));
    const ContrastiveLoss cl =
        contrastive_loss(e_img, e_2d, e_3d, b.tau_pair, b.tau_trip, cfg.train.alpha, step_flags,
                         step_flags.triplet ? &negs : nullptr, cfg.train.gap_threshold);

    Mat d_img = cl.grad_img;
    Mat d_2d = cl.grad_2d;
    Mat d_3d = cl.grad_3d;

    // task losses (finetune only): reconstruct the 3D pose from every source
    // embedding so all decoders and all source tokens receive gradients, and
    // the 2D pose from the image embedding.
    double loss_task_3d = 0.0, loss_task_2d = 0.0;
    if (train_decoders) {
      const Mat target2d = pose2d_targets(batch, J);
      struct Branch {
        const Mat* emb;
        Mat* d_emb;
        EncodeCache* cache;
        Modality source;
      };
      const Branch branches[3] = {{&e_img, &d_img, &c_img, Modality::Image},
                                  {&e_2d, &d_2d, &c_2d, Modality::Pose2D},
                                  {&e_3d, &d_3d, &c_3d, Modality::Pose3D}};
      const double w3 = 1.0 / 3.0;
      for (const Branch& br : branches) {
        DecodeCache dc;
        const Mat pred = b.dec_3d.decode(*br.emb, b.tokens, br.source, &dc);
        L2Loss l3 = l2_pose_loss_batch(pred, batch.p3d);
        loss_task_3d += l3.value * w3;
        scale_inplace(l3.grad, w3);
        const Mat d_emb = b.dec_3d.decode_backward(dc, l3.grad, g.dec_3d, g.token(br.source));
        add_inplace(*br.d_emb, d_emb);
      }
      {
        DecodeCache dc;
        const Mat pred = b.dec_2d.decode(e_img, b.tokens, Modality::Image, &dc);
        const L2Loss l2 = l2_pose_loss_batch(pred, target2d);
        loss_task_2d = l2.value;
        const Mat d_emb = b.dec_2d.decode_backward(dc, l2.grad, g.dec_2d, g.token(Modality::Image));
        add_inplace(d_img, d_emb);
      }
    }

    const double loss_total = cl.value + loss_task_2d + loss_task_3d;
    if (!std::isfinite(loss_total)) {
      char snap[256];
      std::snprintf(snap, sizeof snap,
                    "run_stage: non-finite loss at %s step %d "
                    "(pair=%g triplet=%g task2d=%g task3d=%g tau_pair=%g tau_trip=%g)",
                    stage_name(stage_no), step, cl.pair_value, cl.triplet_value, loss_task_2d,
                    loss_task_3d, b.tau_pair.value(), b.tau_trip.value());
      throw_numerical(snap);
    }

    // backward through the encoders that train this stage
    if (train_img) b.enc_img.encode_backward(c_img, d_img, g.enc_img);
    if (train_poses) {
      b.enc_2d.encode_backward(c_2d, d_2d, g.enc_2d);
      b.enc_3d.encode_backward(c_3d, d_3d, g.enc_3d);
    }

    // parameter updates (frozen groups are simply never stepped)
    if (train_img) opt_enc_img.step(b.enc_img.net.params, g.enc_img);
    if (train_poses) {
      opt_enc_2d.step(b.enc_2d.net.params, g.enc_2d);
      opt_enc_3d.step(b.enc_3d.net.params, g.enc_3d);
    }
    if (train_decoders) {
      opt_dec_2d.step(b.dec_2d.net.params, g.dec_2d);
      opt_dec_3d.step(b.dec_3d.net.params, g.dec_3d);
    }
    if (train_tokens) {
      opt_tok_img.step(b.tokens.img, g.token_img);
      opt_tok_p2d.step(b.tokens.p2d, g.token_p2d);
      opt_tok_p3d.step(b.tokens.p3d, g.token_p3d);
    }
    detail::adam_step_temperature(opt_tau_pair, b.tau_pair, cl.grad_tau_pair);
    if (step_flags.triplet) detail::adam_step_temperature(opt_tau_trip, b.tau_trip, cl.grad_tau_trip);

    const auto t1 = std::chrono::steady_clock::now();
    StepLog rec;
    rec.stage = stage_no;
    rec.step = step;
    rec.loss_total = loss_total;
    rec.loss_pair = cl.pair_value;
    rec.loss_triplet = cl.triplet_value;
    rec.loss_task_2d = loss_task_2d;
    rec.loss_task_3d = loss_task_3d;
    rec.tau_pair = b.tau_pair.value();  // post-clamp, as logged
    rec.tau_triplet = b.tau_trip.value();
    rec.cos_img_2d = mean_row_cosine(e_img, e_2d);
    rec.cos_img_3d = mean_row_cosine(e_img, e_3d);
    rec.cos_2d_3d = mean_row_cosine(e_2d, e_3d);
    rec.degenerate_skips = cl.degenerate_skips;
    rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    log.steps.push_back(rec);
  }
  return log;
}

// ---- full pipeline -----------------------------------------------------------

struct PipelineResult {
  ModelBundle bundle;
  RunLog logs[3];
};

// Runs the three stages in order on a fresh model. When out_dir is non-empty,
// writes one checkpoint and one run-log CSV per stage into it.
inline PipelineResult run_full_pipeline(const TrainConfig& cfg, const Dataset& ds,
                                        const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  PipelineResult res{
      ModelBundle::create(dims_from(ds, cfg.model), derive_seed(cfg.train.seed, 0x0D31),
                          cfg.model.use_tokens),
      {}};
  const uint64_t fp = config_fingerprint(cfg);
  for (int stage = 1; stage <= 3; ++stage) {
    res.logs[stage - 1] = run_stage(res.bundle, ds, stage, cfg);
    if (!out_dir.empty()) {
      save_checkpoint(out_dir / (std::string(stage_name(stage)) + ".ckpt"), res.bundle, fp);
      save_runlog_csv(out_dir / (std::string("runlog_") + stage_name(stage) + ".csv"),
                      res.logs[stage - 1]);
    }
  }
  return res;
}

}  // namespace trialign
