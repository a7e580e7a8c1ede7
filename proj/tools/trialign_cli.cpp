// Command-line front end: data generation, staged training, evaluation,
// embedding interpolation and the finite-difference CI gate.
#include <CLI11.hpp>

#include <trialign/binio.hpp>
#include <trialign/config.hpp>
#include <trialign/evaluator.hpp>
#include <trialign/gradcheck.hpp>
#include <trialign/synth.hpp>
#include <trialign/trainer.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace trialign;

namespace {

struct GenDataArgs {
  std::string out;
  int size = 5000;
  int joints = 17;
  uint64_t seed = 1;
  double nuisance = 0.5;
  std::string cameras = "spread";
};

int cmd_gen_data(const GenDataArgs& a) {
  SynthConfig cfg;
  cfg.n_samples = a.size;
  cfg.joints = a.joints;
  cfg.seed = a.seed;
  cfg.nuisance_amp = a.nuisance;
  if (a.cameras == "fixed") {
    // single repeatable viewpoint: no elevation spread, one distance
    cfg.cam_elev_max = 0.0;
    cfg.cam_dist_min = cfg.cam_dist_max = 0.5 * (cfg.cam_dist_min + cfg.cam_dist_max);
  } else if (a.cameras != "spread") {
    throw_invalid_input("gen-data: --cameras must be 'spread' or 'fixed'");
  }
  cfg.validate();

  Dataset ds = generate_dataset(cfg);
  save_dataset(a.out, ds);
  const std::vector<uint8_t> bytes = read_file_bytes(a.out);
  std::printf("dataset written: path=%s samples=%zu train=%zu test=%zu joints=%d seed=%" PRIu64
              " checksum=%08x\n",
              a.out.c_str(), ds.samples.size(), ds.train_idx.size(), ds.test_idx.size(),
              ds.joints(), ds.seed, crc32(bytes));
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string stage = "all";
};

void print_stage_summary(const RunLog& log, const char* name) {
  if (log.steps.empty()) {
    std::printf("stage %s: 0 steps (no-op)\n", name);
    return;
  }
  const StepLog& last = log.steps.back();
  std::printf("stage %s: steps=%zu final loss=%.6f (pair=%.6f triplet=%.6f task2d=%.6f "
              "task3d=%.6f) tau_pair=%.4f tau_trip=%.4f skips=%d\n",
              name, log.steps.size(), last.loss_total, last.loss_pair, last.loss_triplet,
              last.loss_task_2d, last.loss_task_3d, last.tau_pair, last.tau_triplet,
              last.degenerate_skips);
}

void print_alignment(const ModelBundle& b, const Dataset& ds) {
  const PairCosines pc = mean_pair_cosines(b, ds, Split::Test);
  std::printf("alignment (test split): cos(img,2d)=%.4f cos(img,3d)=%.4f cos(2d,3d)=%.4f "
              "tri-mean=%.4f\n",
              pc.img_2d, pc.img_3d, pc.p2d_3d, pc.tri_mean());
}

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig::defaults() : load_config_file(a.config);
  cfg.validate();
  const uint64_t fp = config_fingerprint(cfg);
  Dataset ds = load_dataset(a.data);

  fs::create_directories(a.out);
  const fs::path out_dir(a.out);

  if (a.stage == "all") {
    PipelineResult res = run_full_pipeline(cfg, ds, out_dir);
    print_stage_summary(res.logs[0], "step1");
    print_stage_summary(res.logs[1], "step2");
    print_stage_summary(res.logs[2], "finetune");
    print_alignment(res.bundle, ds);
    return 0;
  }

  const int stage_no = a.stage == "step1" ? 1 : a.stage == "step2" ? 2 : 3;
  ModelBundle bundle;
  if (stage_no == 1) {
    bundle = ModelBundle::create(dims_from(ds, cfg.model), derive_seed(cfg.train.seed, 0x0D31ull),
                                 cfg.model.use_tokens);
  } else {
    const fs::path prev = out_dir / (stage_no == 2 ? "step1.ckpt" : "step2.ckpt");
    if (!fs::exists(prev))
      throw_invalid_state("train: stage '" + a.stage + "' requires checkpoint '" + prev.string() +
                          "' from the previous stage");
    LoadedCheckpoint lc = load_checkpoint(prev);
    if (lc.config_fingerprint != fp)
      throw_invalid_state("train: checkpoint '" + prev.string() +
                          "' was produced by a different config (fingerprint mismatch)");
    bundle = std::move(lc.bundle);
  }

  RunLog log = run_stage(bundle, ds, stage_no, cfg);
  const char* name = stage_name(stage_no);
  save_checkpoint(out_dir / (std::string(name) + ".ckpt"), bundle, fp);
  save_runlog_csv(out_dir / ("runlog_" + std::string(name) + ".csv"), log);
  print_stage_summary(log, name);
  print_alignment(bundle, ds);
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string task;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  LoadedCheckpoint lc = load_checkpoint(a.ckpt);
  Dataset ds = load_dataset(a.data);
  const ModelDims want = dims_from(ds, ModelConfig{lc.bundle.dims.embed, {}, {}, true});
  if (lc.bundle.dims.p2d_in != want.p2d_in || lc.bundle.dims.p3d_in != want.p3d_in ||
      lc.bundle.dims.img_in != ds.img_dim)
    throw_invalid_input("eval: checkpoint input dims do not match dataset (joints or image "
                        "feature size differ)");

  std::vector<MetricReport> reports;
  if (a.task == "pose-retrieval") {
    for (auto dir : {PoseQuery::Pose2D, PoseQuery::Image})
      for (auto& r : eval_pose_retrieval(lc.bundle, ds, dir)) reports.push_back(std::move(r));
  } else if (a.task == "image-retrieval") {
    const int gallery = std::min<int>(500, static_cast<int>(ds.test_idx.size()));
    const std::vector<int> ks = {1, 5, 10};
    for (auto dir : {ImageQuery::Pose2D, ImageQuery::Pose3D})
      for (auto& r : eval_image_retrieval(lc.bundle, ds, dir, ks, gallery))
        reports.push_back(std::move(r));
  } else if (a.task == "hpe") {
    reports = eval_hpe(lc.bundle, ds);
  } else {
    throw_invalid_input("eval: unknown task '" + a.task + "'");
  }

  atomic_write_text(a.out + ".json", metrics_to_json(reports));
  atomic_write_text(a.out + ".csv", metrics_to_csv(reports));
  for (const auto& r : reports) {
    if (std::isnan(r.baseline))
      std::printf("%s = %.6f %s (n=%d)\n", r.name.c_str(), r.value, r.units.c_str(), r.n);
    else
      std::printf("%s = %.6f %s (n=%d, baseline %.6f)\n", r.name.c_str(), r.value, r.units.c_str(),
                  r.n, r.baseline);
  }
  std::printf("wrote %s.json and %s.csv\n", a.out.c_str(), a.out.c_str());
  return 0;
}

struct InterpArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  int steps = 11;
  int index_a = -1;
  int index_b = -1;
};

int cmd_interpolate(const InterpArgs& a) {
  LoadedCheckpoint lc = load_checkpoint(a.ckpt);
  Dataset ds = load_dataset(a.data);
  if (ds.test_idx.size() < 2 && (a.index_a < 0 || a.index_b < 0))
    throw_invalid_input("interpolate: dataset test split has fewer than 2 samples; pass --a/--b");
  const int ia = a.index_a >= 0 ? a.index_a : ds.test_idx[0];
  const int ib = a.index_b >= 0 ? a.index_b : ds.test_idx[1];
  const int n = static_cast<int>(ds.samples.size());
  if (ia < 0 || ia >= n || ib < 0 || ib >= n)
    throw_invalid_input("interpolate: sample index out of range");

  InterpolationResult res = eval_interpolation(lc.bundle, ds.skeleton, ds.samples[ia].pose3d,
                                               ds.samples[ib].pose3d, a.steps);
  atomic_write_text(a.out, interpolation_to_csv(res));
  std::printf("interpolated %d steps between samples %d and %d\n", a.steps, ia, ib);
  std::printf("step displacement: max=%.6f mean=%.6f ratio=%.3f | bone deviation mean=%.6f "
              "max=%.6f\n",
              res.max_step_disp, res.mean_step_disp,
              res.mean_step_disp > 0 ? res.max_step_disp / res.mean_step_disp : 0.0,
              res.bone_dev_mean, res.bone_dev_max);
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

struct GradcheckArgs {
  std::string component = "all";
  int seeds = 100;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.seeds == 0) {
    std::printf("warning: --seeds 0, no gradient checks executed\n");
    return 0;
  }
  const GradCheckSummary sum = run_gradcheck(a.component, a.seeds);
  for (const auto& c : sum.components)
    std::printf("%-16s max_rel_err=%.3e mean_rel_err=%.3e (instances=%d entries=%d)\n",
                c.component.c_str(), c.max_rel_err, c.mean_rel_err, c.instances, c.entries);
  const double tol = 1e-4;
  std::printf("overall max_rel_err=%.3e tolerance=%.0e -> %s\n", sum.max_rel_err, tol,
              sum.passed(tol) ? "PASS" : "FAIL");
  return sum.passed(tol) ? 0 : 1;
}

struct ShowConfigArgs {
  std::string config;
};

int cmd_show_config(const ShowConfigArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig::defaults() : load_config_file(a.config);
  cfg.validate();
  std::fputs(serialize_config(cfg).c_str(), stdout);
  std::printf("# fingerprint = %016" PRIx64 "\n", config_fingerprint(cfg));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tri-modal pose embedding alignment toolkit"};
  app.require_subcommand(1);
  app.footer("exit codes: 0 ok, 1 check failed, 2 usage, 3 invalid-input, 4 invalid-state, "
             "5 numerical-failure");

  GenDataArgs gd;
  auto* c_gd = app.add_subcommand("gen-data", "generate a synthetic multi-view pose dataset");
  c_gd->add_option("--out", gd.out, "output dataset path")->required();
  c_gd->add_option("--size", gd.size, "number of samples");
  c_gd->add_option("--joints", gd.joints, "skeleton joint count (17 = human-like rig)");
  c_gd->add_option("--seed", gd.seed, "master rng seed");
  c_gd->add_option("--nuisance", gd.nuisance, "appearance nuisance amplitude for image features");
  c_gd->add_option("--cameras", gd.cameras, "camera placement: spread|fixed");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "run one training stage or the full pipeline");
  c_tr->add_option("--config", tr.config, "config file (defaults when omitted)");
  c_tr->add_option("--data", tr.data, "dataset file")->required();
  c_tr->add_option("--out", tr.out, "output directory for checkpoints and logs")->required();
  c_tr->add_option("--stage", tr.stage, "step1|step2|finetune|all")
      ->check(CLI::IsMember({"step1", "step2", "finetune", "all"}));

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  c_ev->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  c_ev->add_option("--data", ev.data, "dataset file")->required();
  c_ev->add_option("--task", ev.task, "pose-retrieval|image-retrieval|hpe")->required();
  c_ev->add_option("--out", ev.out, "output base path (writes .json and .csv)")->required();

  InterpArgs ip;
  auto* c_ip = app.add_subcommand("interpolate", "interpolate between two poses in embedding space");
  c_ip->add_option("--ckpt", ip.ckpt, "checkpoint file")->required();
  c_ip->add_option("--data", ip.data, "dataset file")->required();
  c_ip->add_option("--steps", ip.steps, "number of interpolation steps (>= 2)");
  c_ip->add_option("--a", ip.index_a, "first sample index (default: first test sample)");
  c_ip->add_option("--b", ip.index_b, "second sample index (default: second test sample)");
  c_ip->add_option("--out", ip.out, "output CSV path")->required();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient verification (CI gate)");
  c_gc->add_option("--component", gc.component, "losses|nn|all")
      ->check(CLI::IsMember({"losses", "nn", "all"}));
  c_gc->add_option("--seeds", gc.seeds, "number of random instances per component");

  ShowConfigArgs sc;
  auto* c_sc = app.add_subcommand("show-config", "print the canonical config rendering");
  c_sc->add_option("--config", sc.config, "config file (defaults when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (c_gd->parsed()) return cmd_gen_data(gd);
    if (c_tr->parsed()) return cmd_train(tr);
    if (c_ev->parsed()) return cmd_eval(ev);
    if (c_ip->parsed()) return cmd_interpolate(ip);
    if (c_gc->parsed()) return cmd_gradcheck(gc);
    if (c_sc->parsed()) return cmd_show_config(sc);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", e.category_name(), e.what());
    switch (e.category()) {
      case ErrorCategory::InvalidInput: return 3;
      case ErrorCategory::InvalidState: return 4;
      case ErrorCategory::NumericalFailure: return 5;
    }
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal-error: %s\n", e.what());
    return 4;
  }
  return 2;
}
