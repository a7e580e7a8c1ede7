#include <catch2/catch_amalgamated.hpp>

#include <trialign/binio.hpp>
#include <trialign/synth.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

using namespace trialign;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;  // stdout ++ stderr
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() / ("trialign_cli_out_" +
                                                     std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(TRIALIGN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  r.out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  fs::remove(log);
  return r;
}

// scratch directory per test case, cleaned up on destruction
struct Scratch {
  fs::path dir;
  explicit Scratch(const char* name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const char* leaf) const { return (dir / leaf).string(); }
};

void write_small_config(const fs::path& path) {
  std::ofstream out(path);
  out << "[model]\n"
         "embed_dim = 8\n"
         "enc_hidden = 16\n"
         "dec_hidden = 16\n"
         "[stage1]\n"
         "steps = 10\n"
         "batch = 8\n"
         "[stage2]\n"
         "steps = 10\n"
         "batch = 8\n"
         "[stage3]\n"
         "steps = 6\n"
         "batch = 8\n";
}

}  // namespace

TEST_CASE("gen-data writes a loadable deterministic dataset", "[cli]") {
  Scratch s("trialign_cli_gendata");
  const auto r1 = run_cli("gen-data --out " + (s / "a.bin") + " --size 80 --seed 5");
  REQUIRE(r1.exit_code == 0);
  const Dataset ds = load_dataset(s / "a.bin");
  REQUIRE(ds.samples.size() == 80);
  REQUIRE(ds.joints() == 17);

  const auto r2 = run_cli("gen-data --out " + (s / "b.bin") + " --size 80 --seed 5");
  REQUIRE(r2.exit_code == 0);
  REQUIRE(read_file_bytes(s / "a.bin") == read_file_bytes(s / "b.bin"));

  const auto r3 = run_cli("gen-data --out " + (s / "c.bin") + " --size 80 --seed 6");
  REQUIRE(r3.exit_code == 0);
  REQUIRE(read_file_bytes(s / "a.bin") != read_file_bytes(s / "c.bin"));
}

TEST_CASE("gen-data accepts size zero", "[cli]") {
  Scratch s("trialign_cli_empty");
  const auto r = run_cli("gen-data --out " + (s / "empty.bin") + " --size 0");
  REQUIRE(r.exit_code == 0);
  REQUIRE(load_dataset(s / "empty.bin").samples.empty());
}

TEST_CASE("train runs stages in order and rejects missing prerequisites", "[cli]") {
  Scratch s("trialign_cli_train");
  write_small_config(s.dir / "cfg.ini");
  REQUIRE(run_cli("gen-data --out " + (s / "data.bin") + " --size 120 --seed 2").exit_code == 0);

  // step2 before step1 must fail with the state exit code and leave no checkpoint
  const auto bad = run_cli("train --config " + (s / "cfg.ini") + " --data " + (s / "data.bin") +
                           " --out " + (s / "runA") + " --stage step2");
  REQUIRE(bad.exit_code == 4);
  REQUIRE(bad.out.find("invalid-state") != std::string::npos);
  REQUIRE_FALSE(fs::exists(s.dir / "runA" / "step2.ckpt"));

  const auto s1 = run_cli("train --config " + (s / "cfg.ini") + " --data " + (s / "data.bin") +
                          " --out " + (s / "runA") + " --stage step1");
  REQUIRE(s1.exit_code == 0);
  REQUIRE(fs::exists(s.dir / "runA" / "step1.ckpt"));
  REQUIRE(fs::exists(s.dir / "runA" / "runlog_step1.csv"));

  const auto s2 = run_cli("train --config " + (s / "cfg.ini") + " --data " + (s / "data.bin") +
                          " --out " + (s / "runA") + " --stage step2");
  REQUIRE(s2.exit_code == 0);
  const auto s3 = run_cli("train --config " + (s / "cfg.ini") + " --data " + (s / "data.bin") +
                          " --out " + (s / "runA") + " --stage finetune");
  REQUIRE(s3.exit_code == 0);
  REQUIRE(fs::exists(s.dir / "runA" / "finetune.ckpt"));
}

TEST_CASE("full pipelines with one seed are bitwise identical", "[cli]") {
  Scratch s("trialign_cli_determinism");
  write_small_config(s.dir / "cfg.ini");
  REQUIRE(run_cli("gen-data --out " + (s / "data.bin") + " --size 120 --seed 3").exit_code == 0);
  const std::string base = "train --config " + (s / "cfg.ini") + " --data " + (s / "data.bin");
  REQUIRE(run_cli(base + " --out " + (s / "r1") + " --stage all").exit_code == 0);
  REQUIRE(run_cli(base + " --out " + (s / "r2") + " --stage all").exit_code == 0);
  for (const char* name : {"step1.ckpt", "step2.ckpt", "finetune.ckpt"}) {
    REQUIRE(read_file_bytes(s.dir / "r1" / name) == read_file_bytes(s.dir / "r2" / name));
  }
}

TEST_CASE("eval writes both report files for every task", "[cli]") {
  Scratch s("trialign_cli_eval");
  write_small_config(s.dir / "cfg.ini");
  REQUIRE(run_cli("gen-data --out " + (s / "data.bin") + " --size 120 --seed 4").exit_code == 0);
  REQUIRE(run_cli("train --config " + (s / "cfg.ini") + " --data " + (s / "data.bin") +
                  " --out " + (s / "run") + " --stage all")
              .exit_code == 0);
  const std::string ckpt = (s.dir / "run" / "finetune.ckpt").string();

  const auto hpe = run_cli("eval --ckpt " + ckpt + " --data " + (s / "data.bin") +
                           " --task hpe --out " + (s / "hpe"));
  REQUIRE(hpe.exit_code == 0);
  REQUIRE(fs::exists(s.dir / "hpe.json"));
  REQUIRE(fs::exists(s.dir / "hpe.csv"));
  const auto json = read_file_bytes(s.dir / "hpe.json");
  const std::string text(json.begin(), json.end());
  CHECK(text.find("hpe_from_2d_mpjpe") != std::string::npos);
  CHECK(text.find("hpe_from_image_mpjpe") != std::string::npos);

  REQUIRE(run_cli("eval --ckpt " + ckpt + " --data " + (s / "data.bin") +
                  " --task pose-retrieval --out " + (s / "pr"))
              .exit_code == 0);
  REQUIRE(fs::exists(s.dir / "pr.json"));
  REQUIRE(run_cli("eval --ckpt " + ckpt + " --data " + (s / "data.bin") +
                  " --task image-retrieval --out " + (s / "ir"))
              .exit_code == 0);
  REQUIRE(fs::exists(s.dir / "ir.csv"));
}

TEST_CASE("eval on a missing checkpoint fails cleanly", "[cli]") {
  Scratch s("trialign_cli_missing");
  REQUIRE(run_cli("gen-data --out " + (s / "data.bin") + " --size 60 --seed 4").exit_code == 0);
  const auto r = run_cli("eval --ckpt " + (s / "nope.ckpt") + " --data " + (s / "data.bin") +
                         " --task hpe --out " + (s / "out"));
  REQUIRE(r.exit_code == 4);
  REQUIRE_FALSE(fs::exists(s.dir / "out.json"));
  REQUIRE_FALSE(fs::exists(s.dir / "out.csv"));
}

TEST_CASE("interpolate writes the decoded pose sequence", "[cli]") {
  Scratch s("trialign_cli_interp");
  write_small_config(s.dir / "cfg.ini");
  REQUIRE(run_cli("gen-data --out " + (s / "data.bin") + " --size 120 --seed 6").exit_code == 0);
  REQUIRE(run_cli("train --config " + (s / "cfg.ini") + " --data " + (s / "data.bin") +
                  " --out " + (s / "run") + " --stage all")
              .exit_code == 0);
  const auto r = run_cli("interpolate --ckpt " + (s.dir / "run" / "finetune.ckpt").string() +
                         " --data " + (s / "data.bin") + " --steps 11 --out " + (s / "seq.csv"));
  REQUIRE(r.exit_code == 0);
  const auto bytes = read_file_bytes(s.dir / "seq.csv");
  const std::string text(bytes.begin(), bytes.end());
  REQUIRE(text.rfind("step,joint,x,y,z\n", 0) == 0);
  // 11 steps x 17 joints data rows + header
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 1 + 11 * 17);
}

TEST_CASE("gradcheck gate passes and honors --seeds 0", "[cli]") {
  const auto r = run_cli("gradcheck --component all --seeds 5");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("pair-infonce") != std::string::npos);

  const auto z = run_cli("gradcheck --seeds 0");
  REQUIRE(z.exit_code == 0);
  CHECK(z.out.find("warning") != std::string::npos);
}

TEST_CASE("usage errors exit with the usage code", "[cli]") {
  CHECK(run_cli("no-such-command").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);                 // a subcommand is required
  CHECK(run_cli("gen-data").exit_code == 2);         // --out is required
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("show-config prints the canonical form and fingerprint", "[cli]") {
  const auto r = run_cli("show-config");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("[data]") != std::string::npos);
  CHECK(r.out.find("[stage3]") != std::string::npos);
  CHECK(r.out.find("fingerprint") != std::string::npos);
}
