// End-to-end checks of the command line tool. Each case shells out to the
// real binary (PARTSEG_BIN) and inspects exit codes, console text and the
// files left behind.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <json.hpp>

#include "testutil.hpp"

namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* b = std::getenv("PARTSEG_BIN");
  REQUIRE_MESSAGE(b != nullptr, "PARTSEG_BIN must point at the partseg executable");
  return b;
}

struct RunResult {
  int code = -1;
  std::string text;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  std::string log =
      testutil::scratch_dir("cli_logs") + "/run_" + std::to_string(counter++) + ".txt";
  std::string cmd = bin() + " " + args + " >" + log + " 2>&1";
  int raw = std::system(cmd.c_str());
  REQUIRE(raw != -1);
  RunResult r;
  if (WIFEXITED(raw)) r.code = WEXITSTATUS(raw);
  std::ifstream f(log, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  r.text = ss.str();
  return r;
}

bool mentions(const RunResult& r, const std::string& needle) {
  return r.text.find(needle) != std::string::npos;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE_MESSAGE(f.good(), "missing ", path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Dataset/model settings small enough that train finishes in seconds.
struct Pipeline {
  std::string root;   // dataset
  std::string run;    // training artifacts
  std::string cfg;    // the --set block shared by every stage
  std::string hash;   // config hash echoed by synth/train
};

const Pipeline& pipeline() {
  static Pipeline p = [] {
    Pipeline q;
    q.root = testutil::scratch_dir("cli_data");
    q.run = testutil::scratch_dir("cli_run");
    q.cfg = " --set model.image_size=32 --set model.token_grid=8 --set model.embed_dim=8"
            " --set synth.image_size=32 --set synth.train_samples=6 --set synth.val_samples=4"
            " --set synth.objects=blobA,blobB --set synth.unseen=blobB --set synth.seed=5"
            " --set train.total_iters=4 --set train.batch_size=2 --set train.warmup_iters=1"
            " --set train.checkpoint_every=2 --set train.base_lr=0.002"
            " --set data.root=" + q.root;

    RunResult gen = run_cli("synth generate" + q.cfg + " --out " + q.run);
    REQUIRE_MESSAGE(gen.code == 0, gen.text);
    RunResult tr = run_cli("train" + q.cfg + " --out " + q.run);
    REQUIRE_MESSAGE(tr.code == 0, tr.text);

    std::string echo = read_file(q.run + "/config_echo.txt");
    auto nl = echo.find('\n');
    REQUIRE(echo.rfind("# config hash: ", 0) == 0);
    q.hash = echo.substr(15, nl - 15);
    return q;
  }();
  return p;
}

std::string first_val_image(const Pipeline& p) {
  std::string row = read_file(p.root + "/val/manifest.tsv");
  return p.root + "/val/" + row.substr(0, row.find('\t'));
}

std::string first_val_label(const Pipeline& p) {
  std::string row = read_file(p.root + "/val/manifest.tsv");
  auto tab = row.find('\t');
  return p.root + "/val/" + row.substr(tab + 1, row.find('\n') - tab - 1);
}

}  // namespace

TEST_CASE("help text names the subcommands and every config key") {
  RunResult r = run_cli("--help");
  CHECK(r.code == 0);
  for (const char* word : {"train", "eval", "infer", "synth", "losscheck", "ablate", "taxonomy"})
    CHECK_MESSAGE(mentions(r, word), "help lacks ", word);
  for (const char* key : {"model.embed_dim", "attn.gamma", "data.root", "synth.small_part_ratio",
                          "train.select_protocol", "loss.lambda_sep"})
    CHECK_MESSAGE(mentions(r, key), "help lacks ", key);
}

TEST_CASE("bad invocations do not pretend to succeed") {
  CHECK(run_cli("").code != 0);                        // a subcommand is required
  CHECK(run_cli("--no-such-flag").code != 0);
  CHECK(run_cli("taxonomy validate /no/such/file.json").code != 0);
}

TEST_CASE("losscheck reproduces the documented worked examples") {
  RunResult r = run_cli("losscheck");
  CHECK(r.code == 0);
  CHECK(mentions(r, "sep 2/6 union"));
  CHECK(mentions(r, "harmonic mean"));
  CHECK_FALSE(mentions(r, "FAIL"));
}

TEST_CASE("taxonomy validate round-trips the shipped category lists") {
  RunResult pascal = run_cli("taxonomy validate assets/pascal_part_116.json");
  CHECK(pascal.code == 0);
  CHECK(mentions(pascal, "116 categories"));
  CHECK(mentions(pascal, "round-trip ok"));

  RunResult ade = run_cli("taxonomy validate assets/ade20k_part_234.json");
  CHECK(ade.code == 0);
  CHECK(mentions(ade, "234 categories"));
  CHECK(mentions(ade, "round-trip ok"));
}

TEST_CASE("config mistakes exit with the dedicated code and name the key") {
  std::string dir = testutil::scratch_dir("cli_cfgerr");
  RunResult unknown = run_cli("synth generate --set bogus.key=1 --out " + dir);
  CHECK(unknown.code == 2);
  CHECK(mentions(unknown, "config error"));
  CHECK(mentions(unknown, "bogus.key"));

  RunResult malformed = run_cli("synth generate --set no_equals_here --out " + dir);
  CHECK(malformed.code == 2);

  RunResult invalid = run_cli("synth generate --set synth.small_part_ratio=0.5 --set data.root=" +
                              dir + "/d --out " + dir);
  CHECK(invalid.code == 2);
  CHECK(mentions(invalid, "synth.small_part_ratio"));

  RunResult rootless = run_cli("train --out " + dir);
  CHECK(rootless.code == 2);
  CHECK(mentions(rootless, "data.root"));
}

TEST_CASE("synth generate lays out a loadable dataset") {
  const Pipeline& p = pipeline();
  CHECK(fs::exists(p.root + "/taxonomy.json"));
  CHECK(fs::exists(p.root + "/train/manifest.tsv"));
  CHECK(fs::exists(p.root + "/val/manifest.tsv"));
  CHECK(fs::exists(p.root + "/config_echo.txt"));
  CHECK(fs::exists(first_val_image(p)));
  CHECK(fs::exists(first_val_label(p)));

  // the echo is itself a valid config file: keys, one per line, sorted
  std::string echo = read_file(p.root + "/config_echo.txt");
  CHECK(echo.find("data.root = " + p.root) != std::string::npos);
  CHECK(echo.find("synth.unseen = blobB") != std::string::npos);
}

TEST_CASE("train leaves checkpoints, a log and the best-model report") {
  const Pipeline& p = pipeline();
  CHECK(fs::exists(p.run + "/step_000002.ckpt"));
  CHECK(fs::exists(p.run + "/step_000004.ckpt"));
  CHECK(fs::exists(p.run + "/best.ckpt"));
  CHECK(fs::exists(p.run + "/best_report.json"));

  std::istringstream log(read_file(p.run + "/train_log.jsonl"));
  std::string line;
  int rows = 0;
  while (std::getline(log, line))
    if (!line.empty()) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.contains("L_all"));
      ++rows;
    }
  CHECK(rows == 4);
}

TEST_CASE("eval writes a report whose hash matches the training config") {
  const Pipeline& p = pipeline();
  std::string dir = testutil::scratch_dir("cli_eval");
  RunResult r = run_cli("eval --checkpoint " + p.run + "/best.ckpt" + p.cfg + " --out " + dir);
  REQUIRE_MESSAGE(r.code == 0, r.text);
  CHECK(mentions(r, "Seen"));
  CHECK(mentions(r, "Harmonic"));

  auto j = nlohmann::json::parse(read_file(dir + "/eval_report.json"));
  CHECK(j["config_hash"] == p.hash);
  double seen = j["miou"]["seen"];
  CHECK(seen >= 0.0);
  CHECK(seen <= 1.0);
  CHECK(j.contains("overlap_fraction"));
}

TEST_CASE("eval refuses a checkpoint from a different config unless overridden") {
  const Pipeline& p = pipeline();
  std::string dir = testutil::scratch_dir("cli_eval_mismatch");
  std::string tweaked = p.cfg + " --set attn.gamma=0.35";
  RunResult strict =
      run_cli("eval --checkpoint " + p.run + "/best.ckpt" + tweaked + " --out " + dir);
  CHECK(strict.code == 2);
  CHECK(mentions(strict, "config"));

  RunResult forced = run_cli("eval --checkpoint " + p.run + "/best.ckpt" + tweaked +
                             " --allow-config-mismatch --out " + dir);
  REQUIRE_MESSAGE(forced.code == 0, forced.text);
  CHECK(mentions(forced, p.hash));  // the warning quotes both hashes
  CHECK(fs::exists(dir + "/eval_report.json"));
}

TEST_CASE("eval runs under the open-vocabulary protocol too") {
  const Pipeline& p = pipeline();
  std::string dir = testutil::scratch_dir("cli_eval_predall");
  RunResult r = run_cli("eval --checkpoint " + p.run + "/best.ckpt" + p.cfg +
                        " --protocol pred_all --allow-config-mismatch --out " + dir);
  REQUIRE_MESSAGE(r.code == 0, r.text);
  auto j = nlohmann::json::parse(read_file(dir + "/eval_report.json"));
  double seen = j["miou"]["seen"];
  CHECK(seen >= 0.0);
  CHECK(seen <= 1.0);
}

TEST_CASE("infer writes a label map image") {
  const Pipeline& p = pipeline();
  std::string dir = testutil::scratch_dir("cli_infer");
  std::string image = first_val_image(p);
  std::string label = first_val_label(p);

  // the checkpoint-selection protocol needs the object annotation
  RunResult bare = run_cli("infer --checkpoint " + p.run + "/best.ckpt" + p.cfg + " --image " +
                           image + " --output " + dir + "/a.pgm");
  CHECK(bare.code == 2);
  CHECK(mentions(bare, "--label"));

  RunResult oracle = run_cli("infer --checkpoint " + p.run + "/best.ckpt" + p.cfg + " --image " +
                             image + " --label " + label + " --output " + dir + "/a.pgm");
  REQUIRE_MESSAGE(oracle.code == 0, oracle.text);
  std::string pgm = read_file(dir + "/a.pgm");
  CHECK(pgm.rfind("P5", 0) == 0);
  CHECK(pgm.find("32 32") != std::string::npos);
  CHECK(pgm.find("65535") != std::string::npos);

  RunResult open = run_cli("infer --checkpoint " + p.run + "/best.ckpt" + p.cfg +
                           " --protocol pred_all --allow-config-mismatch --image " + image +
                           " --output " + dir + "/b.pgm");
  REQUIRE_MESSAGE(open.code == 0, open.text);
  CHECK(fs::exists(dir + "/b.pgm"));
}

TEST_CASE("ablate gamma trains one row per distinct value") {
  const Pipeline& p = pipeline();
  std::string dir = testutil::scratch_dir("cli_ablate");
  RunResult r = run_cli("ablate gamma --values 0.3,0.3" + p.cfg +
                        " --set train.total_iters=2 --out " + dir);
  REQUIRE_MESSAGE(r.code == 0, r.text);
  CHECK(mentions(r, "duplicate gamma"));
  CHECK(mentions(r, "gamma sweep"));

  auto j = nlohmann::json::parse(read_file(dir + "/ablation_gamma.json"));
  REQUIRE(j["rows"].size() == 1);
  CHECK(j["rows"][0]["label"] == "gamma=0.3");
  CHECK(j["rows"][0].contains("harmonic_miou"));
}
