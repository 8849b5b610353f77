// End-to-end tests of the command-line tool, driven through the real binary
// (path in the DTDA_CLI environment variable). Each case works in a fresh
// temp directory and checks exit codes, produced files, and reproducibility.
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "catch2/catch_amalgamated.hpp"
#include "dtda/metrics.hpp"
#include "dtda/common.hpp"

using namespace dtda;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("dtda_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string cli_binary() {
  const char* p = std::getenv("DTDA_CLI");
  REQUIRE(p != nullptr);
  return p;
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the binary through the shell, capturing exit code and both streams.
CliResult run_cli(const TempDir& tmp, const std::string& args) {
  fs::path out = tmp.path / "stdout.txt";
  fs::path err = tmp.path / "stderr.txt";
  std::string cmd = cli_binary() + " " + args + " > " + out.string() + " 2> " + err.string();
  int raw = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = fs::exists(out) ? read_text_file(out) : "";
  r.err = fs::exists(err) ? read_text_file(err) : "";
  return r;
}

// Small dataset / tiny encoder configuration shared by the cases.
fs::path write_tiny_config(const TempDir& tmp, int student_epochs = 2,
                           const char* name = "run.jsonc") {
  fs::path p = tmp.path / name;
  write_text_file(
      p,
      "{\n"
      "  // tiny wiring-test setup\n"
      "  \"data\": {\"num_domains\": 3, \"samples_per_domain\": 24, \"image_size\": 16,\n"
      "            \"num_identities\": 4, \"num_attributes\": 2, \"seed\": 5},\n"
      "  \"arch\": {\"image_size\": 16, \"conv_channels\": [6, 12]},\n"
      "  \"aux_optim\": {\"epochs\": 3, \"batch_size\": 16, \"holdout_fraction\": 0.2},\n"
      "  \"student_optim\": {\"epochs\": " +
          std::to_string(student_epochs) +
          ", \"batch_size\": 16},\n"
          "  \"attack\": {\"steps\": 2},\n"
          "  \"seeds\": [1],\n"
          "  \"variant\": \"baseline\",\n"
          "  \"checkpoint_every_epochs\": 1\n"
          "}\n");
  return p;
}

std::string q(const fs::path& p) { return p.string(); }

}  // namespace

TEST_CASE("synth writes a dataset and is seed-reproducible", "[cli]") {
  TempDir tmp;
  fs::path cfg = write_tiny_config(tmp);

  CliResult r = run_cli(tmp, "synth --config " + q(cfg) + " --output " + q(tmp.path / "a"));
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(tmp.path / "a" / "dataset" / "manifest.json"));
  REQUIRE(fs::exists(tmp.path / "a" / "dataset" / "images.bin"));
  REQUIRE(fs::exists(tmp.path / "a" / "config.json"));

  CliResult r2 = run_cli(tmp, "synth --config " + q(cfg) + " --output " + q(tmp.path / "b"));
  REQUIRE(r2.code == 0);
  REQUIRE(file_digest(tmp.path / "a" / "dataset" / "images.bin") ==
          file_digest(tmp.path / "b" / "dataset" / "images.bin"));
  REQUIRE(read_text_file(tmp.path / "a" / "dataset" / "manifest.json") ==
          read_text_file(tmp.path / "b" / "dataset" / "manifest.json"));

  // a different seed produces different pixels
  CliResult r3 = run_cli(tmp, "synth --config " + q(cfg) + " --seed 7 --output " +
                                  q(tmp.path / "c"));
  REQUIRE(r3.code == 0);
  REQUIRE(file_digest(tmp.path / "a" / "dataset" / "images.bin") !=
          file_digest(tmp.path / "c" / "dataset" / "images.bin"));
}

TEST_CASE("invalid configuration fields exit with code 2 and name the field", "[cli]") {
  TempDir tmp;
  fs::path bad = tmp.path / "bad.jsonc";
  write_text_file(bad, "{\"data\": {\"spoof_ratio\": 1.5}}\n");
  CliResult r = run_cli(tmp, "synth --config " + q(bad) + " --output " + q(tmp.path / "o"));
  REQUIRE(r.code == 2);
  REQUIRE_THAT(r.err, ContainsSubstring("spoof_ratio"));
}

TEST_CASE("malformed config files exit with code 3", "[cli]") {
  TempDir tmp;
  fs::path bad = tmp.path / "broken.jsonc";
  write_text_file(bad, "{\"data\": {\n");
  CliResult r = run_cli(tmp, "synth --config " + q(bad) + " --output " + q(tmp.path / "o"));
  REQUIRE(r.code == 3);
}

TEST_CASE("unknown flags exit with code 2", "[cli]") {
  TempDir tmp;
  CliResult r = run_cli(tmp, "synth --bogus-flag 1");
  REQUIRE(r.code == 2);
}

TEST_CASE("help exits cleanly", "[cli]") {
  TempDir tmp;
  CliResult r = run_cli(tmp, "--help");
  REQUIRE(r.code == 0);
  for (const char* sub : {"synth", "train", "eval", "protocol", "ablate", "report"})
    REQUIRE_THAT(r.out, ContainsSubstring(sub));
}

TEST_CASE("train, eval, and report chain end to end", "[cli][slow]") {
  TempDir tmp;
  fs::path cfg = write_tiny_config(tmp);
  fs::path out = tmp.path / "o";
  REQUIRE(run_cli(tmp, "synth --config " + q(cfg) + " --output " + q(out)).code == 0);
  fs::path dataset = out / "dataset";

  CliResult tr = run_cli(tmp, "train --config " + q(cfg) + " --data " + q(dataset) +
                                  " --variant baseline --output " + q(out));
  REQUIRE(tr.code == 0);
  fs::path tdir = out / "train" / "baseline";
  REQUIRE(fs::exists(tdir / "loss.csv"));
  REQUIRE(fs::exists(tdir / "checkpoints" / "student.ckpt"));
  auto echo = nlohmann::json::parse(read_text_file(tdir / "config.json"));
  REQUIRE(echo["variant"] == "baseline");
  REQUIRE(echo.contains("config_hash"));

  CliResult ev = run_cli(tmp, "eval --config " + q(cfg) + " --checkpoint " +
                                  q(tdir / "checkpoints" / "student.ckpt") + " --data " +
                                  q(dataset) + " --target 2 --render --output " + q(out));
  REQUIRE(ev.code == 0);
  fs::path edir = out / "eval";
  for (const char* f : {"scores.csv", "metrics.json", "roc.csv", "roc.svg"})
    REQUIRE(fs::exists(edir / f));

  // every scored sample comes from the requested domain
  auto recs = read_scores_csv(edir / "scores.csv");
  REQUIRE(!recs.empty());
  for (const auto& r : recs) REQUIRE(r.domain_id == 2);

  // report on the emitted scores reproduces the metrics byte for byte
  CliResult rp = run_cli(tmp, "report --config " + q(cfg) + " --scores " +
                                  q(edir / "scores.csv") + " --output " + q(out));
  REQUIRE(rp.code == 0);
  REQUIRE(read_text_file(out / "report" / "metrics.json") ==
          read_text_file(edir / "metrics.json"));
}

TEST_CASE("full variant trains all auxiliary models", "[cli][slow]") {
  TempDir tmp;
  fs::path cfg = write_tiny_config(tmp);
  fs::path out = tmp.path / "o";
  REQUIRE(run_cli(tmp, "synth --config " + q(cfg) + " --output " + q(out)).code == 0);

  CliResult tr = run_cli(tmp, "train --config " + q(cfg) + " --data " + q(out / "dataset") +
                                  " --variant full --output " + q(out));
  REQUIRE(tr.code == 0);
  fs::path ck = out / "train" / "full" / "checkpoints";
  for (const char* f : {"student.ckpt", "domain_classifier.ckpt", "identity_teacher.ckpt",
                        "attribute_teacher.ckpt"})
    REQUIRE(fs::exists(ck / f));
}

TEST_CASE("interrupted training resumes to the uninterrupted result", "[cli][slow]") {
  TempDir tmp;
  fs::path cfg = write_tiny_config(tmp, 4);

  fs::path data_out = tmp.path / "d";
  REQUIRE(run_cli(tmp, "synth --config " + q(cfg) + " --output " + q(data_out)).code == 0);
  fs::path dataset = data_out / "dataset";

  // one uninterrupted four-epoch run
  fs::path full = tmp.path / "full";
  REQUIRE(run_cli(tmp, "train --config " + q(cfg) + " --data " + q(dataset) +
                          " --variant baseline --output " + q(full))
              .code == 0);

  // simulate a crash after epoch 2: replay the run, drop everything newer
  // than the epoch-2 snapshot, then resume
  fs::path split = tmp.path / "split";
  REQUIRE(run_cli(tmp, "train --config " + q(cfg) + " --data " + q(dataset) +
                          " --variant baseline --output " + q(split))
              .code == 0);
  fs::path ck_dir = split / "train" / "baseline" / "checkpoints";
  fs::remove(ck_dir / "epoch_0003.ckpt");
  fs::remove(ck_dir / "epoch_0004.ckpt");
  fs::remove(ck_dir / "student.ckpt");
  fs::remove(split / "train" / "baseline" / "loss.csv");
  REQUIRE(run_cli(tmp, "train --config " + q(cfg) + " --data " + q(dataset) +
                          " --variant baseline --resume --output " + q(split))
              .code == 0);

  auto ckpt = [](const fs::path& root) {
    return root / "train" / "baseline" / "checkpoints" / "student.ckpt";
  };
  REQUIRE(file_digest(ckpt(full)) == file_digest(ckpt(split)));
  REQUIRE(read_text_file(full / "train" / "baseline" / "loss.csv") ==
          read_text_file(split / "train" / "baseline" / "loss.csv"));
}

TEST_CASE("missing inputs exit with code 3", "[cli]") {
  TempDir tmp;
  fs::path cfg = write_tiny_config(tmp);

  SECTION("train without a dataset") {
    CliResult r = run_cli(tmp, "train --config " + q(cfg) + " --data " +
                                   q(tmp.path / "nowhere") + " --output " + q(tmp.path / "o"));
    REQUIRE(r.code == 3);
  }
  SECTION("eval without a checkpoint") {
    CliResult r = run_cli(tmp, "eval --config " + q(cfg) + " --checkpoint " +
                                   q(tmp.path / "missing.ckpt") + " --data " +
                                   q(tmp.path / "nowhere") + " --output " + q(tmp.path / "o"));
    REQUIRE(r.code == 3);
  }
  SECTION("report without a score file") {
    CliResult r = run_cli(tmp, "report --scores " + q(tmp.path / "missing.csv") +
                                   " --output " + q(tmp.path / "o"));
    REQUIRE(r.code == 3);
  }
}

TEST_CASE("protocol runs are deterministic and self-describing", "[cli][slow]") {
  TempDir tmp;
  fs::path cfg = write_tiny_config(tmp);

  CliResult a = run_cli(tmp, "protocol --config " + q(cfg) + " --deterministic --output " +
                                 q(tmp.path / "a"));
  REQUIRE(a.code == 0);
  REQUIRE_THAT(a.out, ContainsSubstring("leakage audit: clean"));

  CliResult b = run_cli(tmp, "protocol --config " + q(cfg) + " --deterministic --output " +
                                 q(tmp.path / "b"));
  REQUIRE(b.code == 0);

  fs::path ra = tmp.path / "a" / "runs" / "leave_one_out";
  fs::path rb = tmp.path / "b" / "runs" / "leave_one_out";
  REQUIRE(read_text_file(ra / "summary.json") == read_text_file(rb / "summary.json"));

  auto summary = nlohmann::json::parse(read_text_file(ra / "summary.json"));
  REQUIRE(summary["cells"].size() == 3);  // three targets, one seed, one variant
  for (const auto& cell : summary["cells"]) {
    fs::path rel_scores = cell["scores"].get<std::string>();
    fs::path rel_metrics = cell["metrics"].get<std::string>();
    REQUIRE(read_text_file(ra / rel_scores) == read_text_file(rb / rel_scores));
    REQUIRE(read_text_file(ra / rel_metrics) == read_text_file(rb / rel_metrics));
  }

  // the run echoes its resolved configuration at the output root
  REQUIRE(fs::exists(tmp.path / "a" / "config.json"));
}

TEST_CASE("ablate emits the five-variant table", "[cli][slow]") {
  TempDir tmp;
  fs::path cfg = write_tiny_config(tmp);

  CliResult r = run_cli(tmp, "ablate --config " + q(cfg) + " --output " + q(tmp.path / "o"));
  REQUIRE(r.code == 0);
  std::string table =
      read_text_file(tmp.path / "o" / "runs" / "leave_one_out" / "summary.txt");
  for (const char* v : {"baseline", "identity_kd", "attribute_kd", "dual_kd", "full"})
    REQUIRE_THAT(table, ContainsSubstring(v));
}
