#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#include "doctest.h"
#include "resteer/io.hpp"
#include "test_util.hpp"

using resteer::testing::TempDir;
namespace fs = std::filesystem;
namespace io = resteer::io;

namespace {

int run(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string(RESTEER_CLI_PATH) + " " + args;
  cmd += log.empty() ? " > /dev/null 2>&1" : " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void check_same_files(const fs::path& a, const fs::path& b, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    INFO("file: " << name);
    REQUIRE(fs::exists(a / name));
    REQUIRE(fs::exists(b / name));
    CHECK(io::read_text(a / name) == io::read_text(b / name));
  }
}

const std::string kSmallTask = "--n-questions 240 --d-model 24 --signal-dims 6";
const std::string kSmallProbe =
    "--split 0.6,0.2,0.2 --hidden 16,8 --grid-lr 1e-3,3e-3 --grid-wd 1e-4 --grid-lambda-out 0,0.1 --epochs 15";

}  // namespace

TEST_CASE("help lists the stable flags") {
  TempDir tmp("cli");
  std::string text;
  for (const std::string sub : {"synth", "train-probe", "steer", "sweep", "sae train", "sae ablate", "sae steer",
                                "diagnose heads", "diagnose pca", "diagnose layers"}) {
    CHECK(run(sub + " --help", tmp / "help.txt") == 0);
    text += io::read_text(tmp / "help.txt");
  }
  for (const std::string flag : {"--dataset", "--out", "--seed", "--gamma", "--gammas", "--layers", "--grid-lr",
                                 "--grid-wd", "--grid-lambda-out", "--expansion", "--sae-lambda", "--folds",
                                 "--bins", "--length-normalize", "--fallback", "--report-scale"}) {
    INFO("flag: " << flag);
    CHECK(text.find(flag) != std::string::npos);
  }
}

TEST_CASE("errors give a nonzero exit and a diagnostic") {
  TempDir tmp("cli");
  CHECK(run("steer --dataset " + q(tmp / "missing") + " --probe " + q(tmp / "p") + " --out " + q(tmp / "o"),
            tmp / "err.txt") != 0);
  CHECK(io::read_text(tmp / "err.txt").find("MissingFile") != std::string::npos);
  CHECK(run("train-probe --dataset " + q(tmp / "missing") + " --out " + q(tmp / "o")) != 0);
  CHECK(run("no-such-command") != 0);
  CHECK(run("steer --dataset x --probe y --out z --fallback sometimes") != 0);
}

TEST_CASE("pipeline is deterministic under a fixed seed") {
  TempDir tmp("cli");
  const fs::path a = tmp / "a", b = tmp / "b";
  for (const auto& root : {a, b}) {
    REQUIRE(run("synth --out " + q(root / "task") + " --seed 5 " + kSmallTask) == 0);
    REQUIRE(run("train-probe --dataset " + q(root / "task") + " --out " + q(root / "probe") + " --seed 9 " +
                kSmallProbe) == 0);
    REQUIRE(run("steer --dataset " + q(root / "probe/splits/test") + " --probe " + q(root / "probe") + " --out " +
                q(root / "steer") + " --gamma 1") == 0);
    REQUIRE(run("sweep --dataset " + q(root / "probe/splits/val") + " --probe " + q(root / "probe") + " --out " +
                q(root / "sweep") + " --gammas 0,0.5,1,2") == 0);
    REQUIRE(run("sae train --dataset " + q(root / "task") + " --out " + q(root / "sae") +
                " --seed 2 --expansion 2 --sae-lambda 0.5 --epochs 4") == 0);
    REQUIRE(run("sae ablate --dataset " + q(root / "task") + " --sae " + q(root / "sae") + " --out " +
                q(root / "ablate")) == 0);
    REQUIRE(run("diagnose pca --dataset " + q(root / "task") + " --out " + q(root / "pca") + " --ks 1,4,8 --seed 3") ==
            0);
    REQUIRE(run("diagnose layers --dataset " + q(root / "probe/splits/test") + " --probe " + q(root / "probe") +
                " --out " + q(root / "layers")) == 0);
  }
  check_same_files(a / "task", b / "task", {"manifest.json", "records.jsonl", "activations.f32", "task.json"});
  check_same_files(a / "probe", b / "probe", {"probe.json", "weights.f32", "norm.json", "grid.csv", "history.csv"});
  check_same_files(a / "steer", b / "steer",
                   {"report.json", "steered.jsonl", "reliability_base.csv", "reliability_steered.csv"});
  check_same_files(a / "sweep", b / "sweep", {"gammas.csv", "layers.csv", "selection.json"});
  check_same_files(a / "sae", b / "sae", {"sae.json", "weights.f32", "history.csv"});
  check_same_files(a / "ablate", b / "ablate", {"impacts.csv", "summary.json"});
  check_same_files(a / "pca", b / "pca", {"dimcurve.csv"});
  check_same_files(a / "layers", b / "layers", {"layers.csv"});

  // Grid cells run concurrently; the thread count must not leak into results.
  const std::string serial = "CORAL_THREADS=1 " + std::string(RESTEER_CLI_PATH) + " train-probe --dataset " +
                             q(a / "task") + " --out " + q(tmp / "one") + " --seed 9 " + kSmallProbe + " > /dev/null";
  REQUIRE(std::system(serial.c_str()) == 0);
  check_same_files(a / "probe", tmp / "one", {"probe.json", "weights.f32", "grid.csv"});

  const auto summary = io::read_json(a / "ablate" / "summary.json");
  CHECK(summary.contains("delta_acc"));
  CHECK(summary["delta_acc"].contains("q1"));
  CHECK(summary["delta_ece"].contains("median"));
}

TEST_CASE("zero gamma report matches the base report; bad checksums are rejected") {
  TempDir tmp("cli");
  REQUIRE(run("synth --out " + q(tmp / "task") + " --seed 1 " + kSmallTask) == 0);
  REQUIRE(run("train-probe --dataset " + q(tmp / "task") + " --out " + q(tmp / "probe") + " --seed 1 " +
              kSmallProbe) == 0);
  REQUIRE(run("steer --dataset " + q(tmp / "probe/splits/test") + " --probe " + q(tmp / "probe") + " --out " +
              q(tmp / "zero") + " --gamma 0 --report-scale raw") == 0);
  const auto doc = io::read_json(tmp / "zero" / "report.json");
  CHECK(doc["base"] == doc["steered"]);
  CHECK_FALSE(doc["base"].contains("x100"));
  CHECK(io::read_text(tmp / "zero" / "reliability_base.csv") ==
        io::read_text(tmp / "zero" / "reliability_steered.csv"));

  auto bytes = io::read_text(tmp / "probe" / "weights.f32");
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  io::write_text(tmp / "probe" / "weights.f32", bytes);
  CHECK(run("steer --dataset " + q(tmp / "probe/splits/test") + " --probe " + q(tmp / "probe") + " --out " +
                q(tmp / "bad"),
            tmp / "err.txt") != 0);
  CHECK(io::read_text(tmp / "err.txt").find("ChecksumMismatch") != std::string::npos);
}

TEST_CASE("sweep over synthetic layers selects the planted layer") {
  TempDir tmp("cli");
  REQUIRE(run("synth --out " + q(tmp / "task") + " --seed 4 --layers 3 --planted-layer 1 --n-questions 400 "
              "--d-model 24 --signal-dims 6") == 0);
  std::string datasets;
  for (int l = 0; l < 3; ++l) {
    const auto layer = "layer_" + std::to_string(l);
    REQUIRE(run("train-probe --dataset " + q(tmp / "task" / layer) + " --out " + q(tmp / "probes" / layer) +
                " --seed 2 " + kSmallProbe) == 0);
    datasets += " --dataset " + q(tmp / "probes" / layer / "splits" / "val");
  }
  REQUIRE(run("sweep" + datasets + " --probe " + q(tmp / "probes") + " --out " + q(tmp / "sweep")) == 0);
  const auto sel = io::read_json(tmp / "sweep" / "selection.json");
  CHECK(sel["layer_id"] == 1);
  const auto layers = io::read_text(tmp / "sweep" / "layers.csv");
  CHECK(std::count(layers.begin(), layers.end(), '\n') == 4);

  REQUIRE(run("sweep" + datasets + " --probe " + q(tmp / "probes") + " --out " + q(tmp / "only2") + " --layers 2") ==
          0);
  CHECK(io::read_json(tmp / "only2" / "selection.json")["layer_id"] == 2);
}
