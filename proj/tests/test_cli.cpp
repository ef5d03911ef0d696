#include "doctest.h"

#include "test_util.hpp"

#include "cli.hpp"
#include "mlmspt/checkpoint.hpp"
#include "mlmspt/data_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

using namespace mlmspt;
using testutil::slurp;
using testutil::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_model() {
  return {"--embed-dim", "4", "--psa-proj-dim", "2", "--heads", "2", "--head-hidden", "8", "--batch-size", "4"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string synth(const TempDir& dir, const std::string& name, const std::string& task = "cls") {
  const auto r = run({"synth", "--out", (dir / name).string(), "--classes", "sphere,cylinder", "--per-class", "2",
                      "--points", "16", "--seed", "3", "--task", task});
  REQUIRE(r.code == 0);
  return (dir / name / "manifest.txt").string();
}

}  // namespace

TEST_CASE("synth writes the requested files") {
  TempDir dir("cli_synth");
  const auto r = run({"synth", "--classes", "sphere,cube", "--per-class", "16", "--points", "256", "--seed", "7", "--out",
                      (dir / "a").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("manifest.txt") != std::string::npos);
  std::size_t clouds = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "a")) clouds += e.path().extension() == ".pcf";
  CHECK(clouds == 32);
  CHECK(std::filesystem::exists(dir / "a" / "manifest.txt"));

  run({"synth", "--classes", "sphere,cube", "--per-class", "16", "--points", "256", "--seed", "7", "--out", (dir / "b").string()});
  for (const auto& e : std::filesystem::directory_iterator(dir / "a"))
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename().string()));

  const auto bad = run({"synth", "--points", "255", "--out", (dir / "c").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("multiple of 4") != std::string::npos);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code == 1);
  CHECK(run({"bogus"}).code == 1);
  CHECK(run({"train", "--no-such-flag"}).code == 1);
  CHECK(run({"train", "--out", "x"}).code == 1);  // missing --manifest
  const auto help = run({"train", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--embed-dim") != std::string::npos);
  CHECK(help.out.find("--corrupt") == std::string::npos);
}

TEST_CASE("config file keys and overrides") {
  TempDir dir("cli_cfg");
  const auto manifest = synth(dir, "data");
  std::ofstream(dir / "run.cfg") << "# shared settings\nembed_dim = 4\npsa_proj_dim=2\nheads=2\nhead_hidden=8\nepochs=1\nlr=0.5\n";
  const auto r = run({"train", "--config", (dir / "run.cfg").string(), "--manifest", manifest, "--lr", "0.001", "--out",
                      (dir / "run").string()});
  REQUIRE(r.code == 0);
  const auto echo = slurp(dir / "run" / "config.echo");
  const std::string text(echo.begin(), echo.end());
  CHECK(text.find("lr=0.001\n") != std::string::npos);
  CHECK(text.find("embed_dim=4\n") != std::string::npos);
  CHECK(text.find("n_points=16\n") != std::string::npos);
  CHECK(text.find("task=cls\n") != std::string::npos);

  std::ofstream(dir / "bad.cfg") << "embed_dims=4\n";
  const auto bad = run({"train", "--config", (dir / "bad.cfg").string(), "--manifest", manifest, "--out", (dir / "x").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("embed_dims") != std::string::npos);
  CHECK(run({"train", "--config", (dir / "missing.cfg").string()}).code == 3);
}

TEST_CASE("train writes the run directory and zero lr keeps parameters") {
  TempDir dir("cli_train");
  const auto manifest = synth(dir, "data");
  const auto r = run(cat({"train", "--manifest", manifest, "--out", (dir / "run").string(), "--epochs", "2", "--lr", "0"}, small_model()));
  REQUIRE(r.code == 0);
  for (const char* f : {"config.echo", "checkpoint.bin", "metrics.txt", "metrics.kv"}) CHECK(std::filesystem::exists(dir / "run" / f));
  ModelConfig cfg = load_checkpoint<float>(dir / "run" / "checkpoint.bin").config();
  const auto init = init_parameters<float>(cfg, 0);
  save_checkpoint(init, cfg, dir / "init.bin");
  CHECK(slurp(dir / "init.bin") == slurp(dir / "run" / "checkpoint.bin"));
}

TEST_CASE("train is byte-reproducible and ablations wire the expected parameters") {
  TempDir dir("cli_det");
  const auto manifest = synth(dir, "data", "seg");
  auto args = [&](const std::string& out, const std::string& ablation) {
    return cat({"train", "--manifest", manifest, "--out", (dir / out).string(), "--epochs", "2", "--seed", "11", "--deterministic",
                "--ablation", ablation, "--lr", "0.001"},
               small_model());
  };
  REQUIRE(run(args("a", "full")).code == 0);
  REQUIRE(run(args("b", "full")).code == 0);
  CHECK(slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
  CHECK(slurp(dir / "a" / "metrics.kv") == slurp(dir / "b" / "metrics.kv"));

  REQUIRE(run(args("p", "baseline+ppt")).code == 0);
  std::set<std::string> names;
  for (const auto& [name, _] : read_checkpoint_raw(dir / "p" / "checkpoint.bin").tensors) names.insert(name);
  ModelConfig expect = load_checkpoint<float>(dir / "p" / "checkpoint.bin").config();
  CHECK(expect.ablation() == Ablation::ppt);
  std::set<std::string> want;
  for (const auto& [name, _] : parameter_shapes(expect)) want.insert(name);
  CHECK(names == want);
  for (const auto& n : names) {
    CHECK(n.find("mlt") == std::string::npos);
    CHECK(n.find("mst") == std::string::npos);
  }
  CHECK(names.count("scale3/psa4/W_v") == 1);
}

TEST_CASE("eval and predict") {
  TempDir dir("cli_eval");
  const auto manifest = synth(dir, "data", "seg");
  REQUIRE(run(cat({"train", "--manifest", manifest, "--out", (dir / "run").string(), "--epochs", "1"}, small_model())).code == 0);
  const std::string ckpt = (dir / "run" / "checkpoint.bin").string();

  const auto ev = run({"eval", "--checkpoint", ckpt, "--manifest", manifest});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("instance_miou") != std::string::npos);

  const auto pr = run({"predict", "--checkpoint", ckpt, "--manifest", manifest, "--out", (dir / "pred").string()});
  REQUIRE(pr.code == 0);
  const auto self = run({"eval", "--checkpoint", ckpt, "--manifest", (dir / "pred" / "manifest.txt").string(), "--out",
                         (dir / "self").string()});
  REQUIRE(self.code == 0);
  const auto kv = slurp(dir / "self" / "metrics.kv");
  CHECK(std::string(kv.begin(), kv.end()).find("instance_miou=1\n") != std::string::npos);

  const auto mismatch = run({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--embed-dim", "8"});
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("embed_dim") != std::string::npos);

  const auto cls_manifest = synth(dir, "cls");
  CHECK(run({"eval", "--checkpoint", ckpt, "--manifest", cls_manifest}).code == 1);
  CHECK(run({"eval", "--checkpoint", (dir / "nope.bin").string(), "--manifest", manifest}).code == 3);
}

TEST_CASE("classification predict writes class indices") {
  TempDir dir("cli_pred");
  const auto manifest = synth(dir, "data");
  REQUIRE(run(cat({"train", "--manifest", manifest, "--out", (dir / "run").string(), "--epochs", "1"}, small_model())).code == 0);
  const auto pr = run({"predict", "--checkpoint", (dir / "run" / "checkpoint.bin").string(), "--manifest", manifest, "--out",
                       (dir / "pred").string(), "--precision", "f64"});
  REQUIRE(pr.code == 0);
  const auto csv = slurp(dir / "pred" / "predictions.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  const auto self = run({"eval", "--checkpoint", (dir / "run" / "checkpoint.bin").string(), "--manifest",
                         (dir / "pred" / "manifest.txt").string()});
  CHECK(self.code == 0);
  CHECK(self.out.find("1.000000") != std::string::npos);
}

TEST_CASE("divergence exits with 2") {
  TempDir dir("cli_div");
  const auto manifest = synth(dir, "data");
  const auto r = run(cat({"train", "--manifest", manifest, "--out", (dir / "run").string(), "--epochs", "30", "--lr", "1e30",
                          "--lr-gamma", "1"},
                         small_model()));
  CHECK(r.code == 2);
  CHECK(r.err.find("epoch") != std::string::npos);
  CHECK(r.err.find("batch") != std::string::npos);
}

TEST_CASE("gradcheck command") {
  const auto a = run({"gradcheck", "--seed", "4"});
  CHECK(a.code == 0);
  CHECK(a.out.find("FAIL") == std::string::npos);
  CHECK(a.out.find("end_to_end") != std::string::npos);
  CHECK(run({"gradcheck", "--seed", "4"}).out == a.out);

  const auto bad = run({"gradcheck", "--seed", "4", "--corrupt", "multihead"});
  CHECK(bad.code != 0);
  std::istringstream lines(bad.out);
  std::string line;
  while (std::getline(lines, line)) {
    const bool failed = line.find("FAIL") != std::string::npos;
    const bool corrupted = line.rfind("multihead", 0) == 0;
    CHECK(failed == corrupted);
  }
  CHECK(run({"gradcheck", "--corrupt", "nonsense"}).code == 1);
}
