#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "patch2loc/cli.hpp"
#include "patch2loc/config.hpp"
#include "patch2loc/error.hpp"
#include "patch2loc/volume_io.hpp"

using namespace patch2loc;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "patch2loc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

}  // namespace

TEST_CASE("config merge and validation") {
  RunConfig cfg;
  CHECK(cfg.model.latent_dim == 64);
  CHECK(cfg.patch.r == 0.125);
  cfg.merge({{"train", {{"n_batches", 12}, {"beta", 0.25}}}, {"seed", 9}, {"patch", {{"stride", 2}}}});
  CHECK(cfg.train.n_batches == 12);
  CHECK(cfg.train.beta == 0.25);
  CHECK(cfg.seed == 9);
  CHECK(cfg.patch.stride == 2);
  CHECK_NOTHROW(cfg.validate());

  CHECK_THROWS_AS(cfg.merge({{"train", {{"n_batchez", 1}}}}), ValidationError);
  CHECK_THROWS_AS(cfg.merge({{"bogus", {{"a", 1}}}}), ValidationError);
  CHECK_THROWS_AS(cfg.merge({{"train", {{"n_batches", "many"}}}}), ValidationError);

  RunConfig bad;
  bad.merge({{"train", {{"beta", 0.0}}}});
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  RunConfig full;
  full.merge({{"model", {{"preset", "full"}}}});
  CHECK(full.model.latent_dim == 512);

  // Round trip through the resolved form.
  RunConfig again;
  again.merge(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());
}

TEST_CASE("toml and json config files") {
  const auto dir = testing::temp_dir("cfg");
  write(dir / "a.toml", "seed = 4\n[train]\nn_batches = 33\nlearning_rate = 0.005\n[patch]\nr = 0.25\n");
  RunConfig cfg;
  cfg.merge(read_config_file(dir / "a.toml"));
  CHECK(cfg.seed == 4);
  CHECK(cfg.train.n_batches == 33);
  CHECK(cfg.train.learning_rate == doctest::Approx(0.005));
  CHECK(cfg.patch.r == 0.25);

  write(dir / "b.json", R"({"scoring": {"chunk_size": 64}, "eval": {"mask_only": false}})");
  cfg.merge(read_config_file(dir / "b.json"));
  CHECK(cfg.scoring.chunk_size == 64);
  CHECK_FALSE(cfg.mask_only);

  write(dir / "broken.toml", "[train\nn = ");
  CHECK_THROWS_AS(read_config_file(dir / "broken.toml"), ValidationError);
  CHECK_THROWS(read_config_file(dir / "missing.json"));
  fs::remove_all(dir);
}

TEST_CASE("environment overrides paths only") {
  ::setenv("PATCH2LOC_DATA_DIR", "/tmp/env-data", 1);
  ::setenv("PATCH2LOC_CHECKPOINT", "/tmp/env.ckpt", 1);
  RunConfig cfg;
  apply_environment(cfg);
  CHECK(cfg.paths.data == fs::path("/tmp/env-data"));
  CHECK(cfg.paths.checkpoint == fs::path("/tmp/env.ckpt"));
  CHECK_FALSE(cfg.paths.output.has_value());
  ::unsetenv("PATCH2LOC_DATA_DIR");
  ::unsetenv("PATCH2LOC_CHECKPOINT");
}

TEST_CASE("cli usage and error reporting") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--version"}).code == 0);
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);

  const auto dir = testing::temp_dir("cli_err");
  write(dir / "beta.toml", "[train]\nbeta = 0.0\n");
  auto r = run({"train", "--config", (dir / "beta.toml").string(), "--data", dir.string(), "--out",
                (dir / "o").string(), "--json"});
  CHECK(r.code == 1);
  const auto j = nlohmann::json::parse(r.err);
  CHECK(j["error"] == "validation_error");
  CHECK(j["exit_code"] == 1);
  CHECK(j["message"].get<std::string>().find("beta") != std::string::npos);

  r = run({"train", "--beta", "1.5", "--data", dir.string(), "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("error:") != std::string::npos);

  write(dir / "unknown.json", R"({"train": {"batches": 3}})");
  CHECK(run({"phantom", "--config", (dir / "unknown.json").string(), "--out", (dir / "p").string()}).code == 1);

  r = run({"infer", "--checkpoint", (dir / "nope.ckpt").string(), "--data", dir.string(), "--out",
           (dir / "s").string(), "--json"});
  CHECK(r.code == 2);
  CHECK(nlohmann::json::parse(r.err)["error"] == "io_error");
  fs::remove_all(dir);
}

TEST_CASE("phantom, train, infer, eval and plot workflow") {
  const auto dir = testing::temp_dir("cli_flow");
  const auto healthy = dir / "healthy";
  const auto lesion = dir / "lesion";

  auto r = run({"phantom", "--n", "6", "--lesions", "0", "--extents", "96", "96", "8", "--seed", "3", "--out",
                healthy.string(), "--json"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["subjects"] == 6);
  CHECK(fs::exists(healthy / "manifest.json"));
  CHECK(fs::exists(healthy / "phantom_000.json"));

  // Existing outputs are protected unless --force is given.
  r = run({"phantom", "--n", "6", "--lesions", "0", "--extents", "96", "96", "8", "--out", healthy.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("--force") != std::string::npos);

  // Environment variables supply the output path.
  ::setenv("PATCH2LOC_OUTPUT_DIR", lesion.string().c_str(), 1);
  r = run({"phantom", "--n", "2", "--lesions", "2", "--extents", "96", "96", "32", "--seed", "8", "--prefix", "les"});
  ::unsetenv("PATCH2LOC_OUTPUT_DIR");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(lesion / "les_001_gt.json"));

  r = run({"train", "--data", healthy.string(), "--out", (dir / "model").string(), "--batches", "20", "--patches",
           "16", "--validation-every", "10", "--fold", "0", "--seed", "1", "--json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto ckpt = dir / "model" / "fold0" / "best.ckpt";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(dir / "model" / "fold0" / "train_log.csv"));
  CHECK(fs::exists(dir / "model" / "fold0" / "landmarks.json"));
  CHECK(run({"train", "--data", healthy.string(), "--out", (dir / "model").string(), "--fold", "x"}).code == 1);

  const auto scores = dir / "scores";
  r = run({"infer", "--checkpoint", ckpt.string(), "--data", lesion.string(), "--out", scores.string(), "--stride",
           "8", "--png", "--png-every", "16", "--threads", "2", "--json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto grid = load_grid(scores / "les_000_score");
  CHECK(grid.extents == Extents{96, 96, 32});
  CHECK(fs::exists(scores / "les_000_error.json"));
  CHECK(fs::exists(scores / "png" / "les_000_slice16.png"));

  r = run({"eval", "--data", lesion.string(), "--scores", scores.string(), "--out", (dir / "eval").string(),
           "--checkpoint", ckpt.string(), "--export-patch-stats", "--json"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["report"]["per_subject"].size() == 2);
  CHECK(fs::exists(dir / "eval" / "eval_report.csv"));
  CHECK(fs::exists(dir / "eval" / "patch_stats.csv"));

  // Healthy subjects carry an empty ground truth and are excluded, not failed.
  r = run({"infer", "--checkpoint", ckpt.string(), "--data", healthy.string(), "--out", (dir / "hs").string(), "--stride", "8"});
  REQUIRE(r.code == 0);
  r = run({"eval", "--data", healthy.string(), "--scores", (dir / "hs").string(), "--json"});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["report"]["excluded"].size() == 6);

  r = run({"plot", "--volume", (lesion / "les_000.json").string(), "--mask", (lesion / "les_000_mask.json").string(),
           "--scores", (scores / "les_000_score.json").string(), "--gt", (lesion / "les_000_gt.json").string(),
           "--slice", "10", "--slice", "20", "--out", (dir / "plots").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "plots" / "les_000_slice10.png"));
  CHECK(fs::exists(dir / "plots" / "les_000_slice20.png"));

  // A volume tagged with another modality is refused by the checkpoint.
  r = run({"infer", "--checkpoint", ckpt.string(), "--volume", (lesion / "les_000.json").string(), "--mask",
           (lesion / "les_000_mask.json").string(), "--modality", "T2", "--out", (dir / "t2").string(), "--json"});
  CHECK(r.code == 1);
  CHECK(nlohmann::json::parse(r.err)["error"] == "modality_mismatch");
  fs::remove_all(dir);
}
