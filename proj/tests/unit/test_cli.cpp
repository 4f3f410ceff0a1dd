#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "cli.hpp"
#include "fixtures.hpp"
#include "resee/dataset_builder.hpp"
#include "resee/stats.hpp"

using resee::testing::data_path;
using resee::testing::read_text;
using resee::testing::scratch_dir;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  Result r;
  r.code = resee::cli::run(args, in, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> build_args(const std::filesystem::path& out) {
  return {"build-data",  "--dialogues", data_path("copy_dialogues.jsonl").string(),
          "--captions",  data_path("captions.jsonl").string(),
          "--lexicon",   data_path("nouns.txt").string(),
          "--ner",       data_path("ner.txt").string(),
          "--format",    "dd",
          "--cache-dir", (out / "cache").string(),
          "--out",       out.string(),
          "--set",       "data.min_freq=1",
          "--log-level", "warn"};
}

// One dataset shared by the tests below.
const std::filesystem::path& dataset_dir() {
  static const auto dir = [] {
    auto d = scratch_dir("cli_data");
    const auto r = run(build_args(d));
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

std::vector<std::string> train_args(const std::filesystem::path& out, const std::string& variant) {
  return {"train", "--data", (dataset_dir() / "dataset.jsonl").string(), "--out", out.string(), "--variant", variant,
          "--steps", "4", "--set", "train.batch_size=2", "--log-level", "warn"};
}

}  // namespace

TEST(Cli, BuildDataWritesArtifacts) {
  const auto& dir = dataset_dir();
  for (const char* f : {"dataset.jsonl", "retrieval.jsonl", "manifest.jsonl", "build_report.json", "run_config.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_EQ(resee::data::load_examples(dir / "dataset.jsonl").size(), 32u);
}

TEST(Cli, StatsMatchesLibraryReport) {
  const auto path = dataset_dir() / "dataset.jsonl";
  const auto r = run({"stats", "--data", path.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, resee::corpus::format_stats_report(resee::corpus::compute_stats(resee::data::load_examples(path))));
  const auto j = run({"stats", "--data", path.string(), "--json"});
  ASSERT_EQ(j.code, 0);
  EXPECT_NO_THROW((void)nlohmann::json::parse(j.out));
}

TEST(Cli, TrainGenerateEvaluate) {
  for (const std::string variant : {"shared", "separate"}) {
    const auto dir = scratch_dir("cli_" + variant);
    const auto t = run(train_args(dir, variant));
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "model.ckpt"));
    EXPECT_EQ(read_text(dir / "loss_curve.csv").rfind("step,lr,loss\n", 0), 0u);

    const auto g = run({"generate", "--ckpt", (dir / "model.ckpt").string(), "--input",
                        (dataset_dir() / "dataset.jsonl").string(), "--out", (dir / "gen").string(), "--set",
                        "decode.max_len=4"});
    ASSERT_EQ(g.code, 0) << g.err;
    const auto hyps = read_text(dir / "gen" / "hypotheses.txt");
    EXPECT_EQ(std::count(hyps.begin(), hyps.end(), '\n'), 32);

    const auto e = run({"evaluate", "--ckpt", (dir / "model.ckpt").string(), "--data",
                        (dataset_dir() / "dataset.jsonl").string(), "--vectors", data_path("word_vectors.txt").string(),
                        "--out", (dir / "eval").string(), "--set", "decode.max_len=4"});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto m = nlohmann::json::parse(read_text(dir / "eval" / "metrics.json"));
    EXPECT_GT(m["ppl"].get<double>(), 1.0);
    EXPECT_EQ(m["n_pairs"].get<int>(), 32);
  }
}

TEST(Cli, RunConfigReproducesTraining) {
  const auto a = scratch_dir("cli_repro_a");
  const auto b = scratch_dir("cli_repro_b");
  ASSERT_EQ(run(train_args(a, "separate")).code, 0);
  const auto r = run({"train", "--config", (a / "run_config.json").string(), "--out", b.string(), "--log-level", "warn"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text(a / "model.ckpt"), read_text(b / "model.ckpt"));
  const auto cfg = nlohmann::json::parse(read_text(a / "run_config.json"));
  EXPECT_EQ(cfg["train"]["total_steps"].get<int>(), 4);
  EXPECT_EQ(cfg["model"]["variant"].get<std::string>(), "separate");
}

TEST(Cli, ChatReadsUntilEof) {
  const auto dir = scratch_dir("cli_chat");
  ASSERT_EQ(run(train_args(dir, "shared")).code, 0);
  const auto r = run({"chat", "--ckpt", (dir / "model.ckpt").string(), "--set", "decode.max_len=3"},
                     "tiny apple\n\nquiet river\n");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_GE(std::count(r.out.begin(), r.out.end(), '\n'), 2);
}

TEST(Cli, ExitCodes) {
  const auto usage = run({"stats", "--no-such-flag"});
  EXPECT_EQ(usage.code, 2);
  EXPECT_NE(usage.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"help-me"}).code, 2);

  const auto missing = run({"stats"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(missing.err.rfind("error: cli: ", 0), 0u) << missing.err;

  const auto bad_set = run({"stats", "--data", "x", "--set", "model.no_such_key=1"});
  EXPECT_EQ(bad_set.code, 1);
  EXPECT_NE(bad_set.err.find("no_such_key"), std::string::npos);

  const auto bad_file = run({"stats", "--data", (scratch_dir("cli_missing") / "none.jsonl").string()});
  EXPECT_EQ(bad_file.code, 1);
  EXPECT_EQ(bad_file.err.rfind("error: ", 0), 0u);
}
