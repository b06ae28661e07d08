#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"

namespace {

using hmg::test::TempDir;
namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd = std::string(HMG_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                          (scratch / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

class Cli : public ::testing::Test {
 protected:
  TempDir dir{"cli"};
  fs::path tiny_config() {
    const fs::path p = dir.path / "tiny_synth.json";
    write_text(p, R"({"users": 60, "images": 40, "connects": 150, "views": 120, "user_dim": 16, "image_dim": 16,
                      "comment_dim": 16, "seed": 3})");
    return p;
  }
  fs::path train_config(const std::string& extra = "") {
    const fs::path p = dir.path / "train.json";
    write_text(p, R"({"model": {"user_dim": 16, "image_dim": 16, "comment_dim": 16, "hidden_dim": 8,
                                "num_layers": 2}, "train": {"epochs": 2, "folds": 2)" +
                      extra + "}}");
    return p;
  }
};

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("synth", dir.path).code, 2);
  EXPECT_EQ(cli("frobnicate", dir.path).code, 2);
  EXPECT_EQ(cli("", dir.path).code, 2);
  write_text(dir.path / "typo.json", R"({"scael": 0.1})");
  EXPECT_EQ(cli("synth --out " + (dir.path / "b").string() + " --config " + (dir.path / "typo.json").string(), dir.path).code,
            2);
  EXPECT_EQ(cli("synth --out " + (dir.path / "b").string() + " --config " + (dir.path / "missing.json").string(), dir.path)
                .code,
            2);
}

TEST_F(Cli, UnwritableOutputExitsThree) {
  write_text(dir.path / "file", "x");
  const CliRun r = cli("synth --config " + tiny_config().string() + " --out " + (dir.path / "file" / "bundle").string(),
                    dir.path);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(cli("describe --data " + (dir.path / "nope").string(), dir.path).code, 3);
}

TEST_F(Cli, SynthDescribeTrainEvalRoundTrip) {
  const fs::path bundle = dir.path / "bundle";
  ASSERT_EQ(cli("synth --config " + tiny_config().string() + " --out " + bundle.string(), dir.path).code, 0);
  const CliRun d = cli("describe --json --data " + bundle.string(), dir.path);
  ASSERT_EQ(d.code, 0);
  const auto j = nlohmann::json::parse(d.out);
  EXPECT_EQ(j["counts"]["users"], 60);
  EXPECT_EQ(j["counts"]["views"], 120);

  const fs::path model = dir.path / "m.hmgm", report = dir.path / "r.json";
  const CliRun t = cli("train --data " + bundle.string() + " --config " + train_config().string() + " --model " +
                        model.string() + " --report " + report.string(),
                    dir.path);
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_NE(t.out.find("±"), std::string::npos);
  std::ifstream rin(report);
  const auto rj = nlohmann::json::parse(rin);
  EXPECT_EQ(rj["folds"].size(), 2u);

  const CliRun e = cli("eval --json --data " + bundle.string() + " --model " + model.string(), dir.path);
  ASSERT_EQ(e.code, 0);
  EXPECT_EQ(nlohmann::json::parse(e.out)["split"], "test");
  EXPECT_EQ(cli("eval --split sideways --data " + bundle.string() + " --model " + model.string(), dir.path).code, 2);
  EXPECT_EQ(cli("train --ablate no-graph --data " + bundle.string() + " --config " + train_config().string(), dir.path)
                .code,
            2);
  EXPECT_EQ(cli("train --data " + bundle.string() + " --config " + train_config(R"(, "epoks": 3)").string(), dir.path)
                .code,
            2);

  // a model built for other feature dims
  const fs::path wide = dir.path / "wide";
  write_text(dir.path / "wide.json", R"({"users": 60, "images": 40, "connects": 150, "views": 120, "user_dim": 32,
                                         "image_dim": 32, "comment_dim": 16})");
  ASSERT_EQ(cli("synth --config " + (dir.path / "wide.json").string() + " --out " + wide.string(), dir.path).code, 0);
  EXPECT_EQ(cli("eval --data " + wide.string() + " --model " + model.string(), dir.path).code, 3);

  // corrupt model file
  write_text(dir.path / "junk.hmgm", "not a model");
  EXPECT_EQ(cli("eval --data " + bundle.string() + " --model " + (dir.path / "junk.hmgm").string(), dir.path).code, 3);
}

TEST_F(Cli, DivergentTrainingExitsFour) {
  const fs::path bundle = dir.path / "bundle";
  ASSERT_EQ(cli("synth --config " + tiny_config().string() + " --out " + bundle.string(), dir.path).code, 0);
  const fs::path cfg = dir.path / "hot.json";
  write_text(cfg, R"({"model": {"user_dim": 16, "image_dim": 16, "comment_dim": 16, "hidden_dim": 8, "num_layers": 2},
                      "train": {"epochs": 3, "folds": 2, "base_lr": 1e300}})");
  EXPECT_EQ(cli("train --data " + bundle.string() + " --config " + cfg.string(), dir.path).code, 4);
}

TEST_F(Cli, GradcheckPassesAndCatchesCorruption) {
  const CliRun ok = cli("gradcheck --json", dir.path);
  EXPECT_EQ(ok.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(ok.out)["passed"].get<bool>());
  EXPECT_EQ(cli("gradcheck --corrupt-grad", dir.path).code, 4);
}

}  // namespace
