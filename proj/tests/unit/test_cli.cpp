#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cloud/cli.hpp"
#include "cloud/io.hpp"

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cloud::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cloud_test_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
  const auto r = run({"fly"});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, NoArgumentsIsUsageError) { EXPECT_EQ(run({}).code, 2); }

TEST_F(CliTest, BadFlagValueIsUsageError) {
  EXPECT_EQ(run({"collect", "--env", "foggy", "--out", path("d.txt")}).code, 2);
  EXPECT_EQ(run({"train", "--data", path("missing.txt"), "--variant", "xyz", "--out", path("m")}).code, 2);
}

TEST_F(CliTest, CollectIsDeterministic) {
  const std::vector<std::string> base{"collect", "--trajectories", "1", "--length", "20", "--seed", "1", "--out"};
  auto a = base, b = base;
  a.push_back(path("a.txt"));
  b.push_back(path("b.txt"));
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(read_file(path("a.txt")), read_file(path("b.txt")));
  EXPECT_EQ(cloud::io::load_dataset(path("a.txt")).records.size(), 20u);
}

TEST_F(CliTest, TrainPlanImitateEval) {
  ASSERT_EQ(run({"collect", "--trajectories", "4", "--length", "5", "--seed", "2", "--out", path("d.txt")}).code, 0);
  ASSERT_EQ(run({"train", "--data", path("d.txt"), "--epochs", "1", "--out", path("fi")}).code, 0);
  EXPECT_TRUE(fs::exists(path("fi/checkpoint.bin")));
  EXPECT_TRUE(fs::exists(path("fi/loss.csv")));

  const auto plan = run({"plan", "--checkpoint", path("fi/checkpoint.bin"), "--goal", "c", "--episodes", "1",
                         "--frames", path("frames"), "--out", path("plan.json")});
  EXPECT_EQ(plan.code, 0) << plan.err;
  EXPECT_TRUE(fs::exists(path("plan.json")));
  EXPECT_FALSE(fs::is_empty(path("frames")));
  const auto imit = run({"imitate", "--checkpoint", path("fi/checkpoint.bin"), "--episodes", "1", "--out",
                         path("imit.json")});
  EXPECT_EQ(imit.code, 0) << imit.err;

  ASSERT_EQ(run({"train", "--data", path("d.txt"), "--epochs", "1", "--variant", "f", "--out", path("f")}).code, 0);
  const auto mismatch = run({"imitate", "--checkpoint", path("f/checkpoint.bin"), "--out", path("x")});
  EXPECT_EQ(mismatch.code, 1);
  EXPECT_NE(mismatch.err.find("variant-mismatch"), std::string::npos) << mismatch.err;
}

TEST_F(CliTest, MissingDataFileIsRuntimeError) {
  const auto r = run({"train", "--data", path("nope.txt"), "--out", path("m")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST_F(CliTest, UnknownConfigKeyIsConfigError) {
  cloud::io::write_text(path("c.json"), R"({"sead": 3})");
  const auto r = run({"collect", "--config", path("c.json"), "--out", path("d.txt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sead"), std::string::npos) << r.err;
}

TEST_F(CliTest, GradcheckPasses) {
  const auto r = run({"gradcheck", "--seed", "7"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  for (const char* name : {"encode_state", "encode_action", "forward_predict", "inverse_predict",
                           "forward_nce_loss", "inverse_nce_loss", "decoder_loss", "baseline_regression_loss"}) {
    EXPECT_NE(r.out.find(name), std::string::npos) << name;
  }
}

}  // namespace
