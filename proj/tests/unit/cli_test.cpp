#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "app.hpp"
#include "tscr/pipeline.hpp"

namespace tscr::app {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

// Prepares the bundled sample corpus once per test in a scratch directory.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tscr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    data_ = (dir_ / "data").string();
    const auto r = run({"prepare", "--dialogs", sample("dialogs.jsonl"), "--entities",
                        sample("entities.tsv"), "--out", data_});
    ASSERT_EQ(r.code, kOk) << r.err;
    config_ = (dir_ / "config.txt").string();
    std::ofstream(config_) << "dim = 8\nlayers = 1\nheads = 2\nmax_len = 24\n"
                              "batch_size = 16\nepochs = 2\nkg_epochs = 3\nseed = 3\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string sample(const std::string& name) { return (fs::path(TSCR_SAMPLE_DIR) / name).string(); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  std::string data_, config_;
};

TEST_F(Cli, PrepareWritesSplits) {
  for (const char* f : {"entities.tsv", "train.jsonl", "valid.jsonl", "test.jsonl", "prepare.json"})
    EXPECT_TRUE(fs::exists(fs::path(data_) / f)) << f;
  const auto counts = nlohmann::json::parse(slurp(fs::path(data_) / "prepare.json"));
  EXPECT_GT(counts["train"].get<int>(), 0);
}

TEST_F(Cli, FullPipeline) {
  auto r = run({"pretrain-kg", "--data", data_, "--triples", sample("triples.tsv"), "--config",
                config_, "--out", path("kg.emb")});
  ASSERT_EQ(r.code, kOk) << r.err;
  r = run({"augment", "--data", data_, "--triples", sample("triples.tsv"), "--out", path("aug.jsonl")});
  ASSERT_EQ(r.code, kOk) << r.err;
  r = run({"train", "--config", config_, "--data", data_, "--embeddings", path("kg.emb"),
           "--augmented", path("aug.jsonl"), "--out", path("m.ckpt"), "--log", path("train.log")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(fs::exists(path("m.ckpt") + ".meta"));
  EXPECT_NE(slurp(path("train.log")).find("epoch 2 loss"), std::string::npos);
  r = run({"eval", "--checkpoint", path("m.ckpt"), "--data", data_, "--report", path("r.json")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("R@10"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(path("r.json")));
  EXPECT_GT(report["overall"]["count"].get<int>(), 0);
}

TEST_F(Cli, MissingCheckpointIsADataError) {
  const auto r = run({"eval", "--checkpoint", path("missing.ckpt"), "--data", data_});
  EXPECT_EQ(r.code, kDataError);
  EXPECT_NE(r.err.find("missing.ckpt"), std::string::npos) << r.err;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kUsage);
  EXPECT_EQ(run({"eval", "--checkpoint", "x", "--bogus"}).code, kUsage);
  EXPECT_EQ(run({"train", "--data", data_, "--out", path("m.ckpt")}).code, kUsage);  // no --config
  std::ofstream(path("bad.txt")) << "learnig_rate = 0.1\n";
  const auto r = run({"train", "--config", path("bad.txt"), "--data", data_, "--out", path("m.ckpt")});
  EXPECT_EQ(r.code, kUsage);
  EXPECT_NE(r.err.find("learnig_rate"), std::string::npos) << r.err;
  EXPECT_EQ(run({"--help"}).code, kOk);
}

TEST_F(Cli, MissingEmbeddingsIsADataError) {
  const auto r = run({"train", "--config", config_, "--data", data_, "--embeddings", path("none.emb"),
                      "--augmented", path("none.jsonl"), "--out", path("m.ckpt")});
  EXPECT_EQ(r.code, kDataError) << r.err;
}

TEST_F(Cli, ZeroHopAugmentationCopiesTheInput) {
  const auto r = run({"augment", "--data", data_, "--triples", sample("triples.tsv"), "--max-hops", "0",
                      "--out", path("same.jsonl")});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_NE(r.out.find("augmented 0 sequences"), std::string::npos) << r.out;
  // The augmented dump carries per-element flags; the sequences themselves match.
  const auto prepared = load_prepared(data_);
  const auto copy = read_sequences(path("same.jsonl"), prepared.vocab);
  ASSERT_EQ(copy.size(), prepared.train.size());
  for (std::size_t i = 0; i < copy.size(); ++i) {
    EXPECT_EQ(copy[i].dialog_id, prepared.train[i].dialog_id);
    EXPECT_EQ(copy[i].elements, prepared.train[i].elements);
    EXPECT_EQ(copy[i].ground_truth, prepared.train[i].ground_truth);
    EXPECT_TRUE(copy[i].inserted.empty());
  }
}

TEST_F(Cli, TrainingIsReproducible) {
  std::string logs[2];
  for (int i = 0; i < 2; ++i) {
    const auto r = run({"train", "--config", config_, "--variant", "tscr", "--seed", "7", "--data", data_,
                        "--out", path("m" + std::to_string(i) + ".ckpt")});
    ASSERT_EQ(r.code, kOk) << r.err;
    logs[i] = r.out.substr(0, r.out.find("wrote"));
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(slurp(path("m0.ckpt")), slurp(path("m1.ckpt")));
}

TEST(ResolvePort, FlagThenEnvironmentThenDefault) {
  ::unsetenv("TSCR_PORT");
  EXPECT_EQ(resolve_port(0), 8080);
  ::setenv("TSCR_PORT", "9123", 1);
  EXPECT_EQ(resolve_port(0), 9123);
  EXPECT_EQ(resolve_port(7000), 7000);
  ::unsetenv("TSCR_PORT");
}

}  // namespace
}  // namespace tscr::app
