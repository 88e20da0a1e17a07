#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "corpipe/corefud_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int status = -1;
  std::string out;
};

Result run(const std::string& args) {
  std::string cmd = std::string(CORPIPE_BINARY) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("corpipe-cli-" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    ASSERT_EQ(run("synth --documents 4 --sentences 3 --empty 0.2 --seed 5 -o " + path("gold.conllu")).status, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, SynthWritesParsableCorpusAndManifest) {
  auto docs = corpipe::io::parse_corpus(slurp(path("gold.conllu")), "gold");
  EXPECT_EQ(docs.size(), 4u);
  EXPECT_TRUE(fs::exists(path("gold.conllu.manifest.json")));
}

TEST_F(Cli, ScoringAFileAgainstItselfGivesHundred) {
  auto r = run("score -k " + path("gold.conllu") + " -r " + path("gold.conllu") + " --json");
  ASSERT_EQ(r.status, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["datasets"][0]["conll"].get<double>(), 100.0);
  auto table = run("score -k " + path("gold.conllu") + " -r " + path("gold.conllu"));
  EXPECT_NE(table.out.find("100.00"), std::string::npos);
}

TEST_F(Cli, TagEncodeDecodeRoundTrip) {
  auto r = run("tags encode -i " + path("gold.conllu") + " | " + std::string(CORPIPE_BINARY) + " tags decode -i -");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(r.out, slurp(path("gold.conllu")));
  auto vocab = run("tags vocab -i " + path("gold.conllu"));
  EXPECT_EQ(vocab.status, 0);
  EXPECT_NE(vocab.out.find("0:"), std::string::npos);
}

TEST_F(Cli, ConvertSurfaceThenRestore) {
  ASSERT_EQ(run("convert -i " + path("gold.conllu") + " -o " + path("surf.conllu") + " --surface-empty").status, 0);
  auto surfaced = slurp(path("surf.conllu"));
  EXPECT_EQ(surfaced.find(".1\t"), std::string::npos);
  EXPECT_NE(surfaced.find("\t\xE2\x88\x85"), std::string::npos);
  auto r = run("convert -i " + path("surf.conllu") + " --restore-empty");
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(r.out, slurp(path("gold.conllu")));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
  EXPECT_EQ(run("score -k " + path("missing.conllu") + " -r " + path("missing.conllu")).status, 1);
  EXPECT_EQ(run("mix --dataset a=10 --strategy zipf").status, 2);
  std::ofstream(path("broken.conllu")) << "1\ta\n\n";
  EXPECT_EQ(run("convert -i " + path("broken.conllu")).status, 1);
}

TEST_F(Cli, MixReportsLogarithmicWeights) {
  auto r = run("mix --dataset a=457 --dataset b=40000");
  ASSERT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("weight 1"), std::string::npos);
  EXPECT_NE(r.out.find("weight 5"), std::string::npos);
  auto draws = run("mix --dataset a=457 --dataset b=40000 --draws 20 --seed 3");
  EXPECT_EQ(draws.out, run("mix --dataset a=457 --dataset b=40000 --draws 20 --seed 3").out);
}

TEST_F(Cli, SelftestPasses) {
  auto r = run("selftest --seed 2");
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST_F(Cli, TrainPredictScoreAndJobsAreDeterministic) {
  std::string out = path("run");
  auto t = run("train --train " + path("gold.conllu") + " --preset toy-overfit --dim 8 --heads 2 --layers 1 --epochs 2 "
               "--batches-per-epoch 3 --output " + out);
  ASSERT_EQ(t.status, 0);
  EXPECT_TRUE(fs::exists(out + "/best.ckpt"));
  EXPECT_TRUE(fs::exists(out + "/final.ckpt"));
  auto manifest = nlohmann::json::parse(slurp(out + "/manifest.json"));
  EXPECT_EQ(manifest["config"]["model"]["dim"], 8);
  ASSERT_EQ(run("predict -m " + out + "/best.ckpt -i " + path("gold.conllu") + " -o " + path("p1.conllu")).status, 0);
  ASSERT_EQ(run("predict -m " + out + "/best.ckpt -i " + path("gold.conllu") + " -o " + path("p3.conllu") + " -j 3").status, 0);
  EXPECT_EQ(slurp(path("p1.conllu")), slurp(path("p3.conllu")));
  EXPECT_NO_THROW(corpipe::io::parse_corpus(slurp(path("p1.conllu")), "p"));
  EXPECT_EQ(run("score -k " + path("gold.conllu") + " -r " + path("p1.conllu")).status, 0);
}
