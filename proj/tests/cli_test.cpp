#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "cesr_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Runs the CLI inside workdir(); stdout+stderr go to `log`.
int run(const std::string& args, std::string* log = nullptr) {
  const auto out = workdir() / "last.log";
  const std::string cmd = "cd '" + workdir().string() + "' && '" + std::string(CESR_CLI_PATH) + "' " + args + " > '" +
                          out.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (log) {
    std::ifstream in(out);
    *log = std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(workdir() / p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t u32_at(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, GenIsDeterministicAndHeaderMatchesConfig) {
  ASSERT_EQ(run("gen --profile tdl-a --snr 10 --n 100 --seed 7 --out g1"), 0);
  ASSERT_EQ(run("gen --profile tdl-a --snr 10 --n 100 --seed 7 --out g2"), 0);
  const auto a = slurp("g1/tdl-a_train_snr10.chds");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, slurp("g2/tdl-a_train_snr10.chds"));
  EXPECT_EQ(a.substr(0, 4), "CHDS");
  EXPECT_EQ(u32_at(a, 8), 100u);
  EXPECT_EQ(u32_at(a, 12), 128u);
  EXPECT_EQ(u32_at(a, 16), 28u);
  EXPECT_EQ(u32_at(a, 20), 15u);
  EXPECT_EQ(u32_at(a, 24), 6u);
  EXPECT_NE(slurp("g1/gen.config.ini").find("seed = 7"), std::string::npos);
  EXPECT_NE(slurp("g1/gen.run.txt").find("git_describe = "), std::string::npos);
}

TEST(Cli, GenRefusesOverwriteWithoutForce) {
  ASSERT_EQ(run("gen --profile tdl-d --n 5 --out g3"), 0);
  EXPECT_EQ(run("gen --profile tdl-d --n 5 --out g3"), 1);
  EXPECT_EQ(run("gen --profile tdl-d --n 5 --out g3 --force"), 0);
}

TEST(Cli, GenRejectsEmptyDataset) {
  EXPECT_EQ(run("gen --profile tdl-a --n 0 --out g4"), 2);
  EXPECT_FALSE(fs::exists(workdir() / "g4/tdl-a_train_snr10.chds"));
  EXPECT_EQ(run("gen --profile tdl-q --n 3 --out g4"), 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("gen --precision f16"), 1);
  EXPECT_EQ(run("gen --set train.bogus=1 --n 1"), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, StagedTrainingSmokeRunIsQuickAndDeterministic) {
  ASSERT_EQ(run("gen --profile tdl-a --n 64 --out s"), 0);
  ASSERT_EQ(run("gen --profile tdl-d --n 64 --out s"), 0);
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(run("train --data s/tdl-a_train_snr10.chds --epochs 1 --out t1"), 0);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
  ASSERT_EQ(run("train --data s/tdl-a_train_snr10.chds --epochs 1 --out t2"), 0);
  EXPECT_EQ(slurp("t1/model.dasr"), slurp("t2/model.dasr"));
  EXPECT_EQ(slurp("t1/loss.csv"), slurp("t2/loss.csv"));
  EXPECT_EQ(slurp("t1/loss.csv").substr(0, 30), "epoch,loss,ewc_loss,total_loss");

  std::string log;
  EXPECT_EQ(run("train-cl --model t1/model.dasr --data s/tdl-d_train_snr10.chds --epochs 1 --out c1", &log), 1);
  EXPECT_NE(log.find("fisher"), std::string::npos) << log;
  EXPECT_FALSE(fs::exists(workdir() / "c1/model.dasr"));

  ASSERT_EQ(run("fisher --model t1/model.dasr --data s/tdl-a_train_snr10.chds --out f1 --check"), 0);
  EXPECT_EQ(slurp("f1/fisher.fish").substr(0, 4), "FISH");
  EXPECT_EQ(lines(slurp("f1/fisher_summary.csv")), 17u);
  ASSERT_EQ(run("train-cl --model t1/model.dasr --data s/tdl-d_train_snr10.chds --fisher f1/fisher.fish --lambda 10 "
                "--epochs 1 --out c1"),
            0);
  ASSERT_EQ(run("train-cl --model t1/model.dasr --data s/tdl-d_train_snr10.chds --fisher f1/fisher.fish --lambda 10 "
                "--epochs 1 --out c2"),
            0);
  EXPECT_EQ(slurp("c1/model.dasr"), slurp("c2/model.dasr"));
  ASSERT_EQ(run("train-multitask --data s/tdl-a_train_snr10.chds s/tdl-d_train_snr10.chds --epochs 1 --out m1"), 0);
  ASSERT_EQ(run("train --model t1/model.dasr --data s/tdl-d_train_snr10.chds --epochs 1 --out n1"), 0);

  ASSERT_EQ(run("report-forgetting --post-task1 t1/model.dasr --naive n1/model.dasr --cl c1/model.dasr "
                "--multitask m1/model.dasr --mc 4 --out r1"),
            0);
  // 4 schemes x 3 eval sets x 7 SNR points.
  EXPECT_EQ(lines(slurp("r1/forgetting.csv")), 1u + 4 * 3 * 7);
  EXPECT_EQ(lines(slurp("r1/retention.csv")), 1u + 7);
  ASSERT_EQ(run("report-forgetting --post-task1 t1/model.dasr --naive n1/model.dasr --cl c1/model.dasr "
                "--multitask m1/model.dasr --mc 4 --out r2"),
            0);
  EXPECT_EQ(slurp("r1/forgetting.csv"), slurp("r2/forgetting.csv"));
}

TEST(Cli, DoublePrecisionTraining) {
  ASSERT_EQ(run("gen --profile tdl-a --n 8 --out p"), 0);
  EXPECT_EQ(run("train --data p/tdl-a_train_snr10.chds --epochs 1 --batch-size 4 --precision f64 --out p64"), 0);
  EXPECT_NE(slurp("p64/train.config.ini").find("precision = f64"), std::string::npos);
}

TEST(Cli, EvalBaselineNeedsNoCheckpoint) {
  ASSERT_EQ(run("eval --scheme ls --profile tdl-a --mc 10 --out e1"), 0);
  const auto csv = slurp("e1/eval_ls.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scheme,profile,snr_db,nmse_linear,nmse_db,mc,seed");
  EXPECT_EQ(lines(csv), 1u + 6);
  ASSERT_EQ(run("eval --scheme ls --profile tdl-a --mc 10 --out e2"), 0);
  EXPECT_EQ(csv, slurp("e2/eval_ls.csv"));
  ASSERT_EQ(run("eval --scheme ls --profile tdl-a --profile tdl-d --snr-list 5,10 --mc 10 --out e3"), 0);
  EXPECT_EQ(lines(slurp("e3/eval_ls.csv")), 1u + 2);
  EXPECT_NE(slurp("e3/eval_ls.csv").find("TDL-A+TDL-D"), std::string::npos);
  EXPECT_EQ(run("eval --scheme dasrnn --mc 10 --out e4"), 1);
}

TEST(Cli, CorruptedCheckpointFailsEval) {
  ASSERT_EQ(run("gen --profile tdl-a --n 4 --out k"), 0);
  ASSERT_EQ(run("train --data k/tdl-a_train_snr10.chds --epochs 1 --out k"), 0);
  auto bytes = slurp("k/model.dasr");
  bytes.resize(bytes.size() / 2);
  {
    std::ofstream out(workdir() / "k/broken.dasr", std::ios::binary);
    out << bytes;
  }
  EXPECT_NE(run("eval --scheme dasrnn --model k/broken.dasr --mc 4 --out k --check"), 0);
  EXPECT_EQ(run("eval --scheme dasrnn --model k/missing.dasr --mc 4 --out k"), 2);
}
