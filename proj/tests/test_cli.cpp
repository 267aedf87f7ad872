#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "sleepnet/cli.hpp"
#include "sleepnet/evaluate.hpp"
#include "sleepnet/nn/checkpoint.hpp"
#include "sleepnet/records.hpp"
#include "sleepnet/synthetic.hpp"

using namespace sleepnet;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sleepnet");
  return run_cli(args);
}

void make_raw(const fs::path& dir, int records, std::size_t epochs, std::uint64_t seed) {
  for (int r = 1; r <= records; ++r) {
    char id[16];
    std::snprintf(id, sizeof id, "rec%03d", r);
    save_record(synthetic::record(id, epochs, seed * 1000 + static_cast<std::uint64_t>(r)), dir / id);
  }
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::string summary_value(const fs::path& file, const std::string& key) {
  for (const auto& line : lines(oracle::slurp(file))) {
    if (line.rfind(key + " ", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

std::string without_last_field(const std::string& csv_line) { return csv_line.substr(0, csv_line.rfind(',')); }

// Small, fast model used by the train tests.
const std::vector<std::string> kSmallModel = {"--model.n_blocks",    "2",   "--model.kernel_size", "7",
                                              "--model.initial_filters", "8", "--model.learning_rate", "3e-3",
                                              "--model.batch_size",  "16",  "--model.dropout",     "0"};

// Search space small enough for unit tests.
const std::vector<std::string> kSmallSpace = {"--hpo.max_blocks", "2", "--hpo.max_kernel", "9", "--hpo.filters", "8",
                                              "--run.max_epochs", "1", "--run.timing",     "false"};

std::vector<std::string> join(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Usage, HelpListsEveryKeyWithDefaults) {
  const std::vector<std::string> keys = {
      "--config",           "--output.dir",          "--data.raw",          "--data.store",
      "--data.stats",       "--data.train",          "--data.val",          "--data.test",
      "--preprocess.notch_hz", "--preprocess.notch_q", "--preprocess.highpass_hz", "--preprocess.highpass_order",
      "--model.n_blocks",   "--model.kernel_size",   "--model.initial_filters", "--model.learning_rate",
      "--model.dropout",    "--model.batch_size",    "--run.seed",          "--run.max_epochs",
      "--run.patience",     "--run.timing",          "--run.max_hours",     "--hpo.n_trials",
      "--hpo.gamma",        "--hpo.n_candidates",    "--hpo.n_startup",     "--hpo.best_k",
      "--hpo.seed",         "--hpo.resume",          "--hpo.max_blocks",    "--hpo.max_kernel",
      "--hpo.filters",      "--predict.checkpoints", "--predict.records",   "--report.scatter"};
  for (const char* cmd : {"preprocess", "train", "hpo", "predict", "evaluate", "report"}) {
    testing::internal::CaptureStdout();
    const int code = cli({cmd, "--help"});
    const auto text = testing::internal::GetCapturedStdout();
    EXPECT_EQ(code, 0) << cmd;
    for (const auto& k : keys) EXPECT_NE(text.find(k), std::string::npos) << cmd << " " << k;
    for (const auto& line : lines(text)) {
      if (line.find("--hpo.n_trials") != std::string::npos) {
        EXPECT_NE(line.find("20"), std::string::npos) << line;
      }
      if (line.find("--run.patience") != std::string::npos) {
        EXPECT_NE(line.find("10"), std::string::npos) << line;
      }
    }
  }
  testing::internal::CaptureStdout();
  EXPECT_EQ(cli({"--help"}), 0);
  testing::internal::GetCapturedStdout();
}

TEST(Usage, BadInvocationsExitOne) {
  testing::internal::CaptureStderr();
  EXPECT_EQ(cli({}), 1);
  EXPECT_EQ(cli({"fly"}), 1);
  EXPECT_EQ(cli({"train", "--no-such-flag"}), 1);
  EXPECT_EQ(cli({"train", "--model.n_blocks", "many"}), 1);
  EXPECT_EQ(cli({"train", "--config", "/nonexistent/exp.toml"}), 1);
  testing::internal::GetCapturedStderr();
}

TEST(Preprocess, StoreStatsAndTrainOnlyStatistics) {
  const auto root = oracle::scratch_dir("cli_pre");
  make_raw(root / "raw", 3, 6, 1);
  const std::vector<std::string> base = {"preprocess", "--data.raw", (root / "raw").string(), "--data.val", "rec002",
                                         "--data.test", "rec003"};
  testing::internal::CaptureStderr();
  ASSERT_EQ(cli(join(base, {"--output.dir", (root / "a").string()})), 0);
  EXPECT_EQ(list_records(root / "a" / "store"), (std::vector<std::string>{"rec001", "rec002", "rec003"}));
  ASSERT_TRUE(fs::exists(root / "a" / "stats.txt"));

  ASSERT_EQ(cli(join(base, {"--output.dir", (root / "b").string()})), 0);
  EXPECT_EQ(oracle::slurp(root / "a" / "stats.txt"), oracle::slurp(root / "b" / "stats.txt"));

  // A different test record must not move the statistics.
  save_record(synthetic::record("rec003", 6, 999), root / "raw" / "rec003");
  ASSERT_EQ(cli(join(base, {"--output.dir", (root / "c").string()})), 0);
  EXPECT_EQ(oracle::slurp(root / "a" / "stats.txt"), oracle::slurp(root / "c" / "stats.txt"));

  // A different training record must.
  save_record(synthetic::record("rec001", 6, 998), root / "raw" / "rec001");
  ASSERT_EQ(cli(join(base, {"--output.dir", (root / "d").string()})), 0);
  EXPECT_NE(oracle::slurp(root / "a" / "stats.txt"), oracle::slurp(root / "d" / "stats.txt"));
  testing::internal::GetCapturedStderr();
}

TEST(Preprocess, BrokenRecordIsLoggedAndExitsTwo) {
  const auto root = oracle::scratch_dir("cli_pre_broken");
  make_raw(root / "raw", 2, 4, 2);
  fs::create_directories(root / "raw" / "rec009");
  std::ofstream(root / "raw" / "rec009" / "meta") << "garbage\n";
  testing::internal::CaptureStderr();
  const int code = cli({"preprocess", "--data.raw", (root / "raw").string(), "--output.dir", (root / "o").string(),
                        "--data.val", "rec002"});
  const auto err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.find("rec009"), std::string::npos) << err;
  EXPECT_EQ(list_records(root / "o" / "store"), (std::vector<std::string>{"rec001", "rec002"}));
}

TEST(Preprocess, OverlappingSplitsAreConfigErrors) {
  const auto root = oracle::scratch_dir("cli_pre_overlap");
  make_raw(root / "raw", 2, 4, 3);
  testing::internal::CaptureStderr();
  EXPECT_EQ(cli({"preprocess", "--data.raw", (root / "raw").string(), "--output.dir", (root / "o").string(),
                 "--data.val", "rec002", "--data.test", "rec002"}),
            1);
  EXPECT_EQ(cli({"preprocess", "--data.raw", (root / "raw").string(), "--output.dir", (root / "o").string(),
                 "--data.val", "rec404"}),
            1);
  testing::internal::GetCapturedStderr();
}

class TrainCli : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = oracle::scratch_dir("cli_train");
    make_raw(root_ / "raw", 6, 40, 3);
    testing::internal::CaptureStderr();
    const int code = cli({"preprocess", "--data.raw", (root_ / "raw").string(), "--output.dir",
                          (root_ / "prep").string(), "--data.val", "rec006"});
    testing::internal::GetCapturedStderr();
    ASSERT_EQ(code, 0);
  }

  static std::vector<std::string> train_args(const fs::path& out, const std::vector<std::string>& extra) {
    auto args = join({"train", "--data.store", (root_ / "prep" / "store").string(), "--data.stats",
                      (root_ / "prep" / "stats.txt").string(), "--data.val", "rec006", "--output.dir", out.string()},
                     kSmallModel);
    return join(args, extra);
  }

  static fs::path root_;
};

fs::path TrainCli::root_;

TEST_F(TrainCli, LearnsTheSyntheticTrainingSet) {
  const auto out = root_ / "learn";
  testing::internal::CaptureStderr();
  testing::internal::CaptureStdout();
  const int code = cli(train_args(out, {"--run.max_epochs", "15", "--run.patience", "15", "--run.timing", "false"}));
  testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  ASSERT_EQ(code, 0);
  EXPECT_TRUE(fs::exists(out / "model.ckpt"));
  const double accuracy = std::stod(summary_value(out / "train_summary.txt", "train_accuracy"));
  EXPECT_GE(accuracy, 0.99);
  EXPECT_EQ(lines(oracle::slurp(out / "history.csv")).size(), 16u);
}

TEST_F(TrainCli, SameSeedSameHistory) {
  testing::internal::CaptureStderr();
  testing::internal::CaptureStdout();
  for (const char* dir : {"det_a", "det_b"}) {
    ASSERT_EQ(cli(train_args(root_ / dir, {"--run.max_epochs", "2", "--run.timing", "false"})), 0);
  }
  ASSERT_EQ(cli(train_args(root_ / "det_c", {"--run.max_epochs", "2", "--run.timing", "false", "--run.seed", "2"})), 0);
  testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  const auto a = oracle::slurp(root_ / "det_a" / "history.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, oracle::slurp(root_ / "det_b" / "history.csv"));
  EXPECT_EQ(oracle::slurp(root_ / "det_a" / "model.ckpt"), oracle::slurp(root_ / "det_b" / "model.ckpt"));
  EXPECT_NE(a, oracle::slurp(root_ / "det_c" / "history.csv"));
}

TEST_F(TrainCli, MissingStatsFailsBeforeTraining) {
  const auto out = root_ / "nostats";
  auto args = train_args(out, {"--data.stats", (root_ / "nowhere.txt").string()});
  testing::internal::CaptureStderr();
  const int code = cli(args);
  const auto err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 1);
  EXPECT_NE(err.find("nowhere.txt"), std::string::npos) << err;
  EXPECT_FALSE(fs::exists(out / "model.ckpt"));
  EXPECT_FALSE(fs::exists(out / "history.csv"));
}

TEST_F(TrainCli, MissingValidationSplitIsConfigError) {
  auto args = join({"train", "--data.store", (root_ / "prep" / "store").string(), "--data.stats",
                    (root_ / "prep" / "stats.txt").string(), "--output.dir", (root_ / "noval").string()},
                   kSmallModel);
  testing::internal::CaptureStderr();
  EXPECT_EQ(cli(args), 1);
  testing::internal::GetCapturedStderr();
}

TEST_F(TrainCli, ConfigFileWithFlagOverride) {
  const auto file = root_ / "exp.toml";
  std::ofstream(file) << "[data]\nval = \"rec006\"\nstore = \"" << (root_ / "prep" / "store").string()
                      << "\"\nstats = \"" << (root_ / "prep" / "stats.txt").string()
                      << "\"\n\n[model]\nn_blocks = 1\nkernel_size = 3\ninitial_filters = 8\nbatch_size = 32\n"
                         "dropout = 0.0\n\n[run]\nmax_epochs = 1\ntiming = false\n";
  testing::internal::CaptureStderr();
  testing::internal::CaptureStdout();
  ASSERT_EQ(cli({"train", "--config", file.string(), "--output.dir", (root_ / "cfg1").string()}), 0);
  ASSERT_EQ(cli({"train", "--config", file.string(), "--output.dir", (root_ / "cfg2").string(), "--run.max_epochs",
                 "2"}),
            0);
  testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  EXPECT_EQ(lines(oracle::slurp(root_ / "cfg1" / "history.csv")).size(), 2u);
  EXPECT_EQ(lines(oracle::slurp(root_ / "cfg2" / "history.csv")).size(), 3u);
  EXPECT_EQ(nn::load_checkpoint(root_ / "cfg1" / "model.ckpt").net.config().n_blocks, 1);
}

class SearchCli : public testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = oracle::scratch_dir("cli_hpo");
    make_raw(root_ / "raw", 3, 5, 4);
    save_record(synthetic::record("rec004", 120, 4004), root_ / "raw" / "rec004");
    testing::internal::CaptureStderr();
    testing::internal::CaptureStdout();
    const int pre = cli({"preprocess", "--data.raw", (root_ / "raw").string(), "--output.dir",
                         (root_ / "full").string(), "--data.val", "rec003", "--data.test", "rec004"});
    const int search = cli(search_args(root_ / "full", "8"));
    testing::internal::GetCapturedStdout();
    testing::internal::GetCapturedStderr();
    ASSERT_EQ(pre, 0);
    ASSERT_EQ(search, 0);
  }

  static std::vector<std::string> common(const fs::path& out) {
    return {"--data.store", (root_ / "full" / "store").string(), "--data.stats", (root_ / "full" / "stats.txt").string(),
            "--data.val",   "rec003",                              "--data.test",  "rec004",
            "--output.dir", out.string()};
  }

  static std::vector<std::string> search_args(const fs::path& out, const std::string& trials) {
    return join(join(join({"hpo"}, common(out)), kSmallSpace), {"--hpo.n_trials", trials});
  }

  static fs::path root_;
};

fs::path SearchCli::root_;

TEST_F(SearchCli, TrialLogAndBestConfigs) {
  const auto log = lines(oracle::slurp(root_ / "full" / "trials.csv"));
  ASSERT_EQ(log.size(), 9u);
  EXPECT_EQ(log[0], "trial,n_blocks,kernel,filters,lr,status,kappa,seconds");
  const auto best = lines(oracle::slurp(root_ / "full" / "best_configs.txt"));
  ASSERT_EQ(best.size(), 6u);
  EXPECT_EQ(best[0], "trial n_blocks kernel filters lr kappa checkpoint");
  for (std::size_t i = 1; i < best.size(); ++i) {
    const auto ckpt = best[i].substr(best[i].rfind(' ') + 1);
    EXPECT_TRUE(fs::exists(ckpt)) << ckpt;
  }
}

TEST_F(SearchCli, ResumeAfterThreeTrials) {
  const auto out = root_ / "resume";
  testing::internal::CaptureStderr();
  testing::internal::CaptureStdout();
  ASSERT_EQ(cli(search_args(out, "3")), 0);
  const auto first = lines(oracle::slurp(out / "trials.csv"));
  ASSERT_EQ(cli(join(search_args(out, "8"), {"--hpo.resume", "true"})), 0);
  testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  const auto resumed = lines(oracle::slurp(out / "trials.csv"));
  const auto full = lines(oracle::slurp(root_ / "full" / "trials.csv"));
  ASSERT_EQ(first.size(), 4u);
  ASSERT_EQ(resumed.size(), 9u);
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(resumed[i], first[i]);
  // Identical apart from wall time.
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(without_last_field(resumed[i]), without_last_field(full[i]));
}

TEST_F(SearchCli, ScatterFromTrialLog) {
  testing::internal::CaptureStderr();
  ASSERT_EQ(cli({"report", "--output.dir", (root_ / "full").string(), "--report.scatter", "true"}), 0);
  testing::internal::GetCapturedStderr();
  const auto rows = lines(oracle::slurp(root_ / "full" / "scatter.csv"));
  const auto log = lines(oracle::slurp(root_ / "full" / "trials.csv"));
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0], "trial,n_blocks,kernel,filters,log_lr,lr,kappa");
  std::size_t completed = 0;
  for (std::size_t i = 1; i < log.size(); ++i) completed += log[i].find(",completed,") != std::string::npos;
  EXPECT_EQ(rows.size() - 1, completed);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ss(rows[i]);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    ASSERT_EQ(f.size(), 7u);
    EXPECT_NEAR(std::stod(f[4]), std::log(std::stod(f[5])), 1e-7);
  }
}

TEST_F(SearchCli, EnsembleHypnogramAndOrderIndependence) {
  testing::internal::CaptureStderr();
  ASSERT_EQ(cli(join({"predict"}, common(root_ / "full"))), 0);
  const auto hyp = oracle::slurp(root_ / "full" / "hypnograms" / "rec004.txt");
  EXPECT_EQ(lines(hyp).size(), 120u);
  const auto detail = lines(oracle::slurp(root_ / "full" / "predictions" / "rec004.csv"));
  ASSERT_EQ(detail.size(), 121u);
  EXPECT_EQ(detail[0], "epoch,model_1,model_2,model_3,model_4,model_5,final");

  std::vector<std::string> ckpts;
  for (const auto& line : lines(oracle::slurp(root_ / "full" / "best_configs.txt"))) {
    if (line.rfind("trial ", 0) != 0) ckpts.push_back(line.substr(line.rfind(' ') + 1));
  }
  std::string reversed;
  for (auto it = ckpts.rbegin(); it != ckpts.rend(); ++it) reversed += (reversed.empty() ? "" : ",") + *it;
  ASSERT_EQ(cli(join(join({"predict"}, common(root_ / "shuffled")), {"--predict.checkpoints", reversed})), 0);
  EXPECT_EQ(oracle::slurp(root_ / "shuffled" / "hypnograms" / "rec004.txt"), hyp);

  // One checkpoint: the final label is that model's own label.
  ASSERT_EQ(cli(join(join({"predict"}, common(root_ / "single")), {"--predict.checkpoints", ckpts[0]})), 0);
  testing::internal::GetCapturedStderr();
  for (const auto& line : lines(oracle::slurp(root_ / "single" / "predictions" / "rec004.csv"))) {
    if (line.rfind("epoch", 0) == 0) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    EXPECT_EQ(line.substr(a + 1, b - a - 1), line.substr(b + 1)) << line;
  }
}

TEST_F(SearchCli, MismatchedCheckpointIsNamed) {
  nn::ModelConfig m;
  m.n_blocks = 1;
  m.kernel_size = 3;
  m.initial_filters = 8;
  m.input_length = 100;
  const auto bad = root_ / "short_input.ckpt";
  nn::save_checkpoint(nn::ConvNet<float>(m, 1), 0, bad);
  testing::internal::CaptureStderr();
  const int code = cli(join(join({"predict"}, common(root_ / "bad")), {"--predict.checkpoints", bad.string()}));
  const auto err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 1);
  EXPECT_NE(err.find("short_input.ckpt"), std::string::npos) << err;
}

TEST_F(SearchCli, EvaluatePerfectPredictions) {
  const auto out = root_ / "perfect";
  fs::create_directories(out / "hypnograms");
  for (const char* id : {"rec003", "rec004"}) {
    write_hypnogram(load_record(root_ / "full" / "store" / id).stages, out / "hypnograms" / (std::string(id) + ".txt"));
  }
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  ASSERT_EQ(cli({"evaluate", "--data.store", (root_ / "full" / "store").string(), "--output.dir", out.string()}), 0);
  testing::internal::GetCapturedStderr();
  testing::internal::GetCapturedStdout();
  const auto report = report_from_json(oracle::slurp(out / "report.json"));
  EXPECT_EQ(report.kappa, 1.0);
  EXPECT_EQ(report.confusion.total(), 125);
  EXPECT_EQ(report.record_kappa.size(), 2u);
  double f1 = 0.0;
  for (const auto& c : report.classes) f1 += c.f1 / 5.0;
  EXPECT_NEAR(report.macro_f1, f1, 1e-12);
  const auto table = lines(oracle::slurp(out / "table.txt"));
  ASSERT_GE(table.size(), 7u);
  EXPECT_EQ(table[6].substr(0, 7), "Average");
  EXPECT_EQ(lines(oracle::slurp(out / "confusion.csv")).size(), 6u);

  testing::internal::CaptureStdout();
  EXPECT_EQ(cli({"report", "--output.dir", out.string()}), 0);
  EXPECT_EQ(testing::internal::GetCapturedStdout(), oracle::slurp(out / "table.txt"));
}

TEST_F(SearchCli, EvaluateReportsMisalignedRecord) {
  const auto out = root_ / "misaligned";
  fs::create_directories(out / "hypnograms");
  write_hypnogram(load_record(root_ / "full" / "store" / "rec003").stages, out / "hypnograms" / "rec003.txt");
  auto short_labels = load_record(root_ / "full" / "store" / "rec004").stages;
  short_labels.resize(100);
  write_hypnogram(short_labels, out / "hypnograms" / "rec004.txt");
  testing::internal::CaptureStderr();
  const int code = cli({"evaluate", "--data.store", (root_ / "full" / "store").string(), "--output.dir", out.string()});
  const auto err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.find("rec004"), std::string::npos) << err;
  EXPECT_EQ(err.find("record rec003"), std::string::npos) << err;
  EXPECT_FALSE(fs::exists(out / "report.json"));
}
