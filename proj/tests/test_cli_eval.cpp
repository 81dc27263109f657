// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "dnr/experiment.hpp"
#include "dnr/metrics.hpp"

using namespace dnr;
namespace fs = std::filesystem;

namespace {

double brute_force_wf1(const std::vector<int>& p, const std::vector<int>& t, std::size_t C) {
  std::vector<std::vector<double>> cm(C, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < t.size(); ++i) cm[t[i]][p[i]] += 1.0;
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    const double prec = col > 0 ? cm[c][c] / col : 0.0;
    const double rec = row > 0 ? cm[c][c] / row : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    total += f1 * row;
  }
  return total / static_cast<double>(t.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct CliRun {
  int status;
  std::string out;
};

CliRun run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_output.txt";
  const std::string cmd = std::string("\"") + DNR_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(log)};
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("dnr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

const char* kTinyConfig = R"(
[synth]
n_train = 60
n_val = 20
n_test = 20
[model]
stream_width = 4
hidden = 8
backbone_hidden = 8
fused_width = 4
[schedule]
divide_epochs = 1
refine_epochs = 1
batch_size = 32
[experiment]
seeds = [3]
arms = ["baseline", "divide+refine"]
)";

}  // namespace

TEST(Accuracy, Examples) {
  const std::vector<int> t{0, 1, 1, 0};
  EXPECT_EQ(accuracy(t, t), 1.0);
  EXPECT_EQ(accuracy(std::vector<int>{1, 0, 0, 1}, t), 0.0);
  EXPECT_EQ(accuracy(std::vector<int>{0, 1, 1, 1}, t), 0.75);
  EXPECT_THROW(accuracy(std::vector<int>{0}, t), contract_violation);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), contract_violation);
}

TEST(WeightedF1, Examples) {
  const std::vector<int> t{0, 0, 0, 1};
  EXPECT_EQ(weighted_f1(t, t, 2), 1.0);
  EXPECT_NEAR(weighted_f1(std::vector<int>{0, 0, 0, 0}, t, 2), 0.6429, 5e-5);
  EXPECT_NEAR(weighted_f1(std::vector<int>{0, 0, 0, 0}, t, 2), 9.0 / 14.0, 1e-15);
  // reference values from a standard library implementation
  EXPECT_NEAR(weighted_f1(std::vector<int>{0, 0, 1, 1, 0, 2, 1}, std::vector<int>{0, 0, 0, 1, 1, 2, 2}, 3),
              0.5904761904761904, 1e-15);
  EXPECT_NEAR(weighted_f1(std::vector<int>{0, 0, 1, 1, 2, 2}, std::vector<int>{0, 0, 0, 1, 1, 2}, 3),
              0.6777777777777779, 1e-15);
  EXPECT_THROW(weighted_f1(std::vector<int>{0, 0, 0}, t, 2), contract_violation);
  EXPECT_THROW(weighted_f1(std::vector<int>{0, 0, 0, 2}, t, 2), contract_violation);
}

TEST(WeightedF1, MatchesBruteForce) {
  RngStream rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 2 + rng.below(5), n = 1 + rng.below(60);
    std::vector<int> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.below(C));
      p[i] = rng.uniform() < 0.5 ? t[i] : static_cast<int>(rng.below(C));
    }
    EXPECT_NEAR(weighted_f1(p, t, C), brute_force_wf1(p, t, C), 1e-12);
  }
}

TEST(Metrics, InvariantToConsistentRelabelling) {
  RngStream rng(22);
  const std::vector<int> perm{3, 0, 2, 1};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> p(40), t(40), pp(40), tp(40);
    for (std::size_t i = 0; i < 40; ++i) {
      t[i] = static_cast<int>(rng.below(4));
      p[i] = static_cast<int>(rng.below(4));
      pp[i] = perm[p[i]];
      tp[i] = perm[t[i]];
    }
    EXPECT_EQ(accuracy(p, t), accuracy(pp, tp));
    EXPECT_NEAR(weighted_f1(p, t, 4), weighted_f1(pp, tp, 4), 1e-12);
  }
}

TEST(Config, DefaultsForEmptyFile) {
  const ExperimentConfig c = parse_config_string("");
  EXPECT_EQ(c.synth.n_train, 2000u);
  EXPECT_DOUBLE_EQ(c.objective.lambda_uncor, 1.0);
  EXPECT_DOUBLE_EQ(c.objective.lambda_corr, 0.5);
  EXPECT_DOUBLE_EQ(c.objective.tau, 0.5);
  EXPECT_EQ(c.objective.K, 2u);
  EXPECT_EQ(c.model.stream_width, 32u);
  EXPECT_EQ(c.schedule.divide_epochs, 50u);
  EXPECT_EQ(c.experiment.arms.size(), 4u);
  EXPECT_EQ(c.experiment.masks.size(), 4u);
  EXPECT_EQ(c.experiment.seeds, std::vector<std::uint64_t>{0});
}

TEST(Config, PerModalityTables) {
  const ExperimentConfig c = parse_config_string(
      "[synth]\nbits_unique = { a = 2, v = 0 }\nfeature_width = 12\n");
  EXPECT_EQ(c.synth.unique_bits('a'), 2u);
  EXPECT_EQ(c.synth.unique_bits('t'), 1u);
  EXPECT_EQ(c.synth.unique_bits('v'), 0u);
  EXPECT_EQ(c.synth.width('t'), 12u);
}

TEST(Config, ErrorsNameTheField) {
  auto message = [](const std::string& text) {
    try {
      parse_config_string(text);
    } catch (const contract_violation& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("[objective]\nlambda_corr = 1.5\n").find("objective.lambda_corr"), std::string::npos);
  EXPECT_NE(message("[objective]\ntau = 0\n").find("objective.tau"), std::string::npos);
  EXPECT_NE(message("[schedule]\nbatch = 3\n").find("schedule.batch"), std::string::npos);
  EXPECT_NE(message("[synth]\nn_train = -1\n").find("synth.n_train"), std::string::npos);
  EXPECT_NE(message("[experiment]\narms = [\"both\"]\n").find("experiment.arms"), std::string::npos);
  EXPECT_NE(message("[experiment]\nseeds = []\n").find("experiment.seeds"), std::string::npos);
  EXPECT_NE(message("[model]\nbackbone = \"rnn\"\n").find("backbone"), std::string::npos);
  EXPECT_NE(message("[synth]\nmodalities = \"at\"\n[experiment]\nmodality_masks = [\"tv\"]\n")
                .find("modality_masks"),
            std::string::npos);
}

TEST(Config, HashTracksContent) {
  const ExperimentConfig a = parse_config_string(kTinyConfig);
  const ExperimentConfig b = parse_config_string(std::string(kTinyConfig) + "\n# comment\n");
  ExperimentConfig c = a;
  c.experiment.seeds = {4};
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash_hex().size(), 16u);
  EXPECT_EQ(make_run_id(a, 1700000000), "1700000000-" + a.hash_hex().substr(0, 8));
}

TEST(Ablation, RowCountAndHeader) {
  ExperimentConfig cfg = parse_config_string(kTinyConfig);
  cfg.experiment.seeds = {1, 2};
  const AblationResult r = run_ablation(cfg);
  EXPECT_EQ(r.rows.size(), 2u * 4u * 2u);
  const std::string csv = metrics_csv(r.rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n') + 1), kMetricsHeader);
  for (const ArmRecord& rec : r.records)
    if (rec.arm == Arm::divide_refine) EXPECT_EQ(rec.frozen_hash_before, rec.frozen_hash_after);
  for (const MetricsRow& row : r.rows) {
    EXPECT_GE(row.weighted_f1, 0.0);
    EXPECT_LE(row.accuracy, 1.0);
  }
}

TEST_F(TempDir, PidOnXorJoint) {
  std::ofstream(dir / "xor.csv") << "y,a,b,p\n0,0,0,0.25\n1,0,1,0.25\n1,1,0,0.25\n0,1,1,0.25\n";
  const CliRun r = run_cli("pid --joint \"" + (dir / "xor.csv").string() + "\"", dir);
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.out, "0.000000,0.000000,0.000000,1.000000\n");
}

TEST_F(TempDir, RefineWithoutCheckpointNamesPath) {
  std::ofstream(dir / "tiny.toml") << kTinyConfig;
  const std::string base = "--config \"" + (dir / "tiny.toml").string() + "\" --out \"" + (dir / "out").string() + "\"";
  const CliRun r = run_cli("refine " + base, dir);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("missing checkpoint"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find((dir / "out" / "divide.ckpt").string()), std::string::npos) << r.out;
  const CliRun e = run_cli("eval " + base, dir);
  EXPECT_NE(e.status, 0);
  EXPECT_NE(e.out.find("missing checkpoint"), std::string::npos) << e.out;
}

TEST_F(TempDir, PipelineAndOverwriteProtection) {
  std::ofstream(dir / "tiny.toml") << kTinyConfig;
  const std::string out = "--out \"" + (dir / "out").string() + "\"";
  const std::string cfg = "--config \"" + (dir / "tiny.toml").string() + "\" ";
  EXPECT_EQ(run_cli("synth " + cfg + out, dir).status, 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "dataset" / "train.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
  EXPECT_EQ(run_cli("divide " + cfg + out, dir).status, 0);
  EXPECT_EQ(run_cli("refine " + cfg + out, dir).status, 0);
  const CliRun ev = run_cli("eval " + cfg + out, dir);
  EXPECT_EQ(ev.status, 0) << ev.out;
  EXPECT_TRUE(fs::exists(dir / "out" / "eval.csv"));
  EXPECT_EQ(run_cli("export-embeddings " + cfg + out, dir).status, 0);
  const std::string emb = slurp(dir / "out" / "embeddings.csv");
  EXPECT_EQ(emb.substr(0, emb.find(',', emb.find(',', emb.find(',') + 1) + 1)), "sample_id,label,modality");

  std::ofstream(dir / "other.toml") << std::string(kTinyConfig) + "[objective]\nsigma = 0.2\n";
  const std::string other = "--config \"" + (dir / "other.toml").string() + "\" ";
  const CliRun refused = run_cli("divide " + other + out, dir);
  EXPECT_EQ(refused.status, 2);
  EXPECT_NE(refused.out.find("--force"), std::string::npos) << refused.out;
  EXPECT_EQ(run_cli("divide " + other + out + " --force", dir).status, 0);
}

TEST_F(TempDir, InvalidConfigExitCode) {
  std::ofstream(dir / "bad.toml") << "[schedule]\nlr = -1\n";
  const CliRun r = run_cli("synth --config \"" + (dir / "bad.toml").string() + "\" --out \"" +
                               (dir / "out").string() + "\"",
                           dir);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("schedule.lr"), std::string::npos) << r.out;
}
