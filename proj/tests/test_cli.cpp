#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "contok/synth_data.hpp"

namespace fs = std::filesystem;
using namespace contok;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

/// Runs the CLI with `args`; stdout and stderr are captured together when `merge` is set.
Result run(const std::string& args, bool merge = false) {
  const std::string cmd = std::string(CONTOK_CLI_PATH) + " " + args + (merge ? " 2>&1" : " 2>/dev/null");
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "contok_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "small.json") << R"({
  "seed": 3,
  "model": {"backbone_layers": 1, "backbone_dim": 16, "backbone_heads": 2, "out_blocks": 1, "mlp_layers": 2,
            "mlp_hidden": 16, "in_enc_layers": 1, "adapter_layers": 1, "time_embed_dim": 8},
  "train": {"batch_size": 4, "checkpoint_every": 4, "dev_eval_size": 8},
  "corpus": {"train_size": 64, "dev_size": 16}
})";
    ASSERT_EQ(run("synth --config " + path("small.json") + " --stage 1 --seed 7 --out " + path("c1")).code, 0);
    ASSERT_EQ(run("synth --config " + path("small.json") + " --stage 2 --seed 7 --out " + path("c2")).code, 0);
    ASSERT_EQ(run("train --config " + path("small.json") + " --data " + path("c1") + " --steps 6 --quiet --run-dir " + path("s1")).code, 0);
    ASSERT_EQ(run("train --config " + path("small.json") + " --data " + path("c2") + " --stage 2 --steps 6 --quiet --init " +
                  path("s1/final.ctck") + " --run-dir " + path("s2"))
                  .code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, SynthWritesValidCountedRecords) {
  ASSERT_EQ(run("synth --stage 1 --train 512 --dev 64 --seed 7 --out " + path("data")).code, 0);
  const auto c = data::read_corpus<float>(dir_ / "data");
  EXPECT_EQ(c.train.size(), 512u);
  EXPECT_EQ(c.dev.size(), 64u);
  for (const auto& s : c.train) ASSERT_TRUE(seq::validate_sequence(s).empty());
  for (const auto& s : c.dev) ASSERT_TRUE(seq::validate_sequence(s).empty());
}

TEST_F(Cli, SynthIsByteIdenticalForSameSeed) {
  ASSERT_EQ(run("synth --stage 2 --train 40 --dev 8 --seed 11 --out " + path("a")).code, 0);
  ASSERT_EQ(run("synth --stage 2 --train 40 --dev 8 --seed 11 --out " + path("b")).code, 0);
  for (const char* f : {"train.ctok", "dev.ctok", "corpus.json"}) EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(Cli, MissingRequiredOptionIsAConfigError) {
  const auto r = run("synth --stage 1", true);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--out"), std::string::npos);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
}

TEST_F(Cli, BadValuesAreConfigErrors) {
  EXPECT_EQ(run("synth --stage 3 --out " + path("x")).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  std::ofstream(dir_ / "unknown.json") << R"({"model": {"depth": 2}})";
  EXPECT_EQ(run("synth --config " + path("unknown.json") + " --out " + path("x")).code, 2);
  std::ofstream(dir_ / "sigma0.json") << R"({"path": {"sigma_min": 0}})";
  EXPECT_EQ(run("synth --config " + path("sigma0.json") + " --out " + path("x")).code, 2);
}

TEST_F(Cli, MissingFilesAreIoErrors) {
  EXPECT_EQ(run("train --data " + path("nowhere") + " --steps 1 --run-dir " + path("r")).code, 3);
  EXPECT_EQ(run("generate --ckpt " + path("nowhere.ctck") + " --prompt w1").code, 3);
  EXPECT_EQ(run("eval --ckpt " + path("nowhere.ctck") + " --data " + path("c2")).code, 3);
  EXPECT_EQ(run("synth --config " + path("nowhere.json") + " --out " + path("x")).code, 3);
}

TEST_F(Cli, StageTwoNeedsInit) {
  EXPECT_EQ(run("train --config " + path("small.json") + " --data " + path("c2") + " --stage 2 --steps 1 --run-dir " + path("r2")).code, 2);
}

TEST_F(Cli, StageOneRejectsStageTwoCorpus) {
  EXPECT_EQ(run("train --config " + path("small.json") + " --data " + path("c2") + " --steps 1 --run-dir " + path("r3")).code, 2);
}

TEST_F(Cli, DryRunPrintsPlanWithoutTraining) {
  const auto r = run("train --config " + path("small.json") + " --data " + path("c1") + " --dry-run --run-dir " + path("dry"));
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("parameters\t"), std::string::npos);
  EXPECT_NE(r.out.find("trainable\t"), std::string::npos);
  EXPECT_NE(r.out.find("steps\t0..4000"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "dry"));
}

TEST_F(Cli, RunDirectoryHoldsConfigMetricsAndCheckpoints) {
  for (const char* f : {"config.json", "metrics.tsv", "summary.json", "ckpt-4.ctck", "ckpt-6.ctck", "final.ctck"}) {
    EXPECT_TRUE(fs::exists(dir_ / "s1" / f)) << f;
  }
  const auto cfg = nlohmann::json::parse(slurp(dir_ / "s1" / "config.json"));
  EXPECT_EQ(cfg.at("model").at("backbone_dim"), 16);
  EXPECT_EQ(cfg.at("train").at("total_steps"), 6);
  const auto log = lines(slurp(dir_ / "s1" / "metrics.tsv"));
  ASSERT_EQ(log.size(), 6u);
  const std::regex line(R"(\d+\t[-+0-9.eE]+\t[-+0-9.eE]+\t[-+0-9.eE]+\t[-+0-9.eE]+)");
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_TRUE(std::regex_match(log[i], line)) << log[i];
    EXPECT_EQ(log[i].substr(0, log[i].find('\t')), std::to_string(i));
  }
  EXPECT_EQ(log[0].substr(0, log[0].find('\t', 2)), "0\t0.0001");
}

TEST_F(Cli, RunDirectoryDefaultsUnderEnvironmentRoot) {
  const auto root = dir_ / "envroot";
  const std::string cmd = "CONTOK_RUN_DIR=" + root.string() + " " + CONTOK_CLI_PATH + " train --config " + path("small.json") +
                          " --data " + path("c1") + " --steps 1 --seed 42 --quiet > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  ASSERT_TRUE(fs::exists(root));
  const auto entry = *fs::directory_iterator(root);
  EXPECT_TRUE(std::regex_match(entry.path().filename().string(), std::regex(R"(\d{8}T\d{6}Z-seed42)")));
}

TEST_F(Cli, SeededF64RunsReproduceMetricLogsAndCheckpoints) {
  for (const char* name : {"d1", "d2"}) {
    ASSERT_EQ(run("train --config " + path("small.json") + " --data " + path("c1") + " --steps 4 --f64 --quiet --run-dir " + path(name)).code, 0);
  }
  EXPECT_EQ(slurp(dir_ / "d1" / "metrics.tsv"), slurp(dir_ / "d2" / "metrics.tsv"));
  EXPECT_EQ(slurp(dir_ / "d1" / "final.ctck"), slurp(dir_ / "d2" / "final.ctck"));
}

TEST_F(Cli, ResumeContinuesTheMetricLog) {
  const std::string base = "train --config " + path("small.json") + " --data " + path("c1") + " --steps 6 --f64 --quiet ";
  ASSERT_EQ(run(base + "--run-dir " + path("full")).code, 0);
  ASSERT_EQ(run(base + "--stop-after 4 --run-dir " + path("part")).code, 0);
  ASSERT_EQ(run(base + "--resume " + path("part/ckpt-4.ctck") + " --run-dir " + path("part")).code, 0);
  EXPECT_EQ(slurp(dir_ / "part" / "metrics.tsv"), slurp(dir_ / "full" / "metrics.tsv"));
  EXPECT_EQ(slurp(dir_ / "part" / "final.ctck"), slurp(dir_ / "full" / "final.ctck"));
}

TEST_F(Cli, NonFiniteTrainingExitsWithNumericAbort) {
  std::ofstream(dir_ / "explode.json") << R"({"model": {"backbone_layers": 1, "backbone_dim": 16, "backbone_heads": 2, "out_blocks": 1,
  "mlp_layers": 2, "mlp_hidden": 16, "in_enc_layers": 1, "adapter_layers": 1, "time_embed_dim": 8},
  "train": {"batch_size": 4, "lr_init": 1e30, "lr_min": 1e29, "grad_clip_norm": 1e30, "dev_eval_size": 4}})";
  EXPECT_EQ(run("train --config " + path("explode.json") + " --data " + path("c1") + " --steps 20 --quiet --run-dir " + path("boom")).code, 4);
}

TEST_F(Cli, GenerateTemperatureZeroIsDeterministic) {
  const std::string args = "generate --ckpt " + path("s2/final.ctck") + " --temp 0 --prompt \"w3 w1 w4\" --task text_in_speech_out --max-steps 12";
  const auto a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto ev = lines(a.out);
  ASSERT_FALSE(ev.empty());
  EXPECT_TRUE(std::regex_match(ev.back(), std::regex(R"(\d+\tdone\t(complete|truncated))"))) << ev.back();
}

TEST_F(Cli, SpeechStreamHasStartBeforeAnyFrame) {
  const auto r = run("generate --ckpt " + path("s2/final.ctck") + " --prompt \"w3 w1\" --task text_in_speech_out --max-steps 10 --seed 4");
  ASSERT_EQ(r.code, 0);
  const auto ev = lines(r.out);
  ASSERT_GE(ev.size(), 3u);
  EXPECT_EQ(ev[0], "0\tstate_token\tSTART");
  bool start = false;
  for (const auto& l : ev) {
    start = start || l.find("\tSTART") != std::string::npos;
    if (l.find("\tframe\t") != std::string::npos) {
      EXPECT_TRUE(start);
      const auto payload = l.substr(l.rfind('\t') + 1);
      EXPECT_EQ(std::count(payload.begin(), payload.end(), ','), 19);
    }
  }
}

TEST_F(Cli, GenerateFromFramesAndToFile) {
  std::ofstream f(dir_ / "frames.csv");
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 20; ++c) f << (c ? "," : "") << 0.1 * (i + c);
    f << "\n";
  }
  f.close();
  ASSERT_EQ(run("generate --ckpt " + path("s2/final.ctck") + " --frames " + path("frames.csv") + " --max-steps 5 --out " + path("ev.tsv")).code, 0);
  const auto ev = lines(slurp(dir_ / "ev.tsv"));
  ASSERT_FALSE(ev.empty());
  EXPECT_EQ(ev[0], "0\tstate_token\tPAD");
}

TEST_F(Cli, GenerateRejectsBadPrompts) {
  EXPECT_EQ(run("generate --ckpt " + path("s2/final.ctck") + " --prompt \"x3\"").code, 2);
  EXPECT_EQ(run("generate --ckpt " + path("s2/final.ctck") + " --prompt \"w999\"").code, 2);
  EXPECT_EQ(run("generate --ckpt " + path("s2/final.ctck")).code, 2);
  EXPECT_EQ(run("generate --ckpt " + path("s2/final.ctck") + " --prompt w1 --task speech_in_text_out").code, 2);
}

TEST_F(Cli, EvalReportIsCompleteAndDeterministic) {
  const std::string args = "eval --ckpt " + path("s2/final.ctck") + " --data " + path("c2") + " --per-kind 3";
  const auto a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto report = lines(a.out);
  const std::vector<std::string> keys{"dev_lm", "dev_cfm", "dev_total", "text_prompts", "text_exact_match", "asr_prompts",
                                      "asr_token_accuracy", "tts_prompts", "tts_fwer", "s2s_prompts", "s2s_fwer", "truncated"};
  ASSERT_EQ(report.size(), keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) EXPECT_EQ(report[i].substr(0, report[i].find('\t')), keys[i]);
}

TEST_F(Cli, PlotOracleHeaderAndEulerExactness) {
  ASSERT_EQ(run("plot --oracle --target 2,-1 --euler-steps 1 --samples 8 --trajectories 8 --seed 5 --out " + path("p1")).code, 0);
  ASSERT_EQ(run("plot --oracle --target 2,-1 --euler-steps 64 --samples 8 --trajectories 8 --seed 5 --out " + path("p64")).code, 0);
  const auto s1 = lines(slurp(dir_ / "p1" / "samples.csv")), s64 = lines(slurp(dir_ / "p64" / "samples.csv"));
  ASSERT_EQ(s1.size(), 9u);
  EXPECT_EQ(s1[0], "t,dim0,dim1");
  EXPECT_EQ(lines(slurp(dir_ / "p1" / "trajectories.csv"))[0], "t,dim0,dim1");
  EXPECT_EQ(lines(slurp(dir_ / "p64" / "trajectories.csv")).size(), 1u + 8u * 65u);
  for (std::size_t i = 1; i < s1.size(); ++i) {
    double a0, a1, b0, b1, t;
    ASSERT_EQ(std::sscanf(s1[i].c_str(), "%lf,%lf,%lf", &t, &a0, &a1), 3);
    ASSERT_EQ(std::sscanf(s64[i].c_str(), "%lf,%lf,%lf", &t, &b0, &b1), 3);
    EXPECT_NEAR(a0, b0, 1e-7);
    EXPECT_NEAR(a1, b1, 1e-7);
  }
}

TEST_F(Cli, PlotNeedsExactlyOneSource) {
  EXPECT_EQ(run("plot --out " + path("p")).code, 2);
  EXPECT_EQ(run("plot --oracle --toy --out " + path("p")).code, 2);
}

TEST_F(Cli, PlotFromCheckpoint) {
  const auto r = run("plot --ckpt " + path("s2/final.ctck") + " --prompt \"w2 w5\" --euler-steps 3 --out " + path("pc"));
  ASSERT_EQ(r.code, 0);
  const auto traj = lines(slurp(dir_ / "pc" / "trajectories.csv"));
  EXPECT_EQ(traj[0].substr(0, 12), "t,dim0,dim1,");
}

TEST_F(Cli, GradcheckPassesUnderTolerance) {
  const auto r = run("gradcheck");
  EXPECT_EQ(r.code, 0);
  const auto out = lines(r.out);
  ASSERT_FALSE(out.empty());
  EXPECT_EQ(out.back().substr(0, 4), "max\t");
  EXPECT_EQ(run("gradcheck --tol 1e-30").code, 4);
}
