#include <gtest/gtest.h>

#include <cstdio>

#include "pipeline.hpp"

using namespace esir;
using fixtures::run;

namespace {

fs::path tmp(const std::string& name) {
  fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const fs::path kSamples = fs::path(ESIR_SOURCE_DIR) / "samples";

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--manifest", "x.json"}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST(Cli, ValidateSamples) {
  auto r = run({"validate", "--manifest", (kSamples / "manifest.json").string()});
  EXPECT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("2 valid, 0 invalid"), std::string::npos) << r.out;
}

TEST(Cli, ValidateOneBadClipExitsTwo) {
  fs::path d = tmp("esir_cli_validate");
  auto doc = nlohmann::json::parse(read_text_file(kSamples / "clips/mirage_entry_01.json"));
  doc["events"][1]["location"] = "banana";
  write_text_file(d / "bad.json", doc.dump());
  auto r = run({"--json", "validate", "--clip", (kSamples / "clips/mirage_entry_01.json").string(), "--clip",
                (d / "bad.json").string()});
  EXPECT_EQ(r.code, cli::kValidation);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["valid"], 1);
  ASSERT_EQ(j["invalid"].size(), 1u);
  EXPECT_NE(j["invalid"][0]["message"].get<std::string>().find("events[1].location"), std::string::npos);
}

TEST(Cli, MissingInputIsRuntimeError) {
  fs::path d = tmp("esir_cli_missing");
  auto r = run({"train", "--manifest", (d / "nope.json").string(), "--pro", "a", "--out-dir", d.string()});
  EXPECT_NE(r.code, cli::kOk);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, MismatchedPoolsVersionExitsTwo) {
  fs::path d = tmp("esir_cli_pools");
  auto pools = nlohmann::json::parse(read_text_file(kSamples / "pools.json"));
  pools["version"] = "other-v9";
  write_text_file(d / "pools.json", pools.dump());
  auto r = run({"validate", "--pools", (d / "pools.json").string(), "--manifest", (kSamples / "manifest.json").string()});
  EXPECT_EQ(r.code, cli::kValidation) << r.err;
}

TEST(Cli, PipelineEndToEnd) {
  fs::path d = fs::temp_directory_path() / "esir_cli_pipeline";
  ASSERT_EQ(fixtures::run_pipeline(d, {}), "");
  for (const char* f : {"models/pro_a.esir.json", "models/pro_a.train_log.jsonl", "models/pro_a.config.json",
                        "fit_reports.csv", "score.config.json", "eval/summary.csv", "eval/similarity.csv",
                        "eval/correctness.csv", "eval/study-report.config.json"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  auto reports = parse_fit_reports_csv(read_text_file(d / "fit_reports.csv"));
  EXPECT_EQ(reports.size(), 20u);

  const std::string data = (d / "data").string(), models = (d / "models").string();
  auto rank = run({"--json", "rank", "--manifest", data + "/test_manifest.json", "--pools", data + "/pools.json",
                   "--models", models, "--target", "pro_b", "--top", "3"});
  ASSERT_EQ(rank.code, 0) << rank.err;
  auto ranked = nlohmann::json::parse(rank.out);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0]["rank"], 1);

  const std::string clip = reports[0].clip_id;
  auto heat = run({"heatmap", "--manifest", data + "/test_manifest.json", "--pools", data + "/pools.json", "--models",
                   models, "--clip", clip, "--pro", "pro_a"});
  ASSERT_EQ(heat.code, 0) << heat.err;
  EXPECT_EQ(heat.out.substr(0, heat.out.find('\n')), "clip_id,t,timestamp_s,reward,reward_norm");

  auto unknown = run({"rank", "--manifest", data + "/test_manifest.json", "--pools", data + "/pools.json", "--models",
                      models, "--target", "nobody"});
  EXPECT_EQ(unknown.code, cli::kValidation);
}

TEST(Cli, TrainTwiceIsByteIdentical) {
  fs::path d = tmp("esir_cli_train_twice");
  ASSERT_EQ(run({"synth", "--out-dir", (d / "data").string(), "--seed", "5", "--train-per-profile", "3",
                 "--test-per-profile", "1", "--raters", "0"})
                .code,
            0);
  auto train = [&](const std::string& out) {
    return run({"train", "--manifest", (d / "data/train_manifest.json").string(), "--pools",
                (d / "data/pools.json").string(), "--pro", "pro_c", "--out-dir", (d / out).string(), "--seed", "11",
                "--epochs", "3"});
  };
  ASSERT_EQ(train("m1").code, 0);
  ASSERT_EQ(train("m2").code, 0);
  EXPECT_EQ(read_text_file(d / "m1/pro_c.esir.json"), read_text_file(d / "m2/pro_c.esir.json"));
  EXPECT_EQ(read_text_file(d / "m1/pro_c.train_log.jsonl"), read_text_file(d / "m2/pro_c.train_log.jsonl"));
}

TEST(Cli, BinaryMatchesInProcess) {
  const std::string cmd = std::string(ESIR_CLI_PATH) + " validate --manifest " + (kSamples / "manifest.json").string();
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_EQ(out, run({"validate", "--manifest", (kSamples / "manifest.json").string()}).out);

  FILE* bad = popen((std::string(ESIR_CLI_PATH) + " validate --clip /nonexistent.json >/dev/null 2>&1").c_str(), "r");
  ASSERT_NE(bad, nullptr);
  EXPECT_EQ(WEXITSTATUS(pclose(bad)), cli::kValidation);
}
