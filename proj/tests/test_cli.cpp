#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "nacap/cli.hpp"
#include "test_support.hpp"

using namespace nacap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

fs::path small_config(const fs::path& dir) {
  nlohmann::json j = {
      {"model", {{"d_model", 8}, {"d_hidden", 16}, {"heads", 2}, {"dropout", 0.0}, {"n_max", 20}}},
      {"training", {{"batch_size", 16}, {"epochs_deterministic", 1}, {"epochs_nondeterministic", 1}, {"seed", 5}}},
      {"data", {{"scenes", 30}, {"k", 4}, {"d_in", 8}}}};
  auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("gen-data"), std::string::npos);
  auto sub = run({"bench", "--help"});
  EXPECT_EQ(sub.code, kExitOk);
  EXPECT_NE(sub.out.find("--repeats"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"gen-data", "--bogus", "1"}).code, kExitUsage);
  EXPECT_EQ(run({"gen-data"}).code, kExitUsage);
  EXPECT_EQ(run({"eval", "--model", "/nonexistent.ckpt", "--corpus", "/nonexistent.jsonl"}).code, kExitUsage);
  auto dir = support::temp_dir("cli_usage");
  auto r = run({"bench", "--models", dir.string(), "--repeats", "5"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("repeats"), std::string::npos);
}

TEST(Cli, GenDataWritesRequestedRecordsDeterministically) {
  auto dir = support::temp_dir("cli_gen");
  auto cfg = small_config(dir);
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--scenes", "7", "--out", (dir / "a.jsonl").string()}).code, 0);
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--scenes", "7", "--out", (dir / "b.jsonl").string()}).code, 0);
  EXPECT_EQ(lines(dir / "a.jsonl").size(), 7u);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  auto c = read_corpus((dir / "a.jsonl").string());
  EXPECT_EQ(c.front().features.rows(), 4u);
  EXPECT_EQ(c.front().features.cols(), 8u);
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--seed", "9", "--out", (dir / "c.jsonl").string()}).code, 0);
  EXPECT_EQ(lines(dir / "c.jsonl").size(), 30u);
  EXPECT_NE(slurp(dir / "c.jsonl").substr(0, 200), slurp(dir / "a.jsonl").substr(0, 200));
}

TEST(Cli, TrainGenerateEvalBenchPipeline) {
  auto dir = support::temp_dir("cli_pipeline");
  auto cfg = small_config(dir);
  const auto train_path = (dir / "train.jsonl").string(), held_path = (dir / "held.jsonl").string();
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--out", train_path}).code, 0);
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--seed", "77", "--scenes", "5", "--out", held_path}).code, 0);

  auto tr = run({"train", "--config", cfg.string(), "--corpus", train_path, "--out", (dir / "models").string(), "--arch",
                 "all"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  for (const char* a : {"fnic", "naic", "at"}) {
    EXPECT_TRUE(fs::exists(dir / "models" / (std::string(a) + ".ckpt")));
    EXPECT_EQ(lines(dir / "models" / (std::string(a) + "_train_log.csv")).size(), 3u);
  }
  EXPECT_EQ(load_checkpoint(dir / "models" / "fnic.ckpt").metadata.at("training").at("seed").get<int>(), 5);

  const auto fnic = (dir / "models" / "fnic.ckpt").string();
  auto ge = run({"generate", "--model", fnic, "--corpus", held_path, "--limit", "3", "--mode", "fnic-dt"});
  ASSERT_EQ(ge.code, 0) << ge.err;
  std::istringstream gs(ge.out);
  std::size_t count = 0;
  for (std::string l; std::getline(gs, l);) {
    auto j = nlohmann::json::parse(l);
    EXPECT_TRUE(j.contains("scene_id"));
    EXPECT_TRUE(j.at("caption").is_string());
    EXPECT_GT(j.at("latency_ns").get<std::int64_t>(), 0);
    EXPECT_EQ(j.at("mode"), "fnic-dt");
    ++count;
  }
  EXPECT_EQ(count, 3u);

  const auto report = (dir / "report.json").string();
  auto ev = run({"eval", "--model", fnic, "--corpus", held_path, "--train-corpus", train_path, "--json", report});
  ASSERT_EQ(ev.code, 0) << ev.err;
  auto j = nlohmann::json::parse(slurp(report));
  EXPECT_EQ(j.at("images"), 5);
  EXPECT_EQ(j.at("mode"), "fnic-ndt");
  for (const char* k : {"bleu1", "bleu4", "novel_pct", "unique_pct", "vocab_usage_pct"}) EXPECT_TRUE(j.contains(k));
  EXPECT_FALSE(j.contains("mean_latency_ns"));
  auto again = run({"eval", "--model", fnic, "--corpus", held_path, "--train-corpus", train_path});
  EXPECT_EQ(again.out, ev.out);

  auto wrong = run({"eval", "--model", fnic, "--corpus", held_path, "--mode", "at"});
  EXPECT_EQ(wrong.code, kExitUsage);
  auto bad_mode = run({"eval", "--model", fnic, "--corpus", held_path, "--mode", "beam"});
  EXPECT_EQ(bad_mode.code, kExitUsage);

  const auto csv = (dir / "bench.csv").string();
  auto be = run({"bench", "--config", cfg.string(), "--models", (dir / "models").string(), "--repeats", "20",
                 "--warmup", "1", "--samples", "2", "--corpus", held_path, "--out", csv});
  ASSERT_EQ(be.code, 0) << be.err;
  auto rows = lines(csv);
  ASSERT_GE(rows.size(), 4u);
  EXPECT_EQ(rows[0], "mode,n_bucket,mean_ns,std_ns,speedup");
  EXPECT_EQ(rows[1].substr(0, 7), "at,all,");

  std::ofstream(dir / "broken.ckpt") << "NACAPCKPjunk";
  auto broken = run({"eval", "--model", (dir / "broken.ckpt").string(), "--corpus", held_path});
  EXPECT_EQ(broken.code, kExitRuntime);
  EXPECT_NE(broken.err.find("checkpoint"), std::string::npos);
}

TEST(Config, ShippedProfilesMatchBuiltins) {
  const fs::path dir = fs::path(NACAP_SOURCE_DIR) / "configs";
  EXPECT_EQ(load_run_config((dir / "paper.json").string()), RunConfig::paper());
  EXPECT_EQ(load_run_config((dir / "desk.json").string()), RunConfig::desk());
  RunConfig::paper().validate();
  RunConfig::desk().validate();
}

TEST(Config, MalformedConfigIsUsageError) {
  auto dir = support::temp_dir("cli_config");
  std::ofstream(dir / "bad.json") << "{ not json";
  auto r = run({"gen-data", "--config", (dir / "bad.json").string(), "--out", (dir / "x.jsonl").string()});
  EXPECT_EQ(r.code, kExitUsage);
  std::ofstream(dir / "mismatch.json") << R"({"training": {"batch_size": 0}})";
  auto m = run({"gen-data", "--config", (dir / "mismatch.json").string(), "--out", (dir / "x.jsonl").string()});
  EXPECT_EQ(m.code, kExitUsage);
}
