// Exercises the shared library through its C header only.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "affplan.h"

namespace fs = std::filesystem;

namespace {

void collect(const char* data, size_t size, void* user) { static_cast<std::string*>(user)->append(data, size); }

std::string mdp_path(const std::string& name) { return std::string(AFFPLAN_SOURCE_DIR) + "/configs/mdp/" + name; }

struct Config {
  affplan_config* ptr = nullptr;
  Config() { EXPECT_EQ(affplan_config_create(&ptr), AFFPLAN_OK); }
  ~Config() { affplan_config_destroy(ptr); }
};

struct Dir {
  fs::path path;
  explicit Dir(const std::string& tag) : path(fs::temp_directory_path() / ("affplan_capi_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~Dir() { fs::remove_all(path); }
};

const char* kTiny =
    "seed 5\nrounds 2\nseed_episodes 8\nrollouts 2\nupdates 2\nbatch 4\novershoot 3\ncandidates 8\n"
    "latent 4\nhidden 8\nrecurrent_hidden 8\ncheckpoint_every 1\n";

}  // namespace

TEST(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(affplan_config_create(nullptr), AFFPLAN_ERR_ARGUMENT);
  EXPECT_STRNE(affplan_last_error(), "");
  EXPECT_EQ(affplan_config_set(nullptr, "rounds", "1"), AFFPLAN_ERR_ARGUMENT);
  EXPECT_EQ(affplan_train(nullptr, "x", 0, nullptr, nullptr), AFFPLAN_ERR_ARGUMENT);
  EXPECT_EQ(affplan_bundle_load(nullptr, nullptr), AFFPLAN_ERR_ARGUMENT);
  EXPECT_EQ(affplan_bundle_observation_width(nullptr), 0u);
  affplan_config_destroy(nullptr);
  affplan_bundle_destroy(nullptr);
}

TEST(CApi, ConfigKeysSetGetAndSerialize) {
  Config c;
  ASSERT_GT(affplan_config_key_count(), 10u);
  EXPECT_STREQ(affplan_config_key(0), "domain");
  EXPECT_EQ(affplan_config_key(affplan_config_key_count()), nullptr);
  ASSERT_EQ(affplan_config_set(c.ptr, "rounds", "12"), AFFPLAN_OK);
  std::string v;
  ASSERT_EQ(affplan_config_get(c.ptr, "rounds", collect, &v), AFFPLAN_OK);
  EXPECT_EQ(v, "12");
  std::string text;
  ASSERT_EQ(affplan_config_serialize(c.ptr, collect, &text), AFFPLAN_OK);
  EXPECT_NE(text.find("rounds 12\n"), std::string::npos);

  // The serialized text parses back to the same canonical text.
  Config d;
  ASSERT_EQ(affplan_config_parse(d.ptr, text.c_str()), AFFPLAN_OK);
  std::string again;
  affplan_config_serialize(d.ptr, collect, &again);
  EXPECT_EQ(again, text);
}

TEST(CApi, ErrorsCarryCodesAndMessages) {
  Config c;
  EXPECT_EQ(affplan_config_set(c.ptr, "no_such_key", "1"), AFFPLAN_ERR_CONFIG);
  EXPECT_NE(std::string(affplan_last_error()).find("no_such_key"), std::string::npos);
  EXPECT_EQ(affplan_config_parse(c.ptr, "rounds 1\nbogus 2\n"), AFFPLAN_ERR_PARSE);
  EXPECT_NE(std::string(affplan_last_error()).find("line 2"), std::string::npos);
  EXPECT_EQ(affplan_config_load(c.ptr, "/nonexistent/file"), AFFPLAN_ERR_IO);
  ASSERT_EQ(affplan_config_set(c.ptr, "method", "oracle"), AFFPLAN_OK);
  EXPECT_EQ(affplan_config_validate(c.ptr), AFFPLAN_ERR_CONFIG);
  // A successful call clears the message.
  EXPECT_EQ(affplan_config_set(c.ptr, "method", "daf"), AFFPLAN_OK);
  EXPECT_STREQ(affplan_last_error(), "");
}

TEST(CApi, TrainEvalHeatmapAndInspect) {
  Dir dir("run");
  Config c;
  ASSERT_EQ(affplan_config_parse(c.ptr, kTiny), AFFPLAN_OK);
  std::string progress;
  ASSERT_EQ(affplan_train(c.ptr, dir.path.c_str(), 0, collect, &progress), AFFPLAN_OK) << affplan_last_error();
  EXPECT_NE(progress.find("round 2"), std::string::npos) << progress;
  for (const char* f : {"config.txt", "metrics.csv", "timing.csv", "checkpoint.bin", "buffer.bin", "final.bundle"}) {
    EXPECT_TRUE(fs::exists(dir.path / f)) << f;
  }

  affplan_bundle* b = nullptr;
  ASSERT_EQ(affplan_bundle_load((dir.path / "final.bundle").c_str(), &b), AFFPLAN_OK);
  EXPECT_EQ(affplan_bundle_observation_width(b), 18u);
  EXPECT_EQ(affplan_bundle_skill_count(b), 9u);

  affplan_goal_rate rates[4];
  size_t count = 0;
  std::string text;
  ASSERT_EQ(affplan_eval(c.ptr, b, 6, 1, rates, 4, &count, collect, &text), AFFPLAN_OK) << affplan_last_error();
  size_t total = 0;
  for (size_t i = 0; i < count; ++i) {
    total += rates[i].episodes;
    EXPECT_LE(rates[i].ci_low, rates[i].rate);
    EXPECT_GE(rates[i].ci_high, rates[i].rate);
  }
  EXPECT_EQ(total, 6u);
  EXPECT_EQ(text.rfind("episodes 6\n", 0), 0u);

  affplan_heatmap_spec spec;
  affplan_heatmap_spec_default(&spec);
  EXPECT_EQ(spec.width, 64u);
  spec.width = 4;
  spec.height = 3;
  const auto csv = dir.path / "h.csv", pgm = dir.path / "h.pgm";
  ASSERT_EQ(affplan_heatmap(b, c.ptr, &spec, csv.c_str(), pgm.c_str()), AFFPLAN_OK) << affplan_last_error();
  EXPECT_EQ(fs::file_size(pgm), std::string("P5\n4 3\n255\n").size() + 12);
  spec.width = 1;
  EXPECT_EQ(affplan_heatmap(b, c.ptr, &spec, nullptr, nullptr), AFFPLAN_ERR_CONFIG);

  std::string summary;
  ASSERT_EQ(affplan_replay_inspect((dir.path / "buffer.bin").c_str(), (dir.path / "final.bundle").c_str(), -1, collect,
                                   &summary),
            AFFPLAN_OK);
  EXPECT_NE(summary.find("episodes 12\n"), std::string::npos) << summary;
  EXPECT_NE(summary.find("skill grasp_tool"), std::string::npos) << summary;
  std::string episode;
  ASSERT_EQ(affplan_replay_inspect((dir.path / "buffer.bin").c_str(), nullptr, 0, collect, &episode), AFFPLAN_OK);
  EXPECT_EQ(episode.rfind("0 0 ", 0), 0u) << episode;
  EXPECT_EQ(affplan_replay_inspect((dir.path / "buffer.bin").c_str(), nullptr, 500, collect, &episode),
            AFFPLAN_ERR_CONFIG);
  affplan_bundle_destroy(b);
}

TEST(CApi, EvalOfAMismatchedCheckpointNamesTheWidth) {
  Dir dir("mismatch");
  Config tab;
  ASSERT_EQ(affplan_config_parse(tab.ptr, kTiny), AFFPLAN_OK);
  ASSERT_EQ(affplan_config_set(tab.ptr, "domain", ("tabular:" + mdp_path("key_door.mdp")).c_str()), AFFPLAN_OK);
  ASSERT_EQ(affplan_train(tab.ptr, dir.path.c_str(), 0, nullptr, nullptr), AFFPLAN_OK) << affplan_last_error();
  affplan_bundle* b = nullptr;
  ASSERT_EQ(affplan_bundle_load((dir.path / "final.bundle").c_str(), &b), AFFPLAN_OK);
  Config tool;
  ASSERT_EQ(affplan_config_parse(tool.ptr, kTiny), AFFPLAN_OK);
  EXPECT_EQ(affplan_eval(tool.ptr, b, 1, 1, nullptr, 0, nullptr, nullptr, nullptr), AFFPLAN_ERR_CONFIG);
  EXPECT_NE(std::string(affplan_last_error()).find("width 3"), std::string::npos) << affplan_last_error();
  affplan_heatmap_spec spec;
  affplan_heatmap_spec_default(&spec);
  EXPECT_EQ(affplan_heatmap(b, tool.ptr, &spec, nullptr, nullptr), AFFPLAN_ERR_CONFIG);
  EXPECT_NE(std::string(affplan_last_error()).find("width"), std::string::npos);
  affplan_bundle_destroy(b);
}

TEST(CApi, OracleResults) {
  affplan_oracle_result r{};
  std::string text;
  ASSERT_EQ(affplan_oracle(mdp_path("key_door_stochastic.mdp").c_str(), nullptr, 4, &r, collect, &text), AFFPLAN_OK);
  EXPECT_EQ(r.has_plan, 1);
  EXPECT_EQ(r.cross_check_ok, 1);
  EXPECT_EQ(r.probability, 0.5);
  EXPECT_NE(text.find("0.500000000000"), std::string::npos);

  ASSERT_EQ(affplan_oracle(mdp_path("unreachable.mdp").c_str(), "nowhere", 4, &r, nullptr, nullptr), AFFPLAN_OK);
  EXPECT_EQ(r.has_plan, 0);
  EXPECT_EQ(affplan_oracle(mdp_path("key_door.mdp").c_str(), "elsewhere", 4, &r, nullptr, nullptr), AFFPLAN_ERR_CONFIG);

  const auto bad = fs::temp_directory_path() / ("affplan_bad_" + std::to_string(::getpid()) + ".mdp");
  {
    std::ofstream out(bad);
    out << "states a b\ninitial a 1.0\nskill go\nafford go a\ntrans a go nowhere 1.0\n";
  }
  EXPECT_EQ(affplan_oracle(bad.c_str(), nullptr, 3, &r, nullptr, nullptr), AFFPLAN_ERR_PARSE);
  EXPECT_NE(std::string(affplan_last_error()).find("line 5"), std::string::npos) << affplan_last_error();
  fs::remove(bad);
}
