// Runs the command-line binary and checks exit statuses, output and artifacts.

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

/// Runs the CLI with `args` (already shell-quoted); stderr is merged into the output.
Run cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + AFFPLAN_CLI + "' " + args + " 2>&1";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string mdp(const std::string& name) { return std::string(AFFPLAN_SOURCE_DIR) + "/configs/mdp/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Dir {
  fs::path path;
  explicit Dir(const std::string& tag) : path(fs::temp_directory_path() / ("affplan_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Dir() { fs::remove_all(path); }
};

const std::string kSmall =
    " --seed-episodes 8 --rollouts 2 --updates 2 --batch 4 --overshoot 3 --candidates 8 --latent 4 --hidden 8"
    " --recurrent-hidden 8";

}  // namespace

TEST(Cli, OracleKeyDoor) {
  const auto r = cli("oracle '" + mdp("key_door.mdp") + "'");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("best (pickup_key, open_door, goal_escape) probability 1.000000000000"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("cross-check ok"), std::string::npos);
}

TEST(Cli, OracleStochasticDoorPrintsTwelveDecimals) {
  const auto r = cli("oracle '" + mdp("key_door_stochastic.mdp") + "' --goal escape");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("probability 0.500000000000\n"), std::string::npos) << r.out;
}

TEST(Cli, OracleWithoutPlanHasItsOwnStatus) {
  const auto r = cli("oracle '" + mdp("unreachable.mdp") + "'");
  EXPECT_EQ(r.status, 3) << r.out;
  EXPECT_NE(r.out.find("no goal-directed plan"), std::string::npos) << r.out;
}

TEST(Cli, MalformedMdpReportsTheLine) {
  Dir d("badmdp");
  {
    std::ofstream out(d.path / "bad.mdp");
    out << "states a b\ninitial a 1.0\nskill go extra\n";
  }
  const auto r = cli("oracle '" + (d.path / "bad.mdp").string() + "'");
  EXPECT_EQ(r.status, 2) << r.out;
  EXPECT_NE(r.out.find("line 3"), std::string::npos) << r.out;
}

TEST(Cli, TrainOneRoundThenRerunIsIdentical) {
  Dir a("train_a"), b("train_b");
  const std::string args = "train --domain tooluse --method daf --rounds 1 --seed 1" + kSmall;
  const auto ra = cli(args + " --output '" + a.path.string() + "'");
  ASSERT_EQ(ra.status, 0) << ra.out;
  const auto rb = cli(args + " --output '" + b.path.string() + "'");
  ASSERT_EQ(rb.status, 0) << rb.out;
  const std::string metrics = slurp(a.path / "metrics.csv");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 2);
  EXPECT_EQ(metrics, slurp(b.path / "metrics.csv"));
  EXPECT_TRUE(fs::exists(a.path / "final.bundle"));
  EXPECT_TRUE(fs::exists(a.path / "config.txt"));
}

TEST(Cli, OutputRootComesFromTheEnvironment) {
  Dir root("root");
  const auto r = cli("train --rounds 1 --output sub/run" + kSmall, "AFFPLAN_OUTPUT_ROOT='" + root.path.string() + "'");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(root.path / "sub/run/metrics.csv"));
}

TEST(Cli, ConfigFileThenFlags) {
  Dir d("cfgfile");
  {
    std::ofstream out(d.path / "exp.cfg");
    out << "rounds 5\nmethod gc-planet\n";
  }
  const auto r = cli("train --config '" + (d.path / "exp.cfg").string() + "' --rounds 1 --output '" +
                     (d.path / "run").string() + "'" + kSmall);
  ASSERT_EQ(r.status, 0) << r.out;
  const std::string snapshot = slurp(d.path / "run/config.txt");
  EXPECT_NE(snapshot.find("rounds 1\n"), std::string::npos);
  EXPECT_NE(snapshot.find("method gc-planet\n"), std::string::npos);
}

TEST(Cli, InvalidConfigExitsNonZeroWithAMessage) {
  Dir d("invalid");
  {
    std::ofstream out(d.path / "exp.cfg");
    out << "rounds 5\nlearning_rat 0.1\n";
  }
  auto r = cli("train --config '" + (d.path / "exp.cfg").string() + "'");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("line 2"), std::string::npos) << r.out;
  r = cli("train --method nonsense");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("nonsense"), std::string::npos) << r.out;
  r = cli("train --overshoot 1 --output '" + (d.path / "never").string() + "'");
  EXPECT_EQ(r.status, 2) << r.out;
  EXPECT_FALSE(fs::exists(d.path / "never"));
}

TEST(Cli, EvalHeatmapAndReplayInspect) {
  Dir d("eval");
  const std::string run = (d.path / "run").string();
  ASSERT_EQ(cli("train --rounds 1 --output '" + run + "'" + kSmall).status, 0);
  auto r = cli("eval --checkpoint '" + run + "/final.bundle' --episodes 0" + kSmall);
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(r.out, "episodes 0\n");
  r = cli("eval --checkpoint '" + run + "/final.bundle' --episodes 4 --goal red" + kSmall);
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("goal red episodes 4"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("ci95 ["), std::string::npos) << r.out;

  r = cli("heatmap --checkpoint '" + run + "/final.bundle' --width 5 --height 4 --out '" + run + "/hm'" + kSmall);
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(fs::file_size(run + "/hm.pgm"), std::string("P5\n5 4\n255\n").size() + 20);
  const std::string csv = slurp(run + "/hm.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);

  r = cli("replay-inspect '" + run + "/buffer.bin' --checkpoint '" + run + "/final.bundle'");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("episodes 10\n"), std::string::npos) << r.out;
  r = cli("replay-inspect '" + run + "/buffer.bin' --episode 1");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(r.out.rfind("1 0 ", 0), 0u) << r.out;
}

TEST(Cli, EvalOracleMethodOnTabularNeedsNoCheckpoint) {
  const auto r = cli("eval --domain 'tabular:" + mdp("key_door.mdp") + "' --method oracle --episodes 20");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("goal escape episodes 20 successes 20 rate 1.0000"), std::string::npos) << r.out;
}

TEST(Cli, UnknownVerbFails) {
  EXPECT_NE(cli("explode").status, 0);
  EXPECT_NE(cli("").status, 0);
}
