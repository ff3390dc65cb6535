// Command-line front end. Talks to the library only through affplan.h.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "affplan.h"

namespace {

// Exit statuses.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNoPlan = 3;
constexpr int kExitCrossCheck = 4;

constexpr const char* kOutputRootVar = "AFFPLAN_OUTPUT_ROOT";

void to_stdout(const char* data, size_t size, void*) {
  std::fwrite(data, 1, size, stdout);
  std::fflush(stdout);
}

void to_string(const char* data, size_t size, void* user) { static_cast<std::string*>(user)->append(data, size); }

int report(affplan_status status) {
  if (status == AFFPLAN_OK) return kExitOk;
  std::fprintf(stderr, "error (%s): %s\n", affplan_status_name(status), affplan_last_error());
  return status == AFFPLAN_ERR_CONFIG || status == AFFPLAN_ERR_PARSE || status == AFFPLAN_ERR_ARGUMENT ? kExitInvalid
                                                                                                         : kExitFailure;
}

std::string kebab(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

/// Relative output paths live under $AFFPLAN_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::string& path) {
  std::filesystem::path p(path);
  const char* root = std::getenv(kOutputRootVar);
  if (p.is_relative() && root && *root) return std::filesystem::path(root) / p;
  return p;
}

class ConfigHandle {
 public:
  ConfigHandle() {
    if (affplan_config_create(&ptr_) != AFFPLAN_OK) throw std::runtime_error(affplan_last_error());
  }
  ~ConfigHandle() { affplan_config_destroy(ptr_); }
  ConfigHandle(const ConfigHandle&) = delete;
  ConfigHandle& operator=(const ConfigHandle&) = delete;
  affplan_config* get() const { return ptr_; }

  std::string value(const char* key) const {
    std::string out;
    affplan_config_get(ptr_, key, to_string, &out);
    return out;
  }

 private:
  affplan_config* ptr_ = nullptr;
};

class BundleHandle {
 public:
  ~BundleHandle() { affplan_bundle_destroy(ptr_); }
  affplan_bundle** out() { return &ptr_; }
  affplan_bundle* get() const { return ptr_; }

 private:
  affplan_bundle* ptr_ = nullptr;
};

/// --config FILE plus one flag per configuration key.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "Experiment config file (key value lines)")->check(CLI::ExistingFile);
    for (size_t i = 0; i < affplan_config_key_count(); ++i) {
      const std::string key = affplan_config_key(i);
      cmd->add_option("--" + kebab(key), values[key], "config key " + key);
    }
  }

  /// File first, then flags. Returns a non-zero exit status on failure.
  int apply(CLI::App* cmd, const ConfigHandle& config) const {
    if (!file.empty()) {
      if (const int rc = report(affplan_config_load(config.get(), file.c_str()))) return rc;
    }
    for (const auto& [key, value] : values) {
      if (cmd->count("--" + kebab(key)) == 0) continue;
      if (const int rc = report(affplan_config_set(config.get(), key.c_str(), value.c_str()))) return rc;
    }
    return report(affplan_config_validate(config.get()));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affordance-based planning experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(affplan_version()));
  app.footer(std::string("Relative output paths are placed under $") + kOutputRootVar + " when set.\n"
             "Exit status: 0 ok, 1 failure, 2 invalid input, 3 no goal-directed plan, 4 oracle cross-check failed.");

  // train
  auto* train = app.add_subcommand("train", "Train a method and write run artifacts");
  ConfigFlags train_flags;
  train_flags.attach(train);
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a frozen checkpoint");
  ConfigFlags eval_flags;
  eval_flags.attach(eval);
  std::string eval_checkpoint;
  size_t episodes = 200;
  uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_checkpoint, "Bundle file (not needed for plan-skeleton or oracle)");
  eval->add_option("--episodes", episodes, "Episodes to run")->capture_default_str();
  eval->add_option("--eval-seed", eval_seed, "Seed of the evaluation episodes")->capture_default_str();

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "Plan-score heatmap of a checkpoint");
  ConfigFlags heat_flags;
  heat_flags.attach(heatmap);
  affplan_heatmap_spec spec;
  affplan_heatmap_spec_default(&spec);
  std::string heat_checkpoint, heat_skill = spec.skill, heat_out;
  bool raw = false;
  heatmap->add_option("--checkpoint", heat_checkpoint, "Bundle file")->required();
  heatmap->add_option("--width", spec.width, "Grid columns")->capture_default_str();
  heatmap->add_option("--height", spec.height, "Grid rows")->capture_default_str();
  heatmap->add_option("--skill", heat_skill, "Probed skill: grasp or a skill name")->capture_default_str();
  heatmap->add_option("--heatmap-seed", spec.seed, "Scene and continuation seed")->capture_default_str();
  heatmap->add_flag("--raw", raw, "Clamp raw scores instead of min-max normalizing the image");
  heatmap->add_option("--out", heat_out, "Output prefix (default <output>/heatmap)");

  // oracle
  auto* oracle = app.add_subcommand("oracle", "Exact best plan on a tabular MDP");
  std::string mdp_file, oracle_goal;
  size_t max_length = 4;
  oracle->add_option("mdp", mdp_file, "MDP definition file")->required();
  oracle->add_option("--goal", oracle_goal, "Goal name (default: the first goal)");
  oracle->add_option("--max-length", max_length, "Longest plan considered")->capture_default_str();

  // replay-inspect
  auto* inspect = app.add_subcommand("replay-inspect", "Summarize a replay buffer snapshot");
  std::string buffer_file, inspect_checkpoint;
  long episode = -1;
  inspect->add_option("buffer", buffer_file, "Buffer snapshot (buffer.bin)")->required();
  inspect->add_option("--checkpoint", inspect_checkpoint, "Checkpoint supplying skill and goal names");
  inspect->add_option("--episode", episode, "Print this episode's trajectory log instead of the summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  if (*train) {
    ConfigHandle config;
    if (const int rc = train_flags.apply(train, config)) return rc;
    const auto dir = resolve_output(config.value("output"));
    std::printf("output %s\n", dir.string().c_str());
    std::fflush(stdout);
    return report(affplan_train(config.get(), dir.string().c_str(), resume ? 1 : 0, to_stdout, nullptr));
  }

  if (*eval) {
    ConfigHandle config;
    if (const int rc = eval_flags.apply(eval, config)) return rc;
    BundleHandle bundle;
    if (!eval_checkpoint.empty()) {
      if (const int rc = report(affplan_bundle_load(eval_checkpoint.c_str(), bundle.out()))) return rc;
    }
    return report(affplan_eval(config.get(), bundle.get(), episodes, eval_seed, nullptr, 0, nullptr, to_stdout, nullptr));
  }

  if (*heatmap) {
    ConfigHandle config;
    if (const int rc = heat_flags.apply(heatmap, config)) return rc;
    BundleHandle bundle;
    if (const int rc = report(affplan_bundle_load(heat_checkpoint.c_str(), bundle.out()))) return rc;
    const std::string goal = config.value("goal");
    spec.goal = goal.empty() ? "red" : goal.c_str();
    spec.skill = heat_skill.c_str();
    spec.normalize = raw ? 0 : 1;
    const std::string prefix =
        heat_out.empty() ? (resolve_output(config.value("output")) / "heatmap").string() : resolve_output(heat_out).string();
    std::filesystem::path parent = std::filesystem::path(prefix).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    const std::string csv = prefix + ".csv", pgm = prefix + ".pgm";
    if (const int rc = report(affplan_heatmap(bundle.get(), config.get(), &spec, csv.c_str(), pgm.c_str()))) return rc;
    std::printf("wrote %s\nwrote %s\n", csv.c_str(), pgm.c_str());
    return kExitOk;
  }

  if (*oracle) {
    affplan_oracle_result result{};
    const int rc = report(affplan_oracle(mdp_file.c_str(), oracle_goal.empty() ? nullptr : oracle_goal.c_str(),
                                         max_length, &result, to_stdout, nullptr));
    if (rc) return rc;
    if (!result.cross_check_ok) return kExitCrossCheck;
    return result.has_plan ? kExitOk : kExitNoPlan;
  }

  if (*inspect) {
    return report(affplan_replay_inspect(buffer_file.c_str(), inspect_checkpoint.empty() ? nullptr : inspect_checkpoint.c_str(),
                                         episode, to_stdout, nullptr));
  }
  return kExitInvalid;
}
