#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "affplan/models.hpp"
#include "affplan/planner.hpp"
#include "affplan/tabular.hpp"
#include "affplan/tooluse.hpp"
#include "affplan/trainer.hpp"

namespace affplan::experiment {

enum class Method { kDaf, kDafNoRnn, kGcPlanet, kPlanSkeleton, kOracle };

const char* to_string(Method m);
Method parse_method(std::string_view text);
/// Methods that fit a model between rounds.
bool learns(Method m);

struct ExperimentConfig {
  /// tooluse | tooluse-stack | tabular:<file>
  std::string domain = "tooluse";
  Method method = Method::kDaf;
  /// Goal name to train and evaluate on; empty uses the domain's goal sampler.
  std::string goal;
  /// Episode horizon; 0 keeps the domain default (tool-use file or 6 for tabular).
  int env_horizon = 0;
  /// Optional tool-use geometry file layered over the domain defaults.
  std::string env_config;
  std::uint64_t seed = 1;
  trainer::TrainConfig train;
  planner::PlannerConfig planner;
  /// Widths and depths; variant and head follow from the method.
  models::ModelConfig model;
  /// Rounds between resumable checkpoints (the last round is always saved).
  std::size_t checkpoint_every = 10;
  /// Bundle whose parameters initialise the model (finetuning).
  std::string init_checkpoint;
  std::string output = "runs/default";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Keys in canonical order.
const std::vector<std::string>& config_keys();
/// Throws ConfigError on an unknown key or malformed value.
void set_value(ExperimentConfig& config, std::string_view key, std::string_view value);
std::string get_value(const ExperimentConfig& config, std::string_view key);

/// `key value` lines, '#' comments. Unknown keys and bad values raise
/// ParseError with the offending line.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
/// Every key with its value, canonical order.
std::string serialize(const ExperimentConfig& config);

/// Cross-field checks (method vs domain, goal name, counts).
void validate(const ExperimentConfig& config);

/// Model configuration with the method's variant and head.
models::ModelConfig model_config(const ExperimentConfig& config);

/// Environment built from the domain selector.
struct Domain {
  std::unique_ptr<Environment> env;
  /// Set for tabular domains.
  const tabular::TabularMdp* mdp = nullptr;
  /// Set for tool-use domains.
  const tooluse::World* world = nullptr;
  /// Fixed goal id or -1.
  int goal = -1;
};

Domain make_domain(const ExperimentConfig& config);

/// Episode driver for the method on this domain.
trainer::Collector make_collector(const ExperimentConfig& config, const Domain& domain);

/// Discrete skills of the goal's plan-skeleton baseline from the current state.
std::vector<int> skeleton_for(const Domain& domain, int goal, std::size_t max_length);

/// Fresh bundle for the experiment, optionally initialised from init_checkpoint.
models::ModelBundle initial_bundle(const ExperimentConfig& config, const Domain& domain);

/// Throws ConfigError when a loaded bundle cannot serve this domain.
void check_compatible(const models::ModelBundle& bundle, const Domain& domain);

// ---------------------------------------------------------------------------
// Training runs

struct RunFiles {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.txt"; }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
  /// Per-round wall-clock seconds, kept out of metrics.csv so that file stays deterministic.
  std::filesystem::path timing() const { return dir / "timing.csv"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
  std::filesystem::path buffer() const { return dir / "buffer.bin"; }
  std::filesystem::path bundle() const { return dir / "final.bundle"; }
};

struct RunOptions {
  /// Continue from the checkpoint in the output directory if one exists.
  bool resume = false;
  /// Called after every round; returning false stops the run early (the
  /// stopping round is still checkpointed).
  std::function<bool(const trainer::RoundMetrics&, const trainer::TrainingState&)> on_round;
  /// Progress lines; null for silence.
  std::ostream* log = nullptr;
};

struct RunResult {
  std::vector<trainer::RoundMetrics> rounds;  // this invocation only
  trainer::TrainingState state;
};

/// Seeds the buffer, then trains round by round. Writes the config snapshot,
/// metrics CSV, periodic checkpoints and the final bundle into `dir`. On a
/// mid-run failure the last checkpoint stays in place and the error propagates.
RunResult run_training(const ExperimentConfig& config, const std::filesystem::path& dir,
                       const RunOptions& options = {});

// ---------------------------------------------------------------------------
// Evaluation

struct GoalRate {
  std::string goal;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double rate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct EvalReport {
  std::size_t episodes = 0;
  std::vector<GoalRate> goals;  // goals that were attempted, in id order
};

/// Wilson score interval at 95%.
std::pair<double, double> binomial_interval(std::size_t successes, std::size_t trials);

/// Frozen-bundle episodes (bundle may be null for the oracle method).
EvalReport evaluate(const ExperimentConfig& config, const models::ModelBundle* bundle, std::size_t episodes,
                    std::uint64_t seed);
void write_report(std::ostream& out, const EvalReport& report);

// ---------------------------------------------------------------------------
// Plan-score heatmaps (tool-use domains)

struct HeatmapSpec {
  std::size_t width = 64;
  std::size_t height = 64;
  /// "grasp" probes the grasp skill of the object nearest each cell; a skill
  /// name probes that skill (grasp skills map the cell to their grasp point,
  /// others span theta0/theta1 over [-1, 1]).
  std::string skill = "grasp";
  /// Remaining parameters for skills with more than two.
  std::array<float, kMaxArity> fixed{};
  std::string goal = "red";
  /// Reset seed of the probed scene and seed of the continuation sampler.
  std::uint64_t seed = 0;
  enum class Normalization { kMinMax, kNone };
  Normalization normalization = Normalization::kMinMax;

  void validate() const;
};

struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  /// Row-major, row 0 at the top (largest y).
  std::vector<double> score;
  std::vector<double> normalized;
  std::vector<int> skill;
  std::vector<tooluse::Vec2> centre;
  tooluse::WorldState state;

  std::size_t index(std::size_t row, std::size_t col) const { return row * width + col; }
};

/// Each cell: a plan whose first command is the probed skill at the cell,
/// completed by the best sampled continuation (fixed seed), scored by the
/// product of predicted affordances.
Heatmap compute_heatmap(const models::ModelBundle& bundle, const tooluse::World& world, const HeatmapSpec& spec,
                        const planner::PlannerConfig& planner);
/// row,col,x,y,skill,score,normalized
void write_heatmap_csv(std::ostream& out, const Heatmap& map);
/// Binary 8-bit grayscale portable graymap of the normalized grid.
void write_heatmap_pgm(std::ostream& out, const Heatmap& map);
std::uint8_t grey_level(double normalized);

/// Band around the tool handle in which a grasp holds the tool.
tooluse::Box handle_region(const tooluse::World& world, const tooluse::WorldState& s);
/// Mean normalized score over cells whose centre lies inside `box`.
double mean_over(const Heatmap& map, const tooluse::Box& box);

// ---------------------------------------------------------------------------
// Replay buffer inspection

/// Sizes, per-goal episode and rewarded counts, per-skill attempt and
/// afforded counts. `vocab` may be null (ids only).
void write_buffer_summary(std::ostream& out, const trainer::ReplayBuffer& buffer, const SkillVocabulary* vocab);
/// Trajectory-log lines (episode step skill theta0..3 afforded goal_reached) for one stored episode.
void write_buffer_episode(std::ostream& out, const trainer::ReplayBuffer& buffer, std::size_t episode);

// ---------------------------------------------------------------------------
// Oracle report (tabular)

struct OracleReport {
  std::optional<tabular::RankedPlan> best;
  std::vector<tabular::RankedPlan> ranking;
  /// Largest |recursion - enumeration| over the ranking.
  double max_discrepancy = 0.0;
  bool cross_check_ok = true;
};

OracleReport oracle_report(const tabular::TabularMdp& mdp, int goal, std::size_t max_length);
void write_oracle_report(std::ostream& out, const tabular::TabularMdp& mdp, const OracleReport& report);

}  // namespace affplan::experiment
