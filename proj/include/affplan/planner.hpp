#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "affplan/models.hpp"
#include "affplan/skills.hpp"
#include "affplan/tabular.hpp"

namespace affplan::planner {

inline constexpr double kInfiniteCost = std::numeric_limits<double>::infinity();

struct PlannerConfig {
  /// Plans are at most min(remaining steps, horizon_cap) long.
  std::size_t horizon_cap = 6;
  std::size_t candidates = 256;
  double temperature = 1.0;
  /// Force the goal's no-op skill at the last step.
  bool enforce_goal = true;
  /// Sample skeletons from the proposal head when the model has one.
  bool use_proposal = true;
  /// Enumerate every plan over a finite command set instead of sampling.
  bool exhaustive = false;
  /// Costs within this distance count as ties (lowest index wins).
  double tie_tolerance = 0.0;
  /// Action when every candidate is infinite: resample once with the goal
  /// skill enforced, then take the best candidate (kBest) or the first one (kFirst).
  enum class Fallback { kBest, kFirst };
  Fallback fallback = Fallback::kBest;
  /// Per-skill parameter ranges; skills without an entry use [-1, 1].
  std::vector<ParamRange> ranges;

  const ParamRange& range(int skill) const;
  friend bool operator==(const PlannerConfig&, const PlannerConfig&) = default;
};

/// Batched imagined rollouts that a plan can be scored against. Rows are
/// independent candidates sharing a start observation.
class PlanModel {
 public:
  enum class Scoring { kAffordance, kReward };

  virtual ~PlanModel() = default;
  virtual const SkillVocabulary& vocabulary() const = 0;
  virtual Scoring scoring() const { return Scoring::kAffordance; }
  virtual void begin(std::span<const float> observation, std::size_t rows) = 0;
  virtual bool has_proposal() const { return false; }
  /// Rows x skills.
  virtual nn::Matrix<float> proposal_logits() const;
  /// Probability that each row's current state affords its command.
  virtual std::vector<double> affordance(std::span<const Command> commands) = 0;
  /// Predicted reward for `goal` at each row's current state (reward scoring).
  virtual std::vector<double> reward(int goal) const;
  virtual void advance(std::span<const Command> commands) = 0;
  /// Membership of a plan ending in `last` in the goal-directed set.
  virtual bool goal_directed(const Command& last, int goal) const;
  /// Finite command set for exhaustive enumeration.
  virtual std::vector<Command> command_set() const;
};

/// f_A / f_trans / f_pi (or the reward head) of a model bundle.
class LatentPlanModel : public PlanModel {
 public:
  explicit LatentPlanModel(const models::ModelBundle& bundle) : bundle_(bundle) {}
  const SkillVocabulary& vocabulary() const override { return bundle_.vocabulary(); }
  Scoring scoring() const override;
  void begin(std::span<const float> observation, std::size_t rows) override;
  bool has_proposal() const override { return bundle_.has_affordance(); }
  nn::Matrix<float> proposal_logits() const override;
  std::vector<double> affordance(std::span<const Command> commands) override;
  std::vector<double> reward(int goal) const override;
  void advance(std::span<const Command> commands) override;
  const models::Latent& latent() const { return latent_; }

 private:
  const models::ModelBundle& bundle_;
  models::Latent latent_;
};

/// Ground-truth affordances of a tabular MDP propagated as filtered state
/// distributions: the per-step value is the afforded mass given that every
/// earlier step was afforded, so the product is the completion probability.
class TabularOracleModel : public PlanModel {
 public:
  explicit TabularOracleModel(const tabular::TabularMdp& mdp) : mdp_(mdp), vocab_(mdp.vocabulary()) {}
  const SkillVocabulary& vocabulary() const override { return vocab_; }
  void begin(std::span<const float> observation, std::size_t rows) override;
  std::vector<double> affordance(std::span<const Command> commands) override;
  void advance(std::span<const Command> commands) override;
  bool goal_directed(const Command& last, int goal) const override;
  std::vector<Command> command_set() const override;

 private:
  const tabular::TabularMdp& mdp_;
  SkillVocabulary vocab_;
  std::vector<std::vector<double>> rows_;
};

struct CandidatePlan {
  std::vector<Command> commands;
  std::vector<double> affordances;
  /// -prod(affordances) when goal-directed, +inf otherwise; -sum(rewards) under reward scoring.
  double cost = kInfiniteCost;
};

/// Optional fixed first command (heatmap probes).
struct SampleOptions {
  std::optional<Command> first;
};

/// Random shooting. Each candidate draws from its own stream
/// Rng::stream(seed, index), so results do not depend on evaluation order.
std::vector<CandidatePlan> sample_candidates(PlanModel& model, std::span<const float> observation, int goal,
                                             std::size_t horizon, const PlannerConfig& config, std::uint64_t seed,
                                             const SampleOptions& options = {});

/// Every plan of length 1..horizon over the model's command set in
/// (length, lexicographic) order.
std::vector<CandidatePlan> enumerate_candidates(PlanModel& model, std::span<const float> observation, int goal,
                                                std::size_t horizon, const PlannerConfig& config);

/// Index of the minimum cost; ties (within tolerance) go to the lowest index.
/// nullopt when every cost is infinite.
std::optional<std::size_t> select_index(std::span<const CandidatePlan> candidates, double tie_tolerance = 0.0);

struct Selection {
  Command command;
  std::size_t index = 0;
  bool fallback = false;
  double cost = kInfiniteCost;
  std::vector<double> costs;
};

/// First command of the best candidate. When every candidate is infinite,
/// resamples once with goal enforcement on and takes the best of those.
Selection select_first_skill(PlanModel& model, std::span<const float> observation, int goal, std::size_t horizon,
                             const PlannerConfig& config, std::uint64_t seed);

/// One attempted skill in an episode.
struct Experience {
  std::vector<float> observation;  // before the attempt
  Command command;
  int afforded = 0;
  float reward = 0.0f;  // 1 on the step where the goal first holds
};

struct EpisodeResult {
  int goal = 0;
  bool success = false;
  std::size_t steps = 0;
  std::vector<Experience> experiences;
  std::vector<float> final_observation;
  std::size_t fallbacks = 0;
  /// Predicted cost of each executed first skill's chosen plan.
  std::vector<double> chosen_costs;
  std::vector<Selection> trace;
};

struct EpisodeOptions {
  /// On reaching the goal, record the goal's no-op skill as executed so the
  /// goal state carries a positive goal-skill label.
  bool log_goal_skill = true;
  bool keep_trace = false;
};

/// Logs attempts on an environment: query feasibility, step only if
/// afforded, reward 1 on the first step after which the goal holds.
class EpisodeRecorder {
 public:
  EpisodeRecorder(Environment& env, int goal);
  /// Returns whether the command was afforded (and executed).
  bool attempt(const Command& cmd);
  /// True once the goal holds. With `log_goal_skill`, the goal's no-op skill
  /// is recorded as executed unless the last attempt already was it.
  bool goal_reached(bool log_goal_skill);
  EpisodeResult& result() { return result_; }
  EpisodeResult finish();

 private:
  Environment& env_;
  bool rewarded_;
  EpisodeResult result_;
};

/// Receding-horizon loop on an already reset environment: plan, query
/// feasibility, step only if afforded, log every attempt, stop once the goal holds.
EpisodeResult mpc_episode(PlanModel& model, Environment& env, int goal, const PlannerConfig& config, Rng& rng,
                          const EpisodeOptions& options = {});

/// Fixed skeleton with uniformly random parameters (plan-skeleton baseline).
/// A skill is retried until afforded; the episode stops once the goal holds.
EpisodeResult skeleton_episode(Environment& env, int goal, std::span<const int> skeleton,
                               const PlannerConfig& config, Rng& rng);

}  // namespace affplan::planner
