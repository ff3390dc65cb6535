#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "affplan/skills.hpp"

namespace affplan::tabular {

/// (skill, parameter-grid index)
struct PlanStep {
  int skill = 0;
  int param = 0;

  friend bool operator==(const PlanStep&, const PlanStep&) = default;
  friend auto operator<=>(const PlanStep&, const PlanStep&) = default;
};

using PlanSpec = std::vector<PlanStep>;

/// Explicit finite MDP with per-command affordance sets and goal state sets.
/// Commands are flattened (skill, param) pairs in skill-major order.
struct TabularMdp {
  struct Skill {
    std::string name;
    std::vector<double> params;  // grid values; size >= 1
  };
  struct Goal {
    std::string name;
    int skill = -1;             // no-op goal skill
    std::vector<char> states;   // membership over S
  };

  std::vector<std::string> states;
  std::vector<Skill> skills;
  /// transition[command][s][s'] = T(s' | s, command)
  std::vector<std::vector<std::vector<double>>> transition;
  /// afford[command][s] = A_command(s)
  std::vector<std::vector<char>> afford;
  std::vector<Goal> goals;
  std::vector<double> initial;

  std::size_t state_count() const { return states.size(); }
  std::size_t command_count() const { return afford.size(); }
  int command_index(PlanStep step) const;
  PlanStep command(int index) const;
  int find_state(std::string_view name) const;
  int find_skill(std::string_view name) const;
  int find_goal(std::string_view name) const;

  /// Adds a skill with identity transitions and empty affordances.
  int add_skill(std::string name, std::vector<double> params = {0.0});
  void set_transition(PlanStep step, int from, int to, double probability);
  void set_afford(PlanStep step, int state, bool afforded);
  /// Registers a goal; the goal skill is created with A = S_g and identity T.
  int add_goal(std::string name, const std::vector<int>& goal_states, std::string skill_name);

  /// Throws ConfigError when any invariant is violated.
  void validate() const;
  SkillVocabulary vocabulary() const;
};

/// Build a TabularMdp with `n` states named s0..s{n-1}.
TabularMdp make_mdp(std::size_t n);

struct StateDistribution {
  std::vector<double> mass;
  bool normalized = false;

  double total() const;
};

/// Step-wise induced state distributions; index 0 holds Z0.
struct Propagation {
  std::vector<StateDistribution> unnormalized;
  std::vector<StateDistribution> normalized;
};

/// Unnormalised recursion Z_i(s') = sum_s T(s'|s,c_i) Z_{i-1}(s) A_{c_i}(s)
/// with its normalised view (zero distribution once the plan is dead).
Propagation propagate_distribution(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0);

/// Probability that every skill in the plan is afforded when executed in order.
double plan_completion_probability(const TabularMdp& mdp, const PlanSpec& plan);
double plan_completion_probability(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0);

/// One filtering step on a normalised distribution: afforded mass and the
/// normalised successor (all zeros when the mass is zero).
struct FilterStep {
  double mass = 0.0;
  std::vector<double> next;
};
FilterStep filter_step(const TabularMdp& mdp, const std::vector<double>& distribution, PlanStep step);

/// Product of per-step filter masses; equals plan_completion_probability.
double factored_completion_probability(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0);

/// Sum over every state trajectory along which each command is afforded.
/// Exponential in the plan length; cross-checks the recursion.
double enumerate_completion_probability(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0);

/// A_command is non-empty and a subset of S_g.
bool is_goal_directed(const TabularMdp& mdp, int goal, PlanStep last);

/// All plans of length 1..max_length whose last command is goal-directed,
/// in (length, lexicographic) order.
std::vector<PlanSpec> goal_directed_plans(const TabularMdp& mdp, int goal, std::size_t max_length);

struct RankedPlan {
  PlanSpec plan;
  double probability = 0.0;
};

/// Probabilities within this distance are treated as ties.
inline constexpr double kTieTolerance = 1e-12;

/// Argmax completion probability over goal-directed plans; ties go to the
/// shorter plan, then the lexicographically smaller one. nullopt when no
/// goal-directed plan exists.
std::optional<RankedPlan> best_plan(const TabularMdp& mdp, int goal, std::size_t max_length);

/// Goal-directed plans sorted by decreasing probability (stable on ties).
std::vector<RankedPlan> rank_goal_directed(const TabularMdp& mdp, int goal, std::size_t max_length);

std::string format_plan(const TabularMdp& mdp, const PlanSpec& plan);

/// Line-oriented MDP definition:
///
///   states s0 s1 s2
///   initial s0 1.0
///   skill advance                 # one implicit parameter
///   skill push 0.1 0.5            # parameter grid
///   afford advance s0 s1          # all parameters of the skill
///   afford push[1] s2             # a single grid entry
///   trans s0 advance s1 1.0       # rows not listed stay in place
///   goal reached reach s2         # goal name, goal skill, goal states
///
/// '#' starts a comment. Errors carry the offending line number.
TabularMdp parse_mdp(std::string_view text);
TabularMdp load_mdp(const std::filesystem::path& path);

/// Finite-MDP episode driver (observation = one-hot of the current state).
class TabularEnv : public Environment {
 public:
  /// goal < 0 samples uniformly over the MDP's goals at every reset.
  TabularEnv(TabularMdp mdp, int horizon, int goal = -1);

  const SkillVocabulary& vocabulary() const override { return vocab_; }
  std::size_t observation_width() const override { return mdp_.state_count(); }
  int reset(std::uint64_t seed) override;
  std::vector<float> observe() const override;
  bool skill_is_executable(const Command& cmd) const override;
  void step(const Command& cmd) override;
  bool goal_check(int goal) const override;
  int goal() const override { return goal_; }
  int horizon() const override { return horizon_; }
  std::unique_ptr<Environment> clone() const override;

  const TabularMdp& mdp() const { return mdp_; }
  int state() const { return state_; }
  void set_state(int s) { state_ = s; }

 private:
  PlanStep to_step(const Command& cmd) const;

  TabularMdp mdp_;
  SkillVocabulary vocab_;
  int horizon_;
  int fixed_goal_;
  int goal_ = 0;
  int state_ = 0;
  Rng rng_;
};

Command to_command(PlanStep step);

}  // namespace affplan::tabular
