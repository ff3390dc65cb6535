#include "affplan/planner.hpp"

#include <algorithm>

namespace affplan::planner {

const ParamRange& PlannerConfig::range(int skill) const {
  static const ParamRange kDefault{};
  if (skill >= 0 && static_cast<std::size_t>(skill) < ranges.size()) return ranges[static_cast<std::size_t>(skill)];
  return kDefault;
}

// ---------------------------------------------------------------------------
// PlanModel defaults

nn::Matrix<float> PlanModel::proposal_logits() const { throw ConfigError("plan model has no skill proposal"); }

std::vector<double> PlanModel::reward(int) const { throw ConfigError("plan model does not predict rewards"); }

bool PlanModel::goal_directed(const Command& last, int goal) const {
  return vocabulary()[static_cast<std::size_t>(last.skill)].goal == goal;
}

std::vector<Command> PlanModel::command_set() const {
  std::vector<Command> out;
  const auto& vocab = vocabulary();
  for (std::size_t s = 0; s < vocab.size(); ++s) {
    const auto& info = vocab[s];
    if (info.arity > 0 && info.grid == 0) throw ConfigError("exhaustive planning needs a finite command set");
    const std::size_t n = info.grid == 0 ? 1 : info.grid;
    for (std::size_t i = 0; i < n; ++i) {
      Command c;
      c.skill = static_cast<int>(s);
      if (info.grid > 0) c.theta[0] = static_cast<float>(i);
      out.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Latent model

PlanModel::Scoring LatentPlanModel::scoring() const {
  return bundle_.has_affordance() ? Scoring::kAffordance : Scoring::kReward;
}

void LatentPlanModel::begin(std::span<const float> observation, std::size_t rows) {
  latent_ = models::encode(bundle_, observation).repeat(rows);
}

nn::Matrix<float> LatentPlanModel::proposal_logits() const { return models::proposal_logits(bundle_, latent_); }

std::vector<double> LatentPlanModel::affordance(std::span<const Command> commands) {
  const auto p = models::predict_affordance(bundle_, latent_, commands);
  return {p.begin(), p.end()};
}

std::vector<double> LatentPlanModel::reward(int goal) const {
  const auto r = models::predict_reward(bundle_, latent_, goal);
  return {r.begin(), r.end()};
}

void LatentPlanModel::advance(std::span<const Command> commands) {
  latent_ = models::transition(bundle_, latent_, commands);
}

// ---------------------------------------------------------------------------
// Tabular oracle

namespace {
tabular::PlanStep to_step(const Command& c) { return {c.skill, static_cast<int>(c.theta[0])}; }
}  // namespace

void TabularOracleModel::begin(std::span<const float> observation, std::size_t rows) {
  if (observation.size() != mdp_.state_count()) throw ConfigError("observation does not match the MDP state count");
  std::vector<double> z(observation.begin(), observation.end());
  double total = 0.0;
  for (double v : z) total += v;
  if (!(total > 0.0)) throw ConfigError("observation carries no state mass");
  for (double& v : z) v /= total;
  rows_.assign(rows, z);
}

std::vector<double> TabularOracleModel::affordance(std::span<const Command> commands) {
  if (commands.size() != rows_.size()) throw ConfigError("command count does not match rows");
  std::vector<double> out(rows_.size());
  for (std::size_t r = 0; r < rows_.size(); ++r) out[r] = tabular::filter_step(mdp_, rows_[r], to_step(commands[r])).mass;
  return out;
}

void TabularOracleModel::advance(std::span<const Command> commands) {
  if (commands.size() != rows_.size()) throw ConfigError("command count does not match rows");
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    rows_[r] = tabular::filter_step(mdp_, rows_[r], to_step(commands[r])).next;
  }
}

bool TabularOracleModel::goal_directed(const Command& last, int goal) const {
  return tabular::is_goal_directed(mdp_, goal, to_step(last));
}

std::vector<Command> TabularOracleModel::command_set() const {
  std::vector<Command> out;
  for (std::size_t i = 0; i < mdp_.command_count(); ++i) out.push_back(tabular::to_command(mdp_.command(static_cast<int>(i))));
  return out;
}

// ---------------------------------------------------------------------------
// Shooting

namespace {

void check_plan_args(const PlanModel& model, int goal, std::size_t horizon, const PlannerConfig& config) {
  if (horizon == 0) throw ConfigError("planning horizon must be at least 1");
  if (config.candidates == 0) throw ConfigError("candidate count must be at least 1");
  if (goal < 0 || static_cast<std::size_t>(goal) >= model.vocabulary().goal_count()) {
    throw ConfigError("goal id out of range");
  }
}

}  // namespace

std::vector<CandidatePlan> sample_candidates(PlanModel& model, std::span<const float> observation, int goal,
                                             std::size_t horizon, const PlannerConfig& config, std::uint64_t seed,
                                             const SampleOptions& options) {
  check_plan_args(model, goal, horizon, config);
  const auto& vocab = model.vocabulary();
  const std::size_t n = config.candidates;
  const bool reward_scoring = model.scoring() == PlanModel::Scoring::kReward;
  const bool proposal = config.use_proposal && model.has_proposal() && !reward_scoring;
  const int goal_skill = vocab.goal_skill(goal);

  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (std::size_t k = 0; k < n; ++k) rngs.push_back(Rng::stream(seed, k));

  std::vector<CandidatePlan> plans(n);
  std::vector<char> done(n, 0);
  std::vector<char> directed(n, 0);
  std::vector<double> product(n, 1.0);
  std::vector<double> reward_sum(n, 0.0);
  std::vector<Command> commands(n);

  model.begin(observation, n);
  for (std::size_t i = 0; i < horizon; ++i) {
    const bool forced = !reward_scoring && config.enforce_goal && i + 1 == horizon;
    nn::Matrix<float> logits;
    if (proposal && !forced && !(i == 0 && options.first)) logits = model.proposal_logits();
    for (std::size_t k = 0; k < n; ++k) {
      if (done[k]) continue;
      if (i == 0 && options.first) {
        commands[k] = *options.first;
      } else if (forced) {
        commands[k] = Command{goal_skill, {}};
      } else {
        const int skill = proposal ? models::sample_from_logits(logits.row(k), rngs[k], config.temperature)
                                   : static_cast<int>(rngs[k].index(vocab.size()));
        commands[k] = sample_command(vocab, skill, config.range(skill), rngs[k]);
      }
    }
    if (reward_scoring) {
      model.advance(commands);
      const auto r = model.reward(goal);
      for (std::size_t k = 0; k < n; ++k) {
        plans[k].commands.push_back(commands[k]);
        plans[k].affordances.push_back(r[k]);
        reward_sum[k] += r[k];
      }
      continue;
    }
    const auto a = model.affordance(commands);
    bool all_done = true;
    for (std::size_t k = 0; k < n; ++k) {
      if (done[k]) continue;
      plans[k].commands.push_back(commands[k]);
      plans[k].affordances.push_back(a[k]);
      product[k] *= a[k];
      // A goal-directed command ends the candidate: later goal-skill steps are no-ops.
      if (model.goal_directed(commands[k], goal)) {
        done[k] = 1;
        directed[k] = 1;
      }
      all_done = all_done && done[k];
    }
    if (all_done) break;
    if (i + 1 < horizon) model.advance(commands);
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (reward_scoring) {
      plans[k].cost = -reward_sum[k];
    } else {
      plans[k].cost = directed[k] ? -product[k] : kInfiniteCost;
    }
  }
  return plans;
}

std::vector<CandidatePlan> enumerate_candidates(PlanModel& model, std::span<const float> observation, int goal,
                                                std::size_t horizon, const PlannerConfig& config) {
  check_plan_args(model, goal, horizon, config);
  if (model.scoring() != PlanModel::Scoring::kAffordance) throw ConfigError("exhaustive planning scores affordances");
  const auto set = model.command_set();
  if (set.empty()) throw ConfigError("empty command set");
  std::vector<CandidatePlan> out;
  for (std::size_t len = 1; len <= horizon; ++len) {
    // Odometer over command indices, first position most significant.
    std::vector<std::vector<Command>> plans;
    std::vector<std::size_t> idx(len, 0);
    while (true) {
      const Command& last = set[idx.back()];
      if (model.goal_directed(last, goal) || !config.enforce_goal) {
        std::vector<Command> p(len);
        for (std::size_t i = 0; i < len; ++i) p[i] = set[idx[i]];
        plans.push_back(std::move(p));
      }
      std::size_t pos = len;
      while (pos > 0 && ++idx[pos - 1] == set.size()) idx[--pos] = 0;
      if (pos == 0) break;
    }
    if (plans.empty()) continue;
    model.begin(observation, plans.size());
    std::vector<double> product(plans.size(), 1.0);
    std::vector<CandidatePlan> batch(plans.size());
    std::vector<Command> step(plans.size());
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t k = 0; k < plans.size(); ++k) step[k] = plans[k][i];
      const auto a = model.affordance(step);
      for (std::size_t k = 0; k < plans.size(); ++k) {
        batch[k].affordances.push_back(a[k]);
        product[k] *= a[k];
      }
      if (i + 1 < len) model.advance(step);
    }
    for (std::size_t k = 0; k < plans.size(); ++k) {
      batch[k].commands = std::move(plans[k]);
      batch[k].cost = model.goal_directed(batch[k].commands.back(), goal) ? -product[k] : kInfiniteCost;
      out.push_back(std::move(batch[k]));
    }
  }
  return out;
}

std::optional<std::size_t> select_index(std::span<const CandidatePlan> candidates, double tie_tolerance) {
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double c = candidates[k].cost;
    if (c == kInfiniteCost) continue;
    if (!best || c < candidates[*best].cost - tie_tolerance) best = k;
  }
  return best;
}

Selection select_first_skill(PlanModel& model, std::span<const float> observation, int goal, std::size_t horizon,
                             const PlannerConfig& config, std::uint64_t seed) {
  auto candidates = config.exhaustive ? enumerate_candidates(model, observation, goal, horizon, config)
                                      : sample_candidates(model, observation, goal, horizon, config, seed);
  Selection out;
  auto idx = select_index(candidates, config.tie_tolerance);
  if (!idx) {
    PlannerConfig forced = config;
    forced.enforce_goal = true;
    forced.exhaustive = false;
    candidates = sample_candidates(model, observation, goal, horizon, forced, splitmix64(seed ^ 0x5eedULL));
    idx = config.fallback == PlannerConfig::Fallback::kFirst ? std::optional<std::size_t>(0)
                                                             : select_index(candidates, config.tie_tolerance);
    out.fallback = true;
    if (!idx) idx = 0;
  }
  out.index = *idx;
  out.command = candidates[*idx].commands.front();
  out.cost = candidates[*idx].cost;
  out.costs.reserve(candidates.size());
  for (const auto& c : candidates) out.costs.push_back(c.cost);
  return out;
}

// ---------------------------------------------------------------------------
// Episodes

EpisodeRecorder::EpisodeRecorder(Environment& env, int goal) : env_(env), rewarded_(env.goal_check(goal)) {
  result_.goal = goal;
}

bool EpisodeRecorder::attempt(const Command& cmd) {
  Experience e;
  e.observation = env_.observe();
  e.command = cmd;
  e.afforded = env_.skill_is_executable(cmd) ? 1 : 0;
  if (e.afforded) env_.step(cmd);
  const bool reached = env_.goal_check(result_.goal);
  if (reached && !rewarded_) {
    e.reward = 1.0f;
    rewarded_ = true;
  }
  if (reached) result_.success = true;
  const bool afforded = e.afforded == 1;
  result_.experiences.push_back(std::move(e));
  ++result_.steps;
  return afforded;
}

bool EpisodeRecorder::goal_reached(bool log_goal_skill) {
  if (!env_.goal_check(result_.goal)) return false;
  const auto& vocab = env_.vocabulary();
  const bool last_was_goal = !result_.experiences.empty() && result_.experiences.back().afforded == 1 &&
                             vocab.is_goal_skill_for(result_.experiences.back().command.skill, result_.goal);
  if (log_goal_skill && !last_was_goal) attempt(Command{vocab.goal_skill(result_.goal), {}});
  return true;
}

EpisodeResult EpisodeRecorder::finish() {
  result_.final_observation = env_.observe();
  return std::move(result_);
}

EpisodeResult mpc_episode(PlanModel& model, Environment& env, int goal, const PlannerConfig& config, Rng& rng,
                          const EpisodeOptions& options) {
  EpisodeRecorder log(env, goal);
  auto& result = log.result();
  const std::size_t horizon = static_cast<std::size_t>(env.horizon());
  for (std::size_t t = 0; t < horizon; ++t) {
    const auto obs = env.observe();
    const std::size_t h = std::min(horizon - t, config.horizon_cap);
    auto sel = select_first_skill(model, obs, goal, h, config, rng.next());
    result.fallbacks += sel.fallback ? 1 : 0;
    result.chosen_costs.push_back(sel.cost);
    const Command cmd = sel.command;
    if (options.keep_trace) result.trace.push_back(std::move(sel));
    log.attempt(cmd);
    if (log.goal_reached(options.log_goal_skill)) break;
  }
  return log.finish();
}

EpisodeResult skeleton_episode(Environment& env, int goal, std::span<const int> skeleton, const PlannerConfig& config,
                               Rng& rng) {
  EpisodeRecorder log(env, goal);
  const auto& vocab = env.vocabulary();
  const std::size_t horizon = static_cast<std::size_t>(env.horizon());
  std::size_t next = 0;
  for (std::size_t t = 0; t < horizon && next < skeleton.size(); ++t) {
    const int skill = skeleton[next];
    const Command cmd = sample_command(vocab, skill, config.range(skill), rng);
    // The skeleton advances only past skills that were afforded.
    if (log.attempt(cmd)) ++next;
    if (log.goal_reached(true)) break;
  }
  return log.finish();
}

}  // namespace affplan::planner
