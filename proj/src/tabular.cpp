#include "affplan/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace affplan::tabular {

int TabularMdp::command_index(PlanStep step) const {
  if (step.skill < 0 || static_cast<std::size_t>(step.skill) >= skills.size()) {
    throw ConfigError("unknown skill id " + std::to_string(step.skill));
  }
  const auto& params = skills[step.skill].params;
  if (step.param < 0 || static_cast<std::size_t>(step.param) >= params.size()) {
    throw ConfigError("parameter index " + std::to_string(step.param) + " out of range for skill '" +
                      skills[step.skill].name + "'");
  }
  int index = 0;
  for (int k = 0; k < step.skill; ++k) index += static_cast<int>(skills[k].params.size());
  return index + step.param;
}

PlanStep TabularMdp::command(int index) const {
  for (int k = 0; k < static_cast<int>(skills.size()); ++k) {
    const int n = static_cast<int>(skills[k].params.size());
    if (index < n) return {k, index};
    index -= n;
  }
  throw ConfigError("command index out of range");
}

int TabularMdp::find_state(std::string_view name) const {
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i] == name) return static_cast<int>(i);
  }
  return -1;
}

int TabularMdp::find_skill(std::string_view name) const {
  for (std::size_t i = 0; i < skills.size(); ++i) {
    if (skills[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int TabularMdp::find_goal(std::string_view name) const {
  for (std::size_t i = 0; i < goals.size(); ++i) {
    if (goals[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int TabularMdp::add_skill(std::string name, std::vector<double> params) {
  if (find_skill(name) >= 0) throw ConfigError("duplicate skill '" + name + "'");
  if (params.empty()) throw ConfigError("skill '" + name + "' needs at least one parameter value");
  const int id = static_cast<int>(skills.size());
  // Commands are skill-major, so a new skill's commands append at the end.
  const std::size_t n = states.size();
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<std::vector<double>> t(n, std::vector<double>(n, 0.0));
    for (std::size_t s = 0; s < n; ++s) t[s][s] = 1.0;
    transition.push_back(std::move(t));
    afford.emplace_back(n, 0);
  }
  skills.push_back({std::move(name), std::move(params)});
  return id;
}

void TabularMdp::set_transition(PlanStep step, int from, int to, double probability) {
  const int c = command_index(step);
  transition.at(c).at(from).at(to) = probability;
}

void TabularMdp::set_afford(PlanStep step, int state, bool afforded) {
  const int c = command_index(step);
  afford.at(c).at(state) = afforded ? 1 : 0;
}

int TabularMdp::add_goal(std::string name, const std::vector<int>& goal_states, std::string skill_name) {
  if (find_goal(name) >= 0) throw ConfigError("duplicate goal '" + name + "'");
  const int skill = add_skill(std::move(skill_name));
  Goal g;
  g.name = std::move(name);
  g.skill = skill;
  g.states.assign(states.size(), 0);
  for (int s : goal_states) {
    if (s < 0 || static_cast<std::size_t>(s) >= states.size()) throw ConfigError("goal state out of range");
    g.states[s] = 1;
    set_afford({skill, 0}, s, true);
  }
  goals.push_back(std::move(g));
  return static_cast<int>(goals.size()) - 1;
}

void TabularMdp::validate() const {
  const std::size_t n = states.size();
  if (n == 0) throw ConfigError("MDP has no states");
  std::size_t commands = 0;
  for (const auto& s : skills) commands += s.params.size();
  if (transition.size() != commands || afford.size() != commands) {
    throw ConfigError("transition/affordance tables do not match the skill list");
  }
  if (initial.size() != n) throw ConfigError("initial distribution has wrong length");
  double total = 0.0;
  for (double p : initial) {
    if (!(p >= 0.0)) throw ConfigError("initial distribution has a negative entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("initial distribution does not sum to 1");
  for (std::size_t c = 0; c < commands; ++c) {
    if (afford[c].size() != n || transition[c].size() != n) throw ConfigError("table row count mismatch");
    for (std::size_t s = 0; s < n; ++s) {
      const auto& row = transition[c][s];
      if (row.size() != n) throw ConfigError("transition row has wrong length");
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw ConfigError("negative transition probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12) {
        const PlanStep step = command(static_cast<int>(c));
        throw ConfigError("transition row for state '" + states[s] + "' under skill '" + skills[step.skill].name +
                          "[" + std::to_string(step.param) + "]' sums to " + std::to_string(sum));
      }
    }
  }
  for (const auto& g : goals) {
    if (g.states.size() != n) throw ConfigError("goal '" + g.name + "' has a malformed state set");
    if (g.skill < 0 || static_cast<std::size_t>(g.skill) >= skills.size()) {
      throw ConfigError("goal '" + g.name + "' has no goal skill");
    }
    for (std::size_t p = 0; p < skills[g.skill].params.size(); ++p) {
      const int c = command_index({g.skill, static_cast<int>(p)});
      for (std::size_t s = 0; s < n; ++s) {
        if (afford[c][s] != g.states[s]) {
          throw ConfigError("goal skill '" + skills[g.skill].name + "' is not afforded exactly on goal '" + g.name +
                            "'");
        }
        for (std::size_t t = 0; t < n; ++t) {
          if (transition[c][s][t] != (s == t ? 1.0 : 0.0)) {
            throw ConfigError("goal skill '" + skills[g.skill].name + "' does not have identity dynamics");
          }
        }
      }
    }
  }
}

SkillVocabulary TabularMdp::vocabulary() const {
  std::vector<SkillInfo> infos;
  for (std::size_t k = 0; k < skills.size(); ++k) {
    SkillInfo info;
    info.name = skills[k].name;
    info.arity = 1;
    info.grid = skills[k].params.size();
    for (std::size_t g = 0; g < goals.size(); ++g) {
      if (goals[g].skill == static_cast<int>(k)) info.goal = static_cast<int>(g);
    }
    infos.push_back(std::move(info));
  }
  std::vector<std::string> names;
  for (const auto& g : goals) names.push_back(g.name);
  return SkillVocabulary(std::move(infos), std::move(names));
}

TabularMdp make_mdp(std::size_t n) {
  TabularMdp mdp;
  for (std::size_t i = 0; i < n; ++i) mdp.states.push_back("s" + std::to_string(i));
  mdp.initial.assign(n, 0.0);
  if (n > 0) mdp.initial[0] = 1.0;
  return mdp;
}

double StateDistribution::total() const {
  double sum = 0.0;
  for (double m : mass) sum += m;
  return sum;
}

namespace {

/// Z'(s') = sum_s T(s'|s,c) Z(s) A_c(s), accumulated in state order.
std::vector<double> filtered_push(const TabularMdp& mdp, int command, const std::vector<double>& z) {
  const std::size_t n = mdp.state_count();
  std::vector<double> next(n, 0.0);
  const auto& a = mdp.afford[command];
  const auto& t = mdp.transition[command];
  for (std::size_t s = 0; s < n; ++s) {
    if (!a[s] || z[s] == 0.0) continue;
    for (std::size_t sp = 0; sp < n; ++sp) next[sp] += t[s][sp] * z[s];
  }
  return next;
}

double afforded_mass(const TabularMdp& mdp, int command, const std::vector<double>& z) {
  double mass = 0.0;
  const auto& a = mdp.afford[command];
  for (std::size_t s = 0; s < z.size(); ++s) {
    if (a[s]) mass += z[s];
  }
  return mass;
}

StateDistribution normalize(const std::vector<double>& z) {
  StateDistribution d;
  d.normalized = true;
  double total = 0.0;
  for (double m : z) total += m;
  d.mass.assign(z.size(), 0.0);
  if (total > 0.0) {
    for (std::size_t i = 0; i < z.size(); ++i) d.mass[i] = z[i] / total;
  }
  return d;
}

void check_z0(const TabularMdp& mdp, const std::vector<double>& z0) {
  if (z0.size() != mdp.state_count()) throw ConfigError("initial distribution has wrong length");
}

}  // namespace

Propagation propagate_distribution(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0) {
  check_z0(mdp, z0);
  Propagation out;
  out.unnormalized.push_back({z0, false});
  out.normalized.push_back(normalize(z0));
  std::vector<double> z = z0;
  for (const auto& step : plan) {
    z = filtered_push(mdp, mdp.command_index(step), z);
    out.unnormalized.push_back({z, false});
    out.normalized.push_back(normalize(z));
  }
  return out;
}

double plan_completion_probability(const TabularMdp& mdp, const PlanSpec& plan) {
  return plan_completion_probability(mdp, plan, mdp.initial);
}

double plan_completion_probability(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0) {
  check_z0(mdp, z0);
  if (plan.empty()) throw ConfigError("plan must be non-empty");
  std::vector<double> z = z0;
  for (std::size_t i = 0; i + 1 < plan.size(); ++i) z = filtered_push(mdp, mdp.command_index(plan[i]), z);
  return afforded_mass(mdp, mdp.command_index(plan.back()), z);
}

FilterStep filter_step(const TabularMdp& mdp, const std::vector<double>& distribution, PlanStep step) {
  check_z0(mdp, distribution);
  const int c = mdp.command_index(step);
  FilterStep out;
  out.mass = afforded_mass(mdp, c, distribution);
  out.next = normalize(filtered_push(mdp, c, distribution)).mass;
  return out;
}

double factored_completion_probability(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0) {
  if (plan.empty()) throw ConfigError("plan must be non-empty");
  std::vector<double> z = normalize(z0).mass;
  double product = 1.0;
  for (const auto& step : plan) {
    auto f = filter_step(mdp, z, step);
    product *= f.mass;
    z = std::move(f.next);
  }
  return product;
}

double enumerate_completion_probability(const TabularMdp& mdp, const PlanSpec& plan, const std::vector<double>& z0) {
  if (plan.empty()) throw ConfigError("plan must be non-empty");
  std::vector<int> commands;
  for (const auto& step : plan) commands.push_back(mdp.command_index(step));
  const std::size_t n = mdp.state_count();
  // Depth-first over state sequences; each frame is (depth, state, path probability).
  struct Frame {
    std::size_t depth;
    std::size_t state;
    double prob;
  };
  std::vector<Frame> stack;
  const auto start = normalize(z0).mass;
  for (std::size_t s = n; s-- > 0;) {
    if (start[s] > 0.0) stack.push_back({0, s, start[s]});
  }
  double total = 0.0;
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    const int c = commands[f.depth];
    if (!mdp.afford[c][f.state]) continue;
    if (f.depth + 1 == commands.size()) {
      total += f.prob;
      continue;
    }
    for (std::size_t next = n; next-- > 0;) {
      const double t = mdp.transition[c][f.state][next];
      if (t > 0.0) stack.push_back({f.depth + 1, next, f.prob * t});
    }
  }
  return total;
}

bool is_goal_directed(const TabularMdp& mdp, int goal, PlanStep last) {
  const auto& g = mdp.goals.at(goal);
  const auto& a = mdp.afford[mdp.command_index(last)];
  bool any = false;
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (a[s] && !g.states[s]) return false;
    any = any || a[s];
  }
  // A never-afforded skill would be vacuously contained in every goal set.
  return any;
}

std::vector<PlanSpec> goal_directed_plans(const TabularMdp& mdp, int goal, std::size_t max_length) {
  if (max_length < 1) throw ConfigError("maximum plan length must be at least 1");
  const int commands = static_cast<int>(mdp.command_count());
  std::vector<PlanStep> finals;
  for (int c = 0; c < commands; ++c) {
    if (is_goal_directed(mdp, goal, mdp.command(c))) finals.push_back(mdp.command(c));
  }
  std::vector<PlanSpec> out;
  if (finals.empty() || commands == 0) return out;
  for (std::size_t len = 1; len <= max_length; ++len) {
    // Odometer over the prefix; commands are already in lexicographic order.
    std::vector<int> digits(len - 1, 0);
    while (true) {
      PlanSpec prefix;
      for (int d : digits) prefix.push_back(mdp.command(d));
      for (const auto& f : finals) {
        PlanSpec plan = prefix;
        plan.push_back(f);
        out.push_back(std::move(plan));
      }
      std::size_t pos = digits.size();
      while (pos > 0) {
        if (++digits[pos - 1] < commands) break;
        digits[pos - 1] = 0;
        --pos;
      }
      if (pos == 0) break;
    }
  }
  return out;
}

std::optional<RankedPlan> best_plan(const TabularMdp& mdp, int goal, std::size_t max_length) {
  std::optional<RankedPlan> best;
  for (auto& plan : goal_directed_plans(mdp, goal, max_length)) {
    const double p = plan_completion_probability(mdp, plan);
    if (!best || p > best->probability + kTieTolerance) best = RankedPlan{std::move(plan), p};
  }
  return best;
}

std::vector<RankedPlan> rank_goal_directed(const TabularMdp& mdp, int goal, std::size_t max_length) {
  std::vector<RankedPlan> ranked;
  for (auto& plan : goal_directed_plans(mdp, goal, max_length)) {
    const double p = plan_completion_probability(mdp, plan);
    ranked.push_back({std::move(plan), p});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedPlan& a, const RankedPlan& b) {
    return a.probability > b.probability + kTieTolerance;
  });
  return ranked;
}

std::string format_plan(const TabularMdp& mdp, const PlanSpec& plan) {
  std::string out;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i) out += ", ";
    const auto& skill = mdp.skills.at(plan[i].skill);
    out += skill.name;
    if (skill.params.size() > 1) out += "[" + std::to_string(plan[i].param) + "]";
  }
  return "(" + out + ")";
}

// ---------------------------------------------------------------------------
// Parser

namespace {

struct Parser {
  TabularMdp mdp;
  std::set<std::pair<int, int>> touched_rows;
  bool has_initial = false;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_no, what); }

  int state(const std::string& name) const {
    const int s = mdp.find_state(name);
    if (s < 0) fail("unknown state '" + name + "'");
    return s;
  }

  double number(const std::string& token) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(token, &used);
      if (used != token.size()) fail("malformed number '" + token + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("malformed number '" + token + "'");
    }
  }

  /// "name" (every grid entry) or "name[i]".
  std::vector<PlanStep> commands(const std::string& token) const {
    std::string name = token;
    int param = -1;
    if (const auto open = token.find('['); open != std::string::npos) {
      if (token.back() != ']') fail("malformed skill reference '" + token + "'");
      name = token.substr(0, open);
      const std::string idx = token.substr(open + 1, token.size() - open - 2);
      if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos) {
        fail("malformed parameter index in '" + token + "'");
      }
      param = std::stoi(idx);
    }
    const int skill = mdp.find_skill(name);
    if (skill < 0) fail("unknown skill '" + name + "'");
    const int grid = static_cast<int>(mdp.skills[skill].params.size());
    if (param >= grid) fail("parameter index out of range in '" + token + "'");
    std::vector<PlanStep> out;
    if (param >= 0) {
      out.push_back({skill, param});
    } else {
      for (int p = 0; p < grid; ++p) out.push_back({skill, p});
    }
    return out;
  }

  void need_states() const {
    if (mdp.states.empty()) fail("'states' must come first");
  }

  void line(const std::vector<std::string>& tok) {
    const std::string& key = tok[0];
    if (key == "states") {
      if (!mdp.states.empty()) fail("'states' declared twice");
      if (tok.size() < 2) fail("'states' needs at least one state");
      for (std::size_t i = 1; i < tok.size(); ++i) {
        if (mdp.find_state(tok[i]) >= 0) fail("duplicate state '" + tok[i] + "'");
        mdp.states.push_back(tok[i]);
      }
      mdp.initial.assign(mdp.states.size(), 0.0);
    } else if (key == "initial") {
      need_states();
      if (tok.size() != 3) fail("expected 'initial <state> <probability>'");
      mdp.initial[state(tok[1])] += number(tok[2]);
      has_initial = true;
    } else if (key == "skill") {
      need_states();
      if (tok.size() < 2) fail("expected 'skill <name> [grid values...]'");
      if (mdp.find_skill(tok[1]) >= 0) fail("duplicate skill '" + tok[1] + "'");
      std::vector<double> grid;
      for (std::size_t i = 2; i < tok.size(); ++i) grid.push_back(number(tok[i]));
      if (grid.empty()) grid.push_back(0.0);
      mdp.add_skill(tok[1], grid);
    } else if (key == "afford") {
      need_states();
      if (tok.size() < 2) fail("expected 'afford <skill> <states...>'");
      const auto cmds = commands(tok[1]);
      for (std::size_t i = 2; i < tok.size(); ++i) {
        const int s = state(tok[i]);
        for (auto c : cmds) mdp.set_afford(c, s, true);
      }
    } else if (key == "trans") {
      need_states();
      if (tok.size() != 5) fail("expected 'trans <state> <skill> <next> <probability>'");
      const int from = state(tok[1]);
      const int to = state(tok[3]);
      const double p = number(tok[4]);
      if (p < 0.0 || p > 1.0) fail("transition probability outside [0, 1]");
      for (auto c : commands(tok[2])) {
        const int ci = mdp.command_index(c);
        if (touched_rows.insert({ci, from}).second) {
          std::fill(mdp.transition[ci][from].begin(), mdp.transition[ci][from].end(), 0.0);
        }
        mdp.transition[ci][from][to] += p;
      }
    } else if (key == "goal") {
      need_states();
      if (tok.size() < 3) fail("expected 'goal <name> <goal skill> <states...>'");
      if (mdp.find_goal(tok[1]) >= 0) fail("duplicate goal '" + tok[1] + "'");
      if (mdp.find_skill(tok[2]) >= 0) fail("goal skill '" + tok[2] + "' already declared");
      std::vector<int> members;
      for (std::size_t i = 3; i < tok.size(); ++i) members.push_back(state(tok[i]));
      mdp.add_goal(tok[1], members, tok[2]);
    } else {
      fail("unknown keyword '" + key + "'");
    }
  }
};

}  // namespace

TabularMdp parse_mdp(std::string_view text) {
  Parser parser;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++parser.line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    parser.line(tok);
  }
  auto& mdp = parser.mdp;
  if (mdp.states.empty()) throw ParseError(parser.line_no, "no 'states' declaration");
  if (!parser.has_initial) {
    mdp.initial.assign(mdp.states.size(), 0.0);
    mdp.initial[0] = 1.0;
  }
  try {
    mdp.validate();
  } catch (const ConfigError& e) {
    throw ParseError(parser.line_no, e.what());
  }
  return mdp;
}

TabularMdp load_mdp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open MDP file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_mdp(buffer.str());
}

// ---------------------------------------------------------------------------
// Episode driver

TabularEnv::TabularEnv(TabularMdp mdp, int horizon, int goal)
    : mdp_(std::move(mdp)), horizon_(horizon), fixed_goal_(goal) {
  mdp_.validate();
  vocab_ = mdp_.vocabulary();
  if (mdp_.goals.empty()) throw ConfigError("tabular environment needs at least one goal");
  if (goal >= static_cast<int>(mdp_.goals.size())) throw ConfigError("goal id out of range");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
}

namespace {

int sample_index(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace

int TabularEnv::reset(std::uint64_t seed) {
  rng_.reseed(seed);
  goal_ = fixed_goal_ >= 0 ? fixed_goal_ : static_cast<int>(rng_.index(mdp_.goals.size()));
  state_ = sample_index(mdp_.initial, rng_);
  return goal_;
}

std::vector<float> TabularEnv::observe() const {
  std::vector<float> obs(mdp_.state_count(), 0.0f);
  obs[static_cast<std::size_t>(state_)] = 1.0f;
  return obs;
}

PlanStep TabularEnv::to_step(const Command& cmd) const {
  vocab_.validate(cmd);
  return {cmd.skill, static_cast<int>(cmd.theta[0])};
}

bool TabularEnv::skill_is_executable(const Command& cmd) const {
  return mdp_.afford[mdp_.command_index(to_step(cmd))][state_] != 0;
}

void TabularEnv::step(const Command& cmd) {
  if (!skill_is_executable(cmd)) throw ContractError("stepped a skill that is not afforded in the current state");
  const int c = mdp_.command_index(to_step(cmd));
  state_ = sample_index(mdp_.transition[c][state_], rng_);
}

bool TabularEnv::goal_check(int goal) const { return mdp_.goals.at(goal).states[state_] != 0; }

std::unique_ptr<Environment> TabularEnv::clone() const { return std::make_unique<TabularEnv>(*this); }

Command to_command(PlanStep step) {
  Command cmd;
  cmd.skill = step.skill;
  cmd.theta[0] = static_cast<float>(step.param);
  return cmd;
}

}  // namespace affplan::tabular
