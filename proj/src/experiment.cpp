#include "affplan/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace affplan::experiment {

namespace fs = std::filesystem;

const char* to_string(Method m) {
  switch (m) {
    case Method::kDaf: return "daf";
    case Method::kDafNoRnn: return "daf-nornn";
    case Method::kGcPlanet: return "gc-planet";
    case Method::kPlanSkeleton: return "plan-skeleton";
    case Method::kOracle: return "oracle";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::kDaf, Method::kDafNoRnn, Method::kGcPlanet, Method::kPlanSkeleton, Method::kOracle}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + std::string(text) + "'");
}

bool learns(Method m) { return m == Method::kDaf || m == Method::kDafNoRnn || m == Method::kGcPlanet; }

// ---------------------------------------------------------------------------
// Config keys

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("'" + std::string(key) + "' expects a finite number, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_flag(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_flag(bool v) { return v ? "true" : "false"; }

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Key size_key(std::string name, T ExperimentConfig::*group, std::size_t T::*field) {
  return {name,
          [=](ExperimentConfig& c, std::string_view v) { (c.*group).*field = parse_integer<std::size_t>(name, v); },
          [=](const ExperimentConfig& c) { return std::to_string((c.*group).*field); }};
}

template <typename T>
Key real_key(std::string name, T ExperimentConfig::*group, double T::*field) {
  return {name, [=](ExperimentConfig& c, std::string_view v) { (c.*group).*field = parse_real(name, v); },
          [=](const ExperimentConfig& c) { return format_real((c.*group).*field); }};
}

template <typename T>
Key flag_key(std::string name, T ExperimentConfig::*group, bool T::*field) {
  return {name, [=](ExperimentConfig& c, std::string_view v) { (c.*group).*field = parse_flag(name, v); },
          [=](const ExperimentConfig& c) { return format_flag((c.*group).*field); }};
}

Key string_key(std::string name, std::string ExperimentConfig::*field) {
  return {name, [=](ExperimentConfig& c, std::string_view v) { c.*field = std::string(v); },
          [=](const ExperimentConfig& c) { return c.*field; }};
}

const std::vector<Key>& keys() {
  using E = ExperimentConfig;
  using T = trainer::TrainConfig;
  using P = planner::PlannerConfig;
  using M = models::ModelConfig;
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(string_key("domain", &E::domain));
    k.push_back({"method", [](E& c, std::string_view v) { c.method = parse_method(v); },
                 [](const E& c) { return std::string(to_string(c.method)); }});
    k.push_back(string_key("goal", &E::goal));
    k.push_back({"env_horizon", [](E& c, std::string_view v) { c.env_horizon = parse_integer<int>("env_horizon", v); },
                 [](const E& c) { return std::to_string(c.env_horizon); }});
    k.push_back(string_key("env_config", &E::env_config));
    k.push_back({"seed", [](E& c, std::string_view v) { c.seed = parse_integer<std::uint64_t>("seed", v); },
                 [](const E& c) { return std::to_string(c.seed); }});
    k.push_back(size_key("rounds", &E::train, &T::rounds));
    k.push_back(size_key("seed_episodes", &E::train, &T::seed_episodes));
    k.push_back(size_key("rollouts", &E::train, &T::rollouts));
    k.push_back(size_key("updates", &E::train, &T::updates));
    k.push_back(size_key("batch", &E::train, &T::batch));
    k.push_back(size_key("overshoot", &E::train, &T::overshoot));
    k.push_back(size_key("capacity", &E::train, &T::capacity));
    k.push_back(real_key("learning_rate", &E::train, &T::learning_rate));
    k.push_back({"affordance_weight", [](E& c, std::string_view v) { c.train.loss.affordance = parse_real("affordance_weight", v); },
                 [](const E& c) { return format_real(c.train.loss.affordance); }});
    k.push_back({"proposal_weight", [](E& c, std::string_view v) { c.train.loss.proposal = parse_real("proposal_weight", v); },
                 [](const E& c) { return format_real(c.train.loss.proposal); }});
    k.push_back(size_key("horizon_cap", &E::planner, &P::horizon_cap));
    k.push_back(size_key("candidates", &E::planner, &P::candidates));
    k.push_back(real_key("temperature", &E::planner, &P::temperature));
    k.push_back(flag_key("enforce_goal", &E::planner, &P::enforce_goal));
    k.push_back(flag_key("use_proposal", &E::planner, &P::use_proposal));
    k.push_back(flag_key("exhaustive", &E::planner, &P::exhaustive));
    k.push_back(real_key("tie_tolerance", &E::planner, &P::tie_tolerance));
    k.push_back({"fallback",
                 [](E& c, std::string_view v) {
                   if (v == "best") c.planner.fallback = P::Fallback::kBest;
                   else if (v == "first") c.planner.fallback = P::Fallback::kFirst;
                   else throw ConfigError("'fallback' expects best or first, got '" + std::string(v) + "'");
                 },
                 [](const E& c) { return std::string(c.planner.fallback == P::Fallback::kBest ? "best" : "first"); }});
    k.push_back(size_key("latent", &E::model, &M::latent));
    k.push_back(size_key("hidden", &E::model, &M::hidden));
    k.push_back(size_key("encoder_layers", &E::model, &M::encoder_layers));
    k.push_back(size_key("transition_layers", &E::model, &M::transition_layers));
    k.push_back(size_key("affordance_layers", &E::model, &M::affordance_layers));
    k.push_back(size_key("proposal_layers", &E::model, &M::proposal_layers));
    k.push_back(size_key("recurrent_hidden", &E::model, &M::recurrent_hidden));
    k.push_back(flag_key("zero_output_layers", &E::model, &M::zero_output_layers));
    k.push_back({"checkpoint_every",
                 [](E& c, std::string_view v) { c.checkpoint_every = parse_integer<std::size_t>("checkpoint_every", v); },
                 [](const E& c) { return std::to_string(c.checkpoint_every); }});
    k.push_back(string_key("init_checkpoint", &E::init_checkpoint));
    k.push_back(string_key("output", &E::output));
    return k;
  }();
  return table;
}

const Key& find_key(std::string_view name) {
  for (const auto& k : keys()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown key '" + std::string(name) + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : keys()) out.push_back(k.name);
    return out;
  }();
  return names;
}

void set_value(ExperimentConfig& config, std::string_view key, std::string_view value) {
  find_key(key).set(config, trim(value));
}

std::string get_value(const ExperimentConfig& config, std::string_view key) { return find_key(key).get(config); }

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto gap = line.find_first_of(" \t");
    const std::string_view key = line.substr(0, gap);
    const std::string_view value = gap == std::string_view::npos ? std::string_view{} : trim(line.substr(gap));
    try {
      set_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ParseError(line_no, e.what());
    }
    if (end == text.size()) break;
  }
  return base;
}

ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

std::string serialize(const ExperimentConfig& config) {
  std::string out;
  for (const auto& k : keys()) {
    const std::string v = k.get(config);
    out += k.name;
    if (!v.empty()) out += " " + v;
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Domains

namespace {

constexpr std::string_view kTabularPrefix = "tabular:";
constexpr int kTabularHorizon = 6;

bool is_tabular(const ExperimentConfig& c) { return c.domain.rfind(kTabularPrefix, 0) == 0; }

bool is_tooluse(const ExperimentConfig& c) { return c.domain == "tooluse" || c.domain == "tooluse-stack"; }

tooluse::Config tooluse_config(const ExperimentConfig& c) {
  tooluse::Config base = c.domain == "tooluse-stack" ? tooluse::stack_config() : tooluse::Config{};
  if (!c.env_config.empty()) base = tooluse::load_config(c.env_config, base);
  if (c.env_horizon > 0) base.horizon = c.env_horizon;
  base.validate();
  return base;
}

int goal_id(const SkillVocabulary& vocab, const std::string& name) {
  if (name.empty()) return -1;
  const int g = vocab.find_goal(name);
  if (g < 0) throw ConfigError("unknown goal '" + name + "'");
  return g;
}

}  // namespace

void validate(const ExperimentConfig& config) {
  config.train.validate();
  if (!is_tabular(config) && !is_tooluse(config)) {
    throw ConfigError("unknown domain '" + config.domain + "' (tooluse, tooluse-stack or tabular:<file>)");
  }
  if (is_tabular(config) && config.domain.size() == kTabularPrefix.size()) {
    throw ConfigError("tabular domain needs a file: tabular:<file>");
  }
  if (config.method == Method::kOracle && !is_tabular(config)) {
    throw ConfigError("method oracle needs a tabular domain");
  }
  if (config.env_horizon < 0) throw ConfigError("env_horizon must be non-negative");
  if (config.checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
  if (config.planner.candidates == 0) throw ConfigError("candidates must be positive");
  if (config.planner.horizon_cap == 0) throw ConfigError("horizon_cap must be positive");
  if (config.planner.temperature < 0.0) throw ConfigError("temperature must be non-negative");
  if (config.planner.tie_tolerance < 0.0) throw ConfigError("tie_tolerance must be non-negative");
  const auto& m = config.model;
  if (m.latent == 0 || m.hidden == 0 || m.recurrent_hidden == 0) throw ConfigError("model widths must be positive");
  if (!(config.train.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!config.goal.empty()) {
    const auto d = make_domain(config);
    (void)d;
  }
}

models::ModelConfig model_config(const ExperimentConfig& config) {
  models::ModelConfig m = config.model;
  m.variant = config.method == Method::kDafNoRnn ? models::Variant::kFeedforward : models::Variant::kRecurrent;
  m.head = config.method == Method::kGcPlanet ? models::Head::kReward : models::Head::kAffordance;
  return m;
}

Domain make_domain(const ExperimentConfig& config) {
  Domain d;
  if (is_tooluse(config)) {
    const int goal = goal_id(tooluse::vocabulary(), config.goal);
    auto env = std::make_unique<tooluse::ToolUseEnv>(tooluse_config(config), goal);
    d.world = &env->world();
    d.goal = goal;
    d.env = std::move(env);
  } else if (is_tabular(config)) {
    auto mdp = tabular::load_mdp(config.domain.substr(kTabularPrefix.size()));
    const int goal = goal_id(mdp.vocabulary(), config.goal);
    auto env = std::make_unique<tabular::TabularEnv>(std::move(mdp),
                                                     config.env_horizon > 0 ? config.env_horizon : kTabularHorizon, goal);
    d.mdp = &env->mdp();
    d.goal = goal;
    d.env = std::move(env);
  } else {
    throw ConfigError("unknown domain '" + config.domain + "'");
  }
  return d;
}

namespace {

std::vector<int> skeleton_from(Environment& env, int goal, std::size_t max_length) {
  std::vector<int> skills;
  if (auto* t = dynamic_cast<tooluse::ToolUseEnv*>(&env)) {
    for (const auto& c : t->world().scripted_expert(t->state(), goal)) skills.push_back(c.skill);
  } else if (auto* t = dynamic_cast<tabular::TabularEnv*>(&env)) {
    const auto best = tabular::best_plan(t->mdp(), goal, max_length);
    if (best) {
      for (const auto& s : best->plan) skills.push_back(s.skill);
    }
  } else {
    throw ConfigError("plan-skeleton needs a tool-use or tabular domain");
  }
  return skills;
}

}  // namespace

std::vector<int> skeleton_for(const Domain& domain, int goal, std::size_t max_length) {
  return skeleton_from(*domain.env, goal, max_length);
}

trainer::Collector make_collector(const ExperimentConfig& config, const Domain& domain) {
  const planner::PlannerConfig pc = config.planner;
  switch (config.method) {
    case Method::kDaf:
    case Method::kDafNoRnn:
    case Method::kGcPlanet:
      return trainer::mpc_collector(pc);
    case Method::kPlanSkeleton:
      return [pc](const models::ModelBundle&, Environment& env, int goal, Rng& rng) {
        const auto skeleton = skeleton_from(env, goal, static_cast<std::size_t>(env.horizon()));
        return planner::skeleton_episode(env, goal, skeleton, pc, rng);
      };
    case Method::kOracle: {
      if (domain.mdp == nullptr) throw ConfigError("method oracle needs a tabular domain");
      // Exact affordances with every plan enumerated.
      planner::PlannerConfig exact = pc;
      exact.exhaustive = true;
      return [exact](const models::ModelBundle&, Environment& env, int goal, Rng& rng) {
        auto& t = dynamic_cast<tabular::TabularEnv&>(env);
        planner::TabularOracleModel model(t.mdp());
        return planner::mpc_episode(model, env, goal, exact, rng);
      };
    }
  }
  throw ConfigError("unknown method");
}

void check_compatible(const models::ModelBundle& bundle, const Domain& domain) {
  const auto& env = *domain.env;
  if (bundle.observation_width() != env.observation_width()) {
    throw ConfigError("checkpoint observation width " + std::to_string(bundle.observation_width()) +
                      " does not match the domain's width " + std::to_string(env.observation_width()));
  }
  if (!(bundle.vocabulary() == env.vocabulary())) {
    throw ConfigError("checkpoint skill vocabulary (" + std::to_string(bundle.vocabulary().size()) +
                      " skills) does not match the domain's (" + std::to_string(env.vocabulary().size()) + " skills)");
  }
}

models::ModelBundle initial_bundle(const ExperimentConfig& config, const Domain& domain) {
  const auto& env = *domain.env;
  models::ModelBundle bundle(model_config(config), env.vocabulary(), env.observation_width(), config.seed);
  if (config.init_checkpoint.empty()) return bundle;
  const auto loaded = models::load_bundle(config.init_checkpoint);
  check_compatible(loaded, domain);
  if (!(loaded.config() == bundle.config())) {
    throw ConfigError("init_checkpoint model configuration differs from the experiment's");
  }
  // Parameter values only: the optimizer starts fresh for the new task.
  auto& dst = bundle.params();
  const auto& src = loaded.params();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].value = src[src.index(dst[i].name)].value;
  return bundle;
}

// ---------------------------------------------------------------------------
// Training runs

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

void append_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

/// Keeps the first `lines` lines of a text file.
void truncate_lines(const fs::path& path, std::size_t lines) {
  const std::string text = read_text(path);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < lines && pos < text.size(); ++i) {
    const auto nl = text.find('\n', pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
  }
  write_text(path, text.substr(0, pos));
}

}  // namespace

RunResult run_training(const ExperimentConfig& config, const fs::path& dir, const RunOptions& options) {
  validate(config);
  fs::create_directories(dir);
  const RunFiles files{dir};
  auto domain = make_domain(config);
  Environment& env = *domain.env;
  trainer::TrainConfig tc = config.train;
  if (!learns(config.method)) tc.updates = 0;
  const auto collect = make_collector(config, domain);
  const std::string snapshot = serialize(config);

  std::optional<trainer::TrainingState> state;
  if (options.resume && fs::exists(files.checkpoint()) && fs::exists(files.buffer())) {
    if (read_text(files.config()) != snapshot) {
      throw ConfigError("configuration differs from the run stored in " + dir.string());
    }
    state.emplace(trainer::load_state(files.checkpoint(), files.buffer()));
    check_compatible(state->bundle, domain);
    truncate_lines(files.metrics(), state->round + 1);
    truncate_lines(files.timing(), state->round + 1);
    if (options.log) *options.log << "resuming at round " << state->round << "\n";
  } else {
    write_text(files.config(), snapshot);
    Rng seeding(config.seed);
    auto buffer = trainer::seed_buffer(env, tc.seed_episodes, seeding, tc.capacity, config.planner);
    state.emplace(trainer::TrainingState{initial_bundle(config, domain), std::move(buffer),
                                         Rng::stream(config.seed, 1), 0, tc.seed_episodes});
    std::ostringstream header;
    trainer::write_metrics_header(header, env.vocabulary());
    write_text(files.metrics(), header.str());
    write_text(files.timing(), "round,seconds\n");
    fs::remove(files.bundle());
    trainer::save_state(files.checkpoint(), files.buffer(), *state, config.seed);
  }

  RunResult result{{}, std::move(*state)};
  auto& st = result.state;
  while (st.round < tc.rounds) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = trainer::training_round(st, env, tc, collect);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream row;
    trainer::write_metrics_row(row, m);
    append_text(files.metrics(), row.str());
    char timing[64];
    std::snprintf(timing, sizeof timing, "%zu,%.3f\n", m.round, seconds);
    append_text(files.timing(), timing);
    result.rounds.push_back(m);
    const bool stop = options.on_round && !options.on_round(m, st);
    if (m.round % config.checkpoint_every == 0 || m.round == tc.rounds || stop) {
      trainer::save_state(files.checkpoint(), files.buffer(), st, config.seed);
    }
    if (options.log) {
      *options.log << "round " << m.round << " episodes " << m.episodes;
      for (std::size_t g = 0; g < m.attempts.size(); ++g) {
        if (m.attempts[g] > 0) *options.log << " " << env.vocabulary().goal_name(static_cast<int>(g)) << " " << m.success_rate(g);
      }
      *options.log << std::endl;
    }
    if (stop) break;
  }
  models::save_bundle(files.bundle(), st.bundle, config.seed, false);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::pair<double, double> binomial_interval(std::size_t successes, std::size_t trials) {
  if (trials == 0) return {0.0, 1.0};
  constexpr double z = 1.959963984540054;
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  // The bounds are exact at the extremes; rounding must not push them past p.
  const double lo = successes == 0 ? 0.0 : std::min(p, centre - half);
  const double hi = successes == trials ? 1.0 : std::max(p, centre + half);
  return {lo, hi};
}

EvalReport evaluate(const ExperimentConfig& config, const models::ModelBundle* bundle, std::size_t episodes,
                    std::uint64_t seed) {
  validate(config);
  auto domain = make_domain(config);
  Environment& env = *domain.env;
  std::optional<models::ModelBundle> placeholder;
  if (bundle == nullptr) {
    if (learns(config.method)) throw ConfigError("method " + std::string(to_string(config.method)) + " needs a checkpoint");
    placeholder.emplace(model_config(config), env.vocabulary(), env.observation_width(), config.seed);
    bundle = &*placeholder;
  }
  check_compatible(*bundle, domain);
  const auto collect = make_collector(config, domain);
  const auto& vocab = env.vocabulary();
  std::vector<std::size_t> attempts(vocab.goal_count(), 0), successes(vocab.goal_count(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < episodes; ++i) {
    const int goal = env.reset(rng.next());
    Rng episode_rng(rng.next());
    const auto r = collect(*bundle, env, goal, episode_rng);
    ++attempts.at(static_cast<std::size_t>(goal));
    successes[static_cast<std::size_t>(goal)] += r.success ? 1 : 0;
  }
  EvalReport report;
  report.episodes = episodes;
  for (std::size_t g = 0; g < attempts.size(); ++g) {
    if (attempts[g] == 0) continue;
    GoalRate rate;
    rate.goal = vocab.goal_name(static_cast<int>(g));
    rate.episodes = attempts[g];
    rate.successes = successes[g];
    rate.rate = static_cast<double>(successes[g]) / static_cast<double>(attempts[g]);
    std::tie(rate.lo, rate.hi) = binomial_interval(successes[g], attempts[g]);
    report.goals.push_back(rate);
  }
  return report;
}

void write_report(std::ostream& out, const EvalReport& report) {
  out << "episodes " << report.episodes << "\n";
  char buf[160];
  for (const auto& g : report.goals) {
    std::snprintf(buf, sizeof buf, "goal %s episodes %zu successes %zu rate %.4f ci95 [%.4f, %.4f]\n", g.goal.c_str(),
                  g.episodes, g.successes, g.rate, g.lo, g.hi);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Heatmaps

void HeatmapSpec::validate() const {
  if (width < 2 || height < 2) throw ConfigError("heatmap resolution must be at least 2 per axis");
}

namespace {

Command probe_command(const tooluse::World& world, const tooluse::WorldState& s, const HeatmapSpec& spec,
                      const SkillVocabulary& vocab, tooluse::Vec2 p, int& skill_out) {
  int skill = -1;
  if (spec.skill == "grasp") {
    // Nearest object footprint; ties go to the tool, then red, then blue.
    const double tool = std::min(world.handle_box(s.tool).distance(p), world.hook_box(s.tool).distance(p));
    const double red = world.cube_box(s.red).distance(p);
    const double blue = world.cube_box(s.blue).distance(p);
    skill = tooluse::kGraspTool;
    if (red < tool && red <= blue) skill = tooluse::kGraspRed;
    else if (blue < tool && blue < red) skill = tooluse::kGraspBlue;
  } else {
    skill = vocab.require(spec.skill);
  }
  skill_out = skill;
  const int side = world.config().side;
  Command c;
  switch (skill) {
    case tooluse::kGraspTool:
      c = world.grasp_tool_command(side * (p.x - s.tool.x), p.y - s.tool.y);
      break;
    case tooluse::kGraspRed:
      c = world.grasp_cube_command(tooluse::kRed, {p.x - s.red.x, p.y - s.red.y});
      break;
    case tooluse::kGraspBlue:
      c = world.grasp_cube_command(tooluse::kBlue, {p.x - s.blue.x, p.y - s.blue.y});
      break;
    default: {
      if (vocab[static_cast<std::size_t>(skill)].arity < 2) {
        throw ConfigError("heatmap skill '" + spec.skill + "' has fewer than two parameters");
      }
      c.skill = skill;
      c.theta = spec.fixed;
      c.theta[0] = static_cast<float>(2.0 * p.x - 1.0);
      c.theta[1] = static_cast<float>(2.0 * p.y - 1.0);
    }
  }
  return c;
}

}  // namespace

Heatmap compute_heatmap(const models::ModelBundle& bundle, const tooluse::World& world, const HeatmapSpec& spec,
                        const planner::PlannerConfig& config) {
  spec.validate();
  const auto vocab = tooluse::vocabulary();
  if (bundle.observation_width() != tooluse::kObservationWidth) {
    throw ConfigError("checkpoint observation width " + std::to_string(bundle.observation_width()) +
                      " does not match the tool-use width " + std::to_string(tooluse::kObservationWidth));
  }
  if (!(bundle.vocabulary() == vocab)) throw ConfigError("checkpoint skill vocabulary is not the tool-use vocabulary");
  if (!bundle.has_affordance()) throw ConfigError("heatmaps need an affordance checkpoint");
  const int goal = vocab.find_goal(spec.goal);
  if (goal < 0) throw ConfigError("unknown goal '" + spec.goal + "'");

  Heatmap map;
  map.width = spec.width;
  map.height = spec.height;
  map.state = world.reset(spec.seed, goal);
  const auto obs = world.observe(map.state);
  const std::size_t horizon =
      std::max<std::size_t>(1, std::min(config.horizon_cap, static_cast<std::size_t>(world.config().horizon)));
  planner::LatentPlanModel model(bundle);
  const std::size_t cells = spec.width * spec.height;
  map.score.resize(cells);
  map.skill.resize(cells);
  map.centre.resize(cells);
  for (std::size_t r = 0; r < spec.height; ++r) {
    for (std::size_t c = 0; c < spec.width; ++c) {
      const std::size_t i = map.index(r, c);
      const tooluse::Vec2 p{(static_cast<double>(c) + 0.5) / static_cast<double>(spec.width),
                            1.0 - (static_cast<double>(r) + 0.5) / static_cast<double>(spec.height)};
      map.centre[i] = p;
      planner::SampleOptions opt;
      opt.first = probe_command(world, map.state, spec, vocab, p, map.skill[i]);
      const auto cands = planner::sample_candidates(model, obs, goal, horizon, config, spec.seed, opt);
      const auto best = planner::select_index(cands, config.tie_tolerance);
      // No goal-directed completion scores zero.
      map.score[i] = best ? -cands[*best].cost : 0.0;
    }
  }
  map.normalized.resize(cells);
  const auto [lo, hi] = std::minmax_element(map.score.begin(), map.score.end());
  for (std::size_t i = 0; i < cells; ++i) {
    if (spec.normalization == HeatmapSpec::Normalization::kNone) {
      map.normalized[i] = std::clamp(map.score[i], 0.0, 1.0);
    } else if (*hi - *lo > 0.0) {
      map.normalized[i] = (map.score[i] - *lo) / (*hi - *lo);
    } else {
      map.normalized[i] = 0.5;  // flat grid
    }
  }
  return map;
}

std::uint8_t grey_level(double normalized) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(normalized, 0.0, 1.0) * 255.0));
}

void write_heatmap_csv(std::ostream& out, const Heatmap& map) {
  out << "row,col,x,y,skill,score,normalized\n";
  char buf[160];
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t c = 0; c < map.width; ++c) {
      const std::size_t i = map.index(r, c);
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%d,%.17g,%.17g\n", r, c, map.centre[i].x, map.centre[i].y,
                    map.skill[i], map.score[i], map.normalized[i]);
      out << buf;
    }
  }
}

void write_heatmap_pgm(std::ostream& out, const Heatmap& map) {
  out << "P5\n" << map.width << " " << map.height << "\n255\n";
  for (double v : map.normalized) out.put(static_cast<char>(grey_level(v)));
}

tooluse::Box handle_region(const tooluse::World& world, const tooluse::WorldState& s) {
  const auto& c = world.config();
  const double end = s.tool.x + c.side * c.handle_length;
  return {std::min(s.tool.x, end), s.tool.y - c.grasp_lateral_tolerance, std::max(s.tool.x, end),
          s.tool.y + c.grasp_lateral_tolerance};
}

double mean_over(const Heatmap& map, const tooluse::Box& box) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < map.normalized.size(); ++i) {
    if (box.contains(map.centre[i])) {
      sum += map.normalized[i];
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : std::nan("");
}

// ---------------------------------------------------------------------------
// Replay buffer inspection

void write_buffer_summary(std::ostream& out, const trainer::ReplayBuffer& buffer, const SkillVocabulary* vocab) {
  out << "capacity " << buffer.capacity() << "\n"
      << "episodes " << buffer.size() << "\n"
      << "cursor " << buffer.cursor() << "\n"
      << "steps " << buffer.total_steps() << "\n"
      << "observation_width " << buffer.observation_width() << "\n";
  std::map<int, std::pair<std::size_t, std::size_t>> goals;   // episodes, rewarded
  std::map<int, std::pair<std::size_t, std::size_t>> skills;  // attempts, afforded
  for (std::size_t e = 0; e < buffer.size(); ++e) {
    const auto& ep = buffer.episode(e);
    auto& g = goals[ep.goal];
    ++g.first;
    bool rewarded = false;
    for (const auto& s : ep.steps) {
      rewarded = rewarded || s.reward > 0.0f;
      auto& k = skills[s.command.skill];
      ++k.first;
      k.second += s.afforded == 1 ? 1 : 0;
    }
    g.second += rewarded ? 1 : 0;
  }
  const auto goal_name = [&](int g) {
    return vocab && g >= 0 && static_cast<std::size_t>(g) < vocab->goal_count() ? vocab->goal_name(g) : std::to_string(g);
  };
  const auto skill_name = [&](int k) {
    return vocab && k >= 0 && static_cast<std::size_t>(k) < vocab->size() ? (*vocab)[static_cast<std::size_t>(k)].name
                                                                          : std::to_string(k);
  };
  for (const auto& [g, c] : goals) out << "goal " << goal_name(g) << " episodes " << c.first << " rewarded " << c.second << "\n";
  for (const auto& [k, c] : skills) out << "skill " << skill_name(k) << " attempts " << c.first << " afforded " << c.second << "\n";
}

void write_buffer_episode(std::ostream& out, const trainer::ReplayBuffer& buffer, std::size_t episode) {
  if (episode >= buffer.size()) {
    throw ConfigError("episode " + std::to_string(episode) + " is out of range (buffer holds " +
                      std::to_string(buffer.size()) + ")");
  }
  const auto& ep = buffer.episode(episode);
  bool reached = false;
  for (std::size_t i = 0; i < ep.steps.size(); ++i) {
    const auto& s = ep.steps[i];
    reached = reached || s.reward > 0.0f;
    tooluse::write_log_record(out, {static_cast<int>(episode), static_cast<int>(i), s.command, s.afforded, reached ? 1 : 0});
  }
}

// ---------------------------------------------------------------------------
// Oracle report

OracleReport oracle_report(const tabular::TabularMdp& mdp, int goal, std::size_t max_length) {
  OracleReport report;
  report.best = tabular::best_plan(mdp, goal, max_length);
  report.ranking = tabular::rank_goal_directed(mdp, goal, max_length);
  for (const auto& r : report.ranking) {
    const double e = tabular::enumerate_completion_probability(mdp, r.plan, mdp.initial);
    report.max_discrepancy = std::max(report.max_discrepancy, std::abs(e - r.probability));
  }
  report.cross_check_ok = report.max_discrepancy <= tabular::kTieTolerance;
  if (report.best) {
    // The best plan must also top the enumerated ranking.
    double top = 0.0;
    for (const auto& r : report.ranking) top = std::max(top, tabular::enumerate_completion_probability(mdp, r.plan, mdp.initial));
    if (std::abs(top - report.best->probability) > tabular::kTieTolerance) report.cross_check_ok = false;
  } else if (!report.ranking.empty()) {
    report.cross_check_ok = false;
  }
  return report;
}

void write_oracle_report(std::ostream& out, const tabular::TabularMdp& mdp, const OracleReport& report) {
  char buf[64];
  if (!report.best) {
    out << "no goal-directed plan\n";
  } else {
    std::snprintf(buf, sizeof buf, "%.12f", report.best->probability);
    out << "best " << tabular::format_plan(mdp, report.best->plan) << " probability " << buf << "\n";
    out << "ranking " << report.ranking.size() << "\n";
    for (std::size_t i = 0; i < report.ranking.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.12f", report.ranking[i].probability);
      out << "  " << (i + 1) << " " << buf << " " << tabular::format_plan(mdp, report.ranking[i].plan) << "\n";
    }
  }
  std::snprintf(buf, sizeof buf, "%.3g", report.max_discrepancy);
  out << "cross-check " << (report.cross_check_ok ? "ok" : "FAILED") << " max discrepancy " << buf << "\n";
}

}  // namespace affplan::experiment
