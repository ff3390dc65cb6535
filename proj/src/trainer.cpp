#include "affplan/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace affplan::trainer {

using nn::Matrix;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t observation_width)
    : capacity_(capacity), observation_width_(observation_width) {
  if (capacity_ == 0) throw ConfigError("buffer capacity must be at least 1");
  if (observation_width_ == 0) throw ConfigError("observation width must be positive");
}

void ReplayBuffer::add(Episode episode) {
  for (const auto& e : episode.steps) {
    if (e.observation.size() != observation_width_) throw ConfigError("experience observation width mismatch");
    if (e.afforded != 0 && e.afforded != 1) throw ConfigError("affordance labels must be 0 or 1");
  }
  total_steps_ += episode.steps.size();
  if (episodes_.size() < capacity_) {
    episodes_.push_back(std::move(episode));
  } else {
    total_steps_ -= episodes_[cursor_].steps.size();
    episodes_[cursor_] = std::move(episode);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::pair<std::size_t, std::size_t> ReplayBuffer::locate(std::size_t flat) const {
  if (flat >= total_steps_) throw ConfigError("step index out of range");
  for (std::size_t e = 0; e < episodes_.size(); ++e) {
    const std::size_t n = episodes_[e].steps.size();
    if (flat < n) return {e, flat};
    flat -= n;
  }
  throw ConfigError("step index out of range");
}

bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
  if (a.capacity_ != b.capacity_ || a.observation_width_ != b.observation_width_ || a.cursor_ != b.cursor_ ||
      a.episodes_.size() != b.episodes_.size()) {
    return false;
  }
  for (std::size_t e = 0; e < a.episodes_.size(); ++e) {
    const auto& x = a.episodes_[e];
    const auto& y = b.episodes_[e];
    if (x.goal != y.goal || x.steps.size() != y.steps.size()) return false;
    for (std::size_t i = 0; i < x.steps.size(); ++i) {
      const auto& p = x.steps[i];
      const auto& q = y.steps[i];
      if (p.observation != q.observation || !(p.command == q.command) || p.afforded != q.afforded ||
          p.reward != q.reward) {
        return false;
      }
    }
  }
  return true;
}

ArrayFile ReplayBuffer::snapshot() const {
  ArrayFile f;
  f.kind = "buffer";
  f.meta.emplace_back("buffer.capacity", std::to_string(capacity_));
  f.meta.emplace_back("buffer.cursor", std::to_string(cursor_));
  f.meta.emplace_back("buffer.observation_width", std::to_string(observation_width_));
  ArrayFile::Array eps{"buffer.episodes", episodes_.size(), 2, {}};
  ArrayFile::Array obs{"buffer.observations", total_steps_, observation_width_, {}};
  ArrayFile::Array cmd{"buffer.commands", total_steps_, 1 + kMaxArity, {}};
  ArrayFile::Array lab{"buffer.labels", total_steps_, 2, {}};
  for (const auto& e : episodes_) {
    eps.values.push_back(static_cast<float>(e.goal));
    eps.values.push_back(static_cast<float>(e.steps.size()));
    for (const auto& s : e.steps) {
      obs.values.insert(obs.values.end(), s.observation.begin(), s.observation.end());
      cmd.values.push_back(static_cast<float>(s.command.skill));
      cmd.values.insert(cmd.values.end(), s.command.theta.begin(), s.command.theta.end());
      lab.values.push_back(static_cast<float>(s.afforded));
      lab.values.push_back(s.reward);
    }
  }
  f.arrays = {std::move(eps), std::move(obs), std::move(cmd), std::move(lab)};
  return f;
}

ReplayBuffer ReplayBuffer::restore(const ArrayFile& file) {
  if (file.kind != "buffer") throw ConfigError("file is not a buffer snapshot (kind " + file.kind + ")");
  auto size_meta = [&](const std::string& key) {
    return static_cast<std::size_t>(std::stoull(file.require_meta(key)));
  };
  ReplayBuffer b(size_meta("buffer.capacity"), size_meta("buffer.observation_width"));
  const auto& eps = file.require_array("buffer.episodes");
  const auto& obs = file.require_array("buffer.observations");
  const auto& cmd = file.require_array("buffer.commands");
  const auto& lab = file.require_array("buffer.labels");
  if (obs.cols != b.observation_width_ || cmd.cols != 1 + kMaxArity || lab.cols != 2 || eps.cols != 2) {
    throw ConfigError("buffer snapshot array shapes are inconsistent");
  }
  std::size_t row = 0;
  for (std::size_t e = 0; e < eps.rows; ++e) {
    Episode ep;
    ep.goal = static_cast<int>(eps.values[2 * e]);
    const auto n = static_cast<std::size_t>(eps.values[2 * e + 1]);
    if (row + n > obs.rows) throw ConfigError("buffer snapshot is truncated");
    for (std::size_t i = 0; i < n; ++i, ++row) {
      planner::Experience x;
      x.observation.assign(obs.values.begin() + static_cast<std::ptrdiff_t>(row * obs.cols),
                           obs.values.begin() + static_cast<std::ptrdiff_t>((row + 1) * obs.cols));
      x.command.skill = static_cast<int>(cmd.values[row * cmd.cols]);
      for (std::size_t k = 0; k < kMaxArity; ++k) x.command.theta[k] = cmd.values[row * cmd.cols + 1 + k];
      x.afforded = static_cast<int>(lab.values[row * 2]);
      x.reward = lab.values[row * 2 + 1];
      ep.steps.push_back(std::move(x));
    }
    b.episodes_.push_back(std::move(ep));
    b.total_steps_ += n;
  }
  b.cursor_ = size_meta("buffer.cursor");
  if (b.cursor_ >= b.capacity_ || (b.episodes_.size() < b.capacity_ && b.cursor_ != b.episodes_.size())) {
    throw ConfigError("buffer snapshot cursor is inconsistent");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (overshoot < 2) throw ConfigError("overshooting length must be at least 2");
  if (batch == 0) throw ConfigError("batch size must be at least 1");
  if (capacity == 0) throw ConfigError("buffer capacity must be at least 1");
  if (rounds == 0) throw ConfigError("round count must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

// ---------------------------------------------------------------------------
// Collection

Episode to_episode(const planner::EpisodeResult& result) {
  Episode e;
  e.goal = result.goal;
  e.steps = result.experiences;
  return e;
}

Episode random_episode(Environment& env, int goal, Rng& rng, const planner::PlannerConfig& ranges) {
  const auto& vocab = env.vocabulary();
  planner::EpisodeRecorder log(env, goal);
  for (int t = 0; t < env.horizon(); ++t) {
    const int skill = static_cast<int>(rng.index(vocab.size()));
    const Command cmd = sample_command(vocab, skill, ranges.range(skill), rng);
    log.attempt(cmd);
    if (log.goal_reached(true)) break;
  }
  return to_episode(log.finish());
}

ReplayBuffer seed_buffer(Environment& env, std::size_t episodes, Rng& rng, std::size_t capacity,
                         const planner::PlannerConfig& ranges) {
  ReplayBuffer buffer(capacity, env.observation_width());
  for (std::size_t i = 0; i < episodes; ++i) {
    const int goal = env.reset(rng.next());
    buffer.add(random_episode(env, goal, rng, ranges));
  }
  return buffer;
}

// ---------------------------------------------------------------------------
// Fitting

models::WindowBatch sample_windows(const ReplayBuffer& buffer, const SkillVocabulary& vocab, std::size_t batch,
                                   std::size_t length, Rng& rng) {
  if (batch == 0 || length == 0) throw ConfigError("window batch must be non-empty");
  if (buffer.total_steps() < batch) {
    throw InsufficientData("not enough experience: " + std::to_string(buffer.total_steps()) +
                           " stored steps, batch needs " + std::to_string(batch));
  }
  // Episode start offsets for O(log E) lookup.
  std::vector<std::size_t> offsets(buffer.size() + 1, 0);
  for (std::size_t e = 0; e < buffer.size(); ++e) offsets[e + 1] = offsets[e] + buffer.episode(e).steps.size();

  const std::size_t cw = vocab.encoding_width();
  models::WindowBatch b;
  b.first_observation = Matrix<float>(batch, buffer.observation_width());
  b.goal_one_hot = Matrix<float>(batch, vocab.goal_count());
  for (std::size_t t = 0; t < length; ++t) {
    b.commands.emplace_back(batch, cw);
    b.labels.emplace_back(batch, 1);
    b.mask.emplace_back(batch, 1);
    b.rewards.emplace_back(batch, 1);
    b.skills.emplace_back(batch, 0);
  }
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t flat = rng.index(buffer.total_steps());
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const std::size_t e = static_cast<std::size_t>(it - offsets.begin()) - 1;
    const std::size_t start = flat - offsets[e];
    const Episode& ep = buffer.episode(e);
    const auto& o = ep.steps[start].observation;
    std::copy(o.begin(), o.end(), b.first_observation.data.begin() + static_cast<std::ptrdiff_t>(r * o.size()));
    if (ep.goal >= 0 && static_cast<std::size_t>(ep.goal) < vocab.goal_count()) {
      b.goal_one_hot(r, static_cast<std::size_t>(ep.goal)) = 1.0f;
    }
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t i = start + t;
      if (i >= ep.steps.size()) break;  // masked tail
      const auto& x = ep.steps[i];
      vocab.encode(x.command, std::span<float>(b.commands[t].data.data() + r * cw, cw));
      b.labels[t].data[r] = static_cast<float>(x.afforded);
      b.mask[t].data[r] = 1.0f;
      b.rewards[t].data[r] = x.reward;
      b.skills[t][r] = x.command.skill;
    }
  }
  return b;
}

double fit_step(models::ModelBundle& bundle, const models::WindowBatch& batch, const TrainConfig& config) {
  nn::Tape<float> tape;
  const auto loss = models::window_loss(tape, bundle, batch, config.loss);
  const double value = tape.scalar(loss.total);
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  tape.backward(loss.total);
  bundle.params().zero_grad();
  tape.accumulate_param_grads(bundle.params());
  nn::AdamConfig adam;
  adam.learning_rate = static_cast<float>(config.learning_rate);
  nn::adam_step(bundle.params(), adam);
  return value;
}

namespace {

FitTrace fit(models::ModelBundle& bundle, const ReplayBuffer& buffer, const TrainConfig& config, Rng& rng) {
  config.validate();
  FitTrace trace;
  for (std::size_t k = 0; k < config.updates; ++k) {
    const auto batch = sample_windows(buffer, bundle.vocabulary(), config.batch, config.overshoot, rng);
    trace.losses.push_back(fit_step(bundle, batch, config));
  }
  return trace;
}

}  // namespace

FitTrace fit_models(models::ModelBundle& bundle, const ReplayBuffer& buffer, const TrainConfig& config, Rng& rng) {
  if (!bundle.has_affordance()) throw ConfigError("fit_models needs an affordance bundle");
  return fit(bundle, buffer, config, rng);
}

FitTrace fit_baseline(models::ModelBundle& bundle, const ReplayBuffer& buffer, const TrainConfig& config, Rng& rng) {
  if (bundle.has_affordance()) throw ConfigError("fit_baseline needs a reward-head bundle");
  return fit(bundle, buffer, config, rng);
}

// ---------------------------------------------------------------------------
// Rounds

double RoundMetrics::success_rate(std::size_t goal) const {
  if (goal >= attempts.size() || attempts[goal] == 0) return kNaN;
  return static_cast<double>(successes[goal]) / static_cast<double>(attempts[goal]);
}

Collector mpc_collector(const planner::PlannerConfig& config) {
  return [config](const models::ModelBundle& bundle, Environment& env, int goal, Rng& rng) {
    planner::LatentPlanModel model(bundle);
    planner::EpisodeOptions options;
    options.log_goal_skill = bundle.has_affordance();
    return planner::mpc_episode(model, env, goal, config, rng, options);
  };
}

double affordance_accuracy(const models::ModelBundle& bundle, std::span<const Episode> episodes) {
  if (!bundle.has_affordance()) return kNaN;
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.steps.size();
  if (n == 0) return kNaN;
  Matrix<float> obs(n, bundle.observation_width());
  std::vector<Command> cmds;
  std::vector<int> labels;
  std::size_t r = 0;
  for (const auto& e : episodes) {
    for (const auto& s : e.steps) {
      std::copy(s.observation.begin(), s.observation.end(), obs.data.begin() + static_cast<std::ptrdiff_t>(r * obs.cols));
      cmds.push_back(s.command);
      labels.push_back(s.afforded);
      ++r;
    }
  }
  const auto p = models::predict_affordance(bundle, models::encode(bundle, obs), cmds);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += ((p[i] >= 0.5f) == (labels[i] == 1)) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(n);
}

RoundMetrics training_round(TrainingState& state, Environment& env, const TrainConfig& config,
                            const Collector& collect) {
  config.validate();
  const auto& vocab = state.bundle.vocabulary();
  RoundMetrics m;
  m.round = state.round + 1;
  m.attempts.assign(vocab.goal_count(), 0);
  m.successes.assign(vocab.goal_count(), 0);
  m.loss_first = m.loss_last = kNaN;
  if (config.updates > 0) {
    const auto trace = state.bundle.has_affordance() ? fit_models(state.bundle, state.buffer, config, state.rng)
                                                     : fit_baseline(state.bundle, state.buffer, config, state.rng);
    m.loss_first = trace.losses.front();
    m.loss_last = trace.losses.back();
  }
  std::vector<Episode> fresh;
  double cost_sum = 0.0;
  std::size_t cost_count = 0;
  for (std::size_t i = 0; i < config.rollouts; ++i) {
    const int goal = env.reset(state.rng.next());
    Rng episode_rng(state.rng.next());
    const auto result = collect(state.bundle, env, goal, episode_rng);
    const auto g = static_cast<std::size_t>(goal);
    ++m.attempts.at(g);
    m.successes[g] += result.success ? 1 : 0;
    m.fallbacks += result.fallbacks;
    for (double c : result.chosen_costs) {
      if (std::isfinite(c)) {
        cost_sum += c;
        ++cost_count;
      }
    }
    fresh.push_back(to_episode(result));
  }
  m.mean_chosen_cost = cost_count > 0 ? cost_sum / static_cast<double>(cost_count) : kNaN;
  m.affordance_accuracy = affordance_accuracy(state.bundle, fresh);
  for (auto& e : fresh) state.buffer.add(std::move(e));
  state.episodes += config.rollouts;
  state.round = m.round;
  m.episodes = state.episodes;
  return m;
}

// ---------------------------------------------------------------------------
// Metrics CSV

namespace {
std::string number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace

void write_metrics_header(std::ostream& out, const SkillVocabulary& vocab) {
  out << "round,episodes";
  for (std::size_t g = 0; g < vocab.goal_count(); ++g) out << ",success_" << vocab.goal_name(static_cast<int>(g));
  for (std::size_t g = 0; g < vocab.goal_count(); ++g) out << ",attempts_" << vocab.goal_name(static_cast<int>(g));
  out << ",mean_chosen_cost,affordance_accuracy,fallbacks,loss_first,loss_last\n";
}

void write_metrics_row(std::ostream& out, const RoundMetrics& m) {
  out << m.round << ',' << m.episodes;
  for (std::size_t g = 0; g < m.attempts.size(); ++g) out << ',' << number(m.success_rate(g));
  for (std::size_t a : m.attempts) out << ',' << a;
  out << ',' << number(m.mean_chosen_cost) << ',' << number(m.affordance_accuracy) << ',' << m.fallbacks << ','
      << number(m.loss_first) << ',' << number(m.loss_last) << '\n';
}

// ---------------------------------------------------------------------------
// Resumable state

void save_state(const std::filesystem::path& checkpoint, const std::filesystem::path& buffer,
                const TrainingState& state, std::uint64_t seed) {
  ArrayFile f;
  f.kind = "checkpoint";
  f.seed = seed;
  f.meta.emplace_back("run.round", std::to_string(state.round));
  f.meta.emplace_back("run.episodes", std::to_string(state.episodes));
  const auto s = state.rng.state();
  char buf[80];
  std::snprintf(buf, sizeof buf, "%016" PRIx64 "%016" PRIx64 "%016" PRIx64 "%016" PRIx64, s[0], s[1], s[2], s[3]);
  f.meta.emplace_back("run.rng", buf);
  models::append_bundle(f, state.bundle, true);
  auto snap = state.buffer.snapshot();
  snap.seed = seed;
  // Write both to temporaries first so a failure never leaves a mixed pair.
  const auto ck_tmp = checkpoint.string() + ".tmp";
  const auto buf_tmp = buffer.string() + ".tmp";
  write_array_file(ck_tmp, f);
  write_array_file(buf_tmp, snap);
  std::filesystem::rename(buf_tmp, buffer);
  std::filesystem::rename(ck_tmp, checkpoint);
}

TrainingState load_state(const std::filesystem::path& checkpoint, const std::filesystem::path& buffer) {
  const auto f = read_array_file(checkpoint);
  const std::string& hex = f.require_meta("run.rng");
  if (hex.size() != 64) throw ConfigError("malformed rng state in checkpoint");
  std::array<std::uint64_t, 4> s{};
  for (std::size_t i = 0; i < 4; ++i) s[i] = std::stoull(hex.substr(16 * i, 16), nullptr, 16);
  Rng rng;
  rng.set_state(s);
  TrainingState state{models::bundle_from_file(f), ReplayBuffer::restore(read_array_file(buffer)), rng,
                      static_cast<std::size_t>(std::stoull(f.require_meta("run.round"))),
                      static_cast<std::size_t>(std::stoull(f.require_meta("run.episodes")))};
  if (state.buffer.observation_width() != state.bundle.observation_width()) {
    throw ConfigError("buffer observation width does not match the checkpoint model");
  }
  return state;
}

}  // namespace affplan::trainer
