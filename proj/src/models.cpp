#include "affplan/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace affplan::models {

using nn::Matrix;
using nn::Tape;

const char* to_string(Variant v) { return v == Variant::kRecurrent ? "recurrent" : "feedforward"; }
const char* to_string(Head h) { return h == Head::kReward ? "reward" : "affordance"; }

Variant parse_variant(const std::string& text) {
  if (text == "feedforward") return Variant::kFeedforward;
  if (text == "recurrent") return Variant::kRecurrent;
  throw ConfigError("unknown model variant '" + text + "'");
}

Head parse_head(const std::string& text) {
  if (text == "affordance") return Head::kAffordance;
  if (text == "reward") return Head::kReward;
  throw ConfigError("unknown model head '" + text + "'");
}

Latent Latent::row(std::size_t r) const {
  Latent out;
  out.z = z.slice_rows(r, 1);
  if (!h.empty()) out.h = h.slice_rows(r, 1);
  return out;
}

Latent Latent::repeat(std::size_t count) const {
  Latent out;
  auto rep = [count](const Matrix<float>& m) {
    Matrix<float> r(count, m.cols);
    for (std::size_t i = 0; i < count; ++i) std::copy(m.data.begin(), m.data.begin() + m.cols, r.row(i).begin());
    return r;
  };
  out.z = rep(z);
  if (!h.empty()) out.h = rep(h);
  return out;
}

namespace {

void zero_layer(nn::ParamStore& store, const nn::DenseLayer& layer) {
  std::fill(store[layer.weight].value.begin(), store[layer.weight].value.end(), 0.0f);
  std::fill(store[layer.bias].value.begin(), store[layer.bias].value.end(), 0.0f);
}

}  // namespace

ModelBundle::ModelBundle(ModelConfig config, SkillVocabulary vocab, std::size_t observation_width,
                         std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), observation_width_(observation_width) {
  if (observation_width_ == 0) throw ConfigError("observation width must be positive");
  if (vocab_.size() == 0) throw ConfigError("skill vocabulary is empty");
  if (config_.latent == 0 || config_.hidden == 0) throw ConfigError("model widths must be positive");
  if (config_.variant == Variant::kRecurrent && config_.recurrent_hidden == 0) {
    throw ConfigError("recurrent hidden width must be positive");
  }
  Rng rng(seed);
  const std::size_t cmd = command_width();
  const std::size_t L = config_.latent;
  const std::size_t H = config_.hidden;
  encoder_ = nn::add_mlp(params_, "enc", observation_width_, H, config_.encoder_layers, L, nn::Activation::kLinear, rng);
  if (recurrent()) {
    cell_ = nn::add_gru(params_, "trans.gru", L + cmd, config_.recurrent_hidden, rng);
    decoder_ = nn::add_mlp(params_, "dec", config_.recurrent_hidden, H, 1, L, nn::Activation::kLinear, rng);
  } else {
    transition_ = nn::add_mlp(params_, "trans", L + cmd, H, config_.transition_layers, L, nn::Activation::kLinear, rng);
  }
  if (has_affordance()) {
    affordance_ = nn::add_mlp(params_, "aff", L + cmd, H, config_.affordance_layers, 1, nn::Activation::kLinear, rng);
    proposal_ = nn::add_mlp(params_, "pi", L, H, config_.proposal_layers, vocab_.size(), nn::Activation::kLinear, rng);
  } else {
    if (vocab_.goal_count() == 0) throw ConfigError("reward head needs at least one goal");
    reward_ = nn::add_mlp(params_, "reward", L + vocab_.goal_count(), H, config_.affordance_layers, 1,
                          nn::Activation::kLinear, rng);
  }
  if (config_.zero_output_layers) {
    for (const nn::Mlp* net : {&encoder_, &decoder_, &transition_, &affordance_, &proposal_, &reward_}) {
      if (!net->layers.empty()) zero_layer(params_, net->layers.back());
    }
  }
}

std::vector<std::string> ModelBundle::trunk_parameter_names() const {
  std::vector<std::string> names;
  for (const auto& a : params_.arrays()) {
    if (a.name.rfind("enc.", 0) == 0 || a.name.rfind("trans", 0) == 0 || a.name.rfind("dec.", 0) == 0) {
      names.push_back(a.name);
    }
  }
  return names;
}

// ---------------------------------------------------------------------------
// Building blocks

template <typename T>
LatentVars<T> encode_vars(Tape<T>& tape, const ModelBundle& m, typename Tape<T>::Var observation) {
  if (tape.value(observation).cols != m.observation_width()) {
    throw ConfigError("observation width " + std::to_string(tape.value(observation).cols) + " does not match model (" +
                      std::to_string(m.observation_width()) + ")");
  }
  LatentVars<T> s;
  s.z = nn::mlp(tape, m.params(), m.encoder(), observation);
  if (m.recurrent()) s.h = tape.input(Matrix<T>(tape.value(observation).rows, m.config().recurrent_hidden));
  return s;
}

template <typename T>
LatentVars<T> advance_vars(Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s,
                           typename Tape<T>::Var command) {
  const typename Tape<T>::Var parts[2] = {s.z, command};
  auto x = tape.concat(parts);
  LatentVars<T> next;
  if (m.recurrent()) {
    next.h = nn::gru(tape, m.params(), m.cell(), s.h, x);
    next.z = nn::mlp(tape, m.params(), m.decoder(), next.h);
  } else {
    next.z = nn::mlp(tape, m.params(), m.transition_net(), x);
  }
  return next;
}

template <typename T>
typename Tape<T>::Var affordance_logit_vars(Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s,
                                            typename Tape<T>::Var command) {
  if (!m.has_affordance()) throw ConfigError("model has no affordance head");
  const typename Tape<T>::Var parts[2] = {s.z, command};
  return nn::mlp(tape, m.params(), m.affordance_net(), tape.concat(parts));
}

template <typename T>
typename Tape<T>::Var proposal_logit_vars(Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s) {
  if (!m.has_affordance()) throw ConfigError("model has no skill proposal head");
  return nn::mlp(tape, m.params(), m.proposal_net(), s.z);
}

template <typename T>
typename Tape<T>::Var reward_vars(Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s,
                                  typename Tape<T>::Var goal_one_hot) {
  if (m.has_affordance()) throw ConfigError("model has no reward head");
  const typename Tape<T>::Var parts[2] = {s.z, goal_one_hot};
  return nn::mlp(tape, m.params(), m.reward_net(), tape.concat(parts));
}

Matrix<float> encode_commands(const SkillVocabulary& vocab, std::span<const Command> commands) {
  Matrix<float> out(commands.size(), vocab.encoding_width());
  for (std::size_t i = 0; i < commands.size(); ++i) {
    vocab.validate(commands[i]);
    vocab.encode(commands[i], out.row(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Float inference

namespace {

LatentVars<float> load(Tape<float>& tape, const ModelBundle& m, const Latent& s) {
  if (s.z.cols != m.config().latent) throw ConfigError("latent width does not match model");
  LatentVars<float> v;
  v.z = tape.input(s.z);
  if (m.recurrent()) {
    if (s.h.rows != s.z.rows || s.h.cols != m.config().recurrent_hidden) {
      throw ConfigError("recurrent state width does not match model");
    }
    v.h = tape.input(s.h);
  }
  return v;
}

Latent store(const Tape<float>& tape, const ModelBundle& m, const LatentVars<float>& v) {
  Latent s;
  s.z = tape.value(v.z);
  if (m.recurrent()) s.h = tape.value(v.h);
  return s;
}

void check_rows(const Latent& s, std::size_t n) {
  if (s.rows() != n) throw ConfigError("command count does not match latent rows");
}

}  // namespace

Latent encode(const ModelBundle& m, const Matrix<float>& observations) {
  Tape<float> tape(false);
  auto v = encode_vars(tape, m, tape.input(observations));
  return store(tape, m, v);
}

Latent encode(const ModelBundle& m, std::span<const float> observation) {
  Matrix<float> o(1, observation.size());
  std::copy(observation.begin(), observation.end(), o.data.begin());
  return encode(m, o);
}

Latent transition(const ModelBundle& m, const Latent& s, std::span<const Command> commands) {
  check_rows(s, commands.size());
  Tape<float> tape(false);
  auto v = advance_vars(tape, m, load(tape, m, s), tape.input(encode_commands(m.vocabulary(), commands)));
  return store(tape, m, v);
}

std::vector<float> predict_affordance(const ModelBundle& m, const Latent& s, std::span<const Command> commands) {
  check_rows(s, commands.size());
  Tape<float> tape(false);
  auto logit = affordance_logit_vars(tape, m, load(tape, m, s), tape.input(encode_commands(m.vocabulary(), commands)));
  auto p = tape.sigmoid(logit);
  return tape.value(p).data;
}

Matrix<float> proposal_logits(const ModelBundle& m, const Latent& s) {
  Tape<float> tape(false);
  return tape.value(proposal_logit_vars(tape, m, load(tape, m, s)));
}

std::vector<float> predict_reward(const ModelBundle& m, const Latent& s, int goal) {
  if (goal < 0 || static_cast<std::size_t>(goal) >= m.vocabulary().goal_count()) {
    throw ConfigError("goal id out of range");
  }
  Tape<float> tape(false);
  Matrix<float> onehot(s.rows(), m.vocabulary().goal_count());
  for (std::size_t r = 0; r < s.rows(); ++r) onehot(r, static_cast<std::size_t>(goal)) = 1.0f;
  return tape.value(reward_vars(tape, m, load(tape, m, s), tape.input(onehot))).data;
}

int sample_from_logits(std::span<const float> logits, Rng& rng, double temperature) {
  if (logits.empty()) throw ConfigError("cannot sample from empty logits");
  if (temperature <= 0.0) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    total += w[i];
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return static_cast<int>(i);
    u -= w[i];
  }
  // Rounding left u past the last bucket.
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

SkillSample propose_skeleton(const ModelBundle& m, const Latent& s, Rng& rng, double temperature) {
  if (s.rows() != 1) throw ConfigError("propose_skeleton expects a single latent row");
  SkillSample out;
  out.logits = proposal_logits(m, s).data;
  out.skill = sample_from_logits(out.logits, rng, temperature);
  return out;
}

std::vector<float> plan_affordances(const ModelBundle& m, const Latent& z1, std::span<const Command> plan) {
  if (plan.empty()) throw ConfigError("plan must not be empty");
  if (z1.rows() != 1) throw ConfigError("plan_affordances expects a single latent row");
  std::vector<float> out;
  Latent s = z1;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const std::span<const Command> one(&plan[i], 1);
    out.push_back(predict_affordance(m, s, one)[0]);
    if (i + 1 < plan.size()) s = transition(m, s, one);
  }
  return out;
}

double plan_cost(const ModelBundle& m, const Latent& z1, std::span<const Command> plan) {
  double product = 1.0;
  for (float a : plan_affordances(m, z1, plan)) product *= static_cast<double>(a);
  return product;
}

// ---------------------------------------------------------------------------
// Loss

namespace {

template <typename T>
Matrix<T> as(const Matrix<float>& m) {
  if constexpr (std::is_same_v<T, float>) {
    return m;
  } else {
    return m.template cast<T>();
  }
}

void check_batch(const ModelBundle& m, const WindowBatch& b) {
  const std::size_t B = b.batch();
  const std::size_t H = b.length();
  if (B == 0 || H == 0) throw ConfigError("window batch is empty");
  if (b.first_observation.cols != m.observation_width()) throw ConfigError("window observation width mismatch");
  if (b.labels.size() != H || b.mask.size() != H || b.skills.size() != H) {
    throw ConfigError("window batch step count mismatch");
  }
  for (std::size_t t = 0; t < H; ++t) {
    if (b.commands[t].rows != B || b.commands[t].cols != m.command_width()) {
      throw ConfigError("window command shape mismatch");
    }
    if (b.labels[t].rows != B || b.mask[t].rows != B || b.skills[t].size() != B) {
      throw ConfigError("window label shape mismatch");
    }
  }
  if (!m.has_affordance()) {
    if (b.rewards.size() != H || b.goal_one_hot.rows != B || b.goal_one_hot.cols != m.vocabulary().goal_count()) {
      throw ConfigError("window reward shape mismatch");
    }
  }
}

}  // namespace

template <typename T>
LossVars<T> window_loss(Tape<T>& tape, const ModelBundle& m, const WindowBatch& batch, const LossWeights& w) {
  check_batch(m, batch);
  const std::size_t B = batch.batch();
  const std::size_t H = batch.length();
  const T inv_b = T(1) / static_cast<T>(B);

  LatentVars<T> s = encode_vars(tape, m, tape.input(as<T>(batch.first_observation)));
  std::vector<typename Tape<T>::Var> primary;
  std::vector<typename Tape<T>::Var> proposal;
  typename Tape<T>::Var goal;
  if (!m.has_affordance()) goal = tape.input(as<T>(batch.goal_one_hot));

  for (std::size_t t = 0; t < H; ++t) {
    auto cmd = tape.input(as<T>(batch.commands[t]));
    Matrix<T> weights = as<T>(batch.mask[t]);
    for (auto& v : weights.data) v *= inv_b;
    if (m.has_affordance()) {
      auto logit = affordance_logit_vars(tape, m, s, cmd);
      primary.push_back(tape.bce_with_logits(logit, as<T>(batch.labels[t]), weights));
      // Only executed skills supervise the proposal.
      Matrix<T> executed = weights;
      for (std::size_t r = 0; r < B; ++r) executed.data[r] *= static_cast<T>(batch.labels[t].data[r]);
      proposal.push_back(tape.softmax_nll(proposal_logit_vars(tape, m, s), batch.skills[t], executed));
      if (t + 1 < H) s = advance_vars(tape, m, s, cmd);
    } else {
      s = advance_vars(tape, m, s, cmd);
      auto r = reward_vars(tape, m, s, goal);
      primary.push_back(tape.squared_error(r, as<T>(batch.rewards[t]), weights));
    }
  }

  LossVars<T> out;
  std::vector<T> ones(H, T(1));
  out.primary = tape.weighted_sum(primary, ones);
  if (m.has_affordance()) {
    out.proposal = tape.weighted_sum(proposal, ones);
    out.has_proposal = true;
    const typename Tape<T>::Var parts[2] = {out.primary, out.proposal};
    const T weights[2] = {static_cast<T>(w.affordance), static_cast<T>(w.proposal)};
    out.total = tape.weighted_sum(parts, weights);
  } else {
    out.total = out.primary;
  }
  return out;
}

std::vector<Matrix<float>> training_rollout_latents(const ModelBundle& m, const WindowBatch& batch) {
  check_batch(m, batch);
  Tape<float> tape(true);
  LatentVars<float> s = encode_vars(tape, m, tape.input(batch.first_observation));
  std::vector<Matrix<float>> out{tape.value(s.z)};
  for (std::size_t t = 0; t + 1 < batch.length(); ++t) {
    s = advance_vars(tape, m, s, tape.input(batch.commands[t]));
    out.push_back(tape.value(s.z));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string join_skill(const SkillInfo& s) {
  std::ostringstream out;
  out << s.name << ' ' << s.arity << ' ' << s.goal << ' ' << s.grid;
  return out.str();
}

std::size_t meta_size(const ArrayFile& f, const std::string& key) {
  const std::string& v = f.require_meta(key);
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw ConfigError("");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("checkpoint meta '" + key + "' is not a non-negative integer: '" + v + "'");
  }
}

}  // namespace

void append_bundle(ArrayFile& file, const ModelBundle& m, bool with_optimizer_state) {
  const auto& c = m.config();
  auto put = [&](const std::string& k, const std::string& v) { file.meta.emplace_back(k, v); };
  put("model.variant", to_string(c.variant));
  put("model.head", to_string(c.head));
  put("model.latent", std::to_string(c.latent));
  put("model.hidden", std::to_string(c.hidden));
  put("model.encoder_layers", std::to_string(c.encoder_layers));
  put("model.transition_layers", std::to_string(c.transition_layers));
  put("model.affordance_layers", std::to_string(c.affordance_layers));
  put("model.proposal_layers", std::to_string(c.proposal_layers));
  put("model.recurrent_hidden", std::to_string(c.recurrent_hidden));
  put("model.observation_width", std::to_string(m.observation_width()));
  std::string parts = "enc";
  parts += m.recurrent() ? " trans dec" : " trans";
  parts += m.has_affordance() ? " aff pi" : " reward";
  put("model.submodels", parts);
  const auto& vocab = m.vocabulary();
  put("vocab.skills", std::to_string(vocab.size()));
  for (std::size_t i = 0; i < vocab.size(); ++i) put("vocab.skill." + std::to_string(i), join_skill(vocab[i]));
  put("vocab.goals", std::to_string(vocab.goal_count()));
  for (std::size_t g = 0; g < vocab.goal_count(); ++g) {
    put("vocab.goal." + std::to_string(g), vocab.goal_name(static_cast<int>(g)));
  }
  append_params(file, m.params(), with_optimizer_state);
}

ModelBundle bundle_from_file(const ArrayFile& file) {
  ModelConfig c;
  c.variant = parse_variant(file.require_meta("model.variant"));
  c.head = parse_head(file.require_meta("model.head"));
  c.latent = meta_size(file, "model.latent");
  c.hidden = meta_size(file, "model.hidden");
  c.encoder_layers = meta_size(file, "model.encoder_layers");
  c.transition_layers = meta_size(file, "model.transition_layers");
  c.affordance_layers = meta_size(file, "model.affordance_layers");
  c.proposal_layers = meta_size(file, "model.proposal_layers");
  c.recurrent_hidden = meta_size(file, "model.recurrent_hidden");
  const std::size_t obs = meta_size(file, "model.observation_width");

  std::vector<SkillInfo> skills;
  const std::size_t n = meta_size(file, "vocab.skills");
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream in(file.require_meta("vocab.skill." + std::to_string(i)));
    SkillInfo s;
    if (!(in >> s.name >> s.arity >> s.goal >> s.grid)) throw ConfigError("malformed skill entry in checkpoint");
    skills.push_back(s);
  }
  std::vector<std::string> goals;
  const std::size_t g = meta_size(file, "vocab.goals");
  for (std::size_t i = 0; i < g; ++i) goals.push_back(file.require_meta("vocab.goal." + std::to_string(i)));

  ModelBundle m(c, SkillVocabulary(std::move(skills), std::move(goals)), obs, 0);
  restore_params(file, m.params());
  return m;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& m, std::uint64_t seed,
                 bool with_optimizer_state) {
  ArrayFile file;
  file.kind = "checkpoint";
  file.seed = seed;
  append_bundle(file, m, with_optimizer_state);
  write_array_file(path, file);
}

ModelBundle load_bundle(const std::filesystem::path& path) { return bundle_from_file(read_array_file(path)); }

// ---------------------------------------------------------------------------
// Instantiations

#define AFFPLAN_MODELS_INSTANTIATE(T)                                                                            \
  template LatentVars<T> encode_vars<T>(Tape<T>&, const ModelBundle&, Tape<T>::Var);                           \
  template LatentVars<T> advance_vars<T>(Tape<T>&, const ModelBundle&, const LatentVars<T>&, Tape<T>::Var);    \
  template Tape<T>::Var affordance_logit_vars<T>(Tape<T>&, const ModelBundle&, const LatentVars<T>&,           \
                                                 Tape<T>::Var);                                                \
  template Tape<T>::Var proposal_logit_vars<T>(Tape<T>&, const ModelBundle&, const LatentVars<T>&);            \
  template Tape<T>::Var reward_vars<T>(Tape<T>&, const ModelBundle&, const LatentVars<T>&, Tape<T>::Var);      \
  template LossVars<T> window_loss<T>(Tape<T>&, const ModelBundle&, const WindowBatch&, const LossWeights&);

AFFPLAN_MODELS_INSTANTIATE(float)
AFFPLAN_MODELS_INSTANTIATE(double)

#undef AFFPLAN_MODELS_INSTANTIATE

}  // namespace affplan::models
