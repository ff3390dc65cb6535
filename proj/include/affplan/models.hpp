#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "affplan/array_file.hpp"
#include "affplan/nn.hpp"
#include "affplan/skills.hpp"

namespace affplan::models {

enum class Variant { kFeedforward, kRecurrent };
/// kAffordance: f_A plus the skill proposal. kReward: task-conditioned reward
/// head only (the reward-planning baseline).
enum class Head { kAffordance, kReward };

const char* to_string(Variant v);
const char* to_string(Head h);
Variant parse_variant(const std::string& text);
Head parse_head(const std::string& text);

struct ModelConfig {
  std::size_t latent = 32;
  std::size_t hidden = 64;
  std::size_t encoder_layers = 2;
  std::size_t transition_layers = 2;
  std::size_t affordance_layers = 2;
  std::size_t proposal_layers = 1;
  std::size_t recurrent_hidden = 64;
  Variant variant = Variant::kFeedforward;
  Head head = Head::kAffordance;
  /// Start every output layer at zero (encoder latent 0, affordance 0.5,
  /// uniform proposal). Used by tests and the flat-heatmap check.
  bool zero_output_layers = false;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Latent rows: z (rows x latent) and, for the recurrent variant, h.
struct Latent {
  nn::Matrix<float> z;
  nn::Matrix<float> h;

  std::size_t rows() const { return z.rows; }
  Latent row(std::size_t r) const;
  /// `count` copies of row 0.
  Latent repeat(std::size_t count) const;
};

/// The learned functions for one domain: f_enc, f_trans (+ f_dec when
/// recurrent), and either f_A + f_pi or the reward head f_r.
class ModelBundle {
 public:
  ModelBundle(ModelConfig config, SkillVocabulary vocab, std::size_t observation_width, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const SkillVocabulary& vocabulary() const { return vocab_; }
  std::size_t observation_width() const { return observation_width_; }
  std::size_t command_width() const { return vocab_.encoding_width(); }
  bool recurrent() const { return config_.variant == Variant::kRecurrent; }
  bool has_affordance() const { return config_.head == Head::kAffordance; }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  const nn::Mlp& encoder() const { return encoder_; }
  const nn::Mlp& transition_net() const { return transition_; }
  const nn::GruCell& cell() const { return cell_; }
  const nn::Mlp& decoder() const { return decoder_; }
  const nn::Mlp& affordance_net() const { return affordance_; }
  const nn::Mlp& proposal_net() const { return proposal_; }
  const nn::Mlp& reward_net() const { return reward_; }

  /// Parameter names belonging to the latent dynamics trunk (encoder and transition).
  std::vector<std::string> trunk_parameter_names() const;

 private:
  ModelConfig config_;
  SkillVocabulary vocab_;
  std::size_t observation_width_;
  nn::ParamStore params_;
  nn::Mlp encoder_;
  nn::Mlp transition_;
  nn::GruCell cell_;
  nn::Mlp decoder_;
  nn::Mlp affordance_;
  nn::Mlp proposal_;
  nn::Mlp reward_;
};

// ---------------------------------------------------------------------------
// Differentiable building blocks shared by planning and training.

template <typename T>
struct LatentVars {
  typename nn::Tape<T>::Var z;
  typename nn::Tape<T>::Var h;
};

/// z = f_enc(o); h starts at zero for the recurrent variant.
template <typename T>
LatentVars<T> encode_vars(nn::Tape<T>& tape, const ModelBundle& m, typename nn::Tape<T>::Var observation);

/// One imagined step under the encoded commands `command` (rows x command_width).
template <typename T>
LatentVars<T> advance_vars(nn::Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s,
                           typename nn::Tape<T>::Var command);

template <typename T>
typename nn::Tape<T>::Var affordance_logit_vars(nn::Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s,
                                                typename nn::Tape<T>::Var command);

template <typename T>
typename nn::Tape<T>::Var proposal_logit_vars(nn::Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s);

/// f_r(z, task one-hot).
template <typename T>
typename nn::Tape<T>::Var reward_vars(nn::Tape<T>& tape, const ModelBundle& m, const LatentVars<T>& s,
                                      typename nn::Tape<T>::Var goal_one_hot);

/// Rows of encoded commands.
nn::Matrix<float> encode_commands(const SkillVocabulary& vocab, std::span<const Command> commands);

// ---------------------------------------------------------------------------
// Batched float inference (rows are independent; a row's values do not
// depend on the batch it is evaluated in).

Latent encode(const ModelBundle& m, const nn::Matrix<float>& observations);
Latent encode(const ModelBundle& m, std::span<const float> observation);
Latent transition(const ModelBundle& m, const Latent& s, std::span<const Command> commands);
/// Sigmoid affordance per row.
std::vector<float> predict_affordance(const ModelBundle& m, const Latent& s, std::span<const Command> commands);
nn::Matrix<float> proposal_logits(const ModelBundle& m, const Latent& s);
std::vector<float> predict_reward(const ModelBundle& m, const Latent& s, int goal);

struct SkillSample {
  int skill = 0;
  std::vector<float> logits;
};
/// Categorical sample from softmax(logits / temperature); temperature 0 is argmax
/// (lowest index on ties).
SkillSample propose_skeleton(const ModelBundle& m, const Latent& s, Rng& rng, double temperature = 1.0);
int sample_from_logits(std::span<const float> logits, Rng& rng, double temperature);

/// Per-step affordances along the imagined rollout of `plan` from a single latent.
std::vector<float> plan_affordances(const ModelBundle& m, const Latent& z1, std::span<const Command> plan);
/// Product of the step-wise affordances (accumulated in double).
double plan_cost(const ModelBundle& m, const Latent& z1, std::span<const Command> plan);

// ---------------------------------------------------------------------------
// Training loss over overshooting windows.

/// B windows of H steps; step t of window b lives in row b of the step-t matrices.
struct WindowBatch {
  nn::Matrix<float> first_observation;            // B x obs
  std::vector<nn::Matrix<float>> commands;        // H of B x command_width
  std::vector<nn::Matrix<float>> labels;          // H of B x 1, affordance a_t
  std::vector<nn::Matrix<float>> mask;            // H of B x 1, 1 inside the episode
  std::vector<std::vector<int>> skills;           // H of B
  std::vector<nn::Matrix<float>> rewards;         // H of B x 1, reward after step t
  nn::Matrix<float> goal_one_hot;                 // B x goal_count
  std::size_t batch() const { return first_observation.rows; }
  std::size_t length() const { return commands.size(); }
};

struct LossWeights {
  double affordance = 1.0;
  double proposal = 0.1;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

template <typename T>
struct LossVars {
  typename nn::Tape<T>::Var total;
  typename nn::Tape<T>::Var primary;   // BCE, or squared reward error
  typename nn::Tape<T>::Var proposal;  // NLL on executed steps (affordance head only)
  bool has_proposal = false;
};

/// Encodes the first observation only and unrolls the transition for the
/// rest of the window. Affordance head: mean BCE summed over steps plus
/// weighted proposal NLL on executed steps. Reward head: squared error of
/// predicted reward after each step.
template <typename T>
LossVars<T> window_loss(nn::Tape<T>& tape, const ModelBundle& m, const WindowBatch& batch, const LossWeights& w);

/// Latents along the training-time rollout (row-major float copies), for
/// comparing against planner-side rollouts.
std::vector<nn::Matrix<float>> training_rollout_latents(const ModelBundle& m, const WindowBatch& batch);

// ---------------------------------------------------------------------------
// Persistence

/// Checkpoint with a bundle manifest (config, vocabulary, sub-model list).
void append_bundle(ArrayFile& file, const ModelBundle& m, bool with_optimizer_state);
ModelBundle bundle_from_file(const ArrayFile& file);
void save_bundle(const std::filesystem::path& path, const ModelBundle& m, std::uint64_t seed,
                 bool with_optimizer_state = true);
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace affplan::models
