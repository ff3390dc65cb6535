#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "affplan/models.hpp"
#include "affplan/planner.hpp"

namespace affplan::trainer {

/// One stored episode: attempts in execution order plus the task it served.
struct Episode {
  int goal = 0;
  std::vector<planner::Experience> steps;
};

/// Episode-ordered experience with a fixed episode capacity. Once full, the
/// oldest episode is overwritten (the cursor names the next slot).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t observation_width);

  void add(Episode episode);
  std::size_t capacity() const { return capacity_; }
  std::size_t observation_width() const { return observation_width_; }
  std::size_t size() const { return episodes_.size(); }
  std::size_t cursor() const { return cursor_; }
  const Episode& episode(std::size_t i) const { return episodes_.at(i); }
  /// Attempts stored over all episodes; also the number of window start points.
  std::size_t total_steps() const { return total_steps_; }

  /// Maps a flat step index to (episode, step), walking episodes in slot order.
  std::pair<std::size_t, std::size_t> locate(std::size_t flat) const;

  ArrayFile snapshot() const;
  static ReplayBuffer restore(const ArrayFile& file);

  friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b);

 private:
  std::size_t capacity_;
  std::size_t observation_width_;
  std::size_t cursor_ = 0;
  std::size_t total_steps_ = 0;
  std::vector<Episode> episodes_;
};

struct TrainConfig {
  std::size_t batch = 64;
  std::size_t updates = 200;   // K
  std::size_t rollouts = 10;   // R
  std::size_t overshoot = 4;   // H
  std::size_t seed_episodes = 100;
  std::size_t rounds = 190;
  std::size_t capacity = 5000;
  double learning_rate = 1e-3;
  models::LossWeights loss;

  /// Throws ConfigError on H < 2 or zero counts.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Random skills with uniformly random parameters; infeasible attempts are
/// logged with a=0 and the environment is not stepped.
ReplayBuffer seed_buffer(Environment& env, std::size_t episodes, Rng& rng, std::size_t capacity,
                         const planner::PlannerConfig& ranges = {});

/// One random-policy episode on an already reset environment.
Episode random_episode(Environment& env, int goal, Rng& rng, const planner::PlannerConfig& ranges = {});

Episode to_episode(const planner::EpisodeResult& result);

/// B windows of H steps. A window starts at a uniformly chosen stored step and
/// never crosses into another episode; steps past the episode end are masked.
models::WindowBatch sample_windows(const ReplayBuffer& buffer, const SkillVocabulary& vocab, std::size_t batch,
                                   std::size_t length, Rng& rng);

/// Total loss before each optimizer step.
struct FitTrace {
  std::vector<double> losses;
  std::vector<double> primary;
};

/// K Adam steps on the joint window loss. Throws InsufficientData when the
/// buffer holds fewer than B window start points.
FitTrace fit_models(models::ModelBundle& bundle, const ReplayBuffer& buffer, const TrainConfig& config, Rng& rng);

/// fit_models for a reward-head bundle (squared error on per-step rewards).
FitTrace fit_baseline(models::ModelBundle& bundle, const ReplayBuffer& buffer, const TrainConfig& config, Rng& rng);

/// One optimizer step on a fixed batch; returns the loss before the step.
double fit_step(models::ModelBundle& bundle, const models::WindowBatch& batch, const TrainConfig& config);

struct RoundMetrics {
  std::size_t round = 0;
  std::size_t episodes = 0;  // collected so far, seeding included
  std::vector<std::size_t> attempts;   // per goal, this round
  std::vector<std::size_t> successes;  // per goal, this round
  double mean_chosen_cost = 0.0;
  double affordance_accuracy = 0.0;
  std::size_t fallbacks = 0;
  double loss_first = 0.0;
  double loss_last = 0.0;

  double success_rate(std::size_t goal) const;
};

/// Everything needed to continue a run bit-for-bit.
struct TrainingState {
  models::ModelBundle bundle;
  ReplayBuffer buffer;
  Rng rng;
  std::size_t round = 0;
  std::size_t episodes = 0;
};

/// Plays one episode for `goal` on a reset environment.
using Collector = std::function<planner::EpisodeResult(const models::ModelBundle&, Environment&, int goal, Rng&)>;

/// MPC collection with the bundle's planner (affordance or reward scoring).
Collector mpc_collector(const planner::PlannerConfig& config);

/// K fitting steps (skipped when K = 0), then R collected episodes appended
/// to the buffer. Accuracy is measured on the new attempts before they are
/// added, with the bundle used to collect them.
RoundMetrics training_round(TrainingState& state, Environment& env, const TrainConfig& config,
                            const Collector& collect);

/// Planner-free evaluation of f_A on stored attempts: fraction of attempts
/// where (prediction >= 0.5) equals the label.
double affordance_accuracy(const models::ModelBundle& bundle, std::span<const Episode> episodes);

// Metrics CSV. Every column is a deterministic function of the run.
void write_metrics_header(std::ostream& out, const SkillVocabulary& vocab);
void write_metrics_row(std::ostream& out, const RoundMetrics& m);

// Resumable state: a checkpoint (bundle + optimizer + run counters) and a
// buffer snapshot.
void save_state(const std::filesystem::path& checkpoint, const std::filesystem::path& buffer,
                const TrainingState& state, std::uint64_t seed);
TrainingState load_state(const std::filesystem::path& checkpoint, const std::filesystem::path& buffer);

}  // namespace affplan::trainer
