#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "affplan/common.hpp"

namespace affplan {

inline constexpr std::size_t kMaxArity = 4;

/// A discrete skill paired with its continuous parameters (zero-padded).
struct Command {
  int skill = 0;
  std::array<float, kMaxArity> theta{};

  friend bool operator==(const Command&, const Command&) = default;
};

struct SkillInfo {
  std::string name;
  std::size_t arity = 0;
  /// Goal id for no-op goal skills, -1 otherwise.
  int goal = -1;
  /// Non-zero for skills with a finite parameter grid; theta[0] holds the index.
  std::size_t grid = 0;
};

/// Discrete skill ids, their parameter arity and the goal skills.
class SkillVocabulary {
 public:
  SkillVocabulary() = default;
  SkillVocabulary(std::vector<SkillInfo> skills, std::vector<std::string> goals);

  std::size_t size() const { return skills_.size(); }
  const SkillInfo& operator[](std::size_t i) const { return skills_.at(i); }
  std::span<const SkillInfo> skills() const { return skills_; }
  int find(std::string_view name) const;
  int require(std::string_view name) const;

  std::size_t goal_count() const { return goals_.size(); }
  const std::string& goal_name(int goal) const { return goals_.at(static_cast<std::size_t>(goal)); }
  int find_goal(std::string_view name) const;
  /// Goal skill associated with a goal (first one if several).
  int goal_skill(int goal) const;
  bool is_goal_skill_for(int skill, int goal) const { return skills_.at(skill).goal == goal; }

  /// One-hot skill id followed by zero-padded parameters.
  std::size_t encoding_width() const { return skills_.size() + kMaxArity; }
  void encode(const Command& cmd, std::span<float> out) const;
  void validate(const Command& cmd) const;

  bool operator==(const SkillVocabulary& other) const;

 private:
  std::vector<SkillInfo> skills_;
  std::vector<std::string> goals_;
};

/// Per-skill sampling box for continuous parameters. Defaults to [-1, 1].
struct ParamRange {
  std::array<float, kMaxArity> lo{-1.f, -1.f, -1.f, -1.f};
  std::array<float, kMaxArity> hi{1.f, 1.f, 1.f, 1.f};

  friend bool operator==(const ParamRange&, const ParamRange&) = default;
};

/// theta ~ param(skill): uniform over the skill's range, or a uniform grid index.
Command sample_command(const SkillVocabulary& vocab, int skill, const ParamRange& range, Rng& rng);

/// Environment interface consumed by the planner and trainer.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const SkillVocabulary& vocabulary() const = 0;
  virtual std::size_t observation_width() const = 0;
  /// Starts an episode; returns the sampled goal id.
  virtual int reset(std::uint64_t seed) = 0;
  virtual std::vector<float> observe() const = 0;
  virtual bool skill_is_executable(const Command& cmd) const = 0;
  /// Precondition: skill_is_executable(cmd). Throws ContractError otherwise.
  virtual void step(const Command& cmd) = 0;
  virtual bool goal_check(int goal) const = 0;
  virtual int goal() const = 0;
  virtual int horizon() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

}  // namespace affplan
