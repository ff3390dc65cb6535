#include "affplan/skills.hpp"

#include <algorithm>

namespace affplan {

SkillVocabulary::SkillVocabulary(std::vector<SkillInfo> skills, std::vector<std::string> goals)
    : skills_(std::move(skills)), goals_(std::move(goals)) {
  for (const auto& s : skills_) {
    if (s.arity > kMaxArity) throw ConfigError("skill '" + s.name + "' exceeds the maximum parameter arity");
    if (s.goal >= static_cast<int>(goals_.size())) throw ConfigError("skill '" + s.name + "' names an unknown goal");
  }
  for (int g = 0; g < static_cast<int>(goals_.size()); ++g) {
    if (goal_skill(g) < 0) throw ConfigError("goal '" + goals_[g] + "' has no goal skill");
  }
}

int SkillVocabulary::find(std::string_view name) const {
  for (std::size_t i = 0; i < skills_.size(); ++i) {
    if (skills_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int SkillVocabulary::require(std::string_view name) const {
  const int id = find(name);
  if (id < 0) throw ConfigError("unknown skill '" + std::string(name) + "'");
  return id;
}

int SkillVocabulary::find_goal(std::string_view name) const {
  for (std::size_t i = 0; i < goals_.size(); ++i) {
    if (goals_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

int SkillVocabulary::goal_skill(int goal) const {
  for (std::size_t i = 0; i < skills_.size(); ++i) {
    if (skills_[i].goal == goal) return static_cast<int>(i);
  }
  return -1;
}

void SkillVocabulary::validate(const Command& cmd) const {
  if (cmd.skill < 0 || static_cast<std::size_t>(cmd.skill) >= skills_.size()) {
    throw ConfigError("unknown skill id " + std::to_string(cmd.skill));
  }
  const auto& info = skills_[cmd.skill];
  if (info.grid > 0) {
    const float idx = cmd.theta[0];
    if (idx < 0.f || idx >= static_cast<float>(info.grid) || idx != static_cast<float>(static_cast<int>(idx))) {
      throw ConfigError("parameter index out of range for skill '" + info.name + "'");
    }
  }
}

void SkillVocabulary::encode(const Command& cmd, std::span<float> out) const {
  validate(cmd);
  if (out.size() != encoding_width()) throw ConfigError("command encoding width mismatch");
  std::fill(out.begin(), out.end(), 0.0f);
  out[static_cast<std::size_t>(cmd.skill)] = 1.0f;
  const auto& info = skills_[cmd.skill];
  for (std::size_t i = 0; i < info.arity; ++i) out[skills_.size() + i] = cmd.theta[i];
}

bool SkillVocabulary::operator==(const SkillVocabulary& other) const {
  if (goals_ != other.goals_ || skills_.size() != other.skills_.size()) return false;
  for (std::size_t i = 0; i < skills_.size(); ++i) {
    const auto& a = skills_[i];
    const auto& b = other.skills_[i];
    if (a.name != b.name || a.arity != b.arity || a.goal != b.goal || a.grid != b.grid) return false;
  }
  return true;
}

Command sample_command(const SkillVocabulary& vocab, int skill, const ParamRange& range, Rng& rng) {
  Command cmd;
  cmd.skill = skill;
  const auto& info = vocab[static_cast<std::size_t>(skill)];
  if (info.grid > 0) {
    cmd.theta[0] = static_cast<float>(rng.index(info.grid));
    return cmd;
  }
  for (std::size_t i = 0; i < info.arity; ++i) {
    cmd.theta[i] = static_cast<float>(rng.uniform(range.lo[i], range.hi[i]));
  }
  return cmd;
}

}  // namespace affplan
