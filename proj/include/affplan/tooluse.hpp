#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "affplan/skills.hpp"

namespace affplan::tooluse {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool overlaps(const Box& o) const { return x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1; }
  bool contains(Vec2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  double distance(Vec2 p) const;
  Box expanded(double m) const { return {x0 - m, y0 - m, x1 + m, y1 + m}; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Centre plus half-extent per axis; maps theta in [-1, 1] to center + half * theta.
struct ParamBox {
  Vec2 center;
  Vec2 half;

  Vec2 map(double tx, double ty) const { return {center.x + half.x * tx, center.y + half.y * ty}; }
  Vec2 unmap(Vec2 p) const { return {(p.x - center.x) / half.x, (p.y - center.y) / half.y}; }

  friend bool operator==(const ParamBox&, const ParamBox&) = default;
};

enum Object : int { kNone = -1, kTool = 0, kRed = 1, kBlue = 2 };
inline constexpr int kObjectCount = 3;

enum Goal : int { kGoalRed = 0, kGoalBlue = 1, kGoalStack = 2 };
inline constexpr int kGoalCount = 3;

/// Skill ids in the tool-use vocabulary.
enum Skill : int {
  kGraspTool = 0,
  kGraspRed,
  kGraspBlue,
  kPlace,
  kHook,
  kPoke,
  kGoalRedSkill,
  kGoalBlueSkill,
  kGoalStackSkill,
};
inline constexpr int kSkillCount = 9;

/// Workspace geometry and episode settings. All lengths are workspace units.
struct Config {
  /// +1: gripper lives at x >= wall_x and the tool handle extends towards +x.
  /// -1 is the left-right mirror image.
  int side = 1;
  double wall_x = 0.35;
  double gripper_radius = 0.02;
  /// Half-thickness of tool segments and tube walls.
  double thickness = 0.01;
  Vec2 gripper_home{0.85, 0.60};

  double cube_half = 0.04;
  Vec2 red_home{0.17, 0.58};
  Vec2 blue_home{0.75, 0.25};
  Box tube{0.62, 0.18, 0.80, 0.32};
  Vec2 target_center{0.62, 0.78};
  double target_half = 0.10;

  /// Hook corner (where handle meets hook) at reset.
  Vec2 tool_home{0.45, 0.45};
  double handle_length = 0.42;
  double hook_length = 0.10;

  /// Tool grasp: distance from the hook corner = along_center + along_scale * theta0,
  /// lateral offset = lateral_scale * theta1. The handle is grasped when the
  /// lateral offset is within lateral_tolerance.
  double grasp_along_center = 0.21;
  double grasp_along_scale = 0.25;
  double grasp_lateral_scale = 0.04;
  double grasp_lateral_tolerance = 0.02;
  /// Cube grasp point = cube centre + cube_grasp_scale * theta.
  double cube_grasp_scale = 0.045;

  /// Cube placement: cube centre = target_center + place_scale * theta.
  double place_scale = 0.15;
  /// Tool placement: gripper = tool_home + (side * grasp_along_center, 0) + tool_place_scale * theta.
  double tool_place_scale = 0.15;

  /// Sweep skills: gripper start = start.map(theta0, theta1),
  /// displacement = displacement.map(theta2, theta3).
  ParamBox hook_start{{0.42, 0.49}, {0.05, 0.06}};
  ParamBox hook_displacement{{0.375, 0.0}, {0.075, 0.03}};
  ParamBox poke_start{{0.42, 0.25}, {0.05, 0.05}};
  ParamBox poke_displacement{{0.13, 0.0}, {0.05, 0.02}};
  int sweep_samples = 32;

  double jitter = 0.02;
  int horizon = 10;
  std::array<double, kGoalCount> goal_weights{1.0, 1.0, 0.0};

  /// Left-right mirror image of this configuration.
  Config mirrored() const;
  void validate() const;
  std::string serialize() const;
  friend bool operator==(const Config&, const Config&) = default;
};

/// key value lines; unknown keys and malformed values raise ParseError.
Config parse_config(std::string_view text, Config base = {});
Config load_config(const std::filesystem::path& path, Config base = {});

/// Default configuration for the stacking task.
Config stack_config();

struct WorldState {
  Vec2 gripper;
  int held = kNone;
  /// Tool grasp: distance from the hook corner along the handle and lateral offset.
  double grasp_along = 0.0;
  double grasp_lateral = 0.0;
  /// Cube grasp: gripper minus cube centre.
  Vec2 grasp_offset;
  Vec2 tool;  // hook corner
  Vec2 red;
  Vec2 blue;
  /// Cube stacked on the other cube.
  bool blue_on_red = false;
  bool red_on_blue = false;
  int goal = 0;
  int steps = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

SkillVocabulary vocabulary();
/// Sampling range for every skill (all parameters are canonical [-1, 1]).
ParamRange param_range(int skill);

/// Width of the observation vector.
inline constexpr std::size_t kObservationWidth = 18;

class World {
 public:
  explicit World(Config config = {});

  const Config& config() const { return config_; }

  /// Canonical poses with uniform jitter; goal drawn from the goal weights,
  /// or fixed when `goal` >= 0.
  WorldState reset(std::uint64_t seed, int goal = -1) const;

  bool skill_is_executable(const WorldState& s, const Command& cmd) const;
  /// Throws ContractError when the command is not executable.
  WorldState step(const WorldState& s, const Command& cmd) const;
  bool goal_check(const WorldState& s, int goal) const;
  std::vector<float> observe(const WorldState& s) const;

  /// Feasible command sequence reaching `goal` from `s` (canonical layouts).
  std::vector<Command> scripted_expert(const WorldState& s, int goal) const;

  // Geometry helpers shared by feasibility, effects and tests.
  Box cube_box(Vec2 c) const;
  Box handle_box(Vec2 corner) const;
  Box hook_box(Vec2 corner) const;
  Vec2 tool_corner_for_gripper(Vec2 gripper, double along, double lateral) const;
  Vec2 tool_grasp_point(const WorldState& s, const Command& cmd) const;
  Vec2 cube_grasp_point(Vec2 cube, const Command& cmd) const;
  Vec2 place_position(const WorldState& s, const Command& cmd) const;
  bool reachable(Vec2 gripper) const;
  Box target_box() const;

  /// Inverse parameter maps used by the scripted expert.
  Command grasp_tool_command(double along, double lateral) const;
  Command grasp_cube_command(int object, Vec2 offset) const;
  Command place_cube_command(Vec2 centre) const;
  Command place_tool_command(Vec2 gripper) const;
  Command sweep_command(int skill, Vec2 start, Vec2 displacement) const;

 private:
  struct Outcome {
    bool feasible = false;
    WorldState next;
  };
  Outcome simulate(const WorldState& s, const Command& cmd) const;
  Outcome simulate_grasp(const WorldState& s, const Command& cmd) const;
  Outcome simulate_place(const WorldState& s, const Command& cmd) const;
  Outcome simulate_sweep(const WorldState& s, const Command& cmd) const;
  bool gripper_clear(Vec2 g) const;
  bool within_workspace(const Box& b) const;

  Config config_;
};

/// Mirrors a command's parameters to match Config::mirrored().
Command mirror_command(const Command& cmd);
WorldState mirror_state(const WorldState& s);

/// Environment adapter with a fixed or sampled goal.
class ToolUseEnv : public Environment {
 public:
  explicit ToolUseEnv(Config config = {}, int fixed_goal = -1);

  const SkillVocabulary& vocabulary() const override { return vocab_; }
  std::size_t observation_width() const override { return kObservationWidth; }
  int reset(std::uint64_t seed) override;
  std::vector<float> observe() const override { return world_.observe(state_); }
  bool skill_is_executable(const Command& cmd) const override { return world_.skill_is_executable(state_, cmd); }
  void step(const Command& cmd) override { state_ = world_.step(state_, cmd); }
  bool goal_check(int goal) const override { return world_.goal_check(state_, goal); }
  int goal() const override { return state_.goal; }
  int horizon() const override { return world_.config().horizon; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<ToolUseEnv>(*this); }

  const World& world() const { return world_; }
  const WorldState& state() const { return state_; }
  void set_state(const WorldState& s) { state_ = s; }

 private:
  World world_;
  SkillVocabulary vocab_;
  int fixed_goal_;
  WorldState state_;
};

/// One line per attempted skill:
///   episode step skill theta0 theta1 theta2 theta3 afforded goal_reached
struct LogRecord {
  int episode = 0;
  int step = 0;
  Command command;
  int afforded = 0;
  int goal_reached = 0;
};
void write_log_record(std::ostream& out, const LogRecord& r);
std::vector<LogRecord> read_log(std::istream& in);

}  // namespace affplan::tooluse
