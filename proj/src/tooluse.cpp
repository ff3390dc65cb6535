#include "affplan/tooluse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace affplan::tooluse {

namespace {

double clamp1(float v) { return std::clamp(static_cast<double>(v), -1.0, 1.0); }

Box span_box(double xa, double xb, double ya, double yb) {
  return {std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb)};
}

}  // namespace

double Box::distance(Vec2 p) const {
  const double dx = std::max({x0 - p.x, 0.0, p.x - x1});
  const double dy = std::max({y0 - p.y, 0.0, p.y - y1});
  return std::sqrt(dx * dx + dy * dy);
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

Vec2 mirror_point(Vec2 p) { return {1.0 - p.x, p.y}; }

ParamBox mirror_position_box(const ParamBox& b) { return {mirror_point(b.center), b.half}; }
ParamBox mirror_displacement_box(const ParamBox& b) { return {{-b.center.x, b.center.y}, b.half}; }

std::map<std::string, std::vector<double*>> fields(Config& c) {
  return {
      {"wall_x", {&c.wall_x}},
      {"gripper_radius", {&c.gripper_radius}},
      {"thickness", {&c.thickness}},
      {"gripper_home", {&c.gripper_home.x, &c.gripper_home.y}},
      {"cube_half", {&c.cube_half}},
      {"red_home", {&c.red_home.x, &c.red_home.y}},
      {"blue_home", {&c.blue_home.x, &c.blue_home.y}},
      {"tube", {&c.tube.x0, &c.tube.y0, &c.tube.x1, &c.tube.y1}},
      {"target_center", {&c.target_center.x, &c.target_center.y}},
      {"target_half", {&c.target_half}},
      {"tool_home", {&c.tool_home.x, &c.tool_home.y}},
      {"handle_length", {&c.handle_length}},
      {"hook_length", {&c.hook_length}},
      {"grasp_along_center", {&c.grasp_along_center}},
      {"grasp_along_scale", {&c.grasp_along_scale}},
      {"grasp_lateral_scale", {&c.grasp_lateral_scale}},
      {"grasp_lateral_tolerance", {&c.grasp_lateral_tolerance}},
      {"cube_grasp_scale", {&c.cube_grasp_scale}},
      {"place_scale", {&c.place_scale}},
      {"tool_place_scale", {&c.tool_place_scale}},
      {"hook_start", {&c.hook_start.center.x, &c.hook_start.center.y, &c.hook_start.half.x, &c.hook_start.half.y}},
      {"hook_displacement",
       {&c.hook_displacement.center.x, &c.hook_displacement.center.y, &c.hook_displacement.half.x,
        &c.hook_displacement.half.y}},
      {"poke_start", {&c.poke_start.center.x, &c.poke_start.center.y, &c.poke_start.half.x, &c.poke_start.half.y}},
      {"poke_displacement",
       {&c.poke_displacement.center.x, &c.poke_displacement.center.y, &c.poke_displacement.half.x,
        &c.poke_displacement.half.y}},
      {"jitter", {&c.jitter}},
      {"goal_weights", {&c.goal_weights[0], &c.goal_weights[1], &c.goal_weights[2]}},
  };
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

Config Config::mirrored() const {
  Config m = *this;
  m.side = -side;
  m.wall_x = 1.0 - wall_x;
  m.gripper_home = mirror_point(gripper_home);
  m.red_home = mirror_point(red_home);
  m.blue_home = mirror_point(blue_home);
  m.tube = {1.0 - tube.x1, tube.y0, 1.0 - tube.x0, tube.y1};
  m.target_center = mirror_point(target_center);
  m.tool_home = mirror_point(tool_home);
  m.hook_start = mirror_position_box(hook_start);
  m.hook_displacement = mirror_displacement_box(hook_displacement);
  m.poke_start = mirror_position_box(poke_start);
  m.poke_displacement = mirror_displacement_box(poke_displacement);
  return m;
}

void Config::validate() const {
  if (side != 1 && side != -1) throw ConfigError("side must be +1 or -1");
  auto inside = [](Vec2 p, const char* what) {
    if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0) {
      throw ConfigError(std::string(what) + " lies outside the unit workspace");
    }
  };
  inside(gripper_home, "gripper_home");
  inside(red_home, "red_home");
  inside(blue_home, "blue_home");
  inside(target_center, "target_center");
  inside(tool_home, "tool_home");
  if (tube.x0 >= tube.x1 || tube.y0 >= tube.y1) throw ConfigError("tube rectangle is empty");
  for (double v : {gripper_radius, thickness, cube_half, target_half, handle_length, hook_length, grasp_along_scale,
                   grasp_lateral_scale, grasp_lateral_tolerance, cube_grasp_scale, place_scale, tool_place_scale}) {
    if (!(v > 0.0)) throw ConfigError("geometric lengths and scales must be positive");
  }
  for (const auto* b : {&hook_start, &hook_displacement, &poke_start, &poke_displacement}) {
    if (!(b->half.x > 0.0) || !(b->half.y > 0.0)) throw ConfigError("parameter box half-widths must be positive");
  }
  if (jitter < 0.0 || jitter > 0.02) throw ConfigError("jitter must lie in [0, 0.02]");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  if (sweep_samples < 2) throw ConfigError("sweep_samples must be at least 2");
  double total = 0.0;
  for (double w : goal_weights) {
    if (w < 0.0) throw ConfigError("goal weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("at least one goal weight must be positive");
}

std::string Config::serialize() const {
  Config copy = *this;
  std::ostringstream out;
  out << "side " << side << "\n";
  for (auto& [key, ptrs] : fields(copy)) {
    out << key;
    for (double* p : ptrs) out << " " << format_double(*p);
    out << "\n";
  }
  out << "sweep_samples " << sweep_samples << "\n";
  out << "horizon " << horizon << "\n";
  return out.str();
}

Config parse_config(std::string_view text, Config base) {
  Config c = base;
  auto table = fields(c);
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::string key;
    if (!(ls >> key)) continue;
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    auto number = [&](const std::string& t) {
      try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) throw ParseError(line_no, "malformed number '" + t + "'");
        return v;
      } catch (const std::logic_error&) {
        throw ParseError(line_no, "malformed number '" + t + "'");
      }
    };
    if (key == "side" || key == "horizon" || key == "sweep_samples") {
      if (tok.size() != 1) throw ParseError(line_no, "'" + key + "' takes one integer");
      const double v = number(tok[0]);
      if (v != std::floor(v)) throw ParseError(line_no, "'" + key + "' takes an integer");
      (key == "side" ? c.side : key == "horizon" ? c.horizon : c.sweep_samples) = static_cast<int>(v);
      continue;
    }
    auto it = table.find(key);
    if (it == table.end()) throw ParseError(line_no, "unknown key '" + key + "'");
    if (tok.size() != it->second.size()) {
      throw ParseError(line_no, "'" + key + "' takes " + std::to_string(it->second.size()) + " value(s)");
    }
    for (std::size_t i = 0; i < tok.size(); ++i) *it->second[i] = number(tok[i]);
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ParseError(line_no, e.what());
  }
  return c;
}

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open domain configuration '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), base);
}

Config stack_config() {
  Config c;
  c.goal_weights = {0.0, 0.0, 1.0};
  c.horizon = 14;
  return c;
}

// ---------------------------------------------------------------------------
// Vocabulary

SkillVocabulary vocabulary() {
  std::vector<SkillInfo> skills{
      {"grasp_tool", 2, -1, 0}, {"grasp_red", 2, -1, 0}, {"grasp_blue", 2, -1, 0},
      {"place", 2, -1, 0},      {"hook", 4, -1, 0},      {"poke", 4, -1, 0},
      {"goal_red", 0, kGoalRed, 0}, {"goal_blue", 0, kGoalBlue, 0}, {"goal_stack", 0, kGoalStack, 0},
  };
  return SkillVocabulary(std::move(skills), {"red", "blue", "stack"});
}

ParamRange param_range(int skill) {
  if (skill < 0 || skill >= kSkillCount) throw ConfigError("unknown skill id " + std::to_string(skill));
  return ParamRange{};
}

// ---------------------------------------------------------------------------
// World geometry

World::World(Config config) : config_(std::move(config)) { config_.validate(); }

Box World::cube_box(Vec2 c) const {
  const double h = config_.cube_half;
  return {c.x - h, c.y - h, c.x + h, c.y + h};
}

Box World::handle_box(Vec2 corner) const {
  const double t = config_.thickness;
  const double end = corner.x + config_.side * config_.handle_length;
  return span_box(corner.x, end, corner.y, corner.y).expanded(t);
}

Box World::hook_box(Vec2 corner) const {
  const double t = config_.thickness;
  return {corner.x - t, corner.y - t, corner.x + t, corner.y + config_.hook_length};
}

Box World::target_box() const {
  const double h = config_.target_half;
  return {config_.target_center.x - h, config_.target_center.y - h, config_.target_center.x + h,
          config_.target_center.y + h};
}

Vec2 World::tool_corner_for_gripper(Vec2 gripper, double along, double lateral) const {
  return {gripper.x - config_.side * along, gripper.y - lateral};
}

Vec2 World::tool_grasp_point(const WorldState& s, const Command& cmd) const {
  const double along = config_.grasp_along_center + config_.grasp_along_scale * clamp1(cmd.theta[0]);
  const double lateral = config_.grasp_lateral_scale * clamp1(cmd.theta[1]);
  return {s.tool.x + config_.side * along, s.tool.y + lateral};
}

Vec2 World::cube_grasp_point(Vec2 cube, const Command& cmd) const {
  return {cube.x + config_.cube_grasp_scale * clamp1(cmd.theta[0]),
          cube.y + config_.cube_grasp_scale * clamp1(cmd.theta[1])};
}

Vec2 World::place_position(const WorldState& s, const Command& cmd) const {
  const double tx = clamp1(cmd.theta[0]);
  const double ty = clamp1(cmd.theta[1]);
  if (s.held == kTool) {
    return {config_.tool_home.x + config_.side * config_.grasp_along_center + config_.tool_place_scale * tx,
            config_.tool_home.y + config_.tool_place_scale * ty};
  }
  return {config_.target_center.x + config_.place_scale * tx, config_.target_center.y + config_.place_scale * ty};
}

bool World::reachable(Vec2 g) const {
  const double r = config_.gripper_radius;
  if (g.x < r || g.x > 1.0 - r || g.y < r || g.y > 1.0 - r) return false;
  return config_.side * (g.x - config_.wall_x) >= r;
}

bool World::gripper_clear(Vec2 g) const {
  return reachable(g) && config_.tube.distance(g) > config_.gripper_radius;
}

bool World::within_workspace(const Box& b) const { return b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 1.0 && b.y1 <= 1.0; }

// ---------------------------------------------------------------------------
// Reset and predicates

WorldState World::reset(std::uint64_t seed, int goal) const {
  Rng rng(seed);
  WorldState s;
  const double j = config_.jitter;
  auto jitter = [&](Vec2 p) { return Vec2{p.x + rng.uniform(-j, j), p.y + rng.uniform(-j, j)}; };
  s.gripper = config_.gripper_home;
  s.tool = jitter(config_.tool_home);
  s.red = jitter(config_.red_home);
  s.blue = jitter(config_.blue_home);
  if (goal >= 0) {
    if (goal >= kGoalCount) throw ConfigError("goal id out of range");
    s.goal = goal;
  } else {
    double total = 0.0;
    for (double w : config_.goal_weights) total += w;
    double u = rng.uniform() * total;
    s.goal = kGoalCount - 1;
    for (int g = 0; g < kGoalCount; ++g) {
      if (config_.goal_weights[g] <= 0.0) continue;
      if (u < config_.goal_weights[g]) {
        s.goal = g;
        break;
      }
      u -= config_.goal_weights[g];
    }
    while (config_.goal_weights[s.goal] <= 0.0) --s.goal;
  }
  return s;
}

bool World::goal_check(const WorldState& s, int goal) const {
  const Box target = target_box();
  const bool red_in = s.held != kRed && target.contains(s.red);
  const bool blue_in = s.held != kBlue && target.contains(s.blue);
  switch (goal) {
    case kGoalRed:
      return red_in;
    case kGoalBlue:
      return blue_in;
    case kGoalStack:
      return red_in && blue_in && s.blue_on_red;
    default:
      throw ConfigError("goal id out of range");
  }
}

// ---------------------------------------------------------------------------
// Skill simulation

World::Outcome World::simulate(const WorldState& s, const Command& cmd) const {
  if (cmd.skill < 0 || cmd.skill >= kSkillCount) throw ConfigError("unknown skill id " + std::to_string(cmd.skill));
  switch (cmd.skill) {
    case kGraspTool:
    case kGraspRed:
    case kGraspBlue:
      return simulate_grasp(s, cmd);
    case kPlace:
      return simulate_place(s, cmd);
    case kHook:
    case kPoke:
      return simulate_sweep(s, cmd);
    default: {
      Outcome o;
      o.feasible = goal_check(s, cmd.skill - kGoalRedSkill);
      o.next = s;
      return o;
    }
  }
}

World::Outcome World::simulate_grasp(const WorldState& s, const Command& cmd) const {
  Outcome out;
  if (s.held != kNone) return out;
  const int target = cmd.skill == kGraspTool ? kTool : cmd.skill == kGraspRed ? kRed : kBlue;
  const double r = config_.gripper_radius;

  Vec2 g;
  bool on_target = false;
  double along = 0.0;
  double lateral = 0.0;
  if (target == kTool) {
    along = config_.grasp_along_center + config_.grasp_along_scale * clamp1(cmd.theta[0]);
    lateral = config_.grasp_lateral_scale * clamp1(cmd.theta[1]);
    g = tool_grasp_point(s, cmd);
    on_target = along >= 0.0 && along <= config_.handle_length && std::abs(lateral) <= config_.grasp_lateral_tolerance;
  } else {
    const Vec2 c = target == kRed ? s.red : s.blue;
    g = cube_grasp_point(c, cmd);
    on_target = cube_box(c).contains(g);
  }
  if (!gripper_clear(g)) return out;

  // Objects the gripper would bump into. The cube a grasped cube rests on is
  // not an obstacle.
  const int support = target == kBlue && s.blue_on_red ? kRed : target == kRed && s.red_on_blue ? kBlue : kNone;
  bool touches_target = false;
  bool touches_other = false;
  for (int o = 0; o < kObjectCount; ++o) {
    bool touch = false;
    if (o == kTool) {
      touch = handle_box(s.tool).distance(g) <= r || hook_box(s.tool).distance(g) <= r;
    } else {
      touch = cube_box(o == kRed ? s.red : s.blue).distance(g) <= r;
    }
    if (!touch) continue;
    if (o == target) {
      touches_target = true;
    } else if (o != support) {
      touches_other = true;
    }
  }
  if (touches_other) return out;
  // A cube with another cube stacked on it cannot be lifted.
  if (on_target && ((target == kRed && s.blue_on_red) || (target == kBlue && s.red_on_blue))) return out;
  if (!on_target && touches_target) return out;

  out.feasible = true;
  out.next = s;
  out.next.gripper = g;
  if (on_target) {
    out.next.held = target;
    if (target == kTool) {
      out.next.grasp_along = along;
      out.next.grasp_lateral = lateral;
    } else {
      const Vec2 c = target == kRed ? s.red : s.blue;
      out.next.grasp_offset = {g.x - c.x, g.y - c.y};
      if (target == kBlue) out.next.blue_on_red = false;
      if (target == kRed) out.next.red_on_blue = false;
    }
  }
  return out;
}

World::Outcome World::simulate_place(const WorldState& s, const Command& cmd) const {
  Outcome out;
  if (s.held == kNone) return out;
  const Vec2 p = place_position(s, cmd);
  if (s.held == kTool) {
    const Vec2 corner = tool_corner_for_gripper(p, s.grasp_along, s.grasp_lateral);
    if (!gripper_clear(p)) return out;
    const Box handle = handle_box(corner);
    const Box hook = hook_box(corner);
    if (!within_workspace(handle) || !within_workspace(hook)) return out;
    for (const Box& b : {handle, hook}) {
      if (b.overlaps(config_.tube) || b.overlaps(cube_box(s.red)) || b.overlaps(cube_box(s.blue))) return out;
    }
    out.feasible = true;
    out.next = s;
    out.next.gripper = p;
    out.next.tool = corner;
    out.next.held = kNone;
    return out;
  }

  const Vec2 g{p.x + s.grasp_offset.x, p.y + s.grasp_offset.y};
  if (!gripper_clear(g)) return out;
  const Box cube = cube_box(p);
  if (!within_workspace(cube) || cube.overlaps(config_.tube)) return out;
  if (cube.overlaps(handle_box(s.tool)) || cube.overlaps(hook_box(s.tool))) return out;
  const Vec2 other = s.held == kRed ? s.blue : s.red;
  bool stacked = false;
  if (cube.overlaps(cube_box(other))) {
    const double cheb = std::max(std::abs(p.x - other.x), std::abs(p.y - other.y));
    if (cheb > config_.cube_half) return out;
    stacked = true;
  }
  out.feasible = true;
  out.next = s;
  out.next.gripper = g;
  out.next.held = kNone;
  if (s.held == kRed) {
    out.next.red = p;
    out.next.red_on_blue = stacked;
  } else {
    out.next.blue = p;
    out.next.blue_on_red = stacked;
  }
  return out;
}

World::Outcome World::simulate_sweep(const WorldState& s, const Command& cmd) const {
  Outcome out;
  if (s.held != kTool) return out;
  const bool hook = cmd.skill == kHook;
  const ParamBox& start_box = hook ? config_.hook_start : config_.poke_start;
  const ParamBox& disp_box = hook ? config_.hook_displacement : config_.poke_displacement;
  const Vec2 start = start_box.map(clamp1(cmd.theta[0]), clamp1(cmd.theta[1]));
  const Vec2 disp = disp_box.map(clamp1(cmd.theta[2]), clamp1(cmd.theta[3]));
  const double side = config_.side;
  const double t = config_.thickness;
  const double h = config_.cube_half;
  const double L = config_.handle_length;
  const Box top_wall{config_.tube.x0, config_.tube.y1 - t, config_.tube.x1, config_.tube.y1 + t};
  const Box bottom_wall{config_.tube.x0, config_.tube.y0 - t, config_.tube.x1, config_.tube.y0 + t};

  WorldState next = s;
  Vec2* cubes[2] = {&next.red, &next.blue};
  const bool stacked = s.blue_on_red || s.red_on_blue;
  const int n = config_.sweep_samples;
  for (int k = 0; k < n; ++k) {
    const double u = static_cast<double>(k) / static_cast<double>(n - 1);
    const Vec2 g{start.x + u * disp.x, start.y + u * disp.y};
    if (!gripper_clear(g)) return out;
    const Vec2 corner = tool_corner_for_gripper(g, s.grasp_along, s.grasp_lateral);
    const Box handle = handle_box(corner);
    const Box hook_part = hook_box(corner);
    if (!within_workspace(handle) || !within_workspace(hook_part)) return out;
    for (const Box& b : {handle, hook_part}) {
      if (b.overlaps(top_wall) || b.overlaps(bottom_wall)) return out;
    }
    // The contact face pushes cubes ahead of it in the handle direction.
    Box contact;
    double face;
    Box rest[2];
    if (hook) {
      contact = hook_part;
      face = corner.x + side * t;
      rest[0] = handle;
      rest[1] = handle;
    } else {
      const double tip = corner.x + side * L;
      contact = span_box(tip, tip, corner.y, corner.y).expanded(t);
      face = tip + side * t;
      // Handle without its tip, plus the hook.
      rest[0] = span_box(corner.x, tip - side * 2.0 * t, corner.y, corner.y).expanded(t);
      rest[1] = hook_part;
    }
    for (Vec2* c : cubes) {
      const Box cb = cube_box(*c);
      if (!contact.overlaps(cb)) continue;
      if (k == 0 || stacked) return out;
      const double pushed = face + side * h;
      // Only cubes lying ahead of the face are pushed; anything else is a collision.
      if (side * (c->x - face) < -h) return out;
      if (side * (pushed - c->x) > 0.0) c->x = pushed;
    }
    for (Vec2* c : cubes) {
      const Box cb = cube_box(*c);
      if (!within_workspace(cb)) return out;
      if (cb.overlaps(rest[0]) || cb.overlaps(rest[1])) return out;
    }
  }
  const Vec2 end{start.x + disp.x, start.y + disp.y};
  next.gripper = end;
  next.tool = tool_corner_for_gripper(end, s.grasp_along, s.grasp_lateral);
  out.feasible = true;
  out.next = next;
  return out;
}

bool World::skill_is_executable(const WorldState& s, const Command& cmd) const { return simulate(s, cmd).feasible; }

WorldState World::step(const WorldState& s, const Command& cmd) const {
  auto outcome = simulate(s, cmd);
  if (!outcome.feasible) throw ContractError("stepped a skill that is not executable in the current state");
  outcome.next.steps = s.steps + 1;
  return outcome.next;
}

std::vector<float> World::observe(const WorldState& s) const {
  std::vector<float> obs(kObservationWidth, 0.0f);
  auto pos = [](double v) { return static_cast<float>(std::clamp(2.0 * v - 1.0, -1.0, 1.0)); };
  auto put = [&](std::size_t i, Vec2 p) {
    obs[i] = pos(p.x);
    obs[i + 1] = pos(p.y);
  };
  put(0, s.gripper);
  obs[2] = s.held == kNone ? 0.0f : 1.0f;
  if (s.held != kNone) obs[3 + static_cast<std::size_t>(s.held)] = 1.0f;
  if (s.held == kTool) {
    obs[6] = static_cast<float>(std::clamp(2.0 * s.grasp_along / config_.handle_length - 1.0, -1.0, 1.0));
    obs[7] = static_cast<float>(std::clamp(s.grasp_lateral / config_.grasp_lateral_scale, -1.0, 1.0));
  } else if (s.held != kNone) {
    obs[6] = static_cast<float>(std::clamp(s.grasp_offset.x / config_.cube_grasp_scale, -1.0, 1.0));
    obs[7] = static_cast<float>(std::clamp(s.grasp_offset.y / config_.cube_grasp_scale, -1.0, 1.0));
  }
  put(8, s.tool);
  put(10, s.red);
  put(12, s.blue);
  obs[14] = s.blue_on_red ? 1.0f : s.red_on_blue ? -1.0f : 0.0f;
  obs[15 + static_cast<std::size_t>(s.goal)] = 1.0f;
  return obs;
}

// ---------------------------------------------------------------------------
// Inverse parameter maps and the scripted expert

namespace {
float to_theta(double v) { return static_cast<float>(std::clamp(v, -1.0, 1.0)); }
}  // namespace

Command World::grasp_tool_command(double along, double lateral) const {
  Command c;
  c.skill = kGraspTool;
  c.theta[0] = to_theta((along - config_.grasp_along_center) / config_.grasp_along_scale);
  c.theta[1] = to_theta(lateral / config_.grasp_lateral_scale);
  return c;
}

Command World::grasp_cube_command(int object, Vec2 offset) const {
  Command c;
  c.skill = object == kRed ? kGraspRed : kGraspBlue;
  c.theta[0] = to_theta(offset.x / config_.cube_grasp_scale);
  c.theta[1] = to_theta(offset.y / config_.cube_grasp_scale);
  return c;
}

Command World::place_cube_command(Vec2 centre) const {
  Command c;
  c.skill = kPlace;
  c.theta[0] = to_theta((centre.x - config_.target_center.x) / config_.place_scale);
  c.theta[1] = to_theta((centre.y - config_.target_center.y) / config_.place_scale);
  return c;
}

Command World::place_tool_command(Vec2 gripper) const {
  Command c;
  c.skill = kPlace;
  c.theta[0] = to_theta(
      (gripper.x - config_.tool_home.x - config_.side * config_.grasp_along_center) / config_.tool_place_scale);
  c.theta[1] = to_theta((gripper.y - config_.tool_home.y) / config_.tool_place_scale);
  return c;
}

Command World::sweep_command(int skill, Vec2 start, Vec2 displacement) const {
  const ParamBox& sb = skill == kHook ? config_.hook_start : config_.poke_start;
  const ParamBox& db = skill == kHook ? config_.hook_displacement : config_.poke_displacement;
  const Vec2 a = sb.unmap(start);
  const Vec2 b = db.unmap(displacement);
  Command c;
  c.skill = skill;
  c.theta = {to_theta(a.x), to_theta(a.y), to_theta(b.x), to_theta(b.y)};
  return c;
}

std::vector<Command> World::scripted_expert(const WorldState& initial, int goal) const {
  const double side = config_.side;
  const double h = config_.cube_half;
  const double t = config_.thickness;
  const double L = config_.handle_length;
  std::vector<Command> plan;
  WorldState s = initial;
  auto run = [&](const Command& c) {
    plan.push_back(c);
    s = step(s, c);
  };
  // Tool set down with its hook corner here, clear of cubes and tube.
  const Vec2 tool_rest{config_.tool_home.x, config_.tool_home.y - 0.07};
  auto put_tool_down = [&] {
    run(place_tool_command({tool_rest.x + side * s.grasp_along, tool_rest.y + s.grasp_lateral}));
  };

  auto fetch_red = [&] {
    const double along = 0.34;
    run(grasp_tool_command(along, 0.0));
    // Hook corner starts just behind the cube; hook segment spans the cube's lower half.
    const Vec2 corner_start{s.red.x - side * (h + 2.0 * t + 0.01), s.red.y - h - t - 0.03};
    const Vec2 grip_start{corner_start.x + side * along, corner_start.y};
    const double red_final_x = config_.wall_x + side * 0.13;
    const double corner_end_x = red_final_x - side * (h + t);
    run(sweep_command(kHook, grip_start, {corner_end_x - corner_start.x, 0.0}));
    put_tool_down();
  };
  auto fetch_blue = [&] {
    const double along = 0.17;
    run(grasp_tool_command(along, 0.0));
    const double reach = L - along;  // gripper to tip
    const double tip_start = s.blue.x - side * (h + t + 0.01);
    const double tip_end = config_.tube.x1 * (side > 0 ? 1.0 : 0.0) + config_.tube.x0 * (side > 0 ? 0.0 : 1.0) +
                           side * 0.01;
    const Vec2 grip_start{tip_start - side * reach, s.blue.y};
    run(sweep_command(kPoke, grip_start, {tip_end - tip_start, 0.0}));
    put_tool_down();
  };
  const Vec2 centre = config_.target_center;
  switch (goal) {
    case kGoalRed:
      fetch_red();
      run(grasp_cube_command(kRed, {0.0, 0.0}));
      run(place_cube_command(centre));
      run(Command{kGoalRedSkill, {}});
      break;
    case kGoalBlue:
      fetch_blue();
      run(grasp_cube_command(kBlue, {0.0, 0.0}));
      run(place_cube_command(centre));
      run(Command{kGoalBlueSkill, {}});
      break;
    case kGoalStack:
      fetch_red();
      fetch_blue();
      run(grasp_cube_command(kRed, {0.0, 0.0}));
      run(place_cube_command(centre));
      run(grasp_cube_command(kBlue, {0.0, 0.0}));
      run(place_cube_command(centre));
      run(Command{kGoalStackSkill, {}});
      break;
    default:
      throw ConfigError("goal id out of range");
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Mirroring

Command mirror_command(const Command& cmd) {
  Command m = cmd;
  switch (cmd.skill) {
    case kGraspRed:
    case kGraspBlue:
    case kPlace:
      m.theta[0] = -cmd.theta[0];
      break;
    case kHook:
    case kPoke:
      m.theta[0] = -cmd.theta[0];
      m.theta[2] = -cmd.theta[2];
      break;
    default:
      break;
  }
  return m;
}

WorldState mirror_state(const WorldState& s) {
  WorldState m = s;
  m.gripper = mirror_point(s.gripper);
  m.tool = mirror_point(s.tool);
  m.red = mirror_point(s.red);
  m.blue = mirror_point(s.blue);
  m.grasp_offset.x = -s.grasp_offset.x;
  return m;
}

// ---------------------------------------------------------------------------
// Environment adapter

ToolUseEnv::ToolUseEnv(Config config, int fixed_goal)
    : world_(std::move(config)), vocab_(tooluse::vocabulary()), fixed_goal_(fixed_goal) {
  if (fixed_goal >= kGoalCount) throw ConfigError("goal id out of range");
  state_ = world_.reset(0, fixed_goal_);
}

int ToolUseEnv::reset(std::uint64_t seed) {
  state_ = world_.reset(seed, fixed_goal_);
  return state_.goal;
}

// ---------------------------------------------------------------------------
// Trajectory log

void write_log_record(std::ostream& out, const LogRecord& r) {
  out << r.episode << ' ' << r.step << ' ' << r.command.skill;
  for (float v : r.command.theta) out << ' ' << format_double(v);
  out << ' ' << r.afforded << ' ' << r.goal_reached << '\n';
}

std::vector<LogRecord> read_log(std::istream& in) {
  std::vector<LogRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    LogRecord r;
    ls >> r.episode >> r.step >> r.command.skill;
    for (auto& v : r.command.theta) ls >> v;
    ls >> r.afforded >> r.goal_reached;
    if (ls.fail()) throw ParseError(line_no, "malformed trajectory log line");
    out.push_back(r);
  }
  return out;
}

}  // namespace affplan::tooluse
