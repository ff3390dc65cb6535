#include <gtest/gtest.h>

#include <cmath>

#include "affplan/tabular.hpp"
#include "support/tabular_oracles.hpp"

using namespace affplan;
using namespace affplan::tabular;

namespace {

const char* kKeyDoor = R"(
states start key room
initial start 1.0
skill pickup_key
skill open_door
afford pickup_key start
trans start pickup_key key 1.0
afford open_door key
trans key open_door room 1.0
goal escape goal_escape room
)";

const char* kStickyDoor = R"(
states start key room
initial start 1.0
skill pickup_key
skill open_door
afford pickup_key start
trans start pickup_key key 1.0
afford open_door key
trans key open_door room 0.5
trans key open_door key 0.5
goal escape goal_escape room
)";

// s0 -> s1 -> s2 under "advance", afforded on {s0, s1}.
TabularMdp chain() {
  auto mdp = make_mdp(3);
  const int adv = mdp.add_skill("advance");
  mdp.set_afford({adv, 0}, 0, true);
  mdp.set_afford({adv, 0}, 1, true);
  for (int s = 0; s < 3; ++s) {
    mdp.set_transition({adv, 0}, s, s, 0.0);
    mdp.set_transition({adv, 0}, s, std::min(s + 1, 2), 1.0);
  }
  mdp.add_goal("end", {2}, "at_end");
  mdp.validate();
  return mdp;
}

std::vector<double> point(std::size_t n, std::size_t s) {
  std::vector<double> z(n, 0.0);
  z[s] = 1.0;
  return z;
}

}  // namespace

TEST(Propagate, BaseCaseIsZ0) {
  auto mdp = chain();
  std::vector<double> z0{0.2, 0.5, 0.3};
  auto prop = propagate_distribution(mdp, {}, z0);
  ASSERT_EQ(prop.unnormalized.size(), 1u);
  EXPECT_EQ(prop.unnormalized[0].mass, z0);
}

TEST(Propagate, IdentityDynamicsKeepZ0) {
  auto mdp = make_mdp(4);
  const int stay = mdp.add_skill("stay");
  for (int s = 0; s < 4; ++s) mdp.set_afford({stay, 0}, s, true);
  std::vector<double> z0{0.1, 0.2, 0.3, 0.4};
  auto prop = propagate_distribution(mdp, {{stay, 0}, {stay, 0}, {stay, 0}}, z0);
  for (const auto& z : prop.unnormalized) EXPECT_EQ(z.mass, z0);
}

TEST(Propagate, ChainMovesPointMass) {
  auto mdp = chain();
  auto prop = propagate_distribution(mdp, {{0, 0}, {0, 0}}, point(3, 0));
  EXPECT_EQ(prop.unnormalized[2].mass, point(3, 2));
  EXPECT_EQ(prop.unnormalized[2].total(), 1.0);
}

TEST(Propagate, DeadPlanNormalizesToZero) {
  auto mdp = chain();
  auto prop = propagate_distribution(mdp, {{0, 0}, {0, 0}, {0, 0}}, point(3, 0));
  for (double m : prop.normalized[3].mass) EXPECT_EQ(m, 0.0);
}

TEST(Completion, FullAndEmptyAffordance) {
  auto mdp = make_mdp(3);
  const int all = mdp.add_skill("all");
  const int none = mdp.add_skill("none");
  for (int s = 0; s < 3; ++s) mdp.set_afford({all, 0}, s, true);
  std::vector<double> z0{0.3, 0.3, 0.4};
  EXPECT_DOUBLE_EQ(plan_completion_probability(mdp, {{all, 0}}, z0), 1.0);
  EXPECT_EQ(plan_completion_probability(mdp, {{none, 0}}, z0), 0.0);
}

TEST(Completion, ChainMatchesEnumeration) {
  auto mdp = chain();
  const PlanSpec three{{0, 0}, {0, 0}, {0, 0}};
  const PlanSpec two{{0, 0}, {0, 0}};
  EXPECT_EQ(plan_completion_probability(mdp, three), 0.0);
  EXPECT_EQ(plan_completion_probability(mdp, two), 1.0);
  EXPECT_EQ(oracle::enumerate_completion(mdp, three, mdp.initial), 0.0);
  EXPECT_EQ(oracle::enumerate_completion(mdp, two, mdp.initial), 1.0);
}

TEST(Completion, EmptyPlanIsRejected) {
  auto mdp = chain();
  EXPECT_THROW(plan_completion_probability(mdp, {}), ConfigError);
}

TEST(Completion, RandomMdpsMatchEnumeration) {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    auto mdp = oracle::random_mdp(rng);
    for (const auto& plan : oracle::all_plans(mdp, 3)) {
      const double rec = plan_completion_probability(mdp, plan);
      const double brute = oracle::enumerate_completion(mdp, plan, mdp.initial);
      ASSERT_NEAR(rec, brute, 1e-12) << format_plan(mdp, plan);
    }
  }
}

TEST(Completion, AppendingNeverIncreases) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto mdp = oracle::random_mdp(rng);
    for (const auto& plan : oracle::all_plans(mdp, 2)) {
      const double base = plan_completion_probability(mdp, plan);
      for (int c = 0; c < static_cast<int>(mdp.command_count()); ++c) {
        auto longer = plan;
        longer.push_back(mdp.command(c));
        EXPECT_LE(plan_completion_probability(mdp, longer), base + 1e-15);
      }
    }
  }
}

TEST(Completion, NormalizedTimesPrefixMassIsUnnormalized) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto mdp = oracle::random_mdp(rng);
    const auto plans = oracle::all_plans(mdp, 3);
    const auto& plan = plans[rng.index(plans.size())];
    auto prop = propagate_distribution(mdp, plan, mdp.initial);
    for (std::size_t i = 0; i < prop.unnormalized.size(); ++i) {
      const double mass = prop.unnormalized[i].total();
      for (std::size_t s = 0; s < mdp.state_count(); ++s) {
        EXPECT_NEAR(prop.normalized[i].mass[s] * mass, prop.unnormalized[i].mass[s], 1e-12);
      }
    }
  }
}

TEST(Completion, FactoredFormAgrees) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto mdp = oracle::random_mdp(rng);
    for (const auto& plan : oracle::all_plans(mdp, 2)) {
      EXPECT_NEAR(factored_completion_probability(mdp, plan, mdp.initial), plan_completion_probability(mdp, plan),
                  1e-12);
    }
  }
}

TEST(GoalDirected, VacuousGoalAcceptsEveryPlan) {
  auto mdp = make_mdp(3);
  const int a = mdp.add_skill("a");
  const int b = mdp.add_skill("b", {0.0, 1.0});
  mdp.set_afford({a, 0}, 0, true);
  mdp.set_afford({b, 0}, 1, true);
  mdp.set_afford({b, 1}, 2, true);
  mdp.add_goal("any", {0, 1, 2}, "done");
  const auto plans = goal_directed_plans(mdp, 0, 2);
  EXPECT_EQ(plans.size(), 4u + 16u);
}

TEST(GoalDirected, PlansEndingInGoalSkillQualify) {
  auto mdp = chain();
  for (const auto& plan : goal_directed_plans(mdp, 0, 3)) {
    EXPECT_EQ(plan.back().skill, mdp.goals[0].skill);
  }
  EXPECT_EQ(goal_directed_plans(mdp, 0, 3).size(), 1u + 2u + 4u);
}

TEST(GoalDirected, MatchesBruteForceFilter) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto mdp = oracle::random_mdp(rng, 4, 4, 2);
    std::vector<PlanSpec> brute;
    for (const auto& plan : oracle::all_plans(mdp, 2)) {
      if (oracle::subset_of_goal(mdp, 0, plan.back())) brute.push_back(plan);
    }
    EXPECT_EQ(goal_directed_plans(mdp, 0, 2), brute);
  }
}

TEST(BestPlan, SingleGoalSkill) {
  auto mdp = chain();
  mdp.initial = point(3, 2);
  auto best = best_plan(mdp, 0, 3);
  ASSERT_TRUE(best);
  EXPECT_EQ(best->plan, (PlanSpec{{mdp.goals[0].skill, 0}}));
  EXPECT_EQ(best->probability, 1.0);
}

TEST(BestPlan, KeyDoor) {
  auto mdp = parse_mdp(kKeyDoor);
  auto best = best_plan(mdp, 0, 4);
  ASSERT_TRUE(best);
  EXPECT_EQ(format_plan(mdp, best->plan), "(pickup_key, open_door, goal_escape)");
  EXPECT_EQ(best->probability, 1.0);
}

TEST(BestPlan, StickyDoorHalf) {
  auto mdp = parse_mdp(kStickyDoor);
  auto best = best_plan(mdp, 0, 4);
  ASSERT_TRUE(best);
  EXPECT_EQ(format_plan(mdp, best->plan), "(pickup_key, open_door, goal_escape)");
  EXPECT_NEAR(best->probability, 0.5, 1e-15);
}

TEST(BestPlan, EmptyGoalSetHasNoPlan) {
  auto mdp = parse_mdp("states a b\nskill wander\nafford wander a b\ngoal nowhere goal_nowhere\n");
  EXPECT_FALSE(best_plan(mdp, 0, 3).has_value());
}

TEST(BestPlan, RandomMdpsMatchBruteForceArgmax) {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    auto mdp = oracle::random_mdp(rng);
    auto best = best_plan(mdp, 0, 3);
    auto brute = oracle::brute_best(mdp, 0, 3);
    ASSERT_EQ(best.has_value(), brute.has_value());
    if (!best) continue;
    EXPECT_EQ(best->plan, brute->plan);
    EXPECT_NEAR(best->probability, brute->probability, 1e-12);
  }
}

TEST(BestPlan, RankingIsSortedAndHeadedByBest) {
  auto mdp = parse_mdp(kStickyDoor);
  auto ranked = rank_goal_directed(mdp, 0, 4);
  ASSERT_FALSE(ranked.empty());
  EXPECT_EQ(ranked.front().plan, best_plan(mdp, 0, 4)->plan);
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    EXPECT_LE(ranked[i].probability, ranked[i - 1].probability + kTieTolerance);
  }
}

TEST(Parser, ReportsLineNumbers) {
  try {
    parse_mdp("states a b\nskill go\nafford go a\ntrans a go c 1.0\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
  }
  try {
    parse_mdp("states a b\n\nbogus\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Parser, RejectsRowsThatDoNotSumToOne) {
  EXPECT_THROW(parse_mdp("states a b\nskill go\ntrans a go b 0.4\ngoal g reach_g b\n"), ParseError);
}

TEST(Parser, ParameterGridAndIndexedReferences) {
  auto mdp = parse_mdp(
      "states a b c\n"
      "skill push 0.1 0.5\n"
      "afford push[1] a   # only the wide push\n"
      "trans a push[1] c 1.0\n"
      "goal far reach_far c\n");
  EXPECT_EQ(mdp.skills[0].params, (std::vector<double>{0.1, 0.5}));
  EXPECT_EQ(plan_completion_probability(mdp, {{0, 0}}), 0.0);
  EXPECT_EQ(plan_completion_probability(mdp, {{0, 1}, {1, 0}}), 1.0);
}

TEST(Validate, GoalSkillMustBeIdentityNoOp) {
  auto mdp = chain();
  mdp.set_transition({mdp.goals[0].skill, 0}, 2, 2, 0.0);
  mdp.set_transition({mdp.goals[0].skill, 0}, 2, 0, 1.0);
  EXPECT_THROW(mdp.validate(), ConfigError);
}

TEST(Env, ResetIsDeterministicAndStepsRespectContract) {
  TabularEnv env(parse_mdp(kKeyDoor), 5);
  env.reset(3);
  const auto obs = env.observe();
  env.reset(3);
  EXPECT_EQ(env.observe(), obs);
  EXPECT_FALSE(env.skill_is_executable(to_command({1, 0})));
  EXPECT_THROW(env.step(to_command({1, 0})), ContractError);
  env.step(to_command({0, 0}));
  env.step(to_command({1, 0}));
  EXPECT_TRUE(env.goal_check(0));
  EXPECT_TRUE(env.skill_is_executable(to_command({2, 0})));
}
