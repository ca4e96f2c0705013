#include <gtest/gtest.h>

#include <algorithm>

#include "cloud/eval.hpp"
#include "cloud/metrics.hpp"
#include "cloud/models.hpp"
#include "cloud/rng.hpp"

namespace {

using namespace cloud;

rope::RopeState translated(rope::RopeState s, double dx, double dy) {
  for (auto& g : s.geoms) {
    g.x += dx;
    g.y += dy;
  }
  return s;
}

control::EpisodeRecord with_errors(const std::vector<double>& errors) {
  control::EpisodeRecord r;
  for (double e : errors) {
    control::StepRecord s;
    s.error = e;
    r.steps.push_back(s);
  }
  return r;
}

TEST(GeomError, Examples) {
  const rope::EnvConfig env;
  const auto s = rope::reset(env, 1);
  EXPECT_EQ(eval::geom_error(s, s), 0.0);
  EXPECT_NEAR(eval::geom_error(translated(s, 3, 4), s), 5.0, 1e-12);
  auto reversed = s;
  std::reverse(reversed.geoms.begin(), reversed.geoms.end());
  EXPECT_EQ(eval::geom_error(reversed, s), 0.0);
  EXPECT_GT(eval::aligned_geom_error(reversed, s), 0.0);
}

TEST(GeomError, CountMismatchThrows) {
  rope::RopeState a, b;
  a.geoms.resize(3);
  b.geoms.resize(4);
  EXPECT_THROW(eval::geom_error(a, b), std::invalid_argument);
}

TEST(GeomError, PseudometricProperties) {
  const rope::EnvConfig env;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto a = rope::reset(env, seed), b = rope::reset(env, seed + 1000), c = rope::reset(env, seed + 2000);
    EXPECT_GE(eval::geom_error(a, b), 0.0);
    EXPECT_NEAR(eval::geom_error(a, b), eval::geom_error(b, a), 1e-12);
    EXPECT_LE(eval::aligned_geom_error(a, c), eval::aligned_geom_error(a, b) + eval::aligned_geom_error(b, c) + 1e-12);
  }
}

TEST(Success, GoalBoundaryIsStrict) {
  EXPECT_TRUE(eval::success(with_errors({9.0, 0.0}), eval::Task::Goal));
  EXPECT_TRUE(eval::success(with_errors({3.999}), eval::Task::Goal));
  EXPECT_FALSE(eval::success(with_errors({4.0}), eval::Task::Goal));
  EXPECT_FALSE(eval::success(with_errors({0.0, 4.0}), eval::Task::Goal));
}

TEST(Success, ImitationUsesTrajectoryMean) {
  const auto r = with_errors({2, 3, 10});
  EXPECT_EQ(eval::episode_error(r, eval::Task::Imitation), 5.0);
  EXPECT_FALSE(eval::success(r, eval::Task::Imitation));
  EXPECT_TRUE(eval::success(with_errors({2, 3, 6}), eval::Task::Imitation));
}

TEST(Success, MonotoneInStepErrors) {
  Rng rng(1);
  for (int k = 0; k < 500; ++k) {
    std::vector<double> e(5);
    for (auto& x : e) x = uniform(rng, 0, 8);
    std::vector<double> lower = e;
    for (auto& x : lower) x *= uniform(rng, 0, 1);
    for (auto task : {eval::Task::Goal, eval::Task::Imitation}) {
      if (eval::success(with_errors(e), task)) EXPECT_TRUE(eval::success(with_errors(lower), task));
    }
  }
}

TEST(Success, EmptyEpisodeThrows) {
  EXPECT_THROW(eval::episode_error(with_errors({}), eval::Task::Goal), std::invalid_argument);
}

TEST(Episodes, ShapedSetCyclesKinds) {
  EXPECT_EQ(eval::goal_for_episode("shaped", 0), rope::GoalKind::C);
  EXPECT_EQ(eval::goal_for_episode("shaped", 1), rope::GoalKind::L);
  EXPECT_EQ(eval::goal_for_episode("shaped", 5), rope::GoalKind::S);
  EXPECT_EQ(eval::goal_for_episode("straight", 5), rope::GoalKind::Straight);
  EXPECT_THROW(eval::goal_for_episode("knot", 0), rope::UnsupportedGoalError);
  EXPECT_THROW(eval::goal_for_episode("spiral", 0), std::invalid_argument);
}

TEST(Episodes, DeterministicAndIndependentOfOtherEpisodes) {
  const rope::EnvConfig env;
  const auto a = eval::make_episode(eval::Task::Goal, "shaped", 3, 4, env, 10);
  const auto b = eval::make_episode(eval::Task::Goal, "shaped", 3, 4, env, 10);
  EXPECT_EQ(a.start, b.start);
  EXPECT_EQ(a.goal, b.goal);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_NE(a.seed, eval::make_episode(eval::Task::Goal, "shaped", 3, 5, env, 10).seed);
  const auto imit = eval::make_episode(eval::Task::Imitation, "c", 3, 0, env, 6);
  ASSERT_TRUE(imit.demo.has_value());
  EXPECT_EQ(imit.demo->length(), 6u);
  EXPECT_EQ(imit.start, imit.demo->states.front());
}

eval::SuiteConfig small_suite() {
  eval::SuiteConfig c;
  c.seeds = {0};
  c.episodes = 10;
  c.horizon = 1;
  c.candidates = 4;
  return c;
}

TEST(Evaluate, AllSuccessGivesZeroSpread) {
  // With a huge threshold every episode succeeds.
  auto config = small_suite();
  config.threshold = 1e9;
  config.seeds = {0, 1};
  const eval::Method random{"random", eval::MethodKind::Random};
  const auto rows = eval::evaluate(config, {random});
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.successes, 10u);
    EXPECT_EQ(r.success_rate, 1.0);
  }
  const auto summary = eval::summarize(rows);
  ASSERT_EQ(summary.size(), 1u);
  EXPECT_EQ(summary[0].mean_success_rate, 1.0);
  EXPECT_EQ(summary[0].std_success_rate, 0.0);
  EXPECT_EQ(summary[0].seeds, 2u);
}

TEST(Evaluate, DuplicateMethodGivesIdenticalRows) {
  const auto bundle = model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 2);
  auto config = small_suite();
  config.horizon = 3;
  eval::Method a{"a", eval::MethodKind::Planner};
  a.bundles[rope::EnvMode::Deterministic] = &bundle;
  eval::Method b = a;
  b.name = "b";
  const auto rows = eval::evaluate(config, {a, b});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].successes, rows[1].successes);
  EXPECT_EQ(rows[0].mean_geom_error, rows[1].mean_geom_error);
}

TEST(Evaluate, PlannerMatchesSingleEpisodeRuns) {
  const auto bundle = model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 2);
  auto config = small_suite();
  config.horizon = 2;
  config.episodes = 3;
  eval::Method m{"fi", eval::MethodKind::Planner};
  m.bundles[rope::EnvMode::Deterministic] = &bundle;
  const auto rows = eval::evaluate(config, {m});
  double sum = 0.0;
  for (std::size_t e = 0; e < 3; ++e) {
    const auto spec = eval::make_episode(eval::Task::Goal, "straight", 0, e, config.env, config.demo_length);
    sum += eval::episode_error(eval::run_episode(m, eval::Task::Goal, spec, config, rope::EnvMode::Deterministic),
                               eval::Task::Goal);
  }
  EXPECT_NEAR(rows[0].mean_geom_error, sum / 3.0, 1e-12);
}

TEST(Evaluate, MissingCheckpointThrows) {
  auto config = small_suite();
  config.env_modes = {rope::EnvMode::Deterministic, rope::EnvMode::Stochastic};
  const auto bundle = model::init_bundle(model::Variant::FI, rope::ObsKind::Coords, 2);
  eval::Method m{"fi", eval::MethodKind::Planner};
  m.bundles[rope::EnvMode::Deterministic] = &bundle;
  EXPECT_THROW(eval::evaluate(config, {m}), std::invalid_argument);
}

TEST(Evaluate, WrongMethodForTaskThrows) {
  auto config = small_suite();
  config.task = eval::Task::Imitation;
  const eval::Method random{"random", eval::MethodKind::Random};
  EXPECT_THROW(eval::evaluate(config, {random}), std::invalid_argument);
}

TEST(Metrics, FindRowAndRelativeDrop) {
  std::vector<eval::MetricRow> rows{{"m", rope::EnvMode::Deterministic, "straight", 0, 10, 5, 0.5, 3.0}};
  EXPECT_EQ(eval::find_row(rows, "m", rope::EnvMode::Deterministic, "straight", 0).successes, 5u);
  EXPECT_THROW(eval::find_row(rows, "m", rope::EnvMode::Stochastic, "straight", 0), std::out_of_range);
  EXPECT_DOUBLE_EQ(eval::relative_drop(0.5, 0.4), 0.2);
  EXPECT_EQ(eval::relative_drop(0.0, 0.3), 0.0);
}

TEST(SuiteConfig, Validation) {
  auto c = small_suite();
  c.episodes = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_suite();
  c.goal_sets = {"knot"};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
