#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cloud/control.hpp"
#include "cloud/dataset.hpp"
#include "cloud/metrics.hpp"
#include "cloud/models.hpp"
#include "cloud/rope.hpp"

namespace cloud::eval {

enum class Task { Goal, Imitation };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);

/// Goal task: final geom error below threshold. Imitation: trajectory-average
/// error below threshold. Both comparisons are strict.
bool success(const control::EpisodeRecord& record, Task task,
             double threshold = kSuccessThreshold);

/// Error the metrics table averages: final error for goals, trajectory average for imitation.
double episode_error(const control::EpisodeRecord& record, Task task);

/// "straight", "c", "l", "s", or "shaped" (cycles c, l, s by episode index).
using GoalSet = std::string;

rope::GoalKind goal_for_episode(const GoalSet& set, std::size_t episode);

/// A paired episode: every method sees the same start, goal or demo, and noise seed.
struct EpisodeSpec {
  rope::GoalKind kind = rope::GoalKind::Straight;
  rope::RopeState start;
  rope::RopeState goal;
  std::optional<control::Demo> demo;
  std::uint64_t seed = 0;
};

/// Straight goals start from reset(); shaped goals start from the goal shuffled
/// by burn_in exploration actions. Imitation episodes carry a scripted demo.
EpisodeSpec make_episode(Task task, const GoalSet& set, std::uint64_t seed, std::size_t episode,
                         const rope::EnvConfig& env, std::size_t demo_length);

enum class MethodKind { Planner, Inverse, Random, NearestNeighbor };

/// A named method with per-environment-mode resources (bundle or dataset).
struct Method {
  std::string name;
  MethodKind kind = MethodKind::Planner;
  std::map<rope::EnvMode, const model::ModelBundle*> bundles{};
  std::map<rope::EnvMode, const data::Dataset*> datasets{};
};

struct SuiteConfig {
  Task task = Task::Goal;
  std::vector<rope::EnvMode> env_modes{rope::EnvMode::Deterministic};
  std::vector<GoalSet> goal_sets{"straight"};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t episodes = 50;
  std::size_t horizon = 20;
  std::size_t candidates = 256;
  std::size_t demo_length = 10;
  double threshold = kSuccessThreshold;
  rope::EnvConfig env;
  void validate() const;
};

struct MetricRow {
  std::string method;
  rope::EnvMode env_mode = rope::EnvMode::Deterministic;
  std::string goal_kind;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double mean_geom_error = 0.0;
};

/// Runs one episode of `method` on `spec`.
control::EpisodeRecord run_episode(const Method& method, Task task, const EpisodeSpec& spec,
                                   const SuiteConfig& config, rope::EnvMode mode);

using ProgressCallback = std::function<void(const MetricRow&)>;

/// One row per (method, env mode, goal set, seed), in that nesting order.
std::vector<MetricRow> evaluate(const SuiteConfig& config, const std::vector<Method>& methods,
                                const ProgressCallback& progress = {});

struct SummaryRow {
  std::string method;
  rope::EnvMode env_mode = rope::EnvMode::Deterministic;
  std::string goal_kind;
  std::size_t seeds = 0;
  double mean_success_rate = 0.0;
  double std_success_rate = 0.0;  // population std across seeds
  double mean_geom_error = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<MetricRow>& rows);

/// Looks up the row for one cell; throws std::out_of_range if missing.
const MetricRow& find_row(const std::vector<MetricRow>& rows, std::string_view method,
                          rope::EnvMode mode, std::string_view goal_kind, std::uint64_t seed);

/// (rate_det - rate_stoch) / rate_det, negative when the stochastic env does
/// better. A deterministic rate of 0 has nothing to lose and yields 0.
double relative_drop(double deterministic_rate, double stochastic_rate);

}  // namespace cloud::eval
