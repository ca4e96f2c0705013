#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cloud/dataset.hpp"
#include "cloud/models.hpp"
#include "cloud/observation.hpp"
#include "cloud/rope.hpp"

namespace cloud::control {

struct PlanConfig {
  std::size_t horizon = 20;
  std::size_t candidates = 256;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Outcome of one MPC step, with every candidate and its score kept for inspection.
struct PlanChoice {
  rope::Action action;
  std::size_t index = 0;
  double score = 0.0;
  std::vector<rope::Action> candidates;
  std::vector<double> scores;
};

/// One-step sampling MPC toward a fixed goal. The goal embedding is computed once.
class GoalDirectedPlanner {
 public:
  GoalDirectedPlanner(const model::ModelBundle& bundle, const rope::RopeState& goal,
                      const rope::EnvConfig& env, std::size_t candidates);

  /// Samples candidates from the exploration distribution, forward-predicts each
  /// and returns the one whose prediction is most cosine-similar to the goal
  /// embedding (lowest index on ties).
  PlanChoice choose(const rope::RopeState& current, Rng& rng) const;

  /// Scores fixed candidates; exposed for rescoring checks.
  std::vector<double> score(const rope::RopeState& current,
                            const std::vector<rope::Action>& candidates) const;

 private:
  const model::ModelBundle* bundle_;
  rope::EnvConfig env_;
  std::size_t candidates_;
  std::vector<double> goal_embedding_;
};

PlanChoice plan_step(const model::ModelBundle& bundle, const rope::RopeState& current,
                     const rope::RopeState& goal, const PlanConfig& config,
                     const rope::EnvConfig& env, Rng& rng);

struct StepRecord {
  rope::RopeState state;
  rope::Action action;
  rope::RopeState next_state;
  /// geom_error of next_state against the step's reference (goal or demo frame).
  double error = 0.0;
};

struct EpisodeRecord {
  std::string task;  // "goal" or "imitation"
  std::string method;
  std::vector<StepRecord> steps;
  double initial_error = 0.0;
  double final_error = 0.0;
  double trajectory_error = 0.0;  // mean of per-step errors
};

/// Maps the current state and the step index to an action.
using Policy = std::function<rope::Action(const rope::RopeState& current, std::size_t t)>;

/// Runs `policy` for references.size() steps; step t is scored against references[t].
/// Environment noise comes from stream ("env-noise") of `noise_seed`.
EpisodeRecord rollout(const Policy& policy, const rope::EnvConfig& env,
                      const rope::RopeState& start, const std::vector<rope::RopeState>& references,
                      std::uint64_t noise_seed, std::string task, std::string method);

/// MPC episode. Candidate sampling uses stream ("plan") of config.seed and the
/// environment noise stream ("env-noise") of the same seed.
EpisodeRecord run_goal_directed(const model::ModelBundle& bundle, const rope::EnvConfig& env,
                                const rope::RopeState& start, const rope::RopeState& goal,
                                const PlanConfig& config);

/// Same protocol with exploration actions in place of the planner.
EpisodeRecord run_random_policy(const rope::EnvConfig& env, const rope::RopeState& start,
                                const rope::RopeState& goal, const PlanConfig& config);

/// Observation sequence d_0..d_T; the generating actions are deliberately not kept.
struct Demo {
  rope::GoalKind kind = rope::GoalKind::Straight;
  std::vector<rope::RopeState> states;
  std::size_t length() const { return states.empty() ? 0 : states.size() - 1; }
};

/// Scripted demonstration: from a reset state, a ground-truth greedy expert
/// picks among `expert_candidates` exploration actions the one that brings the
/// rope closest to a goal of `kind`, for `length` steps.
Demo make_demo(const rope::EnvConfig& env, rope::GoalKind kind, std::size_t length,
               std::uint64_t seed, std::size_t expert_candidates = 64);

/// Imitation from observation with the inverse model: a_t = p(I(g(s_t), g(d_{t+1}))).
EpisodeRecord imitate(const model::ModelBundle& bundle, const rope::EnvConfig& env,
                      const Demo& demo, std::uint64_t noise_seed);

/// Nearest neighbor over training transitions in raster pixel space.
class NearestNeighborIndex {
 public:
  explicit NearestNeighborIndex(const data::Dataset& dataset);

  /// Index into the dataset of the transition minimizing
  /// |o(s) - o(s_j)|^2 + |o(d) - o(s'_j)|^2; lowest index on ties.
  std::size_t query(const rope::RopeState& current, const rope::RopeState& target) const;
  rope::Action action(const rope::RopeState& current, const rope::RopeState& target) const;
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::size_t record;
    rope::PackedRaster now;
    rope::PackedRaster next;
  };
  const data::Dataset* dataset_;
  std::vector<Entry> entries_;
};

rope::Action nn_baseline_action(const data::Dataset& dataset, const rope::RopeState& current,
                                const rope::RopeState& target);

EpisodeRecord imitate_nearest_neighbor(const NearestNeighborIndex& index,
                                       const rope::EnvConfig& env, const Demo& demo,
                                       std::uint64_t noise_seed);

}  // namespace cloud::control
