#include "cloud/control.hpp"

#include <limits>
#include <stdexcept>
#include <utility>

#include "cloud/graph.hpp"
#include "cloud/metrics.hpp"
#include "cloud/rng.hpp"

namespace cloud::control {

void PlanConfig::validate() const {
  if (horizon == 0) throw std::invalid_argument("plan horizon must be >= 1");
  if (candidates == 0) throw std::invalid_argument("plan candidates must be >= 1");
}

GoalDirectedPlanner::GoalDirectedPlanner(const model::ModelBundle& bundle,
                                         const rope::RopeState& goal,
                                         const rope::EnvConfig& env, std::size_t candidates)
    : bundle_(&bundle), env_(env), candidates_(candidates) {
  model::require_forward(bundle);
  if (candidates == 0) throw std::invalid_argument("plan candidates must be >= 1");
  goal_embedding_ =
      model::encode_state(bundle, rope::render(goal, bundle.arch.obs_kind, env.image_size));
}

std::vector<double> GoalDirectedPlanner::score(const rope::RopeState& current,
                                               const std::vector<rope::Action>& candidates) const {
  const auto h = model::encode_state(*bundle_,
                                     rope::render(current, bundle_->arch.obs_kind, env_.image_size));
  const std::size_t m = candidates.size();
  const std::size_t d = h.size();
  Tensor h_rep({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(h.begin(), h.end(), h_rep.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const Tensor z = model::action_inputs(*bundle_, model::actions_tensor(candidates));
  const Tensor pred = model::forward_predict(*bundle_, h_rep, z);
  std::vector<double> scores(m);
  const auto& values = pred.data();
  for (std::size_t i = 0; i < m; ++i) {
    scores[i] = ad::cosine_sim(std::span(values).subspan(i * d, d), goal_embedding_);
  }
  return scores;
}

PlanChoice GoalDirectedPlanner::choose(const rope::RopeState& current, Rng& rng) const {
  PlanChoice out;
  out.candidates.reserve(candidates_);
  for (std::size_t i = 0; i < candidates_; ++i) {
    out.candidates.push_back(rope::sample_action(current, rng, env_));
  }
  out.scores = score(current, out.candidates);
  out.score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    if (out.scores[i] > out.score) {
      out.score = out.scores[i];
      out.index = i;
    }
  }
  out.action = out.candidates[out.index];
  return out;
}

PlanChoice plan_step(const model::ModelBundle& bundle, const rope::RopeState& current,
                     const rope::RopeState& goal, const PlanConfig& config,
                     const rope::EnvConfig& env, Rng& rng) {
  config.validate();
  return GoalDirectedPlanner(bundle, goal, env, config.candidates).choose(current, rng);
}

EpisodeRecord rollout(const Policy& policy, const rope::EnvConfig& env,
                      const rope::RopeState& start, const std::vector<rope::RopeState>& references,
                      std::uint64_t noise_seed, std::string task, std::string method) {
  if (references.empty()) throw std::invalid_argument("rollout needs at least one step");
  EpisodeRecord record;
  record.task = std::move(task);
  record.method = std::move(method);
  record.initial_error = eval::geom_error(start, references.front());
  Rng noise = make_rng(noise_seed, "env-noise");
  rope::RopeState state = start;
  double sum = 0.0;
  for (std::size_t t = 0; t < references.size(); ++t) {
    const rope::Action action = policy(state, t);
    rope::RopeState next = rope::step(state, action, env, noise);
    const double error = eval::geom_error(next, references[t]);
    sum += error;
    record.steps.push_back({state, action, next, error});
    state = std::move(next);
  }
  record.final_error = record.steps.back().error;
  record.trajectory_error = sum / static_cast<double>(references.size());
  return record;
}

EpisodeRecord run_goal_directed(const model::ModelBundle& bundle, const rope::EnvConfig& env,
                                const rope::RopeState& start, const rope::RopeState& goal,
                                const PlanConfig& config) {
  config.validate();
  const GoalDirectedPlanner planner(bundle, goal, env, config.candidates);
  Rng rng = make_rng(config.seed, "plan");
  const std::vector<rope::RopeState> refs(config.horizon, goal);
  return rollout([&](const rope::RopeState& s, std::size_t) { return planner.choose(s, rng).action; },
                 env, start, refs, config.seed, "goal", "");
}

EpisodeRecord run_random_policy(const rope::EnvConfig& env, const rope::RopeState& start,
                                const rope::RopeState& goal, const PlanConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, "plan");
  const std::vector<rope::RopeState> refs(config.horizon, goal);
  return rollout([&](const rope::RopeState& s, std::size_t) { return rope::sample_action(s, rng, env); },
                 env, start, refs, config.seed, "goal", "random");
}

Demo make_demo(const rope::EnvConfig& env, rope::GoalKind kind, std::size_t length,
               std::uint64_t seed, std::size_t expert_candidates) {
  if (length == 0) throw std::invalid_argument("demo length must be >= 1");
  if (expert_candidates == 0) throw std::invalid_argument("expert needs at least one candidate");
  Rng goal_rng = make_rng(seed, "demo-goal");
  const rope::RopeState goal = rope::make_goal(kind, goal_rng, env);
  Rng start_rng = make_rng(seed, "demo-start");
  Rng expert_rng = make_rng(seed, "demo-expert");
  Rng noise = make_rng(seed, "env-noise");
  rope::EnvConfig lookahead = env;
  lookahead.mode = rope::EnvMode::Deterministic;

  Demo demo{kind, {rope::reset(env, start_rng)}};
  for (std::size_t t = 0; t < length; ++t) {
    const auto& s = demo.states.back();
    rope::Action best{};
    double best_error = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < expert_candidates; ++k) {
      const rope::Action a = rope::sample_action(s, expert_rng, env);
      const double e = eval::geom_error(rope::step(s, a, lookahead, noise), goal);
      if (e < best_error) {
        best_error = e;
        best = a;
      }
    }
    demo.states.push_back(rope::step(s, best, env, noise));
  }
  return demo;
}

namespace {

std::vector<rope::RopeState> demo_targets(const Demo& demo) {
  if (demo.states.size() < 2) throw std::invalid_argument("demo needs at least two frames");
  return {demo.states.begin() + 1, demo.states.end()};
}

}  // namespace

EpisodeRecord imitate(const model::ModelBundle& bundle, const rope::EnvConfig& env,
                      const Demo& demo, std::uint64_t noise_seed) {
  model::require_inverse(bundle);
  const auto targets = demo_targets(demo);
  const auto kind = bundle.arch.obs_kind;
  std::vector<std::vector<double>> target_embeddings;
  for (const auto& d : targets) {
    target_embeddings.push_back(model::encode_state(bundle, rope::render(d, kind, env.image_size)));
  }
  const auto policy = [&](const rope::RopeState& s, std::size_t t) {
    const auto h = model::encode_state(bundle, rope::render(s, kind, env.image_size));
    const auto& g = target_embeddings[t];
    const Tensor z = model::inverse_predict(bundle, Tensor({1, h.size()}, h),
                                            Tensor({1, g.size()}, g));
    return model::decode_action(bundle, z.data());
  };
  return rollout(policy, env, demo.states.front(), targets, noise_seed, "imitation", "");
}

NearestNeighborIndex::NearestNeighborIndex(const data::Dataset& dataset) : dataset_(&dataset) {
  for (auto i : dataset.indices(data::Split::Train)) {
    const auto& rec = dataset.records[i];
    entries_.push_back({i, rope::PackedRaster(rec.state, dataset.env.image_size),
                        rope::PackedRaster(rec.next_state, dataset.env.image_size)});
  }
  if (entries_.empty()) throw std::invalid_argument("nearest neighbor needs a non-empty training split");
}

std::size_t NearestNeighborIndex::query(const rope::RopeState& current,
                                        const rope::RopeState& target) const {
  const rope::PackedRaster s(current, dataset_->env.image_size);
  const rope::PackedRaster d(target, dataset_->env.image_size);
  std::size_t best = entries_.front().record;
  std::size_t best_distance = std::numeric_limits<std::size_t>::max();
  for (const auto& e : entries_) {
    const std::size_t distance = s.squared_distance(e.now) + d.squared_distance(e.next);
    if (distance < best_distance) {
      best_distance = distance;
      best = e.record;
    }
  }
  return best;
}

rope::Action NearestNeighborIndex::action(const rope::RopeState& current,
                                          const rope::RopeState& target) const {
  return dataset_->records[query(current, target)].action;
}

rope::Action nn_baseline_action(const data::Dataset& dataset, const rope::RopeState& current,
                                const rope::RopeState& target) {
  return NearestNeighborIndex(dataset).action(current, target);
}

EpisodeRecord imitate_nearest_neighbor(const NearestNeighborIndex& index,
                                       const rope::EnvConfig& env, const Demo& demo,
                                       std::uint64_t noise_seed) {
  const auto targets = demo_targets(demo);
  return rollout([&](const rope::RopeState& s, std::size_t t) { return index.action(s, targets[t]); },
                 env, demo.states.front(), targets, noise_seed, "imitation", "nearest-neighbor");
}

}  // namespace cloud::control
