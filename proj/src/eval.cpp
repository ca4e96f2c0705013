#include "cloud/eval.hpp"

#include <cmath>
#include <stdexcept>

#include "cloud/rng.hpp"

namespace cloud::eval {

std::string_view to_string(Task task) {
  return task == Task::Goal ? "goal" : "imitation";
}

Task parse_task(std::string_view text) {
  if (text == "goal") return Task::Goal;
  if (text == "imitation") return Task::Imitation;
  throw std::invalid_argument("unknown task '" + std::string(text) + "'");
}

double episode_error(const control::EpisodeRecord& record, Task task) {
  if (record.steps.empty()) throw std::invalid_argument("episode has no steps");
  if (task == Task::Goal) return record.steps.back().error;
  double sum = 0.0;
  for (const auto& s : record.steps) sum += s.error;
  return sum / static_cast<double>(record.steps.size());
}

bool success(const control::EpisodeRecord& record, Task task, double threshold) {
  return episode_error(record, task) < threshold;
}

rope::GoalKind goal_for_episode(const GoalSet& set, std::size_t episode) {
  if (set == "shaped") {
    static constexpr rope::GoalKind kCycle[] = {rope::GoalKind::C, rope::GoalKind::L,
                                                rope::GoalKind::S};
    return kCycle[episode % 3];
  }
  const auto kind = rope::parse_goal_kind(set);
  if (kind == rope::GoalKind::Knot) throw rope::UnsupportedGoalError("knot goals are not supported");
  return kind;
}

EpisodeSpec make_episode(Task task, const GoalSet& set, std::uint64_t seed, std::size_t episode,
                         const rope::EnvConfig& env, std::size_t demo_length) {
  EpisodeSpec spec;
  spec.kind = goal_for_episode(set, episode);
  spec.seed = derive_seed(seed, "episode/" + set + "/" + std::string(to_string(task)), episode);
  if (task == Task::Imitation) {
    spec.demo = control::make_demo(env, spec.kind, demo_length, spec.seed);
    spec.start = spec.demo->states.front();
    spec.goal = spec.demo->states.back();
    return spec;
  }
  Rng goal_rng = make_rng(spec.seed, "goal");
  spec.goal = rope::make_goal(spec.kind, goal_rng, env);
  Rng start_rng = make_rng(spec.seed, "start");
  spec.start = spec.kind == rope::GoalKind::Straight
                   ? rope::reset(env, start_rng)
                   : rope::perturb(spec.goal, env.burn_in, start_rng, env);
  return spec;
}

void SuiteConfig::validate() const {
  if (episodes == 0) throw std::invalid_argument("episodes must be >= 1");
  if (horizon == 0) throw std::invalid_argument("horizon must be >= 1");
  if (candidates == 0) throw std::invalid_argument("candidates must be >= 1");
  if (demo_length == 0) throw std::invalid_argument("demo_length must be >= 1");
  if (env_modes.empty() || goal_sets.empty() || seeds.empty()) {
    throw std::invalid_argument("suite needs at least one env mode, goal set and seed");
  }
  for (const auto& g : goal_sets) goal_for_episode(g, 0);
  env.validate();
}

namespace {

template <typename T>
const T& resource(const std::map<rope::EnvMode, const T*>& table, const Method& method,
                  rope::EnvMode mode) {
  const auto it = table.find(mode);
  if (it == table.end() || it->second == nullptr) {
    throw std::invalid_argument("method '" + method.name + "' has nothing for env mode " +
                                std::string(rope::to_string(mode)));
  }
  return *it->second;
}

}  // namespace

control::EpisodeRecord run_episode(const Method& method, Task task, const EpisodeSpec& spec,
                                   const SuiteConfig& config, rope::EnvMode mode) {
  rope::EnvConfig env = config.env;
  env.mode = mode;
  control::EpisodeRecord record;
  if (task == Task::Goal) {
    const control::PlanConfig plan{config.horizon, config.candidates, spec.seed};
    switch (method.kind) {
      case MethodKind::Planner:
        record = control::run_goal_directed(resource(method.bundles, method, mode), env, spec.start,
                                            spec.goal, plan);
        break;
      case MethodKind::Random:
        record = control::run_random_policy(env, spec.start, spec.goal, plan);
        break;
      default:
        throw std::invalid_argument("method '" + method.name + "' cannot plan toward goals");
    }
  } else {
    if (!spec.demo) throw std::invalid_argument("imitation episode without a demo");
    switch (method.kind) {
      case MethodKind::Inverse:
        record = control::imitate(resource(method.bundles, method, mode), env, *spec.demo, spec.seed);
        break;
      case MethodKind::NearestNeighbor: {
        const control::NearestNeighborIndex index(resource(method.datasets, method, mode));
        record = control::imitate_nearest_neighbor(index, env, *spec.demo, spec.seed);
        break;
      }
      default:
        throw std::invalid_argument("method '" + method.name + "' cannot imitate");
    }
  }
  record.method = method.name;
  return record;
}

std::vector<MetricRow> evaluate(const SuiteConfig& config, const std::vector<Method>& methods,
                                const ProgressCallback& progress) {
  config.validate();
  // Episodes depend only on (task, goal set, seed, index), so they are built once
  // and shared by every method and env mode.
  std::map<std::pair<GoalSet, std::uint64_t>, std::vector<EpisodeSpec>> episodes;
  for (const auto& set : config.goal_sets) {
    for (auto seed : config.seeds) {
      auto& list = episodes[{set, seed}];
      for (std::size_t e = 0; e < config.episodes; ++e) {
        list.push_back(make_episode(config.task, set, seed, e, config.env, config.demo_length));
      }
    }
  }

  std::vector<MetricRow> rows;
  for (const auto& method : methods) {
    // The index is rebuilt per episode otherwise; cache one per env mode.
    std::map<rope::EnvMode, control::NearestNeighborIndex> nn;
    if (method.kind == MethodKind::NearestNeighbor) {
      for (auto mode : config.env_modes) nn.emplace(mode, resource(method.datasets, method, mode));
    }
    for (auto mode : config.env_modes) {
      rope::EnvConfig env = config.env;
      env.mode = mode;
      for (const auto& set : config.goal_sets) {
        for (auto seed : config.seeds) {
          MetricRow row{method.name, mode, set, seed};
          double error_sum = 0.0;
          for (const auto& spec : episodes.at({set, seed})) {
            control::EpisodeRecord record;
            if (method.kind == MethodKind::NearestNeighbor) {
              if (config.task != Task::Imitation) {
                throw std::invalid_argument("method '" + method.name + "' cannot plan toward goals");
              }
              record = control::imitate_nearest_neighbor(nn.at(mode), env, *spec.demo, spec.seed);
            } else {
              record = run_episode(method, config.task, spec, config, mode);
            }
            row.successes += success(record, config.task, config.threshold) ? 1 : 0;
            error_sum += episode_error(record, config.task);
            ++row.episodes;
          }
          row.success_rate = static_cast<double>(row.successes) / static_cast<double>(row.episodes);
          row.mean_geom_error = error_sum / static_cast<double>(row.episodes);
          rows.push_back(row);
          if (progress) progress(row);
        }
      }
    }
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<MetricRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<double>> rates;
  for (const auto& row : rows) {
    std::size_t k = 0;
    while (k < out.size() && !(out[k].method == row.method && out[k].env_mode == row.env_mode &&
                               out[k].goal_kind == row.goal_kind)) {
      ++k;
    }
    if (k == out.size()) {
      out.push_back({row.method, row.env_mode, row.goal_kind});
      rates.emplace_back();
    }
    out[k].seeds += 1;
    out[k].mean_geom_error += row.mean_geom_error;
    rates[k].push_back(row.success_rate);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double n = static_cast<double>(rates[k].size());
    double mean = 0.0;
    for (double r : rates[k]) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rates[k]) var += (r - mean) * (r - mean);
    out[k].mean_success_rate = mean;
    out[k].std_success_rate = std::sqrt(var / n);
    out[k].mean_geom_error /= n;
  }
  return out;
}

const MetricRow& find_row(const std::vector<MetricRow>& rows, std::string_view method,
                          rope::EnvMode mode, std::string_view goal_kind, std::uint64_t seed) {
  for (const auto& row : rows) {
    if (row.method == method && row.env_mode == mode && row.goal_kind == goal_kind &&
        row.seed == seed) {
      return row;
    }
  }
  throw std::out_of_range("no metrics row for " + std::string(method) + "/" +
                          std::string(rope::to_string(mode)) + "/" + std::string(goal_kind) +
                          "/seed " + std::to_string(seed));
}

double relative_drop(double deterministic_rate, double stochastic_rate) {
  if (deterministic_rate <= 0.0) return 0.0;
  return (deterministic_rate - stochastic_rate) / deterministic_rate;
}

}  // namespace cloud::eval
