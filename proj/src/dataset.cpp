#include "cloud/dataset.hpp"

#include <algorithm>
#include <stdexcept>

namespace cloud::data {

std::size_t train_trajectory_count(std::size_t trajectories) {
  if (trajectories == 0) return 0;
  return std::max<std::size_t>(1, trajectories * 3 / 4);
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (is_train(records[i]) == (split == Split::Train)) out.push_back(i);
  }
  return out;
}

const Transition* Dataset::successor(std::size_t index) const {
  if (index + 1 >= records.size()) return nullptr;
  const auto& cur = records[index];
  const auto& next = records[index + 1];
  if (next.trajectory != cur.trajectory || next.step != cur.step + 1) return nullptr;
  return &next;
}

Dataset collect_dataset(const rope::EnvConfig& env, std::size_t trajectories, std::size_t length,
                        std::uint64_t seed) {
  if (trajectories == 0 || length == 0) {
    throw std::invalid_argument("collect_dataset: trajectories and length must be >= 1");
  }
  env.validate();
  Dataset ds;
  ds.env = env;
  ds.seed = seed;
  ds.trajectories = trajectories;
  ds.length = length;
  ds.train_trajectories = train_trajectory_count(trajectories);
  ds.records.reserve(trajectories * length);
  for (std::size_t t = 0; t < trajectories; ++t) {
    Rng rng = make_rng(seed, "trajectory", t);
    Rng noise = make_rng(seed, "env-noise", t);
    rope::RopeState state = rope::reset(env, rng);
    for (std::size_t k = 0; k < length; ++k) {
      const auto action = rope::sample_action(state, rng, env);
      auto next = rope::step(state, action, env, noise);
      ds.records.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(k), state,
                            action, next});
      state = std::move(next);
    }
  }
  return ds;
}

}  // namespace cloud::data
