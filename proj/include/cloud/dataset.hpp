#pragma once

#include <cstdint>
#include <vector>

#include "cloud/rope.hpp"

namespace cloud::data {

struct Transition {
  std::uint32_t trajectory = 0;
  std::uint32_t step = 0;
  rope::RopeState state;
  rope::Action action;
  rope::RopeState next_state;
  friend bool operator==(const Transition&, const Transition&) = default;
};

enum class Split { Train, Test };

/// Random-exploration transitions, stored in (trajectory, step) order.
///
/// The split is by whole trajectories: ids below `train_trajectories` are
/// training data, the rest test data.
struct Dataset {
  rope::EnvConfig env;
  std::uint64_t seed = 0;
  std::size_t trajectories = 0;
  std::size_t length = 0;
  std::size_t train_trajectories = 0;
  std::vector<Transition> records;

  bool is_train(const Transition& t) const { return t.trajectory < train_trajectories; }
  std::vector<std::size_t> indices(Split split) const;
  /// The record that follows `index` in the same trajectory, if any.
  const Transition* successor(std::size_t index) const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// 3/4 of the trajectories (at least one) go to training.
std::size_t train_trajectory_count(std::size_t trajectories);

/// For each trajectory: reset, then `length` (sample_action, step) pairs.
/// Trajectory t draws from streams ("trajectory", t) and ("env-noise", t).
Dataset collect_dataset(const rope::EnvConfig& env, std::size_t trajectories, std::size_t length,
                        std::uint64_t seed);

}  // namespace cloud::data
