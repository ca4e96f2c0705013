#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cloud/rng.hpp"

namespace cloud::rope {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Rope configuration: geom positions in pixel coordinates, ordered along the chain.
struct RopeState {
  std::vector<Point> geoms;
  friend bool operator==(const RopeState&, const RopeState&) = default;
};

/// Pick-and-place action in pixel coordinates.
struct Action {
  double x1 = 0.0;  // pick
  double y1 = 0.0;
  double x2 = 0.0;  // drop
  double y2 = 0.0;
  friend bool operator==(const Action&, const Action&) = default;
};

enum class EnvMode { Deterministic, Stochastic };
enum class ObsKind { Coords, Raster };
enum class GoalKind { Straight, C, L, S, Knot };

class UnsupportedGoalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EnvConfig {
  EnvMode mode = EnvMode::Deterministic;
  double noise_sigma = 0.5;
  double pick_radius = 5.0;
  double segment_length = 2.0;
  std::size_t image_size = 64;
  std::size_t geom_count = 25;
  /// Random actions applied on reset.
  std::size_t burn_in = 10;
  /// Goal pose jitter: rotation in radians and translation in pixels, both symmetric.
  double goal_max_rotation = 0.25;
  double goal_max_shift = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
  double upper_bound() const;
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

/// Pose applied to a centered goal template.
struct GoalPose {
  double angle = 0.0;
  double dx = 0.0;
  double dy = 0.0;
};

/// Straight horizontal chain centered in the image with geoms L0 apart.
RopeState straight_chain(const EnvConfig& config);

RopeState reset(const EnvConfig& config, Rng& rng);
RopeState reset(const EnvConfig& config, std::uint64_t seed);

/// Applies `action`. Deterministic mode never touches `noise_rng`.
RopeState step(const RopeState& state, const Action& action, const EnvConfig& config,
               Rng& noise_rng);

/// Exploration action: pick near a random geom, drop 2-12 px away.
Action sample_action(const RopeState& state, Rng& rng, const EnvConfig& config);

/// Applies `count` sampled actions with deterministic stepping.
RopeState perturb(const RopeState& state, std::size_t count, Rng& rng, const EnvConfig& config);

RopeState make_goal(GoalKind kind, const GoalPose& pose, const EnvConfig& config);
RopeState make_goal(GoalKind kind, Rng& rng, const EnvConfig& config);

std::size_t nearest_geom(const RopeState& state, double x, double y);
double max_segment_length(const RopeState& state);
bool in_bounds(const RopeState& state, const EnvConfig& config);
Action clamp_action(const Action& action, const EnvConfig& config);

std::string_view to_string(EnvMode mode);
std::string_view to_string(ObsKind kind);
std::string_view to_string(GoalKind kind);
EnvMode parse_env_mode(std::string_view text);
ObsKind parse_obs_kind(std::string_view text);
GoalKind parse_goal_kind(std::string_view text);

}  // namespace cloud::rope
