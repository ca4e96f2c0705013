#pragma once

#include "cloud/rope.hpp"

namespace cloud::eval {

inline constexpr double kSuccessThreshold = 4.0;

/// Mean Euclidean distance between index-aligned geoms.
double aligned_geom_error(const rope::RopeState& achieved, const rope::RopeState& target);

/// aligned_geom_error, minimized over the two orientations of `target`
/// (a rope has no canonical head).
double geom_error(const rope::RopeState& achieved, const rope::RopeState& target);

}  // namespace cloud::eval
