#include "cloud/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cloud::eval {

namespace {

void check_counts(const rope::RopeState& a, const rope::RopeState& b) {
  if (a.geoms.size() != b.geoms.size() || a.geoms.empty()) {
    throw std::invalid_argument("geom_error: geom counts differ (" +
                                std::to_string(a.geoms.size()) + " vs " +
                                std::to_string(b.geoms.size()) + ")");
  }
}

}  // namespace

double aligned_geom_error(const rope::RopeState& achieved, const rope::RopeState& target) {
  check_counts(achieved, target);
  double sum = 0.0;
  for (std::size_t i = 0; i < achieved.geoms.size(); ++i) {
    sum += std::hypot(achieved.geoms[i].x - target.geoms[i].x,
                      achieved.geoms[i].y - target.geoms[i].y);
  }
  return sum / static_cast<double>(achieved.geoms.size());
}

double geom_error(const rope::RopeState& achieved, const rope::RopeState& target) {
  check_counts(achieved, target);
  rope::RopeState reversed{{target.geoms.rbegin(), target.geoms.rend()}};
  return std::min(aligned_geom_error(achieved, target), aligned_geom_error(achieved, reversed));
}

}  // namespace cloud::eval
