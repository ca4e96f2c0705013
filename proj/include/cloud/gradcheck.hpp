#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cloud::check {

struct GradCheckConfig {
  std::uint64_t seed = 0;
  std::size_t points = 20;
  /// Coordinates probed per point, drawn over the composite's leaves.
  std::size_t coordinates = 8;
  std::size_t batch = 4;
  double step = 1e-6;
  double tolerance = 1e-4;
  /// Points whose Relu inputs come closer than this to 0 are redrawn.
  double kink_margin = 1e-4;
};

struct GradCheckResult {
  std::string composite;
  std::size_t points = 0;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor); 0 when all three vanish.
double relative_error(double analytic, double numeric, double floor = 0.0);

/// Central-difference check of every differentiable composite the trainer uses:
/// encode_state (coords and raster), encode_action, forward_predict,
/// inverse_predict, forward_nce_loss, inverse_nce_loss, decoder_loss,
/// baseline_regression_loss.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckConfig& config);

}  // namespace cloud::check
