#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cloud/rope.hpp"
#include "cloud/tensor.hpp"

namespace cloud::rope {

inline constexpr double kDiskRadius = 1.5;

/// Either 2*geom_count coordinates scaled into [0, 1] or an image_size^2
/// grayscale raster (row-major, row = y) with values in {0, 1}.
struct Observation {
  ObsKind kind = ObsKind::Coords;
  std::vector<double> values;
};

Observation render(const RopeState& state, ObsKind kind, std::size_t image_size = 64);

std::size_t observation_size(ObsKind kind, std::size_t geom_count, std::size_t image_size);

/// Stacks rendered observations into an [n, features] tensor.
Tensor render_batch(std::span<const RopeState* const> states, ObsKind kind,
                    std::size_t image_size = 64);

/// Raster packed one bit per pixel; exact for the binary images `render` draws.
class PackedRaster {
 public:
  PackedRaster() = default;
  PackedRaster(const RopeState& state, std::size_t image_size = 64);

  std::size_t popcount() const noexcept { return ones_; }
  /// Squared Euclidean distance between the two rasters as float images.
  std::size_t squared_distance(const PackedRaster& other) const;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t ones_ = 0;
};

}  // namespace cloud::rope
