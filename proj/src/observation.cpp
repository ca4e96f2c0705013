#include "cloud/observation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace cloud::rope {

namespace {

template <class Fn>
void for_each_lit_pixel(const RopeState& state, std::size_t image_size, Fn&& fn) {
  const auto size = static_cast<std::ptrdiff_t>(image_size);
  const double r2 = kDiskRadius * kDiskRadius;
  for (const auto& g : state.geoms) {
    const auto c0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(g.x - kDiskRadius - 0.5)));
    const auto c1 = std::min<std::ptrdiff_t>(size - 1, static_cast<std::ptrdiff_t>(std::ceil(g.x + kDiskRadius)));
    const auto r0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(g.y - kDiskRadius - 0.5)));
    const auto r1 = std::min<std::ptrdiff_t>(size - 1, static_cast<std::ptrdiff_t>(std::ceil(g.y + kDiskRadius)));
    for (auto r = r0; r <= r1; ++r) {
      for (auto c = c0; c <= c1; ++c) {
        const double dx = static_cast<double>(c) + 0.5 - g.x;
        const double dy = static_cast<double>(r) + 0.5 - g.y;
        if (dx * dx + dy * dy <= r2) fn(static_cast<std::size_t>(r) * image_size + static_cast<std::size_t>(c));
      }
    }
  }
}

}  // namespace

std::size_t observation_size(ObsKind kind, std::size_t geom_count, std::size_t image_size) {
  return kind == ObsKind::Coords ? 2 * geom_count : image_size * image_size;
}

Observation render(const RopeState& state, ObsKind kind, std::size_t image_size) {
  Observation obs{kind, {}};
  if (kind == ObsKind::Coords) {
    const double scale = static_cast<double>(image_size);
    obs.values.reserve(2 * state.geoms.size());
    for (const auto& g : state.geoms) {
      obs.values.push_back(g.x / scale);
      obs.values.push_back(g.y / scale);
    }
    return obs;
  }
  obs.values.assign(image_size * image_size, 0.0);
  for_each_lit_pixel(state, image_size, [&](std::size_t k) { obs.values[k] = 1.0; });
  return obs;
}

Tensor render_batch(std::span<const RopeState* const> states, ObsKind kind,
                    std::size_t image_size) {
  if (states.empty()) throw ShapeError("render_batch: no states");
  const auto features = observation_size(kind, states.front()->geoms.size(), image_size);
  std::vector<double> data;
  data.reserve(states.size() * features);
  for (const auto* s : states) {
    auto obs = render(*s, kind, image_size);
    if (obs.values.size() != features) throw ShapeError("render_batch: geom counts differ");
    data.insert(data.end(), obs.values.begin(), obs.values.end());
  }
  return Tensor::matrix(states.size(), features, std::move(data));
}

PackedRaster::PackedRaster(const RopeState& state, std::size_t image_size)
    : words_((image_size * image_size + 63) / 64, 0) {
  for_each_lit_pixel(state, image_size,
                     [&](std::size_t k) { words_[k / 64] |= std::uint64_t{1} << (k % 64); });
  for (auto w : words_) ones_ += static_cast<std::size_t>(std::popcount(w));
}

std::size_t PackedRaster::squared_distance(const PackedRaster& other) const {
  std::size_t diff = 0;
  for (std::size_t i = 0; i < words_.size(); ++i) {
    diff += static_cast<std::size_t>(std::popcount(words_[i] ^ other.words_[i]));
  }
  return diff;
}

}  // namespace cloud::rope
