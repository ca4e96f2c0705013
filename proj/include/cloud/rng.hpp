#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cloud {

using Rng = std::mt19937_64;

/// Child seed for an independent random stream.
///
/// Every stream in the project is keyed by (global seed, label, index), e.g.
/// ("trajectory", 17) or ("env-noise", 3), so any single trajectory, epoch or
/// episode can be regenerated without replaying the others.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, label, index));
}

double uniform(Rng& rng, double lo, double hi);
double gaussian(Rng& rng, double sigma);
std::size_t uniform_index(Rng& rng, std::size_t n);

}  // namespace cloud
