#pragma once

#include <random>

#include "tscr/corpus.hpp"
#include "tscr/tensor.hpp"

namespace tscr {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

/// Normal(0, stddev) resampled until |x| <= 2 * stddev.
Tensor truncated_normal_tensor(Shape shape, double stddev, Rng& rng);

/// Derives an independent stream from a base seed and a tag, so that one
/// 64-bit seed can drive init, masking and dropout separately.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace tscr
