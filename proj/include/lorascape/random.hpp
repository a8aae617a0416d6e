#pragma once

#include "lorascape/types.hpp"

#include <cstdint>
#include <random>

namespace lorascape {

using Rng = std::mt19937_64;

/// Independent stream seed derived from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double mean = 0.0, double std = 1.0);
Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double lo, double hi);

/// Haar-distributed orthogonal matrix (QR of a Gaussian with sign fix).
Matrix random_orthogonal(Rng& rng, Index n);

}  // namespace lorascape
