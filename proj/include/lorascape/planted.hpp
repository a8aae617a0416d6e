#pragma once

#include "lorascape/objectives.hpp"

#include <cstdint>

namespace lorascape {

/// Ill-conditioned 3x3 quadratic with a known rank-1 global minimizer of the
/// nuclear-regularized loss and a rank-2 strict SOSP of the factored loss
/// with r = 2.  Both points are rotated by seeded orthogonal matrices.
struct PlantedInstance {
  std::shared_ptr<const QuadraticObjective> objective;
  double lambda = 0.0;
  Index r = 2;
  Index r_star = 1;
  MatrixTuple x_star;
  MatrixTuple spurious;
  double alpha = 0.0;
  double beta = 0.0;
};

PlantedInstance planted_spurious_instance(std::uint64_t seed);

}  // namespace lorascape
