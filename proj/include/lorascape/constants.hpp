#pragma once

#include "lorascape/objectives.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lorascape {

/// Samples x_star + Delta with ||Delta||_F (tuple norm) uniform on (0, d].
///
/// Default mode keeps rank(x_star^(l) + Delta^(l)) <= r: Delta = P Q^T with r
/// columns, the first rank(x_star^(l)) of them confined to the column and row
/// spaces of x_star^(l).  Loose mode uses unrestricted Gaussian P, Q with r
/// columns, so the sample rank can reach rank(x_star) + r.
std::vector<MatrixTuple> sample_lowrank_ball(const MatrixTuple& x_star, Index r, double d,
                                             std::size_t n, std::uint64_t seed,
                                             bool loose = false);

struct AlphaEstimate {
  std::vector<double> alpha;
  /// Sample/layer pairs skipped because the sample coincides with x_star there.
  std::size_t skipped = 0;
};

/// min over samples of <grad_l f(X_i) - grad_l f(X_star), X_i^(l) - X_star^(l)>
///                     / ||X_i^(l) - X_star^(l)||_F^2, per layer.
AlphaEstimate estimate_alpha(const Objective& obj, const MatrixTuple& x_star,
                             const std::vector<MatrixTuple>& samples, unsigned jobs = 1);

struct BetaEstimate {
  std::vector<double> beta;
  /// Sample/layer pairs where every search direction was degenerate.
  std::size_t skipped = 0;
};

/// max over samples X and rank-1 unit U, V of H(X)[UX + XV, UX + XV] / ||UX + XV||_F^2,
/// per layer.  Each sample tries inner_trials random (U, V) and then runs
/// ascent_steps of projected gradient ascent from the best one.
BetaEstimate estimate_beta(const Objective& obj, const MatrixTuple& x_star,
                           const std::vector<MatrixTuple>& samples, int inner_trials,
                           int ascent_steps, std::uint64_t seed, unsigned jobs = 1);

struct ConstantsEstimate {
  std::vector<double> alpha;
  std::vector<double> beta;
  /// beta / alpha, NaN where alpha <= 0.
  std::vector<double> ratio;
  std::size_t samples = 0;
  std::size_t skipped_alpha = 0;
  std::size_t skipped_beta = 0;
  Index r = 0;
  double d = 0.0;
  std::uint64_t seed = 0;
  /// "analytic" or "monte_carlo".  Monte-Carlo alpha is an upper bound on
  /// the true RSC constant, beta a lower bound on the RSM constant.
  std::string source;
  int inner_trials = 0;
  int ascent_steps = 0;
  bool loose_rank = false;
};

struct EstimateOptions {
  std::size_t samples = 1000;
  double d = 5.0;
  int inner_trials = 32;
  int ascent_steps = 50;
  bool loose_rank = false;
  unsigned jobs = 1;
};

ConstantsEstimate estimate_constants(const Objective& obj, const MatrixTuple& x_star, Index r,
                                     std::uint64_t seed, const EstimateOptions& opts = {});

/// Hessian eigenvalue bounds of a quadratic, valid for every r and D.
ConstantsEstimate analytic_constants(const QuadraticObjective& obj, Index r, double d);

/// Columns layer, alpha, beta, ratio, r, D, samples, seed.
std::string constants_csv(const ConstantsEstimate& est);

}  // namespace lorascape
