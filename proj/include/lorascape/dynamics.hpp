#pragma once

#include "lorascape/optim.hpp"

#include <string>
#include <vector>

namespace lorascape {

enum class RankConvention { statement, proof };
std::string to_string(RankConvention c);

enum class CheckpointStatus { pass, fail, not_applicable };
std::string to_string(CheckpointStatus s);

struct RankCheckpoint {
  long t = 0;
  std::size_t layer = 0;
  long n = 0;
  double epsilon = 0.0;
  long bound_rank = 0;
  /// sqrt(sum_{i > bound_rank} sigma_i(X_t / ||X_t||_F)^2)
  double tail_mass = 0.0;
  /// Proof: (1 - 2 mu lambda)^{2n} ||X_{t-n}||_F / ||X_t||_F.  Statement: epsilon.
  double residual_bound = 0.0;
  /// ||X_{t-n}||_F / ||X_t||_F
  double norm_ratio = 0.0;
  CheckpointStatus status = CheckpointStatus::not_applicable;
};

struct RankDynamicsReport {
  RankConvention convention = RankConvention::proof;
  long b = 0;
  double mu = 0.0;
  double lambda = 0.0;
  double epsilon = 0.0;
  long n = 0;
  long bound_rank = 0;
  std::vector<RankCheckpoint> checkpoints;
  std::vector<std::string> notes;

  bool all_applicable_pass() const;
  std::size_t count(CheckpointStatus s) const;
};

/// Minimal n with (1 - 2 mu lambda)^{2n} < epsilon / 2.
long proof_window(double mu, double lambda, double epsilon);
/// ceil(b log(epsilon / 4) / log(1 - mu lambda)).
long statement_rank(long b, double mu, double lambda, double epsilon);

/// Checks every snapshot of traj (every layer) at time t >= n.  lambda is the
/// decay in the (1 - 2 mu lambda) recursion; a factored_gd run with weight
/// decay w realises lambda = w / 2.  Checkpoints with ||X_{t-n}|| / ||X_t|| > 2
/// are not applicable.  Throws InsufficientHistory when no snapshot has t >= n.
RankDynamicsReport rank_dynamics_check(const Trajectory& traj, long b, double mu, double lambda,
                                       double epsilon, RankConvention convention);

/// Columns t, n, epsilon, convention, bound_rank, tail_mass, residual_bound, passes.
std::string rank_dynamics_csv(const RankDynamicsReport& report);

}  // namespace lorascape
