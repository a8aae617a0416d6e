#pragma once

#include "lorascape/objectives.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lorascape {

enum class InitKind { zero_b, gaussian };

/// zero_b: A entrywise uniform on [-c, c], B = 0.
/// gaussian: A ~ N(mean_a, std_a^2), B ~ N(mean_b, std_b^2) entrywise; a zero
/// std gives constant matrices.
struct InitScheme {
  InitKind kind = InitKind::zero_b;
  double c = 0.5;
  double mean_a = 0.0;
  double std_a = 1.0;
  double mean_b = 0.0;
  double std_b = 1.0;
  std::uint64_t seed = 0;

  static InitScheme zero_b(double c, std::uint64_t seed);
  static InitScheme gaussian(double mean_a, double std_a, double mean_b, double std_b,
                             std::uint64_t seed);
};

/// One FactorPair of width r per layer shape.  Each layer draws from its own
/// stream derived from scheme.seed.
FactorTuple make_init(const InitScheme& scheme, const std::vector<Shape>& shapes, Index r);

enum class Schedule { constant, cosine };

struct RunConfig {
  double learning_rate = 1e-2;
  /// Must match the objective's lambda when given.
  std::optional<double> weight_decay;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  long max_steps = 1000;
  double grad_tol = 1e-8;
  Schedule schedule = Schedule::constant;
  std::uint64_t seed = 0;
  /// Keep a snapshot every `stride` steps; the final point is always kept.
  long stride = 100;

  double rate_at(long step) const;
};

enum class RunStatus { converged, max_steps, diverged };
std::string to_string(RunStatus s);

struct Snapshot {
  long step = 0;
  MatrixTuple x;
  /// Empty for the proximal solver.
  FactorTuple factors;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct Trajectory {
  long stride = 1;
  std::vector<Snapshot> snapshots;
  /// Per-layer ||X_t||_F for every step t = 0, 1, ..., last.
  std::vector<std::vector<double>> norm_history;

  const Snapshot& final() const { return snapshots.back(); }
};

/// Passed to the observer after the gradient of each step is formed.
struct StepInfo {
  long step = 0;
  const FactorTuple* factors = nullptr;
  /// Minibatch gradient of f with respect to X = AB^T, per layer.
  const MatrixTuple* batch_gradient = nullptr;
};
using StepObserver = std::function<void(const StepInfo&)>;

struct FactoredResult {
  FactorTuple final;
  Trajectory trajectory;
  RunStatus status = RunStatus::max_steps;
  long steps = 0;
};

struct ProxResult {
  MatrixTuple final;
  Trajectory trajectory;
  RunStatus status = RunStatus::max_steps;
  long steps = 0;
};

/// Gradient descent on g(A, B) with A <- A - mu (grad_X f B + lambda A), same for B.
/// Stops when sum_l ||grad_A g||_F + ||grad_B g||_F <= grad_tol.  With a
/// minibatch the full gradient is only tested at snapshot steps.
FactoredResult factored_gd(const RegularizedObjective& obj, const FactorTuple& init,
                           const RunConfig& cfg, const StepObserver& observer = {});
FactoredResult factored_gd(const RegularizedObjective& obj, const InitScheme& init, Index r,
                           const RunConfig& cfg, const StepObserver& observer = {});

/// X <- prox_{mu lambda ||.||_*}(X - mu grad f(X)) per layer; converged when
/// ||X_{t+1} - X_t||_F <= grad_tol * mu.  Full batch only.
ProxResult prox_gradient(const RegularizedObjective& obj, const MatrixTuple& init,
                         const RunConfig& cfg);

/// Columns step, loss, grad_norm, rank_<l>, fro_<l> (rank at the 1e-4 reporting threshold).
std::string trajectory_csv(const Trajectory& traj);

}  // namespace lorascape
