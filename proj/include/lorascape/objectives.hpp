#pragma once

#include "lorascape/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lorascape {

/// Twice-differentiable scalar function of a MatrixTuple.
///
/// Objectives are immutable after construction and safe to evaluate from
/// several threads at once.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::vector<Shape> shapes() const = 0;
  virtual double value(const MatrixTuple& x) const = 0;
  virtual MatrixTuple gradient(const MatrixTuple& x) const = 0;
  /// The Hessian applied to a direction, as a tuple of the same shapes.
  virtual MatrixTuple hessian_vector(const MatrixTuple& x, const MatrixTuple& d) const = 0;

  /// Bilinear form d2^T H(x) d1.
  double hessian_cross(const MatrixTuple& x, const MatrixTuple& d1, const MatrixTuple& d2) const;
  double hessian_quadratic(const MatrixTuple& x, const MatrixTuple& d) const;

  virtual std::optional<MatrixTuple> known_minimizer() const { return std::nullopt; }
  virtual std::string name() const = 0;

  /// Number of samples in the empirical risk, or 0 when the objective is not
  /// a finite sum.  value() is the mean over all samples.
  virtual std::size_t num_samples() const { return 0; }
  /// Mean loss over the given sample indices.  Throws InvalidInput when the
  /// objective is not a finite sum.
  virtual double batch_value(const MatrixTuple& x, const std::vector<std::size_t>& idx) const;
  virtual MatrixTuple batch_gradient(const MatrixTuple& x,
                                     const std::vector<std::size_t>& idx) const;

  MatrixTuple zeros() const { return MatrixTuple::zeros(shapes()); }
  void require_shapes(const MatrixTuple& x) const;
};

using ObjectivePtr = std::shared_ptr<const Objective>;

/// f(X) = 0.5 vec(X - target)^T H vec(X - target), vec over the flattened tuple.
class QuadraticObjective : public Objective {
 public:
  QuadraticObjective(Matrix hessian, MatrixTuple target);

  std::vector<Shape> shapes() const override { return target_.shapes(); }
  double value(const MatrixTuple& x) const override;
  MatrixTuple gradient(const MatrixTuple& x) const override;
  MatrixTuple hessian_vector(const MatrixTuple& x, const MatrixTuple& d) const override;
  std::optional<MatrixTuple> known_minimizer() const override { return target_; }
  std::string name() const override { return "quadratic"; }

  const Matrix& hessian() const { return hessian_; }
  const MatrixTuple& target() const { return target_; }
  /// Extreme Hessian eigenvalues; these bound the RSC/RSM constants for every r, D.
  double min_eigenvalue() const { return min_eig_; }
  double max_eigenvalue() const { return max_eig_; }

 private:
  Matrix hessian_;
  MatrixTuple target_;
  double min_eig_ = 0.0;
  double max_eig_ = 0.0;
};

/// H = Q diag(spectrum) Q^T with a seeded Haar-orthogonal Q.
std::shared_ptr<const QuadraticObjective> quadratic_objective(const std::vector<double>& spectrum,
                                                              const MatrixTuple& target,
                                                              std::uint64_t seed);
/// Explicit symmetric Hessian over the flattened tuple.
std::shared_ptr<const QuadraticObjective> quadratic_objective(const Matrix& hessian,
                                                              const MatrixTuple& target);

/// f(X) = (1/2N) sum_i (<G_i, X - M>)^2 on a single m x n layer.
class MatrixSensingObjective : public Objective {
 public:
  MatrixSensingObjective(std::vector<Matrix> sensing, Matrix planted);

  std::vector<Shape> shapes() const override { return {shape_of(planted_)}; }
  double value(const MatrixTuple& x) const override;
  MatrixTuple gradient(const MatrixTuple& x) const override;
  MatrixTuple hessian_vector(const MatrixTuple& x, const MatrixTuple& d) const override;
  std::optional<MatrixTuple> known_minimizer() const override { return MatrixTuple(planted_); }
  std::string name() const override { return "matrix_sensing"; }

  std::size_t num_samples() const override { return sensing_.size(); }
  double batch_value(const MatrixTuple& x, const std::vector<std::size_t>& idx) const override;
  MatrixTuple batch_gradient(const MatrixTuple& x,
                             const std::vector<std::size_t>& idx) const override;

  const std::vector<Matrix>& sensing() const { return sensing_; }
  const Matrix& planted() const { return planted_; }

 private:
  std::vector<Matrix> sensing_;
  Matrix planted_;
};

/// Seeded Gaussian G_i (entries N(0,1)) and planted M = P Q^T of the given rank.
std::shared_ptr<const MatrixSensingObjective> matrix_sensing_objective(Index num_measurements,
                                                                      Shape shape,
                                                                      Index planted_rank,
                                                                      std::uint64_t seed);
std::shared_ptr<const MatrixSensingObjective> matrix_sensing_objective(std::vector<Matrix> sensing,
                                                                      Matrix planted);

struct Sample {
  Vector input;
  Vector target;
};

struct MlpWidths {
  Index d_in = 0;
  Index d_hidden = 0;
  Index d_out = 0;
};

/// Squared-loss risk (1/N) sum_i 0.5 ||W2 tanh(W1 x_i) - y_i||^2 of a two-layer
/// tanh network, as a function of an additive update X to W1 (tuned_layer 0)
/// or W2 (tuned_layer 1).  Frozen weights are seeded Gaussians scaled by
/// 1/sqrt(fan_in).
class MlpObjective : public Objective {
 public:
  MlpObjective(MlpWidths widths, std::vector<Sample> data, int tuned_layer,
               std::uint64_t weight_seed);

  std::vector<Shape> shapes() const override;
  double value(const MatrixTuple& x) const override;
  MatrixTuple gradient(const MatrixTuple& x) const override;
  MatrixTuple hessian_vector(const MatrixTuple& x, const MatrixTuple& d) const override;
  std::string name() const override { return "mlp"; }

  std::size_t num_samples() const override { return data_.size(); }
  double batch_value(const MatrixTuple& x, const std::vector<std::size_t>& idx) const override;
  MatrixTuple batch_gradient(const MatrixTuple& x,
                             const std::vector<std::size_t>& idx) const override;

  /// Network output with the update x applied to the tuned layer.
  Vector predict(const Vector& input, const Matrix& x) const;

  const Matrix& w1() const { return w1_; }
  const Matrix& w2() const { return w2_; }
  int tuned_layer() const { return tuned_layer_; }
  const std::vector<Sample>& data() const { return data_; }

 private:
  double sample_loss(const Matrix& x, const Sample& s) const;
  void accumulate_gradient(const Matrix& x, const Sample& s, Matrix& out) const;

  MlpWidths widths_;
  std::vector<Sample> data_;
  int tuned_layer_;
  Matrix w1_;  // d_hidden x d_in
  Matrix w2_;  // d_out x d_hidden
};

std::shared_ptr<const MlpObjective> mlp_objective(MlpWidths widths, std::vector<Sample> data,
                                                  int tuned_layer, std::uint64_t weight_seed);

/// Inputs N(0,1); targets produced by the frozen network itself, so the
/// objective built with the same widths and weight_seed has minimum 0 at X = 0.
std::vector<Sample> realizable_dataset(MlpWidths widths, std::size_t count,
                                       std::uint64_t weight_seed, std::uint64_t data_seed);
/// Inputs and targets both N(0,1).
std::vector<Sample> random_dataset(MlpWidths widths, std::size_t count, std::uint64_t seed);
/// CSV with header x_0..x_{d_in-1}, y_0..y_{d_out-1} and one row per sample.
std::vector<Sample> load_dataset_csv(const std::string& path, MlpWidths widths);

/// c * f, used to check scaling covariance of the landscape quantities.
ObjectivePtr scaled_objective(ObjectivePtr base, double c);

struct DerivativeCheck {
  double grad_err = 0.0;
  double hess_err = 0.0;
};

/// Central-difference comparison along seeded random unit directions.
///
/// grad_err = max |<grad, d> - (f(x+hd) - f(x-hd)) / 2h| / (1 + |<grad, d>|),
/// hess_err = max |H[d,d] - (f(x+hd) - 2f(x) + f(x-hd)) / h^2| / (1 + |H[d,d]|).
DerivativeCheck derivative_check(const Objective& obj, const MatrixTuple& point, double step,
                                 int probes, std::uint64_t seed);

enum class RegularizerForm { nuclear, factored };

/// f + lambda ||.||_* (nuclear) or g(A, B) = f(AB^T) + lambda/2 (||A||^2 + ||B||^2)
/// (factored).  Both values are available in either form; the form selects
/// which solver accepts the objective.
class RegularizedObjective {
 public:
  RegularizedObjective(ObjectivePtr base, double lambda, RegularizerForm form);

  const Objective& base() const { return *base_; }
  ObjectivePtr base_ptr() const { return base_; }
  double lambda() const { return lambda_; }
  RegularizerForm form() const { return form_; }

  /// f(X) + lambda * sum_l ||X_l||_*
  double nuclear_value(const MatrixTuple& x) const;

  double factored_value(const FactorTuple& f) const;
  FactorTuple factored_gradient(const FactorTuple& f) const;
  /// Gradient of the minibatch loss plus the full regularizer gradient.
  FactorTuple factored_batch_gradient(const FactorTuple& f,
                                      const std::vector<std::size_t>& idx) const;
  /// Hessian of g at f applied to the direction d = (U, V).
  FactorTuple factored_hessian_vector(const FactorTuple& f, const FactorTuple& d) const;

  void require_factor_shapes(const FactorTuple& f) const;

 private:
  FactorTuple lift_gradient(const FactorTuple& f, const MatrixTuple& grad) const;

  ObjectivePtr base_;
  double lambda_;
  RegularizerForm form_;
};

}  // namespace lorascape
