#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace lorascape {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

inline Shape shape_of(const Matrix& m) { return {m.rows(), m.cols()}; }

/// Ordered list of matrices (one per tuned layer) with fixed shapes.
///
/// Norms and inner products are taken over the concatenation of all layers,
/// so frobenius_norm() is the root-sum-of-squares across layers.
class MatrixTuple {
 public:
  MatrixTuple() = default;
  explicit MatrixTuple(std::vector<Matrix> layers) : layers_(std::move(layers)) {}
  explicit MatrixTuple(Matrix single) { layers_.push_back(std::move(single)); }

  static MatrixTuple zeros(const std::vector<Shape>& shapes);

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Matrix& operator[](std::size_t l) { return layers_[l]; }
  const Matrix& operator[](std::size_t l) const { return layers_[l]; }
  std::vector<Matrix>& layers() { return layers_; }
  const std::vector<Matrix>& layers() const { return layers_; }

  std::vector<Shape> shapes() const;
  Index total_size() const;
  bool all_finite() const;

  double squared_norm() const;
  double frobenius_norm() const;
  /// Sum of per-layer nuclear norms.
  double nuclear_norm() const;
  double dot(const MatrixTuple& other) const;

  /// Column-major concatenation of all layers.
  Vector flatten() const;
  static MatrixTuple unflatten(const Vector& v, const std::vector<Shape>& shapes);

  MatrixTuple& operator+=(const MatrixTuple& o);
  MatrixTuple& operator-=(const MatrixTuple& o);
  MatrixTuple& operator*=(double s);

 private:
  std::vector<Matrix> layers_;
};

MatrixTuple operator+(MatrixTuple a, const MatrixTuple& b);
MatrixTuple operator-(MatrixTuple a, const MatrixTuple& b);
MatrixTuple operator*(double s, MatrixTuple a);

/// LoRA factors of one layer: the update is a * b^T.
struct FactorPair {
  Matrix a;  // m x r
  Matrix b;  // n x r

  Index rank_budget() const { return a.cols(); }
  Matrix product() const { return a * b.transpose(); }
};

using FactorTuple = std::vector<FactorPair>;

MatrixTuple product(const FactorTuple& factors);
double squared_norm(const FactorTuple& factors);
/// Sum over layers of ||A||_F + ||B||_F.
double summed_norm(const FactorTuple& factors);
bool all_finite(const FactorTuple& factors);
/// Concatenation of vec(A_l), vec(B_l) over layers.
Vector flatten(const FactorTuple& factors);
/// Inverse of flatten, with shapes taken from like.
FactorTuple unflatten(const Vector& v, const FactorTuple& like);
FactorTuple zeros_like(const FactorTuple& like);

}  // namespace lorascape
