#include "lorascape/planted.hpp"

#include "lorascape/random.hpp"

namespace lorascape {

namespace {

Vector vec(const Matrix& m) { return m.reshaped(); }

}  // namespace

PlantedInstance planted_spurious_instance(std::uint64_t seed) {
  constexpr double kLambda = 0.1;
  constexpr double kOffDiagonalCurvature = 100.0;
  constexpr double kDiagonalCurvature = 5.0;

  // Canonical basis: spurious point diag(2, 1, 0) with gradient
  // -lambda diag(1, 1, 0) - e3 e3^T, global point diag(0, 0, 0.5) with
  // gradient -lambda e3 e3^T.  H maps the point difference to the gradient
  // difference and is stiff on the off-diagonal entries.
  const Matrix xs = Eigen::Vector3d(2.0, 1.0, 0.0).asDiagonal();
  const Matrix xg = Eigen::Vector3d(0.0, 0.0, 0.5).asDiagonal();
  const Matrix gs = Eigen::Vector3d(-kLambda, -kLambda, -1.0).asDiagonal();
  const Matrix gg = Eigen::Vector3d(0.0, 0.0, -kLambda).asDiagonal();

  const Vector d = vec(xs - xg);
  const Vector e = vec(gs - gg);
  const Vector dh = d.normalized();
  const Matrix proj = Matrix::Identity(9, 9) - dh * dh.transpose();
  Vector k = Vector::Constant(9, kOffDiagonalCurvature);
  for (int i = 0; i < 3; ++i) k(4 * i) = kDiagonalCurvature;
  Matrix h = e * e.transpose() / e.dot(d) + proj * k.asDiagonal() * proj;
  h = 0.5 * (h + h.transpose()).eval();
  const Vector center = vec(xg) - h.ldlt().solve(vec(gg));

  Rng rng(seed);
  const Matrix pl = random_orthogonal(rng, 3);
  const Matrix pr = random_orthogonal(rng, 3);
  // vec(PL X PR^T) = (PR kron PL) vec(X)
  Matrix kron(9, 9);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) kron.block(3 * j, 3 * i, 3, 3) = pr(j, i) * pl;

  const Matrix h_rot = kron * h * kron.transpose();
  const Matrix center_rot = (kron * center).reshaped(3, 3);

  PlantedInstance out;
  out.objective = quadratic_objective(0.5 * (h_rot + h_rot.transpose()), MatrixTuple(center_rot));
  out.lambda = kLambda;
  out.x_star = MatrixTuple(Matrix(pl * xg * pr.transpose()));
  out.spurious = MatrixTuple(Matrix(pl * xs * pr.transpose()));
  out.alpha = out.objective->min_eigenvalue();
  out.beta = out.objective->max_eigenvalue();
  return out;
}

}  // namespace lorascape
