#include "lorascape/matcore.hpp"

#include "lorascape/errors.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace lorascape::matcore {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entries");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput(std::string(what) + ": shape mismatch");
}

Eigen::JacobiSVD<Matrix> thin_svd(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericalError("SVD did not converge", static_cast<int>(m.rows() + m.cols()));
  return svd;
}

}  // namespace

Matrix CompactSvd::reconstruct(Index rows, Index cols) const {
  if (rank() == 0) return Matrix::Zero(rows, cols);
  return left * singulars.asDiagonal() * right.transpose();
}

CompactSvd compact_svd(const Matrix& m, double sv_floor) {
  require_finite(m, "compact_svd");
  if (!(sv_floor >= 0.0)) throw InvalidInput("compact_svd: sv_floor must be nonnegative");
  CompactSvd out;
  if (m.size() == 0) {
    out.left = Matrix::Zero(m.rows(), 0);
    out.right = Matrix::Zero(m.cols(), 0);
    return out;
  }
  const auto svd = thin_svd(m);
  const Vector& s = svd.singularValues();
  Index k = 0;
  while (k < s.size() && s(k) > sv_floor) ++k;
  out.singulars = s.head(k);
  out.left = svd.matrixU().leftCols(k);
  out.right = svd.matrixV().leftCols(k);
  return out;
}

Vector singular_values(const Matrix& m) {
  require_finite(m, "singular_values");
  if (m.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(m);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge", 0);
  return svd.singularValues();
}

Index truncated_rank(const Matrix& m, double threshold) {
  if (!(threshold > 0.0)) throw InvalidInput("truncated_rank: threshold must be positive");
  const Vector s = singular_values(m);
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index k = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) / s(0) > threshold) ++k;
  return k;
}

Index numerical_rank(const Matrix& m, double abs_floor) {
  const Vector s = singular_values(m);
  return (s.array() > abs_floor).count();
}

double nuclear_norm(const Matrix& m) { return singular_values(m).sum(); }

double spectral_norm(const Matrix& m) {
  const Vector s = singular_values(m);
  return s.size() == 0 ? 0.0 : s(0);
}

Matrix project_rank(const Matrix& m, Index k) {
  if (k < 0) throw InvalidInput("project_rank: k must be nonnegative");
  const CompactSvd svd = compact_svd(m);
  const Index keep = std::min(k, svd.rank());
  if (keep == 0) return Matrix::Zero(m.rows(), m.cols());
  return svd.left.leftCols(keep) * svd.singulars.head(keep).asDiagonal() *
         svd.right.leftCols(keep).transpose();
}

Matrix svt_prox(const Matrix& m, double tau) {
  if (!(tau >= 0.0)) throw InvalidInput("svt_prox: tau must be nonnegative");
  if (tau == 0.0) {
    require_finite(m, "svt_prox");
    return m;
  }
  const CompactSvd svd = compact_svd(m, tau);
  if (svd.rank() == 0) return Matrix::Zero(m.rows(), m.cols());
  const Vector shrunk = (svd.singulars.array() - tau).matrix();
  return svd.left * shrunk.asDiagonal() * svd.right.transpose();
}

double nuclear_subgradient_residual(const Matrix& x, const Matrix& g, double lambda,
                                    double sv_floor) {
  require_same_shape(x, g, "nuclear_subgradient_residual");
  require_finite(g, "nuclear_subgradient_residual");
  if (!(lambda >= 0.0)) throw InvalidInput("nuclear_subgradient_residual: lambda must be >= 0");
  const CompactSvd svd = compact_svd(x, sv_floor);
  const Matrix& L = svd.left;
  const Matrix& R = svd.right;
  // W = (I - LL^T) g (I - RR^T)
  Matrix w = g - L * (L.transpose() * g);
  w -= (w * R) * R.transpose();
  Matrix e = g - w;
  if (svd.rank() > 0) e -= lambda * L * R.transpose();
  return e.norm() + std::max(0.0, spectral_norm(w) - lambda);
}

FactorPair balanced_factors(const Matrix& x, Index r) {
  if (r <= 0) throw InvalidInput("balanced_factors: r must be positive");
  const CompactSvd svd = compact_svd(x, kExactRankFloor);
  if (svd.rank() > r)
    throw RankOverflow("balanced_factors: rank " + std::to_string(svd.rank()) +
                       " exceeds factor width " + std::to_string(r));
  FactorPair out{Matrix::Zero(x.rows(), r), Matrix::Zero(x.cols(), r)};
  const Index k = svd.rank();
  if (k > 0) {
    const Vector root = svd.singulars.cwiseSqrt();
    out.a.leftCols(k) = svd.left * root.asDiagonal();
    out.b.leftCols(k) = svd.right * root.asDiagonal();
  }
  return out;
}

SMatrixResult s_matrix(const Matrix& x, const Matrix& grad, double lambda, double sv_floor) {
  require_same_shape(x, grad, "s_matrix");
  require_finite(grad, "s_matrix");
  if (!(lambda >= 0.0)) throw InvalidInput("s_matrix: lambda must be >= 0");
  const CompactSvd svd = compact_svd(x, sv_floor);
  SMatrixResult out;
  out.s = grad;
  if (svd.rank() == 0) return out;
  out.s += lambda * svd.left * svd.right.transpose();
  out.alignment_residual =
      (svd.left.transpose() * out.s).norm() + (out.s * svd.right).norm();
  return out;
}

Matrix orthonormal_complement(const Matrix& q) {
  const Index m = q.rows();
  const Index r = q.cols();
  if (r == 0) return Matrix::Identity(m, m);
  if (r > m) throw InvalidInput("orthonormal_complement: more columns than rows");
  Eigen::HouseholderQR<Matrix> qr(q);
  const Matrix full = qr.householderQ() * Matrix::Identity(m, m);
  return full.rightCols(m - r);
}

Matrix ComplementDecomposition::reconstruct() const {
  Matrix x = u * v.transpose();
  const Index k = sigma.size();
  if (k > 0)
    x += complement_left.leftCols(k) * sigma.asDiagonal() *
         complement_right.leftCols(k).transpose();
  return x;
}

ComplementDecomposition complement_decomposition(const Matrix& x, const Matrix& u,
                                                 const Matrix& v) {
  if (u.rows() != x.rows() || v.rows() != x.cols() || u.cols() != v.cols())
    throw InvalidInput("complement_decomposition: incompatible shapes");
  require_finite(x, "complement_decomposition");
  ComplementDecomposition out;
  out.u = u;
  out.v = v;
  out.hypothesis_residual = (x * v - u).norm() + (x.transpose() * u - v).norm();
  const Matrix ut = orthonormal_complement(u);
  const Matrix vt = orthonormal_complement(v);
  const Matrix inner = ut.transpose() * x * vt;
  if (inner.size() == 0) {
    out.complement_left = ut;
    out.complement_right = vt;
    return out;
  }
  Eigen::JacobiSVD<Matrix> svd(inner, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.info() != Eigen::Success) throw NumericalError("SVD did not converge", 0);
  out.sigma = svd.singularValues();
  out.complement_left = ut * svd.matrixU();
  out.complement_right = vt * svd.matrixV();
  return out;
}

}  // namespace lorascape::matcore
