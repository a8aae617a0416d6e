#pragma once

#include "lorascape/types.hpp"

namespace lorascape::matcore {

/// Absolute singular-value floor for exact-rank checks (algebraic identities).
inline constexpr double kExactRankFloor = 1e-12;
/// Relative threshold applied to normalized singular values when reporting rank.
inline constexpr double kReportRankThreshold = 1e-4;

/// Compact SVD: left * diag(singulars) * right^T, singulars positive and
/// sorted nonincreasing.
struct CompactSvd {
  Matrix left;
  Vector singulars;
  Matrix right;

  Index rank() const { return singulars.size(); }
  Matrix reconstruct(Index rows, Index cols) const;
};

/// Keeps every singular triplet with sigma > sv_floor.
/// Throws InvalidInput on non-finite entries, NumericalError if the SVD fails.
CompactSvd compact_svd(const Matrix& m, double sv_floor = 0.0);

/// All min(rows, cols) singular values, nonincreasing.
Vector singular_values(const Matrix& m);

/// Number of singular values of m / sigma_1(m) strictly above threshold.
/// The zero matrix has rank 0.
Index truncated_rank(const Matrix& m, double threshold = kReportRankThreshold);

/// Number of singular values strictly above an absolute floor.
Index numerical_rank(const Matrix& m, double abs_floor = kExactRankFloor);

double nuclear_norm(const Matrix& m);
double spectral_norm(const Matrix& m);

/// Best rank-<=k approximation in Frobenius norm (Eckart-Young-Mirsky).
Matrix project_rank(const Matrix& m, Index k);

/// argmin_X 0.5 ||X - m||_F^2 + tau ||X||_*, i.e. singular-value soft-thresholding.
Matrix svt_prox(const Matrix& m, double tau);

/// Zero iff g lies in the subdifferential of lambda ||.||_* at x.
///
/// g is split as lambda L R^T + W + E with W = (I - LL^T) g (I - RR^T); the
/// residual is ||E||_F + max(0, ||W||_2 - lambda).  L, R are the singular
/// vectors of x above sv_floor.
double nuclear_subgradient_residual(const Matrix& x, const Matrix& g, double lambda,
                                    double sv_floor = kExactRankFloor);

/// Balanced factorization A = L S^{1/2}, B = R S^{1/2}, zero-padded to r columns,
/// so that A B^T = x and A^T A = B^T B.  Throws RankOverflow if rank(x) > r.
FactorPair balanced_factors(const Matrix& x, Index r);

struct SMatrixResult {
  Matrix s;
  /// ||L^T s||_F + ||s R||_F
  double alignment_residual = 0.0;
};

/// s = grad + lambda L_X R_X^T, the part of the gradient that must be
/// orthogonal to both singular subspaces of x at a stationary point.
SMatrixResult s_matrix(const Matrix& x, const Matrix& grad, double lambda,
                       double sv_floor = kExactRankFloor);

/// Orthonormal basis of the orthogonal complement of the column space of q
/// (q is assumed to have orthonormal columns).
Matrix orthonormal_complement(const Matrix& q);

/// For orthonormal U (m x r), V (n x r): x = U V^T + Ut diag(sigma) Vt^T where
/// Ut, Vt span the complements.  Exact when x V = U and x^T U = V.
struct ComplementDecomposition {
  Matrix u;
  Matrix v;
  Matrix complement_left;
  Vector sigma;
  Matrix complement_right;
  /// ||x V - U||_F + ||x^T U - V||_F of the source matrix.
  double hypothesis_residual = 0.0;

  Matrix reconstruct() const;
};

ComplementDecomposition complement_decomposition(const Matrix& x, const Matrix& u,
                                                 const Matrix& v);

}  // namespace lorascape::matcore
