#pragma once

#include "lorascape/objectives.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace lorascape {

struct LanczosResult {
  double min_eigenvalue = 0.0;
  Vector eigenvector;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
};

/// Smallest eigenvalue of a symmetric operator by Lanczos with full
/// reorthogonalization.  Breakdown restarts from a fresh random vector
/// orthogonal to the current basis, so reaching dim iterations is exact.
LanczosResult lanczos_min_eigenvalue(const std::function<Vector(const Vector&)>& op, Index dim,
                                     int max_iters, std::uint64_t seed, double tol = 1e-10);

struct LayerCertificate {
  /// All min(m, n) singular values of X = AB^T.
  Vector singulars;
  Index rank_budget = 0;
  /// ||S||_2 and ||L^T S||_F + ||S R||_F with S = grad f + lambda L R^T.
  double s_spectral = 0.0;
  double s_alignment = 0.0;
  /// ||A^T A - B^T B||_F
  double balance_residual = 0.0;
  double grad_f_norm = 0.0;

  double sigma(Index i) const;  // 1-based; 0 beyond the last singular value
};

struct SospCertificate {
  /// sum_l ||grad_A g||_F + ||grad_B g||_F
  double grad_norm = 0.0;
  double min_hess_eig = 0.0;
  bool eig_converged = false;
  int eig_iterations = 0;
  /// Maxima over layers.
  double s_spectral = 0.0;
  double s_alignment = 0.0;
  double balance_residual = 0.0;
  std::vector<LayerCertificate> layers;

  double tol1 = 0.0;
  double tol2 = 0.0;
  bool is_sosp = false;

  double lambda = 0.0;
  MatrixTuple x;
  MatrixTuple grad_f;
  /// f(X) + lambda ||X||_* at X = AB^T.
  double full_value = 0.0;
  /// Relative singular-value floor used to define the support of X.
  double sv_floor = 0.0;
};

struct SospOptions {
  /// Negative selects the default 1e-6 (1 + ||grad f(0)||_F).
  double tol1 = -1.0;
  double tol2 = 1e-5;
  int eig_iters = 200;
  std::uint64_t seed = 0;
  /// Singular values below sv_floor * sigma_1 are treated as zero when
  /// forming S; tiny decaying directions otherwise spoil the alignment.
  double sv_floor = 1e-6;
};

SospCertificate check_sosp(const RegularizedObjective& obj, const FactorTuple& point,
                           const SospOptions& opts = {});
SospCertificate check_sosp(const RegularizedObjective& obj, const FactorTuple& point, double tol1,
                           double tol2, int eig_iters);

struct SpectralBoundResult {
  bool pass = false;
  /// min over layers of lambda + beta sigma_r - ||S||_2
  double margin = 0.0;
};

/// ||S_l||_2 <= lambda + beta_l sigma_r(X_l) + 1e-6 in every layer.
SpectralBoundResult spectral_bound_check(const SospCertificate& cert,
                                         const std::vector<double>& beta, double lambda);
SpectralBoundResult spectral_bound_check(const SospCertificate& cert, double beta, double lambda);

enum class Regime { special, generic };
enum class Verdict { global, spurious, indeterminate };
std::string to_string(Regime r);
std::string to_string(Verdict v);

/// alpha, beta are per layer; a single entry is broadcast to every layer.
struct TheoryInputs {
  std::vector<double> alpha;
  std::vector<double> beta;
  Index r = 1;
  Index r_star = 1;
  double lambda = 0.0;
  double d = std::numeric_limits<double>::infinity();
  /// "analytic" or "monte_carlo".
  std::string constants_source = "analytic";
};

/// Known (delta-)global minimizer and its regularized value.
struct ReferencePoint {
  MatrixTuple x_star;
  double value = 0.0;
};

struct LayerReport {
  Regime regime = Regime::generic;
  double alpha = 0.0;
  double beta = 0.0;
  double sigma_r = 0.0;
  double sigma_rstar = 0.0;
  /// (2 alpha / beta) sigma_rstar, or its (1 + eps) form for the approximate classifier.
  double threshold = 0.0;
  /// alpha eps / (2 beta sqrt(r)); zero for the exact classifier.
  double floor_threshold = 0.0;
  bool rank_condition = false;
  /// NaN when the rank condition does not hold.
  double distance_bound = std::numeric_limits<double>::quiet_NaN();
  /// NaN unless the rank condition holds and ||X_star|| is known.
  double magnitude_bound = std::numeric_limits<double>::quiet_NaN();
  double magnitude_core = std::numeric_limits<double>::quiet_NaN();
  /// Absolute-floor (1e-12) rank and reporting (1e-4 relative) rank of X.
  Index rank = 0;
  Index rank_reported = 0;
  double norm = 0.0;
  /// ||X - X_star||_F when a reference is known.
  double measured_distance = std::numeric_limits<double>::quiet_NaN();
  /// Approximate classifier only: which disjunct of the generic branch holds
  /// ("rank_bound" or "distance_bound"), empty otherwise.
  std::string disjunct;
};

struct RegimeReport {
  Regime regime = Regime::generic;
  Verdict verdict = Verdict::indeterminate;
  /// Verdict from the rank and distance bounds alone (before any value comparison).
  Verdict theory_verdict = Verdict::indeterminate;
  bool approximate = false;
  std::vector<LayerReport> per_layer;

  TheoryInputs inputs;
  double epsilon = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();
  double tol1 = 0.0;
  double tol2 = 0.0;

  bool reference_known = false;
  double value = 0.0;
  double reference_value = std::numeric_limits<double>::quiet_NaN();
  /// False when the value comparison contradicts the rank and distance bounds.
  bool theory_consistent = true;
  std::vector<std::string> warnings;
};

/// Exact classifier (rank-r_star global minimizer).
RegimeReport classify(const SospCertificate& cert, const TheoryInputs& in,
                      const std::optional<ReferencePoint>& ref = std::nullopt);

/// Approximate classifier for a rank-r_star delta-global minimizer; requires
/// delta <= eps^3.
RegimeReport classify_approx(const SospCertificate& cert, const TheoryInputs& in, double epsilon,
                             double delta,
                             const std::optional<ReferencePoint>& ref = std::nullopt);

nlohmann::json to_json(const RegimeReport& report);
nlohmann::json to_json(const SospCertificate& cert);

}  // namespace lorascape
