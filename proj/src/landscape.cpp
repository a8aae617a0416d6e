#include "lorascape/landscape.hpp"

#include "lorascape/errors.hpp"
#include "lorascape/matcore.hpp"
#include "lorascape/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace lorascape {

// ---------------------------------------------------------------- Lanczos

LanczosResult lanczos_min_eigenvalue(const std::function<Vector(const Vector&)>& op, Index dim,
                                     int max_iters, std::uint64_t seed, double tol) {
  if (dim <= 0) throw InvalidInput("lanczos: dimension must be positive");
  if (max_iters <= 0) throw InvalidInput("lanczos: max_iters must be positive");
  const Index kmax = std::min<Index>(dim, max_iters);
  Rng rng(seed);
  Matrix q(dim, kmax);
  std::vector<double> alpha, beta;

  auto orthogonalize = [&](Vector& w, Index k) {
    for (int pass = 0; pass < 2; ++pass) w -= q.leftCols(k) * (q.leftCols(k).transpose() * w);
  };
  auto fresh = [&](Index k) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      Vector v = gaussian_matrix(rng, dim, 1);
      orthogonalize(v, k);
      const double n = v.norm();
      if (n > 1e-8) return Vector(v / n);
    }
    throw NumericalError("lanczos: cannot extend the Krylov basis", static_cast<int>(k));
  };

  q.col(0) = fresh(0);
  LanczosResult res;
  for (Index j = 0; j < kmax; ++j) {
    Vector w = op(q.col(j));
    if (!w.allFinite()) throw NumericalError("lanczos: operator returned non-finite values",
                                             static_cast<int>(j));
    const double a = q.col(j).dot(w);
    alpha.push_back(a);
    orthogonalize(w, j + 1);
    const double b = w.norm();
    const Index k = j + 1;

    Eigen::SelfAdjointEigenSolver<Matrix> tri;
    Vector diag = Eigen::Map<const Vector>(alpha.data(), k);
    Vector sub = k > 1 ? Vector(Eigen::Map<const Vector>(beta.data(), k - 1)) : Vector(0);
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    if (tri.info() != Eigen::Success)
      throw NumericalError("lanczos: tridiagonal eigensolver failed", static_cast<int>(k));
    const Vector& theta = tri.eigenvalues();
    const double scale = std::max({std::abs(theta(0)), std::abs(theta(k - 1)), 1e-300});
    res.min_eigenvalue = theta(0);
    res.iterations = static_cast<int>(k);
    res.residual = b * std::abs(tri.eigenvectors()(k - 1, 0));
    res.eigenvector = q.leftCols(k) * tri.eigenvectors().col(0);

    const bool breakdown = b <= 1e-12 * scale;
    if (k == dim) {
      res.converged = true;
      break;
    }
    if (!breakdown && res.residual <= tol * scale) {
      res.converged = true;
      break;
    }
    if (k == kmax) break;
    if (breakdown) {
      beta.push_back(0.0);
      q.col(k) = fresh(k);
    } else {
      beta.push_back(b);
      q.col(k) = w / b;
    }
  }
  return res;
}

// ---------------------------------------------------------------- certificates

double LayerCertificate::sigma(Index i) const {
  if (i < 1 || i > singulars.size()) return 0.0;
  return singulars(i - 1);
}

SospCertificate check_sosp(const RegularizedObjective& obj, const FactorTuple& point,
                           const SospOptions& opts) {
  if (obj.form() != RegularizerForm::factored)
    throw InvalidInput("check_sosp requires the factored objective form");
  obj.require_factor_shapes(point);
  if (!all_finite(point)) throw InvalidInput("check_sosp: non-finite point");
  if (opts.eig_iters <= 0) throw InvalidInput("check_sosp: eig_iters must be positive");
  const Objective& f = obj.base();
  const double lambda = obj.lambda();

  SospCertificate cert;
  cert.lambda = lambda;
  cert.sv_floor = opts.sv_floor;
  cert.tol1 = opts.tol1 >= 0 ? opts.tol1 : 1e-6 * (1.0 + f.gradient(f.zeros()).frobenius_norm());
  cert.tol2 = opts.tol2;
  cert.x = product(point);
  cert.grad_f = f.gradient(cert.x);
  cert.full_value = f.value(cert.x) + lambda * cert.x.nuclear_norm();

  FactorTuple g;
  for (std::size_t l = 0; l < point.size(); ++l)
    g.push_back({cert.grad_f[l] * point[l].b + lambda * point[l].a,
                 cert.grad_f[l].transpose() * point[l].a + lambda * point[l].b});
  cert.grad_norm = summed_norm(g);

  // Hessian of g applied to (U, V), with grad f(X) computed once
  auto hv = [&](const Vector& v) {
    const FactorTuple d = unflatten(v, point);
    std::vector<Matrix> dl;
    for (std::size_t l = 0; l < point.size(); ++l)
      dl.push_back(point[l].a * d[l].b.transpose() + d[l].a * point[l].b.transpose());
    const MatrixTuple hd = f.hessian_vector(cert.x, MatrixTuple(std::move(dl)));
    FactorTuple out;
    for (std::size_t l = 0; l < point.size(); ++l) {
      const Matrix& gl = cert.grad_f[l];
      out.push_back({gl * d[l].b + hd[l] * point[l].b + lambda * d[l].a,
                     gl.transpose() * d[l].a + hd[l].transpose() * point[l].a + lambda * d[l].b});
    }
    return flatten(out);
  };
  const Index dim = flatten(point).size();
  const LanczosResult eig = lanczos_min_eigenvalue(hv, dim, opts.eig_iters, opts.seed);
  cert.min_hess_eig = eig.min_eigenvalue;
  cert.eig_converged = eig.converged;
  cert.eig_iterations = eig.iterations;

  for (std::size_t l = 0; l < point.size(); ++l) {
    LayerCertificate lc;
    lc.rank_budget = point[l].rank_budget();
    lc.singulars = matcore::singular_values(cert.x[l]);
    const double s1 = lc.singulars.size() > 0 ? lc.singulars(0) : 0.0;
    const auto sm = matcore::s_matrix(cert.x[l], cert.grad_f[l], lambda, opts.sv_floor * s1);
    lc.s_spectral = matcore::spectral_norm(sm.s);
    lc.s_alignment = sm.alignment_residual;
    lc.balance_residual =
        (point[l].a.transpose() * point[l].a - point[l].b.transpose() * point[l].b).norm();
    lc.grad_f_norm = cert.grad_f[l].norm();
    cert.s_spectral = std::max(cert.s_spectral, lc.s_spectral);
    cert.s_alignment = std::max(cert.s_alignment, lc.s_alignment);
    cert.balance_residual = std::max(cert.balance_residual, lc.balance_residual);
    cert.layers.push_back(std::move(lc));
  }
  cert.is_sosp = cert.grad_norm <= cert.tol1 && cert.min_hess_eig >= -cert.tol2;
  return cert;
}

SospCertificate check_sosp(const RegularizedObjective& obj, const FactorTuple& point, double tol1,
                           double tol2, int eig_iters) {
  SospOptions opts;
  opts.tol1 = tol1;
  opts.tol2 = tol2;
  opts.eig_iters = eig_iters;
  return check_sosp(obj, point, opts);
}

SpectralBoundResult spectral_bound_check(const SospCertificate& cert,
                                         const std::vector<double>& beta, double lambda) {
  if (beta.size() != 1 && beta.size() != cert.layers.size())
    throw InvalidInput("spectral_bound_check: beta must have one entry or one per layer");
  SpectralBoundResult out;
  out.pass = true;
  out.margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < cert.layers.size(); ++l) {
    const LayerCertificate& lc = cert.layers[l];
    const double b = beta.size() == 1 ? beta[0] : beta[l];
    const double margin = lambda + b * lc.sigma(lc.rank_budget) - lc.s_spectral;
    out.margin = std::min(out.margin, margin);
    if (margin < -1e-6) out.pass = false;
  }
  return out;
}

SpectralBoundResult spectral_bound_check(const SospCertificate& cert, double beta, double lambda) {
  return spectral_bound_check(cert, std::vector<double>{beta}, lambda);
}

// ---------------------------------------------------------------- classification

std::string to_string(Regime r) { return r == Regime::special ? "special" : "generic"; }

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::global: return "global";
    case Verdict::spurious: return "spurious";
    case Verdict::indeterminate: return "indeterminate";
  }
  return "unknown";
}

namespace {

constexpr double kValueRelTol = 1e-6;
constexpr double kBoundSlack = 1e-9;

double per_layer(const std::vector<double>& v, std::size_t l) {
  return v.size() == 1 ? v[0] : v[l];
}

void validate_inputs(const SospCertificate& cert, const TheoryInputs& in) {
  const std::size_t layers = cert.layers.size();
  if (in.alpha.empty() || in.beta.empty()) throw InvalidInput("classify: alpha and beta required");
  for (const auto* v : {&in.alpha, &in.beta})
    if (v->size() != 1 && v->size() != layers)
      throw InvalidInput("classify: constants must have one entry or one per layer");
  for (double a : in.alpha)
    if (!(a > 0.0)) throw InapplicableTheory("classify: alpha must be positive");
  for (double b : in.beta)
    if (!(b > 0.0) || !std::isfinite(b)) throw InapplicableTheory("classify: beta must be finite");
  if (in.r_star < 1 || in.r < in.r_star) throw InvalidInput("classify: need r >= r_star >= 1");
  if (!(in.lambda >= 0.0)) throw InvalidInput("classify: lambda must be >= 0");
}

RegimeReport base_report(const SospCertificate& cert, const TheoryInputs& in,
                         const std::optional<ReferencePoint>& ref) {
  RegimeReport rep;
  rep.inputs = in;
  rep.tol1 = cert.tol1;
  rep.tol2 = cert.tol2;
  rep.value = cert.full_value;
  if (ref) {
    if (ref->x_star.shapes() != cert.x.shapes())
      throw InvalidInput("classify: reference shape mismatch");
    rep.reference_known = true;
    rep.reference_value = ref->value;
  }
  if (std::abs(in.lambda - cert.lambda) > 1e-15 * (1.0 + cert.lambda))
    rep.warnings.push_back("lambda differs from the certificate's objective");
  for (std::size_t l = 0; l < cert.layers.size(); ++l) {
    const LayerCertificate& lc = cert.layers[l];
    LayerReport lr;
    lr.alpha = per_layer(in.alpha, l);
    lr.beta = per_layer(in.beta, l);
    lr.sigma_r = lc.sigma(in.r);
    lr.sigma_rstar = lc.sigma(in.r_star);
    lr.rank = (lc.singulars.array() > matcore::kExactRankFloor).count();
    lr.rank_reported = matcore::truncated_rank(cert.x[l]);
    lr.norm = cert.x[l].norm();
    if (ref) lr.measured_distance = (cert.x[l] - ref->x_star[l]).norm();
    rep.per_layer.push_back(lr);
  }
  if (ref && std::isfinite(in.d)) {
    const double dist = (cert.x - ref->x_star).frobenius_norm();
    if (dist > in.d) rep.warnings.push_back("distance precondition ||X - X_star||_F <= D violated");
  }
  if (!cert.is_sosp) rep.warnings.push_back("point is not a second-order stationary point");
  if (!cert.eig_converged) rep.warnings.push_back("Hessian eigenvalue iteration did not converge");
  return rep;
}

/// sum_{s = from+1}^{to} sigma_s^2
double tail_energy(const LayerCertificate& lc, Index from, Index to) {
  double s = 0.0;
  for (Index i = from + 1; i <= std::min<Index>(to, lc.singulars.size()); ++i)
    s += lc.singulars(i - 1) * lc.singulars(i - 1);
  return s;
}

}  // namespace

RegimeReport classify(const SospCertificate& cert, const TheoryInputs& in,
                      const std::optional<ReferencePoint>& ref) {
  validate_inputs(cert, in);
  RegimeReport rep = base_report(cert, in, ref);

  bool all_special = true;
  bool any_flag = false;
  for (std::size_t l = 0; l < cert.layers.size(); ++l) {
    const LayerCertificate& lc = cert.layers[l];
    LayerReport& lr = rep.per_layer[l];
    lr.regime = 2.0 * lr.alpha > lr.beta ? Regime::special : Regime::generic;
    all_special = all_special && lr.regime == Regime::special;
    lr.threshold = 2.0 * lr.alpha / lr.beta * lr.sigma_rstar;
    lr.rank_condition = lr.sigma_r > lr.threshold;
    if (lr.rank_condition) {
      any_flag = true;
      const double denom = 1.0 - 2.0 * lr.alpha * lr.sigma_rstar / (lr.beta * lr.sigma_r);
      lr.distance_bound = std::sqrt(tail_energy(lc, in.r_star, lc.singulars.size()) / denom);
      lr.magnitude_core = std::sqrt(tail_energy(lc, in.r_star, in.r) / denom);
      if (ref) lr.magnitude_bound = lr.magnitude_core - ref->x_star[l].norm();
    }
  }
  rep.regime = all_special ? Regime::special : Regime::generic;
  rep.theory_verdict = (all_special || !any_flag) ? Verdict::global : Verdict::spurious;

  if (!cert.is_sosp || !cert.eig_converged) {
    rep.verdict = Verdict::indeterminate;
    return rep;
  }
  if (!ref) {
    rep.verdict = rep.theory_verdict;
    return rep;
  }
  const double gap = cert.full_value - ref->value;
  const bool matches = gap <= kValueRelTol * std::max(1.0, std::abs(ref->value));
  rep.verdict = matches ? Verdict::global : Verdict::spurious;
  if (rep.verdict == Verdict::spurious) {
    bool witnessed = false;
    if (rep.theory_verdict == Verdict::spurious) {
      for (const auto& lr : rep.per_layer) {
        if (!lr.rank_condition || lr.regime == Regime::special) continue;
        const bool full_rank = lr.rank == in.r;
        const bool dist_ok = lr.measured_distance + kBoundSlack >= lr.distance_bound;
        const bool mag_ok = lr.norm + kBoundSlack >= lr.magnitude_bound;
        witnessed = witnessed || (full_rank && dist_ok && mag_ok);
      }
    }
    rep.theory_consistent = witnessed;
    if (!witnessed) rep.warnings.push_back("spurious point not explained by the rank and distance bounds");
  }
  return rep;
}

RegimeReport classify_approx(const SospCertificate& cert, const TheoryInputs& in, double epsilon,
                             double delta, const std::optional<ReferencePoint>& ref) {
  validate_inputs(cert, in);
  if (!(epsilon > 0.0)) throw InvalidInput("classify_approx: epsilon must be positive");
  if (!(delta >= 0.0)) throw InvalidInput("classify_approx: delta must be >= 0");
  const double eps3 = epsilon * epsilon * epsilon;
  if (delta > eps3) throw InvalidInput("classify_approx: delta exceeds epsilon^3");
  RegimeReport rep = base_report(cert, in, ref);
  rep.approximate = true;
  rep.epsilon = epsilon;
  rep.delta = delta;
  if (delta > eps3 / 10.0) rep.warnings.push_back("delta is above epsilon^3 / 10");

  bool all_special = true;
  bool any_flag = false;
  for (std::size_t l = 0; l < cert.layers.size(); ++l) {
    const LayerCertificate& lc = cert.layers[l];
    LayerReport& lr = rep.per_layer[l];
    lr.regime = 2.0 * lr.alpha >= lr.beta * (1.0 + epsilon) ? Regime::special : Regime::generic;
    all_special = all_special && lr.regime == Regime::special;
    lr.threshold = 2.0 * lr.alpha / (lr.beta * (1.0 + epsilon)) * lr.sigma_rstar;
    lr.floor_threshold = lr.alpha * epsilon / (2.0 * lr.beta * std::sqrt(double(in.r)));
    lr.rank_condition = lr.sigma_r > 0.0 && lr.sigma_r >= std::max(lr.threshold, lr.floor_threshold);
    if (!lr.rank_condition) continue;
    any_flag = true;
    if (lr.sigma_r <= 2.0 * lr.alpha / lr.beta * lr.sigma_rstar) {
      lr.disjunct = "rank_bound";
    } else {
      lr.disjunct = "distance_bound";
      const double denom = 1.0 - 2.0 * lr.alpha * lr.sigma_rstar / (lr.beta * lr.sigma_r);
      const double tail = tail_energy(lc, in.r_star, lc.singulars.size());
      lr.distance_bound = std::sqrt(std::max(0.0, tail - eps3) / denom) - epsilon * epsilon;
    }
  }
  rep.regime = all_special ? Regime::special : Regime::generic;
  rep.theory_verdict = (all_special || !any_flag) ? Verdict::global : Verdict::spurious;

  if (!cert.is_sosp || !cert.eig_converged) {
    rep.verdict = Verdict::indeterminate;
    return rep;
  }
  if (!ref) {
    rep.verdict = rep.theory_verdict;
    return rep;
  }
  // epsilon-global is a per-layer distance statement; the reference is only
  // known to within delta of the exact minimizer.
  bool all_close = true, some_far = false;
  for (const auto& lr : rep.per_layer) {
    all_close = all_close && lr.measured_distance <= epsilon - delta;
    some_far = some_far || lr.measured_distance > epsilon + delta;
  }
  if (all_close) {
    rep.verdict = Verdict::global;
  } else if (some_far) {
    rep.verdict = Verdict::spurious;
    rep.theory_consistent = rep.theory_verdict == Verdict::spurious;
    if (!rep.theory_consistent)
      rep.warnings.push_back("point is not epsilon-global but no layer meets the rank condition");
  } else {
    rep.verdict = Verdict::indeterminate;
    rep.warnings.push_back("distance to the reference is within delta of epsilon");
  }
  return rep;
}

// ---------------------------------------------------------------- JSON

namespace {

nlohmann::json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

}  // namespace

nlohmann::json to_json(const RegimeReport& rep) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& lr : rep.per_layer) {
    json j;
    j["regime"] = to_string(lr.regime);
    j["sigma_r"] = num(lr.sigma_r);
    j["sigma_rstar"] = num(lr.sigma_rstar);
    j["threshold"] = num(lr.threshold);
    j["floor_threshold"] = num(lr.floor_threshold);
    j["rank_condition"] = lr.rank_condition;
    j["distance_bound"] = num(lr.distance_bound);
    j["magnitude_bound"] = num(lr.magnitude_bound);
    j["rank"] = lr.rank;
    j["rank_reported"] = lr.rank_reported;
    j["norm"] = num(lr.norm);
    j["measured_distance"] = num(lr.measured_distance);
    if (!lr.disjunct.empty()) j["disjunct"] = lr.disjunct;
    layers.push_back(j);
  }
  json out;
  out["regime"] = to_string(rep.regime);
  out["verdict"] = to_string(rep.verdict);
  out["theory_verdict"] = to_string(rep.theory_verdict);
  out["theory_consistent"] = rep.theory_consistent;
  out["approximate"] = rep.approximate;
  out["per_layer"] = layers;
  out["constants"] = {{"alpha", rep.inputs.alpha},
                      {"beta", rep.inputs.beta},
                      {"source", rep.inputs.constants_source}};
  out["inputs"] = {{"r", rep.inputs.r},
                   {"r_star", rep.inputs.r_star},
                   {"lambda", rep.inputs.lambda},
                   {"D", num(rep.inputs.d)},
                   {"epsilon", num(rep.epsilon)},
                   {"delta", num(rep.delta)}};
  out["tolerances"] = {{"tol1", rep.tol1},
                       {"tol2", rep.tol2},
                       {"rank_floor", matcore::kExactRankFloor},
                       {"report_rank_threshold", matcore::kReportRankThreshold},
                       {"value_rel_tol", kValueRelTol}};
  out["value"] = num(rep.value);
  out["reference_value"] = num(rep.reference_value);
  out["warnings"] = rep.warnings;
  return out;
}

nlohmann::json to_json(const SospCertificate& cert) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& lc : cert.layers) {
    std::vector<double> s(lc.singulars.data(), lc.singulars.data() + lc.singulars.size());
    layers.push_back({{"singulars", s},
                      {"s_spectral", lc.s_spectral},
                      {"s_alignment", lc.s_alignment},
                      {"balance_residual", lc.balance_residual},
                      {"grad_f_norm", lc.grad_f_norm}});
  }
  return {{"grad_norm", cert.grad_norm},
          {"min_hess_eig", cert.min_hess_eig},
          {"eig_converged", cert.eig_converged},
          {"eig_iterations", cert.eig_iterations},
          {"s_spectral", cert.s_spectral},
          {"s_alignment", cert.s_alignment},
          {"balance_residual", cert.balance_residual},
          {"is_sosp", cert.is_sosp},
          {"tol1", cert.tol1},
          {"tol2", cert.tol2},
          {"full_value", cert.full_value},
          {"layers", layers}};
}

}  // namespace lorascape
