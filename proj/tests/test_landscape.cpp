#include "lorascape/errors.hpp"
#include "lorascape/landscape.hpp"
#include "lorascape/matcore.hpp"
#include "lorascape/optim.hpp"
#include "lorascape/planted.hpp"
#include "lorascape/random.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace lorascape;

namespace {

std::shared_ptr<const QuadraticObjective> identity_quadratic(const Matrix& m) {
  const Index n = m.size();
  return quadratic_objective(Matrix::Identity(n, n), MatrixTuple(m));
}

/// Certificate for a single layer with the given singular values, X = diag.
SospCertificate synthetic_cert(const Vector& singulars, Index rank_budget, double lambda = 0.1) {
  SospCertificate c;
  LayerCertificate lc;
  lc.singulars = singulars;
  lc.rank_budget = rank_budget;
  c.layers.push_back(lc);
  const Index n = singulars.size();
  c.x = MatrixTuple(Matrix(singulars.asDiagonal()));
  c.grad_f = MatrixTuple(Matrix::Zero(n, n));
  c.is_sosp = true;
  c.eig_converged = true;
  c.lambda = lambda;
  return c;
}

TheoryInputs inputs(double alpha, double beta, Index r, Index r_star, double lambda = 0.1) {
  TheoryInputs in;
  in.alpha = {alpha};
  in.beta = {beta};
  in.r = r;
  in.r_star = r_star;
  in.lambda = lambda;
  return in;
}

/// Dense Hessian of the factored loss from central differences of its gradient.
Matrix fd_factored_hessian(const RegularizedObjective& g, const FactorTuple& f, double h = 1e-5) {
  const Vector x0 = flatten(f);
  const Index n = x0.size();
  Matrix hess(n, n);
  for (Index j = 0; j < n; ++j) {
    Vector e = Vector::Zero(n);
    e(j) = h;
    hess.col(j) = (flatten(g.factored_gradient(unflatten(x0 + e, f))) -
                   flatten(g.factored_gradient(unflatten(x0 - e, f)))) / (2 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

}  // namespace

TEST(Lanczos, DiagonalOperator) {
  Vector d(6);
  d << 3, -2.5, 1, 0, 7, -1;
  const auto res =
      lanczos_min_eigenvalue([&](const Vector& v) { return Vector(d.cwiseProduct(v)); }, 6, 50, 1);
  EXPECT_TRUE(res.converged);
  EXPECT_NEAR(res.min_eigenvalue, -2.5, 1e-10);
  EXPECT_NEAR(std::abs(res.eigenvector(1)), 1.0, 1e-6);
}

TEST(Lanczos, RepeatedEigenvaluesSurviveBreakdown) {
  const auto res = lanczos_min_eigenvalue([](const Vector& v) { return Vector(2.0 * v); }, 8, 20, 2);
  EXPECT_TRUE(res.converged);
  EXPECT_NEAR(res.min_eigenvalue, 2.0, 1e-12);
}

TEST(Lanczos, MatchesDenseSolver) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix g = gaussian_matrix(rng, 40, 40);
    const Matrix a = 0.5 * (g + g.transpose());
    const auto res =
        lanczos_min_eigenvalue([&](const Vector& v) { return Vector(a * v); }, 40, 200, trial);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
    EXPECT_NEAR(res.min_eigenvalue, eig.eigenvalues()(0), 1e-8);
  }
}

TEST(CheckSosp, BalancedGlobalMinimizer) {
  Rng rng(4);
  const Matrix m = gaussian_matrix(rng, 4, 2) * gaussian_matrix(rng, 3, 2).transpose();
  const RegularizedObjective g(identity_quadratic(m), 0.0, RegularizerForm::factored);
  const FactorPair f = matcore::balanced_factors(m, 2);
  const auto cert = check_sosp(g, {f});
  EXPECT_LE(cert.grad_norm, 1e-8);
  EXPECT_GE(cert.min_hess_eig, -1e-6);
  EXPECT_TRUE(cert.is_sosp);
  EXPECT_LE(cert.balance_residual, 1e-10);
  EXPECT_LE(cert.s_spectral, 1e-10);
}

TEST(CheckSosp, ZeroProductWithNonzeroAIsStrictSaddle) {
  Rng rng(5);
  const Matrix m = gaussian_matrix(rng, 3, 3);
  const RegularizedObjective g(identity_quadratic(m), 0.0, RegularizerForm::factored);
  const FactorTuple f{{gaussian_matrix(rng, 3, 2), Matrix::Zero(3, 2)}};
  const auto cert = check_sosp(g, f);
  EXPECT_LT(cert.min_hess_eig, 0.0);
  EXPECT_FALSE(cert.is_sosp);
  // witness: U = u_1 e_1^T, V = s v_1 e_1^T with (u_1, v_1) the top singular pair of M
  // gives -2 s sigma_1 + s^2 ||a_1||^2 < 0 for s = sigma_1 / ||a_1||^2
  const auto svd = matcore::compact_svd(m);
  const Vector a1 = f[0].a.col(0);
  const double s = svd.singulars(0) / a1.squaredNorm();
  FactorTuple d{{Matrix::Zero(3, 2), Matrix::Zero(3, 2)}};
  d[0].a.col(0) = svd.left.col(0);
  d[0].b.col(0) = s * svd.right.col(0);
  const Vector hd = flatten(g.factored_hessian_vector(f, d));
  EXPECT_NEAR(hd.dot(flatten(d)), -svd.singulars(0) * svd.singulars(0) / a1.squaredNorm(), 1e-10);
  EXPECT_LT(hd.dot(flatten(d)), 0.0);
}

TEST(CheckSosp, ZeroIsSecondOrderStationaryUnderLargeDecay) {
  Rng rng(6);
  const Matrix m = gaussian_matrix(rng, 3, 4);
  const double lambda = 1.5 * matcore::spectral_norm(m);
  const RegularizedObjective g(identity_quadratic(m), lambda, RegularizerForm::factored);
  const FactorTuple f{{Matrix::Zero(3, 2), Matrix::Zero(4, 2)}};
  const auto cert = check_sosp(g, f);
  EXPECT_TRUE(cert.is_sosp);
  EXPECT_EQ(cert.grad_norm, 0.0);
  // property-3 form on seeded probes: 2<grad f, UV^T> + lambda(|U|^2 + |V|^2) >= 0
  for (int p = 0; p < 50; ++p) {
    const Matrix u = gaussian_matrix(rng, 3, 2), v = gaussian_matrix(rng, 4, 2);
    const double q = 2 * (-m).cwiseProduct(u * v.transpose()).sum() +
                     lambda * (u.squaredNorm() + v.squaredNorm());
    EXPECT_GE(q, 0.0);
  }
  EXPECT_NEAR(cert.min_hess_eig, lambda - matcore::spectral_norm(m), 1e-8);
}

TEST(CheckSosp, HessianEigenvalueMatchesDenseOracle) {
  const MlpWidths w{3, 4, 2};
  const auto base = mlp_objective(w, random_dataset(w, 6, 7), 0, 8);
  const RegularizedObjective g(base, 0.05, RegularizerForm::factored);
  Rng rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    const FactorTuple f{{gaussian_matrix(rng, 4, 2, 0, 0.5), gaussian_matrix(rng, 3, 2, 0, 0.5)}};
    SospOptions opts;
    opts.seed = static_cast<std::uint64_t>(trial);
    const auto cert = check_sosp(g, f, opts);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(fd_factored_hessian(g, f));
    EXPECT_TRUE(cert.eig_converged);
    EXPECT_NEAR(cert.min_hess_eig, eig.eigenvalues()(0), 1e-5);
  }
}

TEST(CheckSosp, RejectsNuclearForm) {
  const RegularizedObjective g(identity_quadratic(Matrix::Ones(2, 2)), 0.1,
                               RegularizerForm::nuclear);
  EXPECT_THROW(check_sosp(g, {{Matrix::Zero(2, 1), Matrix::Zero(2, 1)}}), InvalidInput);
}

TEST(SpectralBound, RankDeficientSospNeedsLambda) {
  Rng rng(10);
  const Matrix m = gaussian_matrix(rng, 3, 3);
  const double lambda = 1.2 * matcore::spectral_norm(m);
  const RegularizedObjective g(identity_quadratic(m), lambda, RegularizerForm::factored);
  const auto cert = check_sosp(g, {{Matrix::Zero(3, 2), Matrix::Zero(3, 2)}});
  ASSERT_TRUE(cert.is_sosp);
  EXPECT_NEAR(cert.s_spectral, matcore::spectral_norm(m), 1e-10);
  const auto res = spectral_bound_check(cert, 1.0, lambda);
  EXPECT_TRUE(res.pass);
  EXPECT_NEAR(res.margin, lambda - matcore::spectral_norm(m), 1e-10);
  EXPECT_FALSE(spectral_bound_check(cert, 1.0, 0.5 * matcore::spectral_norm(m)).pass);
}

TEST(SpectralBound, UnregularizedMinimizerHasZeroS) {
  Rng rng(11);
  const Matrix m = gaussian_matrix(rng, 3, 1) * gaussian_matrix(rng, 2, 1).transpose();
  const RegularizedObjective g(identity_quadratic(m), 0.0, RegularizerForm::factored);
  const auto cert = check_sosp(g, {matcore::balanced_factors(m, 1)});
  EXPECT_LE(cert.s_spectral, 1e-12);
  EXPECT_TRUE(spectral_bound_check(cert, 1.0, 0.0).pass);
}

TEST(SpectralBound, SolverEndpointHasPositiveMargin) {
  const auto base = quadratic_objective({1, 1.5, 2, 2.5, 3, 3.5, 4, 4.5, 5, 5.5, 6, 6.5},
                                        MatrixTuple(Matrix::Ones(4, 3)), 12);
  const double lambda = 0.2;
  const RegularizedObjective g(base, lambda, RegularizerForm::factored);
  RunConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_steps = 100000;
  cfg.grad_tol = 1e-10;
  const auto run = factored_gd(g, InitScheme::gaussian(0, 0.5, 0, 0.5, 13), 2, cfg);
  ASSERT_EQ(run.status, RunStatus::converged);
  const auto cert = check_sosp(g, run.final);
  ASSERT_TRUE(cert.is_sosp);
  const auto res = spectral_bound_check(cert, base->max_eigenvalue(), lambda);
  EXPECT_TRUE(res.pass);
  EXPECT_GT(res.margin, 0.0);
  EXPECT_LE(cert.s_alignment, 1e-6 * (1 + cert.grad_f.frobenius_norm()));
}

TEST(Classify, SpecialRegimeIsGlobal) {
  Vector s(3);
  s << 3, 2, 1;
  const auto rep = classify(synthetic_cert(s, 3), inputs(1, 1, 3, 1));
  EXPECT_EQ(rep.regime, Regime::special);
  EXPECT_EQ(rep.verdict, Verdict::global);
}

TEST(Classify, DistanceBoundArithmetic) {
  Vector s(2);
  s << 1, 1;
  const auto rep = classify(synthetic_cert(s, 2), inputs(1, 4, 2, 1));
  ASSERT_EQ(rep.per_layer.size(), 1u);
  const auto& lr = rep.per_layer[0];
  EXPECT_EQ(rep.regime, Regime::generic);
  EXPECT_NEAR(lr.threshold, 0.5, 1e-15);
  EXPECT_TRUE(lr.rank_condition);
  EXPECT_NEAR(lr.distance_bound, std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(lr.magnitude_core, std::sqrt(2.0), 1e-12);
  EXPECT_EQ(rep.verdict, Verdict::spurious);
}

TEST(Classify, BoundaryFoldsIntoGlobal) {
  Vector s(2);
  s << 1, 0.5;
  // 2 alpha = beta is generic; sigma_r equal to the threshold is not flagged
  const auto rep = classify(synthetic_cert(s, 2), inputs(1, 2, 2, 1));
  EXPECT_EQ(rep.regime, Regime::generic);
  EXPECT_FALSE(rep.per_layer[0].rank_condition);
  EXPECT_EQ(rep.verdict, Verdict::global);
  Vector t(2);
  t << 1, 0.25;
  EXPECT_EQ(classify(synthetic_cert(t, 2), inputs(1, 4, 2, 1)).verdict, Verdict::global);
}

TEST(Classify, NonSospIsIndeterminate) {
  Vector s(2);
  s << 1, 1;
  auto cert = synthetic_cert(s, 2);
  cert.is_sosp = false;
  EXPECT_EQ(classify(cert, inputs(1, 4, 2, 1)).verdict, Verdict::indeterminate);
  cert.is_sosp = true;
  cert.eig_converged = false;
  EXPECT_EQ(classify(cert, inputs(1, 4, 2, 1)).verdict, Verdict::indeterminate);
}

TEST(Classify, InapplicableConstants) {
  Vector s(2);
  s << 1, 1;
  const auto cert = synthetic_cert(s, 2);
  EXPECT_THROW(classify(cert, inputs(0, 4, 2, 1)), InapplicableTheory);
  EXPECT_THROW(classify(cert, inputs(-1, 4, 2, 1)), InapplicableTheory);
  EXPECT_THROW(classify(cert, inputs(1, std::numeric_limits<double>::infinity(), 2, 1)),
               InapplicableTheory);
  EXPECT_THROW(classify(cert, inputs(1, 4, 1, 2)), InvalidInput);
  EXPECT_THROW(classify_approx(cert, inputs(0, 4, 2, 1), 0.1, 0), InapplicableTheory);
}

TEST(Classify, ExhaustiveDichotomy) {
  Rng rng(20);
  std::uniform_real_distribution<double> u(0.01, 5.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const Index r = 1 + trial % 4;
    const Index r_star = 1 + (trial / 4) % r;
    Vector s = uniform_matrix(rng, r + 1, 1, 0.0, 3.0);
    std::sort(s.data(), s.data() + s.size(), std::greater<>());
    if (trial % 7 == 0) s.tail(1).setZero();
    const auto rep = classify(synthetic_cert(s, r), inputs(u(rng), u(rng), r, r_star));
    ASSERT_TRUE(rep.verdict == Verdict::global || rep.verdict == Verdict::spurious);
    if (rep.verdict == Verdict::spurious) {
      EXPECT_EQ(rep.regime, Regime::generic);
      EXPECT_TRUE(rep.per_layer[0].rank_condition);
      EXPECT_GT(rep.per_layer[0].sigma_r, 0.0);
    }
  }
}

TEST(ClassifyApprox, SpecialBranch) {
  Vector s(3);
  s << 2, 1, 0.5;
  const auto rep = classify_approx(synthetic_cert(s, 3), inputs(1, 1.5, 3, 1), 0.2, 0.0);
  EXPECT_EQ(rep.regime, Regime::special);
  EXPECT_EQ(rep.verdict, Verdict::global);
  // 2 alpha = beta (1 + eps) is special for the approximate classifier
  EXPECT_EQ(classify_approx(synthetic_cert(s, 3), inputs(1.2, 2, 3, 1), 0.2, 0.0).regime,
            Regime::special);
}

TEST(ClassifyApprox, FloorThreshold) {
  Vector s(4);
  s << 1, 0.1, 0.05, 0.01;
  const auto rep = classify_approx(synthetic_cert(s, 4), inputs(1, 4, 4, 1), 0.2, 0.0);
  EXPECT_NEAR(rep.per_layer[0].floor_threshold, 0.0125, 1e-15);
  // sigma_4 = 0.01 is under the floor
  EXPECT_FALSE(rep.per_layer[0].rank_condition);
  EXPECT_EQ(rep.verdict, Verdict::global);
  s(3) = 0.0125;
  const auto at = classify_approx(synthetic_cert(s, 4), inputs(1, 4, 4, 1), 0.2, 0.0);
  EXPECT_FALSE(at.per_layer[0].rank_condition);  // threshold 0.5/1.2 still dominates
  s << 0.02, 0.02, 0.02, 0.02;
  const auto flat = classify_approx(synthetic_cert(s, 4), inputs(1, 4, 4, 1), 0.2, 0.0);
  EXPECT_TRUE(flat.per_layer[0].rank_condition);
  EXPECT_EQ(flat.verdict, Verdict::spurious);
}

TEST(ClassifyApprox, DisjunctAndDistanceBound) {
  Vector s(2);
  s << 1, 1;
  const double eps = 0.1;
  const auto rep = classify_approx(synthetic_cert(s, 2), inputs(1, 4, 2, 1), eps, 0.0);
  ASSERT_TRUE(rep.per_layer[0].rank_condition);
  EXPECT_EQ(rep.per_layer[0].disjunct, "distance_bound");
  EXPECT_NEAR(rep.per_layer[0].distance_bound, std::sqrt((1 - 1e-3) / 0.5) - 0.01, 1e-12);
  // sigma_r between the (1 + eps) threshold and the exact one
  s << 1, 0.48;
  const auto mid = classify_approx(synthetic_cert(s, 2), inputs(1, 4, 2, 1), eps, 0.0);
  EXPECT_TRUE(mid.per_layer[0].rank_condition);
  EXPECT_EQ(mid.per_layer[0].disjunct, "rank_bound");
}

TEST(ClassifyApprox, DeltaGate) {
  Vector s(2);
  s << 1, 1;
  const auto cert = synthetic_cert(s, 2);
  EXPECT_THROW(classify_approx(cert, inputs(1, 4, 2, 1), 0.1, 2e-3), InvalidInput);
  EXPECT_THROW(classify_approx(cert, inputs(1, 4, 2, 1), 0.0, 0.0), InvalidInput);
  const auto warned = classify_approx(cert, inputs(1, 4, 2, 1), 0.1, 5e-4);
  EXPECT_FALSE(warned.warnings.empty());
  EXPECT_TRUE(classify_approx(cert, inputs(1, 4, 2, 1), 0.1, 5e-5).warnings.empty());
}

TEST(ClassifyApprox, SmallEpsilonAgreesWithExact) {
  Rng rng(30);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  int compared = 0;
  for (int trial = 0; trial < 500; ++trial) {
    Vector s = uniform_matrix(rng, 3, 1, 0.05, 3.0);
    std::sort(s.data(), s.data() + s.size(), std::greater<>());
    const auto in = inputs(u(rng), u(rng), 3, 1);
    const auto cert = synthetic_cert(s, 3);
    const auto exact = classify(cert, in);
    // skip inputs within 1e-6 of a boundary
    const auto& lr = exact.per_layer[0];
    if (std::abs(2 * in.alpha[0] - in.beta[0]) < 1e-6 || std::abs(lr.sigma_r - lr.threshold) < 1e-6)
      continue;
    const auto approx = classify_approx(cert, in, 1e-9, 0.0);
    EXPECT_EQ(exact.regime, approx.regime);
    EXPECT_EQ(exact.verdict, approx.verdict);
    ++compared;
  }
  EXPECT_GT(compared, 400);
}

TEST(Classify, PlantedSpuriousPoint) {
  const PlantedInstance p = planted_spurious_instance(40);
  const RegularizedObjective g(p.objective, p.lambda, RegularizerForm::factored);
  const RegularizedObjective nuc(p.objective, p.lambda, RegularizerForm::nuclear);
  const ReferencePoint ref{p.x_star, nuc.nuclear_value(p.x_star)};
  const TheoryInputs in = [&] {
    TheoryInputs t = inputs(p.alpha, p.beta, p.r, p.r_star, p.lambda);
    return t;
  }();

  const auto spur = check_sosp(g, {matcore::balanced_factors(p.spurious[0], p.r)});
  ASSERT_TRUE(spur.is_sosp) << spur.grad_norm << " " << spur.min_hess_eig;
  const auto rep = classify(spur, in, ref);
  EXPECT_EQ(rep.regime, Regime::generic);
  EXPECT_EQ(rep.theory_verdict, Verdict::spurious);
  EXPECT_EQ(rep.verdict, Verdict::spurious);
  EXPECT_TRUE(rep.theory_consistent);
  const auto& lr = rep.per_layer[0];
  EXPECT_EQ(lr.rank, p.r);
  EXPECT_GT(lr.sigma_r, lr.threshold);
  EXPECT_GE(lr.measured_distance, lr.distance_bound);
  EXPECT_GE(lr.norm, lr.magnitude_bound);

  const auto glob = check_sosp(g, {matcore::balanced_factors(p.x_star[0], p.r)});
  ASSERT_TRUE(glob.is_sosp);
  const auto grep = classify(glob, in, ref);
  EXPECT_EQ(grep.verdict, Verdict::global);
  EXPECT_EQ(grep.theory_verdict, Verdict::global);

  const auto approx = classify_approx(spur, in, 0.1, 0.0, ref);
  EXPECT_EQ(approx.verdict, Verdict::spurious);
  EXPECT_TRUE(approx.theory_consistent);
  EXPECT_EQ(classify_approx(glob, in, 0.1, 0.0, ref).verdict, Verdict::global);
}

TEST(Classify, SpecialRegimeEndpointsMatchClosedForm) {
  Rng rng(50);
  const Matrix m = gaussian_matrix(rng, 4, 3);
  const auto base = identity_quadratic(m);
  for (double lambda : {0.0, 0.1}) {
    const RegularizedObjective g(base, lambda, RegularizerForm::factored);
    const RegularizedObjective nuc(base, lambda, RegularizerForm::nuclear);
    const MatrixTuple opt(matcore::svt_prox(m, lambda));
    const double f_opt = nuc.nuclear_value(opt);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      RunConfig cfg;
      cfg.learning_rate = 0.05;
      cfg.max_steps = 100000;
      cfg.grad_tol = 1e-10;
      const auto run = factored_gd(g, InitScheme::gaussian(0, 1, 0, 1, seed), 3, cfg);
      ASSERT_EQ(run.status, RunStatus::converged);
      const auto cert = check_sosp(g, run.final);
      const auto rep = classify(cert, inputs(1, 1, 3, 3, lambda), ReferencePoint{opt, f_opt});
      EXPECT_EQ(rep.verdict, Verdict::global);
      EXPECT_NEAR(cert.full_value, f_opt, 1e-6 * std::max(1.0, std::abs(f_opt)));
    }
  }
}

TEST(Classify, ScalingCovariance) {
  const PlantedInstance p = planted_spurious_instance(60);
  const double c = 3.0;
  const RegularizedObjective g(p.objective, p.lambda, RegularizerForm::factored);
  const RegularizedObjective gc(scaled_objective(p.objective, c), c * p.lambda,
                                RegularizerForm::factored);
  for (const MatrixTuple* pt : {&p.spurious, &p.x_star}) {
    const FactorTuple f{matcore::balanced_factors((*pt)[0], p.r)};
    const auto a = check_sosp(g, f);
    const auto b = check_sosp(gc, f);
    EXPECT_NEAR(b.grad_norm, c * a.grad_norm, 1e-12);
    EXPECT_NEAR(b.min_hess_eig, c * a.min_hess_eig, 1e-8);
    const auto ra = classify(a, inputs(p.alpha, p.beta, p.r, p.r_star, p.lambda));
    const auto rb = classify(b, inputs(c * p.alpha, c * p.beta, p.r, p.r_star, c * p.lambda));
    EXPECT_EQ(ra.regime, rb.regime);
    EXPECT_EQ(ra.verdict, rb.verdict);
  }
}

TEST(Json, ReportFieldNames) {
  Vector s(2);
  s << 1, 1;
  auto in = inputs(1, 4, 2, 1);
  in.constants_source = "monte_carlo";
  const auto j = to_json(classify(synthetic_cert(s, 2), in));
  for (const char* key : {"regime", "verdict", "per_layer", "constants", "tolerances"})
    EXPECT_TRUE(j.contains(key)) << key;
  ASSERT_EQ(j["per_layer"].size(), 1u);
  for (const char* key :
       {"sigma_r", "sigma_rstar", "threshold", "distance_bound", "magnitude_bound", "rank"})
    EXPECT_TRUE(j["per_layer"][0].contains(key)) << key;
  EXPECT_EQ(j["constants"]["source"], "monte_carlo");
  EXPECT_EQ(j["verdict"], "spurious");
  EXPECT_EQ(j["regime"], "generic");
  EXPECT_TRUE(j["per_layer"][0]["magnitude_bound"].is_null());
  EXPECT_NO_THROW(to_json(synthetic_cert(s, 2)).dump());
}
