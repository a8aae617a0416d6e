#include "lorascape/constants.hpp"

#include "lorascape/errors.hpp"
#include "lorascape/matcore.hpp"
#include "lorascape/parallel.hpp"
#include "lorascape/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lorascape {

std::vector<MatrixTuple> sample_lowrank_ball(const MatrixTuple& x_star, Index r, double d,
                                             std::size_t n, std::uint64_t seed, bool loose) {
  if (r < 1) throw InvalidInput("sample_lowrank_ball: r must be >= 1");
  if (!(d > 0.0) || !std::isfinite(d)) throw InvalidInput("sample_lowrank_ball: d must be > 0");
  if (x_star.empty()) throw InvalidInput("sample_lowrank_ball: empty reference");

  std::vector<matcore::CompactSvd> support;
  for (const auto& layer : x_star.layers()) {
    support.push_back(matcore::compact_svd(layer, matcore::kExactRankFloor));
    if (!loose && support.back().rank() > r)
      throw InvalidInput("sample_lowrank_ball: rank(x_star) exceeds r in total-rank mode");
  }

  std::vector<MatrixTuple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    std::vector<Matrix> delta;
    for (std::size_t l = 0; l < x_star.size(); ++l) {
      const Index m = x_star[l].rows(), k = x_star[l].cols();
      Matrix p = gaussian_matrix(rng, m, r);
      Matrix q = gaussian_matrix(rng, k, r);
      if (!loose) {
        const auto& s = support[l];
        const Index inside = s.rank();
        if (inside > 0) {
          p.leftCols(inside) = s.left * gaussian_matrix(rng, inside, inside);
          q.leftCols(inside) = s.right * gaussian_matrix(rng, inside, inside);
        }
      }
      delta.push_back(p * q.transpose());
    }
    MatrixTuple dt(std::move(delta));
    const double norm = dt.frobenius_norm();
    // 1 - U[0, 1) lies in (0, 1]
    const double target = d * (1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    if (norm > 0) dt *= target / norm;
    out.push_back(x_star + dt);
  }
  return out;
}

AlphaEstimate estimate_alpha(const Objective& obj, const MatrixTuple& x_star,
                             const std::vector<MatrixTuple>& samples, unsigned jobs) {
  obj.require_shapes(x_star);
  if (samples.empty()) throw EstimationError("estimate_alpha: no samples");
  const std::size_t layers = x_star.size();
  const MatrixTuple g_star = obj.gradient(x_star);
  // quotient per (sample, layer); NaN marks a skipped pair
  std::vector<std::vector<double>> q(samples.size(), std::vector<double>(layers));
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    obj.require_shapes(samples[i]);
    const MatrixTuple g = obj.gradient(samples[i]);
    for (std::size_t l = 0; l < layers; ++l) {
      const Matrix dx = samples[i][l] - x_star[l];
      const double n2 = dx.squaredNorm();
      q[i][l] = n2 > 0 ? (g[l] - g_star[l]).cwiseProduct(dx).sum() / n2
                       : std::numeric_limits<double>::quiet_NaN();
    }
  });
  AlphaEstimate out;
  out.alpha.assign(layers, std::numeric_limits<double>::infinity());
  for (const auto& row : q)
    for (std::size_t l = 0; l < layers; ++l) {
      if (std::isnan(row[l])) {
        ++out.skipped;
        continue;
      }
      out.alpha[l] = std::min(out.alpha[l], row[l]);
    }
  for (double a : out.alpha)
    if (std::isinf(a)) throw EstimationError("estimate_alpha: every sample coincides with x_star");
  return out;
}

namespace {

constexpr double kDegenerate = 1e-10;

struct Direction {
  Vector u1, u2, v1, v2;
};

Vector unit(Rng& rng, Index n) {
  Vector v = gaussian_matrix(rng, n, 1);
  return v / v.norm();
}

/// D = U X + X V with U = u1 u2^T, V = v1 v2^T.
Matrix direction_matrix(const Direction& dir, const Matrix& x) {
  return dir.u1 * (x.transpose() * dir.u2).transpose() + (x * dir.v1) * dir.v2.transpose();
}

/// Per-layer Rayleigh quotient H_ll(X)[D, D] / ||D||^2.
class LayerQuotient {
 public:
  LayerQuotient(const Objective& obj, const MatrixTuple& x, std::size_t layer)
      : obj_(obj), x_(x), layer_(layer), zero_(MatrixTuple::zeros(x.shapes())) {}

  /// Returns NaN for degenerate directions; fills hd with H[D] restricted to the layer.
  double operator()(const Matrix& d, Matrix* hd = nullptr) const {
    const double n2 = d.squaredNorm();
    if (std::sqrt(n2) < kDegenerate) return std::numeric_limits<double>::quiet_NaN();
    MatrixTuple dt = zero_;
    dt[layer_] = d;
    const MatrixTuple h = obj_.hessian_vector(x_, dt);
    if (hd) *hd = h[layer_];
    return h[layer_].cwiseProduct(d).sum() / n2;
  }

 private:
  const Objective& obj_;
  const MatrixTuple& x_;
  std::size_t layer_;
  MatrixTuple zero_;
};

double maximize_quotient(const LayerQuotient& quot, const Matrix& x, int trials, int steps,
                         Rng& rng) {
  const Index m = x.rows(), n = x.cols();
  Direction best;
  double best_q = std::numeric_limits<double>::quiet_NaN();
  for (int t = 0; t < trials; ++t) {
    Direction dir{unit(rng, m), unit(rng, m), unit(rng, n), unit(rng, n)};
    const double q = quot(direction_matrix(dir, x));
    if (!std::isnan(q) && (std::isnan(best_q) || q > best_q)) {
      best_q = q;
      best = dir;
    }
  }
  if (std::isnan(best_q)) return best_q;

  double eta = 1.0;
  for (int s = 0; s < steps; ++s) {
    const Matrix d = direction_matrix(best, x);
    Matrix hd;
    const double q = quot(d, &hd);
    const double n2 = d.squaredNorm();
    // gradient of the quotient with respect to D, pulled back to the four vectors
    const Matrix g = 2.0 * (hd - q * d) / n2;
    const Vector a = x.transpose() * best.u2;
    const Vector b = x * best.v1;
    Direction grad{g * a, x * (g.transpose() * best.u1), x.transpose() * (g * best.v2),
                   g.transpose() * b};
    const double gnorm = std::sqrt(grad.u1.squaredNorm() + grad.u2.squaredNorm() +
                                   grad.v1.squaredNorm() + grad.v2.squaredNorm());
    if (gnorm < 1e-14) break;
    bool improved = false;
    for (int tries = 0; tries < 30 && !improved; ++tries) {
      const double step = eta / gnorm;
      Direction cand{(best.u1 + step * grad.u1).normalized(), (best.u2 + step * grad.u2).normalized(),
                     (best.v1 + step * grad.v1).normalized(), (best.v2 + step * grad.v2).normalized()};
      const double cq = quot(direction_matrix(cand, x));
      if (!std::isnan(cq) && cq > best_q) {
        best = cand;
        best_q = cq;
        improved = true;
        eta *= 2.0;
      } else {
        eta *= 0.5;
      }
    }
    if (!improved) break;
  }
  return best_q;
}

}  // namespace

BetaEstimate estimate_beta(const Objective& obj, const MatrixTuple& x_star,
                           const std::vector<MatrixTuple>& samples, int inner_trials,
                           int ascent_steps, std::uint64_t seed, unsigned jobs) {
  obj.require_shapes(x_star);
  if (samples.empty()) throw EstimationError("estimate_beta: no samples");
  if (inner_trials <= 0) throw InvalidInput("estimate_beta: inner_trials must be positive");
  if (ascent_steps < 0) throw InvalidInput("estimate_beta: ascent_steps must be >= 0");
  const std::size_t layers = x_star.size();
  std::vector<std::vector<double>> q(samples.size(), std::vector<double>(layers));
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    obj.require_shapes(samples[i]);
    Rng rng(derive_seed(seed, i));
    for (std::size_t l = 0; l < layers; ++l) {
      const LayerQuotient quot(obj, samples[i], l);
      q[i][l] = maximize_quotient(quot, samples[i][l], inner_trials, ascent_steps, rng);
    }
  });
  BetaEstimate out;
  out.beta.assign(layers, -std::numeric_limits<double>::infinity());
  for (const auto& row : q)
    for (std::size_t l = 0; l < layers; ++l) {
      if (std::isnan(row[l])) {
        ++out.skipped;
        continue;
      }
      out.beta[l] = std::max(out.beta[l], row[l]);
    }
  for (double b : out.beta)
    if (std::isinf(b)) throw EstimationError("estimate_beta: every sample was degenerate");
  return out;
}

namespace {

std::vector<double> ratios(const std::vector<double>& alpha, const std::vector<double>& beta) {
  std::vector<double> out;
  for (std::size_t l = 0; l < alpha.size(); ++l)
    out.push_back(alpha[l] > 0 ? beta[l] / alpha[l] : std::numeric_limits<double>::quiet_NaN());
  return out;
}

}  // namespace

ConstantsEstimate estimate_constants(const Objective& obj, const MatrixTuple& x_star, Index r,
                                     std::uint64_t seed, const EstimateOptions& opts) {
  const auto samples = sample_lowrank_ball(x_star, r, opts.d, opts.samples,
                                           derive_seed(seed, 0), opts.loose_rank);
  const AlphaEstimate a = estimate_alpha(obj, x_star, samples, opts.jobs);
  const BetaEstimate b = estimate_beta(obj, x_star, samples, opts.inner_trials,
                                       opts.ascent_steps, derive_seed(seed, 1), opts.jobs);
  ConstantsEstimate est;
  est.alpha = a.alpha;
  est.beta = b.beta;
  est.ratio = ratios(est.alpha, est.beta);
  est.samples = samples.size();
  est.skipped_alpha = a.skipped;
  est.skipped_beta = b.skipped;
  est.r = r;
  est.d = opts.d;
  est.seed = seed;
  est.source = "monte_carlo";
  est.inner_trials = opts.inner_trials;
  est.ascent_steps = opts.ascent_steps;
  est.loose_rank = opts.loose_rank;
  return est;
}

ConstantsEstimate analytic_constants(const QuadraticObjective& obj, Index r, double d) {
  ConstantsEstimate est;
  const std::size_t layers = obj.shapes().size();
  est.alpha.assign(layers, obj.min_eigenvalue());
  est.beta.assign(layers, obj.max_eigenvalue());
  est.ratio = ratios(est.alpha, est.beta);
  est.r = r;
  est.d = d;
  est.source = "analytic";
  return est;
}

std::string constants_csv(const ConstantsEstimate& est) {
  std::ostringstream out;
  out.precision(17);
  out << "layer,alpha,beta,ratio,r,D,samples,seed\n";
  for (std::size_t l = 0; l < est.alpha.size(); ++l) {
    out << l << ',' << est.alpha[l] << ',' << est.beta[l] << ',';
    if (std::isnan(est.ratio[l]))
      out << "NA";
    else
      out << est.ratio[l];
    out << ',' << est.r << ',' << est.d << ',' << est.samples << ',' << est.seed << '\n';
  }
  return out.str();
}

}  // namespace lorascape
