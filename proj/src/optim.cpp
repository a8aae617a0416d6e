#include "lorascape/optim.hpp"

#include "lorascape/errors.hpp"
#include "lorascape/matcore.hpp"
#include "lorascape/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace lorascape {

InitScheme InitScheme::zero_b(double c, std::uint64_t seed) {
  InitScheme s;
  s.kind = InitKind::zero_b;
  s.c = c;
  s.seed = seed;
  return s;
}

InitScheme InitScheme::gaussian(double mean_a, double std_a, double mean_b, double std_b,
                                std::uint64_t seed) {
  InitScheme s;
  s.kind = InitKind::gaussian;
  s.mean_a = mean_a;
  s.std_a = std_a;
  s.mean_b = mean_b;
  s.std_b = std_b;
  s.seed = seed;
  return s;
}

FactorTuple make_init(const InitScheme& scheme, const std::vector<Shape>& shapes, Index r) {
  if (r <= 0) throw InvalidInput("make_init: rank must be positive");
  if (shapes.empty()) throw InvalidInput("make_init: no layers");
  FactorTuple out;
  out.reserve(shapes.size());
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const Shape& s = shapes[l];
    if (s.rows <= 0 || s.cols <= 0) throw InvalidInput("make_init: empty layer shape");
    Rng rng(derive_seed(scheme.seed, l));
    FactorPair p;
    if (scheme.kind == InitKind::zero_b) {
      if (!(scheme.c >= 0.0)) throw InvalidInput("make_init: c must be nonnegative");
      p.a = scheme.c > 0 ? uniform_matrix(rng, s.rows, r, -scheme.c, scheme.c)
                         : Matrix::Zero(s.rows, r);
      p.b = Matrix::Zero(s.cols, r);
    } else {
      if (!(scheme.std_a >= 0.0) || !(scheme.std_b >= 0.0))
        throw InvalidInput("make_init: std must be nonnegative");
      p.a = gaussian_matrix(rng, s.rows, r, scheme.mean_a, scheme.std_a);
      p.b = gaussian_matrix(rng, s.cols, r, scheme.mean_b, scheme.std_b);
    }
    out.push_back(std::move(p));
  }
  return out;
}

double RunConfig::rate_at(long step) const {
  if (schedule == Schedule::constant || max_steps <= 0) return learning_rate;
  const double frac = static_cast<double>(step) / static_cast<double>(max_steps);
  return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
}

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_steps: return "max_steps";
    case RunStatus::diverged: return "diverged";
  }
  return "unknown";
}

namespace {

void validate(const RunConfig& cfg, double lambda) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
    throw InvalidInput("learning rate must be finite and >= 0");
  if (cfg.max_steps < 0) throw InvalidInput("max_steps must be >= 0");
  if (!(cfg.grad_tol > 0.0)) throw InvalidInput("grad_tol must be positive");
  if (cfg.stride <= 0) throw InvalidInput("stride must be positive");
  if (cfg.weight_decay && *cfg.weight_decay != lambda)
    throw InvalidInput("weight_decay in the run config differs from the objective's lambda");
}

std::vector<double> layer_norms(const MatrixTuple& x) {
  std::vector<double> out;
  out.reserve(x.size());
  for (const auto& m : x.layers()) out.push_back(m.norm());
  return out;
}

double factor_grad_norm(const FactorTuple& g) { return summed_norm(g); }

/// Per-epoch shuffled minibatches without replacement.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : n_(n), batch_(batch), seed_(seed), order_(n) {}

  std::vector<std::size_t> next() {
    if (pos_ == 0 || pos_ >= n_) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      Rng rng(derive_seed(seed_, epoch_++));
      std::shuffle(order_.begin(), order_.end(), rng);
      pos_ = 0;
    }
    const std::size_t end = std::min(n_, pos_ + batch_);
    std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return idx;
  }

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_ = 0;
};

}  // namespace

FactoredResult factored_gd(const RegularizedObjective& obj, const FactorTuple& init,
                           const RunConfig& cfg, const StepObserver& observer) {
  if (obj.form() != RegularizerForm::factored)
    throw InvalidInput("factored_gd requires the factored objective form");
  validate(cfg, obj.lambda());
  obj.require_factor_shapes(init);
  const Objective& f = obj.base();
  const double lambda = obj.lambda();
  const std::size_t n = f.num_samples();
  const bool minibatch = cfg.batch_size > 0 && n > 0 && cfg.batch_size < n;
  if (cfg.batch_size > 0 && n == 0)
    throw InvalidInput("minibatch requested but the objective is not a finite sum");
  BatchSampler sampler(n, minibatch ? cfg.batch_size : n, cfg.seed);

  FactoredResult res;
  res.trajectory.stride = cfg.stride;
  FactorTuple cur = init;

  for (long t = 0;; ++t) {
    const MatrixTuple x = product(cur);
    res.trajectory.norm_history.push_back(layer_norms(x));
    const bool snapshot_step = t % cfg.stride == 0 || t == cfg.max_steps;

    // full gradient for the stopping rule; in minibatch mode only at snapshots
    std::optional<MatrixTuple> full_grad;
    double gn = std::numeric_limits<double>::quiet_NaN();
    if (!minibatch || snapshot_step) {
      full_grad = f.gradient(x);
      FactorTuple g;
      g.reserve(cur.size());
      for (std::size_t l = 0; l < cur.size(); ++l)
        g.push_back({(*full_grad)[l] * cur[l].b + lambda * cur[l].a,
                     (*full_grad)[l].transpose() * cur[l].a + lambda * cur[l].b});
      gn = factor_grad_norm(g);
    }
    const bool converged = std::isfinite(gn) && gn <= cfg.grad_tol;
    const bool finite = all_finite(cur);
    double loss = std::numeric_limits<double>::quiet_NaN();
    const bool need_loss = finite && (snapshot_step || converged || t == cfg.max_steps);
    if (need_loss) loss = f.value(x) + 0.5 * lambda * squared_norm(cur);
    const bool diverged = !finite || (need_loss && !std::isfinite(loss));
    const bool stop = converged || diverged || t == cfg.max_steps;
    if (snapshot_step || stop)
      res.trajectory.snapshots.push_back({t, x, cur, loss, gn});
    if (stop) {
      res.status = diverged    ? RunStatus::diverged
                   : converged ? RunStatus::converged
                               : RunStatus::max_steps;
      res.steps = t;
      break;
    }

    MatrixTuple batch_grad;
    if (minibatch)
      batch_grad = f.batch_gradient(x, sampler.next());
    else
      batch_grad = std::move(*full_grad);
    if (observer) observer({t, &cur, &batch_grad});

    const double mu = cfg.rate_at(t);
    FactorTuple next;
    next.reserve(cur.size());
    for (std::size_t l = 0; l < cur.size(); ++l) {
      const Matrix& g = batch_grad[l];
      next.push_back({cur[l].a - mu * (g * cur[l].b + lambda * cur[l].a),
                      cur[l].b - mu * (g.transpose() * cur[l].a + lambda * cur[l].b)});
    }
    cur = std::move(next);
  }
  res.final = cur;
  return res;
}

FactoredResult factored_gd(const RegularizedObjective& obj, const InitScheme& init, Index r,
                           const RunConfig& cfg, const StepObserver& observer) {
  return factored_gd(obj, make_init(init, obj.base().shapes(), r), cfg, observer);
}

ProxResult prox_gradient(const RegularizedObjective& obj, const MatrixTuple& init,
                         const RunConfig& cfg) {
  if (obj.form() != RegularizerForm::nuclear)
    throw InvalidInput("prox_gradient requires the nuclear objective form");
  validate(cfg, obj.lambda());
  if (!(cfg.learning_rate > 0.0)) throw InvalidInput("prox_gradient: learning rate must be > 0");
  if (cfg.batch_size > 0 && cfg.batch_size < obj.base().num_samples())
    throw InvalidInput("prox_gradient is full-batch only");
  const Objective& f = obj.base();
  f.require_shapes(init);
  const double lambda = obj.lambda();

  ProxResult res;
  res.trajectory.stride = cfg.stride;
  MatrixTuple cur = init;
  double last_move = std::numeric_limits<double>::quiet_NaN();

  for (long t = 0;; ++t) {
    res.trajectory.norm_history.push_back(layer_norms(cur));
    const bool finite = cur.all_finite();
    const bool converged = t > 0 && last_move <= cfg.grad_tol * cfg.rate_at(t - 1);
    const bool stop = !finite || converged || t == cfg.max_steps;
    if (t % cfg.stride == 0 || stop) {
      const double loss = finite ? obj.nuclear_value(cur) : std::numeric_limits<double>::quiet_NaN();
      const double gmap = t > 0 ? last_move / cfg.rate_at(t - 1) : last_move;
      res.trajectory.snapshots.push_back({t, cur, {}, loss, gmap});
    }
    if (stop) {
      res.status = !finite ? RunStatus::diverged
                   : converged ? RunStatus::converged
                               : RunStatus::max_steps;
      res.steps = t;
      break;
    }
    const double mu = cfg.rate_at(t);
    const MatrixTuple grad = f.gradient(cur);
    MatrixTuple next = cur;
    for (std::size_t l = 0; l < cur.size(); ++l) {
      const Matrix step = cur[l] - mu * grad[l];
      next[l] = step.allFinite() ? matcore::svt_prox(step, mu * lambda) : step;
    }
    last_move = (next - cur).frobenius_norm();
    if (!std::isfinite(last_move)) last_move = std::numeric_limits<double>::infinity();
    cur = std::move(next);
  }
  res.final = cur;
  return res;
}

std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream out;
  out.precision(17);
  const std::size_t layers = traj.snapshots.empty() ? 0 : traj.snapshots.front().x.size();
  out << "step,loss,grad_norm";
  for (std::size_t l = 0; l < layers; ++l) out << ",rank_" << l;
  for (std::size_t l = 0; l < layers; ++l) out << ",fro_" << l;
  out << '\n';
  for (const auto& s : traj.snapshots) {
    out << s.step << ',' << s.loss << ',' << s.grad_norm;
    for (std::size_t l = 0; l < layers; ++l)
      out << ',' << (s.x[l].allFinite() ? matcore::truncated_rank(s.x[l]) : -1);
    for (std::size_t l = 0; l < layers; ++l) out << ',' << s.x[l].norm();
    out << '\n';
  }
  return out.str();
}

}  // namespace lorascape
