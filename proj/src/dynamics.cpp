#include "lorascape/dynamics.hpp"

#include "lorascape/errors.hpp"
#include "lorascape/matcore.hpp"

#include <cmath>
#include <sstream>

namespace lorascape {

std::string to_string(RankConvention c) {
  return c == RankConvention::proof ? "proof" : "statement";
}

std::string to_string(CheckpointStatus s) {
  switch (s) {
    case CheckpointStatus::pass: return "pass";
    case CheckpointStatus::fail: return "fail";
    case CheckpointStatus::not_applicable: return "not_applicable";
  }
  return "unknown";
}

bool RankDynamicsReport::all_applicable_pass() const { return count(CheckpointStatus::fail) == 0; }

std::size_t RankDynamicsReport::count(CheckpointStatus s) const {
  std::size_t k = 0;
  for (const auto& c : checkpoints) k += c.status == s;
  return k;
}

long proof_window(double mu, double lambda, double epsilon) {
  if (!(mu > 0.0) || !(lambda > 0.0) || !(epsilon > 0.0))
    throw InvalidInput("proof_window: mu, lambda and epsilon must be positive");
  const double c = std::abs(1.0 - 2.0 * mu * lambda);
  if (c >= 1.0) throw InvalidInput("proof_window: |1 - 2 mu lambda| must be below 1");
  if (c == 0.0) return 1;
  const double target = epsilon / 2.0;
  long n = std::max(1L, static_cast<long>(std::floor(std::log(target) / (2.0 * std::log(c)))));
  // settle rounding at the boundary
  while (n > 1 && std::pow(c, 2.0 * double(n - 1)) < target) --n;
  while (!(std::pow(c, 2.0 * double(n)) < target)) ++n;
  return n;
}

long statement_rank(long b, double mu, double lambda, double epsilon) {
  if (b <= 0) throw InvalidInput("statement_rank: b must be positive");
  const double c = 1.0 - mu * lambda;
  if (!(c > 0.0 && c < 1.0)) throw InvalidInput("statement_rank: need 0 < mu lambda < 1");
  if (epsilon >= 4.0) return 0;
  return static_cast<long>(std::ceil(double(b) * std::log(epsilon / 4.0) / std::log(c)));
}

namespace {

double tail_mass(const Matrix& x, long k) {
  const Vector s = matcore::singular_values(x / x.norm());
  if (k >= s.size()) return 0.0;
  return s.tail(s.size() - k).norm();
}

}  // namespace

RankDynamicsReport rank_dynamics_check(const Trajectory& traj, long b, double mu, double lambda,
                                       double epsilon, RankConvention convention) {
  if (b <= 0) throw InvalidInput("rank_dynamics_check: b must be positive");
  if (!(lambda > 0.0)) throw InvalidInput("rank_dynamics_check: lambda must be positive");
  if (!(mu > 0.0) || !(epsilon > 0.0))
    throw InvalidInput("rank_dynamics_check: mu and epsilon must be positive");

  RankDynamicsReport rep;
  rep.convention = convention;
  rep.b = b;
  rep.mu = mu;
  rep.lambda = lambda;
  rep.epsilon = epsilon;
  rep.notes.push_back(
      "statement form uses log(1 - mu lambda) and eps/4; proof form uses (1 - 2 mu lambda) and "
      "eps/2");

  const double decay = 1.0 - 2.0 * mu * lambda;
  if (convention == RankConvention::proof) {
    rep.n = proof_window(mu, lambda, epsilon);
    rep.bound_rank = 2 * rep.n * b;
  } else {
    rep.n = 0;
    rep.bound_rank = statement_rank(b, mu, lambda, epsilon);
  }

  bool any = false;
  for (const auto& snap : traj.snapshots) {
    if (snap.step < rep.n) continue;
    if (static_cast<std::size_t>(snap.step) >= traj.norm_history.size())
      throw InsufficientHistory("rank_dynamics_check: norm history ends before step " +
                                std::to_string(snap.step));
    any = true;
    for (std::size_t l = 0; l < snap.x.size(); ++l) {
      RankCheckpoint cp;
      cp.t = snap.step;
      cp.layer = l;
      cp.n = rep.n;
      cp.epsilon = epsilon;
      cp.bound_rank = rep.bound_rank;
      const double now = snap.x[l].norm();
      if (!(now > 0.0) || !std::isfinite(now)) {
        rep.checkpoints.push_back(cp);
        continue;
      }
      cp.tail_mass = tail_mass(snap.x[l], rep.bound_rank);
      if (convention == RankConvention::proof) {
        const double before = traj.norm_history[static_cast<std::size_t>(snap.step - rep.n)][l];
        cp.norm_ratio = before / now;
        cp.residual_bound = std::pow(decay, 2.0 * double(rep.n)) * cp.norm_ratio;
        if (cp.norm_ratio > 2.0)
          cp.status = CheckpointStatus::not_applicable;
        else
          cp.status = cp.tail_mass <= cp.residual_bound + 1e-9 ? CheckpointStatus::pass
                                                               : CheckpointStatus::fail;
      } else {
        cp.norm_ratio = 1.0;
        cp.residual_bound = epsilon;
        cp.status = cp.tail_mass < epsilon ? CheckpointStatus::pass : CheckpointStatus::fail;
      }
      rep.checkpoints.push_back(cp);
    }
  }
  if (!any)
    throw InsufficientHistory("rank_dynamics_check: no snapshot at or after step " +
                              std::to_string(rep.n));
  return rep;
}

std::string rank_dynamics_csv(const RankDynamicsReport& rep) {
  std::ostringstream out;
  out.precision(17);
  out << "t,layer,n,epsilon,convention,bound_rank,tail_mass,residual_bound,passes\n";
  for (const auto& c : rep.checkpoints) {
    out << c.t << ',' << c.layer << ',' << c.n << ',' << c.epsilon << ',' << to_string(rep.convention)
        << ',' << c.bound_rank << ',' << c.tail_mass << ',' << c.residual_bound << ','
        << to_string(c.status) << '\n';
  }
  return out.str();
}

}  // namespace lorascape
