#include "experiments.hpp"

#include "lorascape/constants.hpp"
#include "lorascape/dynamics.hpp"
#include "lorascape/errors.hpp"
#include "lorascape/landscape.hpp"
#include "lorascape/matcore.hpp"
#include "lorascape/optim.hpp"
#include "lorascape/parallel.hpp"
#include "lorascape/planted.hpp"
#include "lorascape/random.hpp"

#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lorascape::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ------------------------------------------------------------------ config access

struct Section {
  const toml::table* table = nullptr;
  std::string name;

  const toml::node* get(std::string_view key) const {
    return table ? table->get(key) : nullptr;
  }
  std::string where(std::string_view key) const {
    return name.empty() ? std::string(key) : name + "." + std::string(key);
  }

  std::optional<double> real(std::string_view key) const {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (!n->is_number()) throw ConfigError(where(key) + " must be a number");
    return *n->value<double>();
  }
  double real(std::string_view key, double fallback) const { return real(key).value_or(fallback); }

  std::optional<std::int64_t> integer(std::string_view key) const {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (!n->is_integer()) throw ConfigError(where(key) + " must be an integer");
    return *n->value<std::int64_t>();
  }
  std::int64_t integer(std::string_view key, std::int64_t fallback) const {
    return integer(key).value_or(fallback);
  }
  std::int64_t positive(std::string_view key, std::int64_t fallback) const {
    const std::int64_t v = integer(key, fallback);
    if (v < 1) throw ConfigError(where(key) + " must be >= 1");
    return v;
  }

  std::optional<bool> boolean(std::string_view key) const {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (!n->is_boolean()) throw ConfigError(where(key) + " must be a boolean");
    return *n->value<bool>();
  }

  std::optional<std::string> string(std::string_view key) const {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    if (!n->is_string()) throw ConfigError(where(key) + " must be a string");
    return *n->value<std::string>();
  }

  std::optional<std::vector<double>> reals(std::string_view key) const {
    const toml::node* n = get(key);
    if (!n) return std::nullopt;
    const toml::array* arr = n->as_array();
    if (!arr) throw ConfigError(where(key) + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& el : *arr) {
      if (!el.is_number()) throw ConfigError(where(key) + " must be an array of numbers");
      out.push_back(*el.value<double>());
    }
    return out;
  }

  void allow(std::initializer_list<std::string_view> keys) const {
    if (!table) return;
    for (const auto& [k, v] : *table) {
      (void)v;
      if (std::find(keys.begin(), keys.end(), k.str()) == keys.end())
        throw ConfigError("unknown key " + where(k.str()));
    }
  }
};

Section section(const toml::table& root, std::string_view name) {
  const toml::node* n = root.get(name);
  if (!n) return {nullptr, std::string(name)};
  const toml::table* t = n->as_table();
  if (!t) throw ConfigError(std::string(name) + " must be a table");
  return {t, std::string(name)};
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

// ------------------------------------------------------------------ objectives

struct Problem {
  std::string kind;
  ObjectivePtr f;
  std::shared_ptr<const QuadraticObjective> quad;
  std::optional<PlantedInstance> planted;
};

std::vector<Shape> quadratic_shapes(const Section& s) {
  std::vector<Shape> shapes;
  if (const toml::node* n = s.get("shapes")) {
    const toml::array* arr = n->as_array();
    if (!arr || arr->empty()) throw ConfigError("objective.shapes must be a nonempty array");
    for (const auto& el : *arr) {
      const toml::array* pair = el.as_array();
      if (!pair || pair->size() != 2 || !(*pair)[0].is_integer() || !(*pair)[1].is_integer())
        throw ConfigError("objective.shapes entries must be [rows, cols]");
      shapes.push_back({*(*pair)[0].value<std::int64_t>(), *(*pair)[1].value<std::int64_t>()});
    }
  } else {
    shapes.push_back({s.positive("rows", 4), s.positive("cols", 4)});
  }
  for (const auto& sh : shapes)
    if (sh.rows < 1 || sh.cols < 1) throw ConfigError("objective shapes must be positive");
  return shapes;
}

Problem build_objective(const toml::table& root, std::uint64_t seed) {
  const Section s = section(root, "objective");
  if (!s.table) throw ConfigError("missing [objective] table");
  Problem p;
  p.kind = s.string("kind").value_or("");
  if (p.kind == "quadratic") {
    s.allow({"kind", "rows", "cols", "shapes", "target_rank", "target_scale", "spectrum",
             "spectrum_min", "spectrum_max"});
    const auto shapes = quadratic_shapes(s);
    Index total = 0;
    for (const auto& sh : shapes) total += sh.rows * sh.cols;
    std::vector<double> spectrum;
    if (auto given = s.reals("spectrum")) {
      spectrum = *given;
      if (static_cast<Index>(spectrum.size()) != total)
        throw ConfigError("objective.spectrum must have one entry per matrix entry");
    } else {
      const double lo = s.real("spectrum_min", 1.0), hi = s.real("spectrum_max", lo);
      if (!(lo > 0.0) || hi < lo) throw ConfigError("need 0 < spectrum_min <= spectrum_max");
      for (Index i = 0; i < total; ++i)
        spectrum.push_back(total == 1 ? lo : lo + (hi - lo) * double(i) / double(total - 1));
    }
    for (double e : spectrum)
      if (!(e > 0.0)) throw ConfigError("objective.spectrum must be positive");
    const double scale = s.real("target_scale", 1.0);
    std::vector<Matrix> targets;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      const Index k = std::min<Index>(s.integer("target_rank", std::min(shapes[l].rows, shapes[l].cols)),
                                      std::min(shapes[l].rows, shapes[l].cols));
      if (k < 0) throw ConfigError("objective.target_rank must be >= 0");
      Rng rng(derive_seed(seed, 1000 + l));
      const Matrix g1 = gaussian_matrix(rng, shapes[l].rows, k);
      const Matrix g2 = gaussian_matrix(rng, shapes[l].cols, k);
      targets.push_back(k == 0 ? Matrix::Zero(shapes[l].rows, shapes[l].cols)
                               : Matrix(scale * g1 * g2.transpose()));
    }
    p.quad = quadratic_objective(spectrum, MatrixTuple(std::move(targets)), derive_seed(seed, 7));
    p.f = p.quad;
  } else if (p.kind == "matrix_sensing") {
    s.allow({"kind", "measurements", "rows", "cols", "planted_rank"});
    p.f = matrix_sensing_objective(s.positive("measurements", 50),
                                   {s.positive("rows", 4), s.positive("cols", 4)},
                                   s.positive("planted_rank", 1), seed);
  } else if (p.kind == "mlp") {
    s.allow({"kind", "d_in", "d_hidden", "d_out", "samples", "tuned_layer", "realizable",
             "data_csv"});
    const MlpWidths w{s.positive("d_in", 4), s.positive("d_hidden", 8), s.positive("d_out", 2)};
    const auto count = static_cast<std::size_t>(s.positive("samples", 64));
    const std::uint64_t weight_seed = derive_seed(seed, 3);
    std::vector<Sample> data;
    if (auto path = s.string("data_csv"))
      data = load_dataset_csv(*path, w);
    else if (s.boolean("realizable").value_or(false))
      data = realizable_dataset(w, count, weight_seed, derive_seed(seed, 4));
    else
      data = random_dataset(w, count, derive_seed(seed, 4));
    const auto layer = s.integer("tuned_layer", 0);
    if (layer != 0 && layer != 1) throw ConfigError("objective.tuned_layer must be 0 or 1");
    p.f = mlp_objective(w, std::move(data), static_cast<int>(layer), weight_seed);
  } else if (p.kind == "planted") {
    s.allow({"kind"});
    p.planted = planted_spurious_instance(seed);
    p.quad = p.planted->objective;
    p.f = p.quad;
  } else {
    throw ConfigError("objective.kind must be one of quadratic, matrix_sensing, mlp, planted");
  }
  return p;
}

bool isotropic(const Problem& p) {
  return p.quad && p.quad->max_eigenvalue() - p.quad->min_eigenvalue() <=
                       1e-12 * p.quad->max_eigenvalue();
}

// ------------------------------------------------------------------ solver pieces

RunConfig run_config(const toml::table& root, std::uint64_t seed) {
  const Section s = section(root, "solver");
  s.allow({"learning_rate", "max_steps", "grad_tol", "batch_size", "schedule", "stride"});
  RunConfig cfg;
  cfg.learning_rate = s.real("learning_rate", cfg.learning_rate);
  cfg.max_steps = s.integer("max_steps", cfg.max_steps);
  cfg.grad_tol = s.real("grad_tol", cfg.grad_tol);
  const auto batch = s.integer("batch_size", 0);
  if (batch < 0) throw ConfigError("solver.batch_size must be >= 0");
  cfg.batch_size = static_cast<std::size_t>(batch);
  const std::string sched = s.string("schedule").value_or("constant");
  if (sched == "constant")
    cfg.schedule = Schedule::constant;
  else if (sched == "cosine")
    cfg.schedule = Schedule::cosine;
  else
    throw ConfigError("solver.schedule must be constant or cosine");
  cfg.stride = s.positive("stride", cfg.stride);
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("solver.learning_rate must be >= 0");
  if (cfg.max_steps < 0) throw ConfigError("solver.max_steps must be >= 0");
  if (!(cfg.grad_tol > 0.0)) throw ConfigError("solver.grad_tol must be > 0");
  cfg.seed = derive_seed(seed, 5);
  return cfg;
}

InitScheme init_scheme(const Section& s, std::uint64_t fallback_seed) {
  s.allow({"name", "kind", "c", "mean_a", "std_a", "mean_b", "std_b", "seed"});
  const std::string kind = s.string("kind").value_or("zero_b");
  const auto seed = static_cast<std::uint64_t>(s.integer("seed", static_cast<std::int64_t>(fallback_seed)));
  InitScheme init;
  if (kind == "zero_b") {
    init = InitScheme::zero_b(s.real("c", 0.5), seed);
  } else if (kind == "gaussian") {
    init = InitScheme::gaussian(s.real("mean_a", 0.0), s.real("std_a", 1.0), s.real("mean_b", 0.0),
                                s.real("std_b", 1.0), seed);
  } else {
    throw ConfigError(s.name + ".kind must be zero_b or gaussian");
  }
  if (!(init.c >= 0.0) || !(init.std_a >= 0.0) || !(init.std_b >= 0.0))
    throw ConfigError(s.name + ": c and standard deviations must be >= 0");
  return init;
}

SospOptions sosp_options(const toml::table& root, std::uint64_t seed) {
  const Section s = section(root, "certificate");
  s.allow({"tol1", "tol2", "eig_iters", "sv_floor"});
  SospOptions o;
  o.tol1 = s.real("tol1", o.tol1);
  o.tol2 = s.real("tol2", o.tol2);
  o.eig_iters = static_cast<int>(s.positive("eig_iters", o.eig_iters));
  o.sv_floor = s.real("sv_floor", o.sv_floor);
  o.seed = derive_seed(seed, 8);
  return o;
}

struct Theory {
  double lambda = 0.0;
  std::optional<std::int64_t> r;
  std::optional<std::int64_t> r_star;
  double d = 5.0;
  std::optional<double> epsilon;
  double delta = 0.0;
  std::string constants;
  EstimateOptions estimate;
};

Theory theory(const toml::table& root, const Problem& p, unsigned jobs) {
  const Section s = section(root, "theory");
  s.allow({"lambda", "lambdas", "r", "r_star", "D", "epsilon", "delta", "constants", "samples",
           "inner_trials", "ascent_steps", "loose_rank"});
  Theory t;
  t.lambda = s.real("lambda", p.planted ? p.planted->lambda : 0.0);
  if (!(t.lambda >= 0.0)) throw ConfigError("theory.lambda must be >= 0");
  t.r = s.integer("r");
  t.r_star = s.integer("r_star");
  if (t.r && *t.r < 1) throw ConfigError("theory.r must be >= 1");
  if (t.r_star && *t.r_star < 1) throw ConfigError("theory.r_star must be >= 1");
  t.d = s.real("D", 5.0);
  if (!(t.d > 0.0)) throw ConfigError("theory.D must be > 0");
  t.epsilon = s.real("epsilon");
  t.delta = s.real("delta", 0.0);
  if (t.epsilon && !(*t.epsilon > 0.0)) throw ConfigError("theory.epsilon must be > 0");
  if (t.epsilon && !(t.delta >= 0.0 && t.delta <= std::pow(*t.epsilon, 3)))
    throw ConfigError("theory.delta must lie in [0, epsilon^3]");
  t.constants = s.string("constants").value_or(p.quad ? "analytic" : "monte_carlo");
  if (t.constants != "analytic" && t.constants != "monte_carlo")
    throw ConfigError("theory.constants must be analytic or monte_carlo");
  if (t.constants == "analytic" && !p.quad)
    throw ConfigError("analytic constants need a quadratic objective");
  t.estimate.samples = static_cast<std::size_t>(s.positive("samples", 1000));
  t.estimate.d = t.d;
  t.estimate.inner_trials = static_cast<int>(s.positive("inner_trials", 32));
  t.estimate.ascent_steps = static_cast<int>(s.integer("ascent_steps", 50));
  t.estimate.loose_rank = s.boolean("loose_rank").value_or(false);
  t.estimate.jobs = jobs;
  return t;
}

Index default_rank(const Problem& p) {
  Index r = 0;
  for (const auto& sh : p.f->shapes()) r = std::max(r, std::min(sh.rows, sh.cols));
  return r;
}

struct Reference {
  MatrixTuple x;
  double value = 0.0;
  std::string source;
};

Reference reference_point(const Problem& p, double lambda, const RunConfig& solver) {
  const RegularizedObjective nuc(p.f, lambda, RegularizerForm::nuclear);
  Reference ref;
  if (p.planted && lambda == p.planted->lambda) {
    ref.x = p.planted->x_star;
    ref.source = "planted";
  } else if (isotropic(p)) {
    const double c = p.quad->min_eigenvalue();
    std::vector<Matrix> layers;
    for (const auto& t : p.quad->target().layers()) layers.push_back(matcore::svt_prox(t, lambda / c));
    ref.x = MatrixTuple(std::move(layers));
    ref.source = "closed_form";
  } else {
    RunConfig cfg;
    cfg.learning_rate = p.quad ? 1.0 / p.quad->max_eigenvalue() : solver.learning_rate;
    cfg.max_steps = std::max<long>(solver.max_steps, 200000);
    cfg.grad_tol = 1e-12;
    cfg.stride = cfg.max_steps;
    const ProxResult res = prox_gradient(nuc, p.f->zeros(), cfg);
    if (res.status == RunStatus::diverged)
      throw NumericalError("reference solve diverged", static_cast<int>(res.steps));
    ref.x = res.final;
    ref.source = res.status == RunStatus::converged ? "prox_gradient" : "prox_gradient_unconverged";
  }
  ref.value = nuc.nuclear_value(ref.x);
  return ref;
}

Index reference_rank(const Reference& ref) {
  Index k = 1;
  for (const auto& l : ref.x.layers()) k = std::max(k, matcore::truncated_rank(l));
  return k;
}

ConstantsEstimate theory_constants(const Problem& p, const Theory& t, const Reference& ref, Index r,
                                   std::uint64_t seed) {
  if (t.constants == "analytic") return analytic_constants(*p.quad, r, t.d);
  return estimate_constants(*p.f, ref.x, r, derive_seed(seed, 9), t.estimate);
}

json constants_json(const ConstantsEstimate& c) {
  return {{"alpha", c.alpha}, {"beta", c.beta}, {"source", c.source}, {"r", c.r}, {"D", c.d},
          {"samples", c.samples}};
}

json unknown_constants() {
  return {{"alpha", nullptr}, {"beta", nullptr}, {"source", "not_computed"}};
}

json layer_summary(const MatrixTuple& x) {
  json out = json::array();
  for (const auto& l : x.layers())
    out.push_back({{"rank", matcore::truncated_rank(l)},
                   {"rank_exact", matcore::numerical_rank(l)},
                   {"fro_norm", l.norm()},
                   {"nuclear_norm", matcore::nuclear_norm(l)}});
  return out;
}

/// trajectory_csv output with a leading run column.
std::string tag_rows(const std::string& csv, const std::string& tag, bool keep_header) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      if (keep_header) out << "run," << line << '\n';
      first = false;
      continue;
    }
    out << tag << ',' << line << '\n';
  }
  return out.str();
}

TheoryInputs theory_inputs(const ConstantsEstimate& c, Index r, Index r_star, const Theory& t) {
  TheoryInputs in;
  in.alpha = c.alpha;
  in.beta = c.beta;
  in.r = r;
  in.r_star = r_star;
  in.lambda = t.lambda;
  in.d = t.d;
  in.constants_source = c.source;
  return in;
}

/// Certificate plus exact (and, when epsilon is set, approximate) classification.
json classify_point(const RegularizedObjective& g, const FactorTuple& f, const TheoryInputs& in,
                    const Theory& t, const Reference& ref, const SospOptions& so,
                    RegimeReport* exact_out = nullptr) {
  const SospCertificate cert = check_sosp(g, f, so);
  const ReferencePoint rp{ref.x, ref.value};
  json out;
  out["certificate"] = to_json(cert);
  out["spectral_bound"] = nullptr;
  if (in.beta.size() == 1 || in.beta.size() == cert.layers.size()) {
    const auto sb = spectral_bound_check(cert, in.beta, t.lambda);
    out["spectral_bound"] = {{"pass", sb.pass}, {"margin", sb.margin}};
  }
  try {
    const RegimeReport rep = classify(cert, in, rp);
    out["classification"] = to_json(rep);
    if (exact_out) *exact_out = rep;
    if (t.epsilon) out["approximate"] = to_json(classify_approx(cert, in, *t.epsilon, t.delta, rp));
  } catch (const InapplicableTheory& e) {
    out["classification"] = {{"verdict", "inapplicable"}, {"reason", e.what()}};
  }
  return out;
}

// ------------------------------------------------------------------ experiments

struct Context {
  const toml::table& root;
  std::uint64_t seed;
  unsigned jobs;
  fs::path dir;
  json report;
};

void solve_full(Context& cx) {
  const Problem p = build_objective(cx.root, cx.seed);
  const Theory t = theory(cx.root, p, cx.jobs);
  RunConfig cfg = run_config(cx.root, cx.seed);
  if (cfg.batch_size != 0) throw ConfigError("solve_full runs full batch only");
  const RegularizedObjective nuc(p.f, t.lambda, RegularizerForm::nuclear);
  const ProxResult res = prox_gradient(nuc, p.f->zeros(), cfg);
  write_file(cx.dir / "trajectory.csv", trajectory_csv(res.trajectory));
  cx.report["status"] = to_string(res.status);
  cx.report["steps"] = res.steps;
  cx.report["lambda"] = t.lambda;
  cx.report["value"] = nuc.nuclear_value(res.final);
  cx.report["layers"] = layer_summary(res.final);
  json resid = json::array();
  const MatrixTuple g = p.f->gradient(res.final);
  for (std::size_t l = 0; l < g.size(); ++l)
    resid.push_back(matcore::nuclear_subgradient_residual(res.final[l], -g[l], t.lambda));
  cx.report["optimality_residual"] = resid;
  cx.report["constants"] = p.quad ? constants_json(analytic_constants(*p.quad, 0, t.d))
                                  : unknown_constants();
}

void solve_lora(Context& cx, bool with_classification) {
  const Problem p = build_objective(cx.root, cx.seed);
  const Theory t = theory(cx.root, p, cx.jobs);
  const RunConfig cfg = run_config(cx.root, cx.seed);
  const InitScheme init = init_scheme(section(cx.root, "init"), derive_seed(cx.seed, 6));
  const Index r = t.r.value_or(default_rank(p));
  const RegularizedObjective g(p.f, t.lambda, RegularizerForm::factored);
  const FactoredResult res = factored_gd(g, init, r, cfg);
  write_file(cx.dir / "trajectory.csv", trajectory_csv(res.trajectory));
  cx.report["status"] = to_string(res.status);
  cx.report["steps"] = res.steps;
  cx.report["lambda"] = t.lambda;
  cx.report["r"] = r;
  const MatrixTuple x = product(res.final);
  cx.report["layers"] = layer_summary(x);
  if (res.status == RunStatus::diverged) {
    cx.report["constants"] = unknown_constants();
    return;
  }
  const SospOptions so = sosp_options(cx.root, cx.seed);
  if (!with_classification) {
    const SospCertificate cert = check_sosp(g, res.final, so);
    cx.report["certificate"] = to_json(cert);
    cx.report["value"] = cert.full_value;
    if (p.quad) {
      const auto c = analytic_constants(*p.quad, r, t.d);
      const auto sb = spectral_bound_check(cert, c.beta, t.lambda);
      cx.report["spectral_bound"] = {{"pass", sb.pass}, {"margin", sb.margin}};
      cx.report["constants"] = constants_json(c);
    } else {
      cx.report["constants"] = unknown_constants();
    }
    return;
  }
  const Reference ref = reference_point(p, t.lambda, cfg);
  const Index r_star = t.r_star.value_or(std::min(reference_rank(ref), r));
  const ConstantsEstimate c = theory_constants(p, t, ref, r, cx.seed);
  const json cls = classify_point(g, res.final, theory_inputs(c, r, r_star, t), t, ref, so);
  for (const auto& [k, v] : cls.items()) cx.report[k] = v;
  cx.report["value"] = cls["certificate"]["full_value"];
  cx.report["reference"] = {{"source", ref.source}, {"value", ref.value}, {"layers", layer_summary(ref.x)}};
  cx.report["constants"] = constants_json(c);
  if (c.source == "monte_carlo") write_file(cx.dir / "constants.csv", constants_csv(c));
}

void estimate(Context& cx) {
  const Problem p = build_objective(cx.root, cx.seed);
  const Theory t = theory(cx.root, p, cx.jobs);
  const RunConfig cfg = run_config(cx.root, cx.seed);
  const Reference ref = reference_point(p, t.lambda, cfg);
  const Index r = t.r.value_or(default_rank(p));
  Theory mc = t;
  if (!section(cx.root, "theory").string("constants")) mc.constants = "monte_carlo";
  const ConstantsEstimate c = theory_constants(p, mc, ref, r, cx.seed);
  write_file(cx.dir / "constants.csv", constants_csv(c));
  cx.report["constants"] = constants_json(c);
  cx.report["ratio"] = c.ratio;
  cx.report["skipped_alpha"] = c.skipped_alpha;
  cx.report["skipped_beta"] = c.skipped_beta;
  cx.report["inner_trials"] = c.inner_trials;
  cx.report["ascent_steps"] = c.ascent_steps;
  cx.report["loose_rank"] = c.loose_rank;
  cx.report["bounds"] = "monte-carlo alpha upper-bounds the RSC constant; beta lower-bounds the RSM constant";
  cx.report["reference"] = {{"source", ref.source}, {"value", ref.value}, {"layers", layer_summary(ref.x)}};
  if (p.quad) cx.report["analytic"] = constants_json(analytic_constants(*p.quad, r, t.d));
}

void sweep_lambda(Context& cx) {
  const Problem p = build_objective(cx.root, cx.seed);
  const Theory t = theory(cx.root, p, cx.jobs);
  const RunConfig cfg = run_config(cx.root, cx.seed);
  if (cfg.batch_size != 0) throw ConfigError("sweep_lambda runs full batch only");
  const auto grid = section(cx.root, "theory").reals("lambdas");
  if (!grid || grid->empty()) throw ConfigError("sweep_lambda needs a nonempty theory.lambdas");
  for (double l : *grid)
    if (!(l >= 0.0)) throw ConfigError("theory.lambdas must be >= 0");

  struct Point {
    ProxResult res;
    double value = 0.0;
    Index rank = 0;
    std::optional<Index> closed_form_rank;
  };
  std::vector<Point> pts(grid->size());
  parallel_for(grid->size(), cx.jobs, [&](std::size_t i) {
    const RegularizedObjective nuc(p.f, (*grid)[i], RegularizerForm::nuclear);
    Point& pt = pts[i];
    pt.res = prox_gradient(nuc, p.f->zeros(), cfg);
    pt.value = nuc.nuclear_value(pt.res.final);
    for (const auto& l : pt.res.final.layers()) pt.rank = std::max(pt.rank, matcore::truncated_rank(l));
    if (isotropic(p)) {
      Index k = 0;
      for (const auto& m : p.quad->target().layers())
        k = std::max(k, matcore::truncated_rank(matcore::svt_prox(m, (*grid)[i] / p.quad->min_eigenvalue())));
      pt.closed_form_rank = k;
    }
  });

  std::ostringstream table, traj;
  table.precision(17);
  table << "lambda,status,steps,rank,closed_form_rank,value\n";
  json points = json::array();
  bool matches = true;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Point& pt = pts[i];
    table << (*grid)[i] << ',' << to_string(pt.res.status) << ',' << pt.res.steps << ',' << pt.rank
          << ',' << (pt.closed_form_rank ? std::to_string(*pt.closed_form_rank) : "NA") << ','
          << pt.value << '\n';
    traj << tag_rows(trajectory_csv(pt.res.trajectory), std::to_string(i), i == 0);
    if (pt.closed_form_rank) matches = matches && *pt.closed_form_rank == pt.rank;
    points.push_back({{"lambda", (*grid)[i]},
                      {"status", to_string(pt.res.status)},
                      {"steps", pt.res.steps},
                      {"rank", pt.rank},
                      {"closed_form_rank", pt.closed_form_rank ? json(*pt.closed_form_rank) : json(nullptr)},
                      {"value", pt.value}});
  }
  // rank against lambda in increasing order
  std::vector<std::size_t> order(grid->size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return (*grid)[a] < (*grid)[b]; });
  bool monotone = true;
  for (std::size_t k = 1; k < order.size(); ++k)
    monotone = monotone && pts[order[k]].rank <= pts[order[k - 1]].rank;

  write_file(cx.dir / "sweep.csv", table.str());
  write_file(cx.dir / "trajectory.csv", traj.str());
  cx.report["points"] = points;
  cx.report["rank_non_increasing"] = monotone;
  cx.report["matches_closed_form"] = isotropic(p) ? json(matches) : json(nullptr);
  cx.report["constants"] = p.quad ? constants_json(analytic_constants(*p.quad, 0, t.d))
                                  : unknown_constants();
}

void sweep_init(Context& cx) {
  const Problem p = build_objective(cx.root, cx.seed);
  const Theory t = theory(cx.root, p, cx.jobs);
  const RunConfig cfg = run_config(cx.root, cx.seed);
  const SospOptions so = sosp_options(cx.root, cx.seed);
  const toml::node* node = cx.root.get("inits");
  const toml::array* arr = node ? node->as_array() : nullptr;
  if (!arr || arr->empty()) throw ConfigError("sweep_init needs a nonempty [[inits]] array");
  std::vector<InitScheme> inits;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const toml::table* tb = (*arr)[i].as_table();
    if (!tb) throw ConfigError("inits entries must be tables");
    const Section s{tb, "inits[" + std::to_string(i) + "]"};
    inits.push_back(init_scheme(s, derive_seed(cx.seed, 100 + i)));
    names.push_back(s.string("name").value_or("run" + std::to_string(i)));
  }
  const Index r = t.r.value_or(default_rank(p));
  const RegularizedObjective g(p.f, t.lambda, RegularizerForm::factored);
  const Reference ref = reference_point(p, t.lambda, cfg);
  const Index r_star = t.r_star.value_or(std::min(reference_rank(ref), r));
  const ConstantsEstimate c = theory_constants(p, t, ref, r, cx.seed);
  const TheoryInputs in = theory_inputs(c, r, r_star, t);

  struct Run {
    FactoredResult res;
    json detail;
    RegimeReport rep;
    bool classified = false;
  };
  std::vector<Run> runs(inits.size());
  parallel_for(inits.size(), cx.jobs, [&](std::size_t i) {
    Run& run = runs[i];
    run.res = factored_gd(g, inits[i], r, cfg);
    if (run.res.status == RunStatus::diverged) return;
    run.detail = classify_point(g, run.res.final, in, t, ref, so, &run.rep);
    run.classified = run.detail["classification"].contains("per_layer");
  });

  std::ostringstream table, traj;
  table.precision(17);
  table << "run,name,kind,status,steps,loss,rank,rank_exact,fro_norm,verdict,theory_verdict,"
           "theory_consistent\n";
  json out = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const Run& run = runs[i];
    const MatrixTuple x = product(run.res.final);
    Index rank = 0, rank_exact = 0;
    for (const auto& l : x.layers()) {
      rank = std::max(rank, matcore::truncated_rank(l));
      rank_exact = std::max(rank_exact, matcore::numerical_rank(l));
    }
    const double loss = run.res.trajectory.final().loss;
    const std::string verdict = run.classified ? to_string(run.rep.verdict) : "not_classified";
    const std::string tverdict = run.classified ? to_string(run.rep.theory_verdict) : "not_classified";
    table << i << ',' << names[i] << ',' << (inits[i].kind == InitKind::zero_b ? "zero_b" : "gaussian")
          << ',' << to_string(run.res.status) << ',' << run.res.steps << ',' << loss << ',' << rank
          << ',' << rank_exact << ',' << x.frobenius_norm() << ',' << verdict << ',' << tverdict << ','
          << (run.classified ? (run.rep.theory_consistent ? "true" : "false") : "NA") << '\n';
    traj << tag_rows(trajectory_csv(run.res.trajectory), std::to_string(i), i == 0);
    json j = {{"name", names[i]},
              {"status", to_string(run.res.status)},
              {"steps", run.res.steps},
              {"loss", loss},
              {"rank", rank},
              {"rank_exact", rank_exact},
              {"fro_norm", x.frobenius_norm()},
              {"verdict", verdict}};
    if (!run.detail.is_null()) j["detail"] = run.detail;
    out.push_back(j);
  }
  write_file(cx.dir / "runs.csv", table.str());
  write_file(cx.dir / "trajectory.csv", traj.str());
  cx.report["runs"] = out;
  cx.report["r"] = r;
  cx.report["r_star"] = r_star;
  cx.report["lambda"] = t.lambda;
  cx.report["reference"] = {{"source", ref.source}, {"value", ref.value}, {"layers", layer_summary(ref.x)}};
  cx.report["constants"] = constants_json(c);
  if (c.source == "monte_carlo") write_file(cx.dir / "constants.csv", constants_csv(c));
}

void rank_dynamics(Context& cx) {
  const Problem p = build_objective(cx.root, cx.seed);
  const Theory t = theory(cx.root, p, cx.jobs);
  RunConfig cfg = run_config(cx.root, cx.seed);
  if (p.f->num_samples() == 0) throw ConfigError("rank_dynamics needs a finite-sum objective");
  if (cfg.batch_size == 0) cfg.batch_size = 1;
  if (!(t.lambda > 0.0)) throw ConfigError("rank_dynamics needs theory.lambda > 0");
  const Section ds = section(cx.root, "dynamics");
  ds.allow({"epsilons"});
  const std::vector<double> eps = ds.reals("epsilons").value_or(std::vector<double>{0.5, 0.1});
  if (eps.empty()) throw ConfigError("dynamics.epsilons must be nonempty");
  for (double e : eps)
    if (!(e > 0.0)) throw ConfigError("dynamics.epsilons must be > 0");
  const auto b = static_cast<long>(cfg.batch_size);
  const Index r = t.r.value_or(default_rank(p));
  InitScheme init = InitScheme::zero_b(0.5, derive_seed(cx.seed, 6));
  if (cx.root.get("init")) init = init_scheme(section(cx.root, "init"), derive_seed(cx.seed, 6));

  // the recursion's lambda is half the per-factor weight decay
  const RegularizedObjective g(p.f, 2.0 * t.lambda, RegularizerForm::factored);
  Index max_rank = 0;
  long observed = 0;
  const FactoredResult res = factored_gd(g, init, r, cfg, [&](const StepInfo& s) {
    for (const auto& l : s.batch_gradient->layers())
      max_rank = std::max(max_rank, matcore::truncated_rank(l, 1e-10));
    ++observed;
  });
  write_file(cx.dir / "trajectory.csv", trajectory_csv(res.trajectory));

  std::string csv;
  json checks = json::array();
  bool all_pass = true;
  for (RankConvention conv : {RankConvention::proof, RankConvention::statement}) {
    for (double e : eps) {
      json j = {{"convention", to_string(conv)}, {"epsilon", e}};
      try {
        const auto rep = rank_dynamics_check(res.trajectory, b, cfg.learning_rate, t.lambda, e, conv);
        const std::string part = rank_dynamics_csv(rep);
        csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
        j["n"] = rep.n;
        j["bound_rank"] = rep.bound_rank;
        j["pass"] = rep.count(CheckpointStatus::pass);
        j["fail"] = rep.count(CheckpointStatus::fail);
        j["not_applicable"] = rep.count(CheckpointStatus::not_applicable);
        j["notes"] = rep.notes;
        if (conv == RankConvention::proof) all_pass = all_pass && rep.all_applicable_pass();
      } catch (const InsufficientHistory& ex) {
        j["error"] = ex.what();
        if (conv == RankConvention::proof) all_pass = false;
      }
      checks.push_back(j);
    }
  }
  write_file(cx.dir / "rank_dynamics.csv", csv);
  cx.report["status"] = to_string(res.status);
  cx.report["steps"] = res.steps;
  cx.report["b"] = b;
  cx.report["mu"] = cfg.learning_rate;
  cx.report["lambda"] = t.lambda;
  cx.report["weight_decay"] = 2.0 * t.lambda;
  cx.report["gradient_rank_max"] = max_rank;
  cx.report["gradient_rank_premise"] = max_rank <= b && observed == res.steps;
  cx.report["checks"] = checks;
  cx.report["proof_convention_pass"] = all_pass;
  cx.report["constants"] = unknown_constants();
}

}  // namespace

RunOutcome run_experiment(const RunOptions& opts) {
  static const std::vector<std::string> kinds{"solve_full",    "solve_lora",  "estimate_constants",
                                              "classify",      "sweep_lambda", "sweep_init",
                                              "rank_dynamics"};
  if (std::find(kinds.begin(), kinds.end(), opts.experiment) == kinds.end())
    throw ConfigError("unknown experiment " + opts.experiment);

  toml::table root;
  try {
    root = toml::parse_file(opts.config_path);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "cannot parse " << opts.config_path << ": " << e.description() << " at "
        << e.source().begin;
    throw ConfigError(msg.str());
  }
  const Section top{&root, ""};
  top.allow({"experiment", "seed", "objective", "solver", "init", "inits", "theory", "certificate",
             "dynamics"});
  if (auto exp = top.string("experiment"); exp && *exp != opts.experiment)
    throw ConfigError("config is for experiment " + *exp + ", not " + opts.experiment);
  if (opts.seed) root.insert_or_assign("seed", *opts.seed);
  const auto seed = top.integer("seed");
  if (!seed) throw ConfigError("seed is required");
  root.insert_or_assign("experiment", opts.experiment);

  std::ostringstream canon;
  canon << root << '\n';
  const std::string hash = hex16(fnv1a(canon.str()));
  const fs::path dir = fs::path(opts.outdir) / opts.experiment / hash;
  const bool fresh = !fs::exists(dir);
  fs::create_directories(dir);

  Context cx{root, static_cast<std::uint64_t>(*seed), std::max(1u, opts.jobs), dir, json::object()};
  cx.report["experiment"] = opts.experiment;
  cx.report["config_hash"] = hash;
  cx.report["seed"] = *seed;
  try {
    write_file(dir / "config.toml", canon.str());
    if (opts.experiment == "solve_full") solve_full(cx);
    else if (opts.experiment == "solve_lora") solve_lora(cx, false);
    else if (opts.experiment == "classify") solve_lora(cx, true);
    else if (opts.experiment == "estimate_constants") estimate(cx);
    else if (opts.experiment == "sweep_lambda") sweep_lambda(cx);
    else if (opts.experiment == "sweep_init") sweep_init(cx);
    else rank_dynamics(cx);
    write_file(dir / "report.json", cx.report.dump(2) + "\n");
  } catch (...) {
    // no half-written run directories
    if (fresh) fs::remove_all(dir);
    throw;
  }
  return {dir.string(), cx.report};
}

}  // namespace lorascape::cli
