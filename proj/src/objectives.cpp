#include "lorascape/objectives.hpp"

#include "lorascape/errors.hpp"
#include "lorascape/random.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <sstream>

namespace lorascape {

// ---------------------------------------------------------------- Objective

double Objective::hessian_cross(const MatrixTuple& x, const MatrixTuple& d1,
                                const MatrixTuple& d2) const {
  return hessian_vector(x, d1).dot(d2);
}

double Objective::hessian_quadratic(const MatrixTuple& x, const MatrixTuple& d) const {
  return hessian_cross(x, d, d);
}

double Objective::batch_value(const MatrixTuple&, const std::vector<std::size_t>&) const {
  throw InvalidInput(name() + " objective does not expose per-sample losses");
}

MatrixTuple Objective::batch_gradient(const MatrixTuple&, const std::vector<std::size_t>&) const {
  throw InvalidInput(name() + " objective does not expose per-sample losses");
}

void Objective::require_shapes(const MatrixTuple& x) const {
  if (x.shapes() != shapes()) throw InvalidInput(name() + ": argument shape mismatch");
}

// ---------------------------------------------------------------- quadratic

QuadraticObjective::QuadraticObjective(Matrix hessian, MatrixTuple target)
    : hessian_(std::move(hessian)), target_(std::move(target)) {
  if (target_.empty()) throw InvalidInput("quadratic_objective: empty target");
  const Index n = target_.total_size();
  if (hessian_.rows() != n || hessian_.cols() != n)
    throw InvalidInput("quadratic_objective: Hessian size does not match target");
  if (!hessian_.allFinite() || !target_.all_finite())
    throw InvalidInput("quadratic_objective: non-finite input");
  if ((hessian_ - hessian_.transpose()).norm() > 1e-12 * (1.0 + hessian_.norm()))
    throw InvalidInput("quadratic_objective: Hessian is not symmetric");
  hessian_ = 0.5 * (hessian_ + hessian_.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(hessian_, Eigen::EigenvaluesOnly);
  min_eig_ = eig.eigenvalues().minCoeff();
  max_eig_ = eig.eigenvalues().maxCoeff();
}

double QuadraticObjective::value(const MatrixTuple& x) const {
  require_shapes(x);
  const Vector d = x.flatten() - target_.flatten();
  return 0.5 * d.dot(hessian_ * d);
}

MatrixTuple QuadraticObjective::gradient(const MatrixTuple& x) const {
  require_shapes(x);
  const Vector d = x.flatten() - target_.flatten();
  return MatrixTuple::unflatten(hessian_ * d, shapes());
}

MatrixTuple QuadraticObjective::hessian_vector(const MatrixTuple& x, const MatrixTuple& d) const {
  require_shapes(x);
  require_shapes(d);
  return MatrixTuple::unflatten(hessian_ * d.flatten(), shapes());
}

std::shared_ptr<const QuadraticObjective> quadratic_objective(const std::vector<double>& spectrum,
                                                              const MatrixTuple& target,
                                                              std::uint64_t seed) {
  const Index n = target.total_size();
  if (static_cast<Index>(spectrum.size()) != n)
    throw InvalidInput("quadratic_objective: spectrum length " + std::to_string(spectrum.size()) +
                       " != entry count " + std::to_string(n));
  for (double s : spectrum)
    if (!(s > 0.0) || !std::isfinite(s))
      throw InvalidInput("quadratic_objective: spectrum must be positive and finite");
  Rng rng(seed);
  const Matrix q = random_orthogonal(rng, n);
  const Vector d = Eigen::Map<const Vector>(spectrum.data(), n);
  return std::make_shared<QuadraticObjective>(q * d.asDiagonal() * q.transpose(), target);
}

std::shared_ptr<const QuadraticObjective> quadratic_objective(const Matrix& hessian,
                                                              const MatrixTuple& target) {
  return std::make_shared<QuadraticObjective>(hessian, target);
}

// ---------------------------------------------------------------- matrix sensing

MatrixSensingObjective::MatrixSensingObjective(std::vector<Matrix> sensing, Matrix planted)
    : sensing_(std::move(sensing)), planted_(std::move(planted)) {
  if (sensing_.empty()) throw InvalidInput("matrix_sensing_objective: no measurements");
  for (const auto& g : sensing_)
    if (g.rows() != planted_.rows() || g.cols() != planted_.cols())
      throw InvalidInput("matrix_sensing_objective: sensing matrix shape mismatch");
}

double MatrixSensingObjective::value(const MatrixTuple& x) const {
  std::vector<std::size_t> all(sensing_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return batch_value(x, all);
}

MatrixTuple MatrixSensingObjective::gradient(const MatrixTuple& x) const {
  std::vector<std::size_t> all(sensing_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return batch_gradient(x, all);
}

MatrixTuple MatrixSensingObjective::hessian_vector(const MatrixTuple& x,
                                                   const MatrixTuple& d) const {
  require_shapes(x);
  require_shapes(d);
  Matrix out = Matrix::Zero(planted_.rows(), planted_.cols());
  for (const auto& g : sensing_) out += g.cwiseProduct(d[0]).sum() * g;
  out /= static_cast<double>(sensing_.size());
  return MatrixTuple(std::move(out));
}

double MatrixSensingObjective::batch_value(const MatrixTuple& x,
                                           const std::vector<std::size_t>& idx) const {
  require_shapes(x);
  if (idx.empty()) throw InvalidInput("matrix_sensing_objective: empty batch");
  const Matrix diff = x[0] - planted_;
  double s = 0.0;
  for (std::size_t i : idx) {
    const double r = sensing_.at(i).cwiseProduct(diff).sum();
    s += r * r;
  }
  return 0.5 * s / static_cast<double>(idx.size());
}

MatrixTuple MatrixSensingObjective::batch_gradient(const MatrixTuple& x,
                                                   const std::vector<std::size_t>& idx) const {
  require_shapes(x);
  if (idx.empty()) throw InvalidInput("matrix_sensing_objective: empty batch");
  const Matrix diff = x[0] - planted_;
  Matrix out = Matrix::Zero(planted_.rows(), planted_.cols());
  for (std::size_t i : idx) {
    const Matrix& g = sensing_.at(i);
    out += g.cwiseProduct(diff).sum() * g;
  }
  out /= static_cast<double>(idx.size());
  return MatrixTuple(std::move(out));
}

std::shared_ptr<const MatrixSensingObjective> matrix_sensing_objective(Index num_measurements,
                                                                      Shape shape,
                                                                      Index planted_rank,
                                                                      std::uint64_t seed) {
  if (num_measurements <= 0 || shape.rows <= 0 || shape.cols <= 0 || planted_rank <= 0)
    throw InvalidInput("matrix_sensing_objective: sizes must be positive");
  if (planted_rank > std::min(shape.rows, shape.cols))
    throw InvalidInput("matrix_sensing_objective: planted rank exceeds min(m, n)");
  Rng rng(seed);
  const Matrix planted = gaussian_matrix(rng, shape.rows, planted_rank) *
                         gaussian_matrix(rng, shape.cols, planted_rank).transpose();
  std::vector<Matrix> sensing;
  sensing.reserve(static_cast<std::size_t>(num_measurements));
  for (Index i = 0; i < num_measurements; ++i)
    sensing.push_back(gaussian_matrix(rng, shape.rows, shape.cols));
  return std::make_shared<MatrixSensingObjective>(std::move(sensing), planted);
}

std::shared_ptr<const MatrixSensingObjective> matrix_sensing_objective(std::vector<Matrix> sensing,
                                                                      Matrix planted) {
  return std::make_shared<MatrixSensingObjective>(std::move(sensing), std::move(planted));
}

// ---------------------------------------------------------------- mlp

MlpObjective::MlpObjective(MlpWidths widths, std::vector<Sample> data, int tuned_layer,
                           std::uint64_t weight_seed)
    : widths_(widths), data_(std::move(data)), tuned_layer_(tuned_layer) {
  if (widths_.d_in <= 0 || widths_.d_hidden <= 0 || widths_.d_out <= 0)
    throw InvalidInput("mlp_objective: widths must be positive");
  if (data_.empty()) throw InvalidInput("mlp_objective: empty dataset");
  if (tuned_layer_ != 0 && tuned_layer_ != 1)
    throw InvalidInput("mlp_objective: tuned_layer must be 0 or 1");
  for (const auto& s : data_) {
    if (s.input.size() != widths_.d_in || s.target.size() != widths_.d_out)
      throw InvalidInput("mlp_objective: sample dimension mismatch");
    if (!s.input.allFinite() || !s.target.allFinite())
      throw InvalidInput("mlp_objective: non-finite sample");
  }
  Rng rng(weight_seed);
  w1_ = gaussian_matrix(rng, widths_.d_hidden, widths_.d_in, 0.0,
                        1.0 / std::sqrt(static_cast<double>(widths_.d_in)));
  w2_ = gaussian_matrix(rng, widths_.d_out, widths_.d_hidden, 0.0,
                        1.0 / std::sqrt(static_cast<double>(widths_.d_hidden)));
}

std::vector<Shape> MlpObjective::shapes() const {
  if (tuned_layer_ == 0) return {{widths_.d_hidden, widths_.d_in}};
  return {{widths_.d_out, widths_.d_hidden}};
}

Vector MlpObjective::predict(const Vector& input, const Matrix& x) const {
  if (tuned_layer_ == 0) return w2_ * ((w1_ + x) * input).array().tanh().matrix();
  return (w2_ + x) * (w1_ * input).array().tanh().matrix();
}

double MlpObjective::sample_loss(const Matrix& x, const Sample& s) const {
  return 0.5 * (predict(s.input, x) - s.target).squaredNorm();
}

void MlpObjective::accumulate_gradient(const Matrix& x, const Sample& s, Matrix& out) const {
  if (tuned_layer_ == 0) {
    const Vector h = ((w1_ + x) * s.input).array().tanh().matrix();
    const Vector r = w2_ * h - s.target;
    const Vector delta = ((w2_.transpose() * r).array() * (1.0 - h.array().square())).matrix();
    out.noalias() += delta * s.input.transpose();
  } else {
    const Vector h = (w1_ * s.input).array().tanh().matrix();
    const Vector r = (w2_ + x) * h - s.target;
    out.noalias() += r * h.transpose();
  }
}

double MlpObjective::value(const MatrixTuple& x) const {
  require_shapes(x);
  double s = 0.0;
  for (const auto& sample : data_) s += sample_loss(x[0], sample);
  return s / static_cast<double>(data_.size());
}

MatrixTuple MlpObjective::gradient(const MatrixTuple& x) const {
  require_shapes(x);
  Matrix out = Matrix::Zero(x[0].rows(), x[0].cols());
  for (const auto& sample : data_) accumulate_gradient(x[0], sample, out);
  out /= static_cast<double>(data_.size());
  return MatrixTuple(std::move(out));
}

MatrixTuple MlpObjective::hessian_vector(const MatrixTuple& x, const MatrixTuple& d) const {
  require_shapes(x);
  require_shapes(d);
  const Matrix& dx = d[0];
  Matrix out = Matrix::Zero(x[0].rows(), x[0].cols());
  for (const auto& s : data_) {
    if (tuned_layer_ == 0) {
      const Vector h = ((w1_ + x[0]) * s.input).array().tanh().matrix();
      const Vector slope = (1.0 - h.array().square()).matrix();
      const Vector r = w2_ * h - s.target;
      const Vector dz = dx * s.input;
      const Vector dh = slope.cwiseProduct(dz);
      const Vector back = w2_.transpose() * r;
      // d(1 - h^2) = -2 h dh
      const Vector ddelta = (w2_.transpose() * (w2_ * dh)).cwiseProduct(slope) -
                            2.0 * back.cwiseProduct(h).cwiseProduct(dh);
      out.noalias() += ddelta * s.input.transpose();
    } else {
      const Vector h = (w1_ * s.input).array().tanh().matrix();
      out.noalias() += (dx * h) * h.transpose();
    }
  }
  out /= static_cast<double>(data_.size());
  return MatrixTuple(std::move(out));
}

double MlpObjective::batch_value(const MatrixTuple& x, const std::vector<std::size_t>& idx) const {
  require_shapes(x);
  if (idx.empty()) throw InvalidInput("mlp_objective: empty batch");
  double s = 0.0;
  for (std::size_t i : idx) s += sample_loss(x[0], data_.at(i));
  return s / static_cast<double>(idx.size());
}

MatrixTuple MlpObjective::batch_gradient(const MatrixTuple& x,
                                         const std::vector<std::size_t>& idx) const {
  require_shapes(x);
  if (idx.empty()) throw InvalidInput("mlp_objective: empty batch");
  Matrix out = Matrix::Zero(x[0].rows(), x[0].cols());
  for (std::size_t i : idx) accumulate_gradient(x[0], data_.at(i), out);
  out /= static_cast<double>(idx.size());
  return MatrixTuple(std::move(out));
}

std::shared_ptr<const MlpObjective> mlp_objective(MlpWidths widths, std::vector<Sample> data,
                                                  int tuned_layer, std::uint64_t weight_seed) {
  return std::make_shared<MlpObjective>(widths, std::move(data), tuned_layer, weight_seed);
}

std::vector<Sample> random_dataset(MlpWidths widths, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    s.input = gaussian_matrix(rng, widths.d_in, 1);
    s.target = gaussian_matrix(rng, widths.d_out, 1);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> realizable_dataset(MlpWidths widths, std::size_t count,
                                       std::uint64_t weight_seed, std::uint64_t data_seed) {
  std::vector<Sample> data = random_dataset(widths, count, data_seed);
  // any tuned layer gives the same frozen network at X = 0
  const MlpObjective frozen(widths, data, 0, weight_seed);
  const Matrix zero = Matrix::Zero(widths.d_hidden, widths.d_in);
  for (auto& s : data) s.target = frozen.predict(s.input, zero);
  return data;
}

std::vector<Sample> load_dataset_csv(const std::string& path, MlpWidths widths) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("dataset " + path + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const Index width = widths.d_in + widths.d_out;
  if (static_cast<Index>(header.size()) != width)
    throw InvalidInput("dataset " + path + ": expected " + std::to_string(width) + " columns");
  for (Index j = 0; j < width; ++j) {
    const std::string expect =
        j < widths.d_in ? "x_" + std::to_string(j) : "y_" + std::to_string(j - widths.d_in);
    if (header[static_cast<std::size_t>(j)] != expect)
      throw InvalidInput("dataset " + path + ": column " + std::to_string(j) + " should be " +
                         expect);
  }
  std::vector<Sample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Sample s{Vector(widths.d_in), Vector(widths.d_out)};
    Index j = 0;
    while (std::getline(ss, cell, ',')) {
      if (j >= width) throw InvalidInput("dataset " + path + ": too many fields");
      double v = 0.0;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw InvalidInput("dataset " + path + ": bad number '" + cell + "'");
      }
      if (j < widths.d_in)
        s.input(j) = v;
      else
        s.target(j - widths.d_in) = v;
      ++j;
    }
    if (j != width) throw InvalidInput("dataset " + path + ": too few fields");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw InvalidInput("dataset " + path + " has no samples");
  return out;
}

// ---------------------------------------------------------------- scaling

namespace {

class ScaledObjective : public Objective {
 public:
  ScaledObjective(ObjectivePtr base, double c) : base_(std::move(base)), c_(c) {}

  std::vector<Shape> shapes() const override { return base_->shapes(); }
  double value(const MatrixTuple& x) const override { return c_ * base_->value(x); }
  MatrixTuple gradient(const MatrixTuple& x) const override { return c_ * base_->gradient(x); }
  MatrixTuple hessian_vector(const MatrixTuple& x, const MatrixTuple& d) const override {
    return c_ * base_->hessian_vector(x, d);
  }
  std::optional<MatrixTuple> known_minimizer() const override {
    return c_ > 0 ? base_->known_minimizer() : std::nullopt;
  }
  std::string name() const override { return "scaled_" + base_->name(); }
  std::size_t num_samples() const override { return base_->num_samples(); }
  double batch_value(const MatrixTuple& x, const std::vector<std::size_t>& idx) const override {
    return c_ * base_->batch_value(x, idx);
  }
  MatrixTuple batch_gradient(const MatrixTuple& x,
                             const std::vector<std::size_t>& idx) const override {
    return c_ * base_->batch_gradient(x, idx);
  }

 private:
  ObjectivePtr base_;
  double c_;
};

}  // namespace

ObjectivePtr scaled_objective(ObjectivePtr base, double c) {
  if (!base) throw InvalidInput("scaled_objective: null base");
  return std::make_shared<ScaledObjective>(std::move(base), c);
}

// ---------------------------------------------------------------- derivative check

DerivativeCheck derivative_check(const Objective& obj, const MatrixTuple& point, double step,
                                 int probes, std::uint64_t seed) {
  if (!(step > 0.0)) throw InvalidInput("derivative_check: step must be positive");
  if (probes <= 0) throw InvalidInput("derivative_check: probes must be positive");
  obj.require_shapes(point);
  Rng rng(seed);
  const double f0 = obj.value(point);
  const MatrixTuple grad = obj.gradient(point);
  DerivativeCheck out;
  for (int p = 0; p < probes; ++p) {
    std::vector<Matrix> layers;
    for (const auto& s : point.shapes()) layers.push_back(gaussian_matrix(rng, s.rows, s.cols));
    MatrixTuple d(std::move(layers));
    const double dn = d.frobenius_norm();
    if (dn > 0) d *= 1.0 / dn;
    const double fp = obj.value(point + step * d);
    const double fm = obj.value(point - step * d);
    const double dir = grad.dot(d);
    const double fd1 = (fp - fm) / (2.0 * step);
    out.grad_err = std::max(out.grad_err, std::abs(dir - fd1) / (1.0 + std::abs(dir)));
    const double hq = obj.hessian_quadratic(point, d);
    const double fd2 = (fp - 2.0 * f0 + fm) / (step * step);
    out.hess_err = std::max(out.hess_err, std::abs(hq - fd2) / (1.0 + std::abs(hq)));
  }
  return out;
}

// ---------------------------------------------------------------- regularized

RegularizedObjective::RegularizedObjective(ObjectivePtr base, double lambda,
                                           RegularizerForm form)
    : base_(std::move(base)), lambda_(lambda), form_(form) {
  if (!base_) throw InvalidInput("regularized objective: null base");
  if (!(lambda_ >= 0.0) || !std::isfinite(lambda_))
    throw InvalidInput("regularized objective: lambda must be finite and >= 0");
}

double RegularizedObjective::nuclear_value(const MatrixTuple& x) const {
  return base_->value(x) + lambda_ * x.nuclear_norm();
}

void RegularizedObjective::require_factor_shapes(const FactorTuple& f) const {
  const auto shapes = base_->shapes();
  if (f.size() != shapes.size()) throw InvalidInput("factor tuple has wrong layer count");
  for (std::size_t l = 0; l < f.size(); ++l) {
    if (f[l].a.rows() != shapes[l].rows || f[l].b.rows() != shapes[l].cols ||
        f[l].a.cols() != f[l].b.cols())
      throw InvalidInput("factor shapes do not match objective layer " + std::to_string(l));
  }
}

double RegularizedObjective::factored_value(const FactorTuple& f) const {
  require_factor_shapes(f);
  return base_->value(product(f)) + 0.5 * lambda_ * squared_norm(f);
}

FactorTuple RegularizedObjective::lift_gradient(const FactorTuple& f,
                                                const MatrixTuple& grad) const {
  FactorTuple out;
  out.reserve(f.size());
  for (std::size_t l = 0; l < f.size(); ++l) {
    const Matrix& g = grad[l];
    out.push_back({g * f[l].b + lambda_ * f[l].a, g.transpose() * f[l].a + lambda_ * f[l].b});
  }
  return out;
}

FactorTuple RegularizedObjective::factored_gradient(const FactorTuple& f) const {
  require_factor_shapes(f);
  return lift_gradient(f, base_->gradient(product(f)));
}

FactorTuple RegularizedObjective::factored_batch_gradient(
    const FactorTuple& f, const std::vector<std::size_t>& idx) const {
  require_factor_shapes(f);
  return lift_gradient(f, base_->batch_gradient(product(f), idx));
}

FactorTuple RegularizedObjective::factored_hessian_vector(const FactorTuple& f,
                                                          const FactorTuple& d) const {
  require_factor_shapes(f);
  require_factor_shapes(d);
  const MatrixTuple x = product(f);
  const MatrixTuple grad = base_->gradient(x);
  std::vector<Matrix> dl;
  dl.reserve(f.size());
  for (std::size_t l = 0; l < f.size(); ++l)
    dl.push_back(f[l].a * d[l].b.transpose() + d[l].a * f[l].b.transpose());
  const MatrixTuple hd = base_->hessian_vector(x, MatrixTuple(std::move(dl)));
  FactorTuple out;
  out.reserve(f.size());
  for (std::size_t l = 0; l < f.size(); ++l) {
    const Matrix& g = grad[l];
    out.push_back({g * d[l].b + hd[l] * f[l].b + lambda_ * d[l].a,
                   g.transpose() * d[l].a + hd[l].transpose() * f[l].a + lambda_ * d[l].b});
  }
  return out;
}

}  // namespace lorascape
