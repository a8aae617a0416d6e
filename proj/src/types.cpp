#include "lorascape/types.hpp"

#include "lorascape/errors.hpp"

#include <Eigen/SVD>

namespace lorascape {

namespace {

void require_same_shapes(const MatrixTuple& a, const MatrixTuple& b) {
  if (a.size() != b.size()) throw InvalidInput("matrix tuples differ in layer count");
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].rows() != b[l].rows() || a[l].cols() != b[l].cols())
      throw InvalidInput("matrix tuples differ in layer shape");
  }
}

}  // namespace

MatrixTuple MatrixTuple::zeros(const std::vector<Shape>& shapes) {
  std::vector<Matrix> layers;
  layers.reserve(shapes.size());
  for (const auto& s : shapes) layers.push_back(Matrix::Zero(s.rows, s.cols));
  return MatrixTuple(std::move(layers));
}

std::vector<Shape> MatrixTuple::shapes() const {
  std::vector<Shape> out;
  out.reserve(layers_.size());
  for (const auto& m : layers_) out.push_back(shape_of(m));
  return out;
}

Index MatrixTuple::total_size() const {
  Index n = 0;
  for (const auto& m : layers_) n += m.size();
  return n;
}

bool MatrixTuple::all_finite() const {
  for (const auto& m : layers_)
    if (!m.allFinite()) return false;
  return true;
}

double MatrixTuple::squared_norm() const {
  double s = 0.0;
  for (const auto& m : layers_) s += m.squaredNorm();
  return s;
}

double MatrixTuple::frobenius_norm() const { return std::sqrt(squared_norm()); }

double MatrixTuple::nuclear_norm() const {
  double s = 0.0;
  for (const auto& m : layers_) {
    if (m.size() == 0) continue;
    Eigen::JacobiSVD<Matrix> svd(m);
    s += svd.singularValues().sum();
  }
  return s;
}

double MatrixTuple::dot(const MatrixTuple& other) const {
  require_same_shapes(*this, other);
  double s = 0.0;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    s += layers_[l].cwiseProduct(other.layers_[l]).sum();
  return s;
}

Vector MatrixTuple::flatten() const {
  Vector v(total_size());
  Index offset = 0;
  for (const auto& m : layers_) {
    v.segment(offset, m.size()) = m.reshaped();
    offset += m.size();
  }
  return v;
}

MatrixTuple MatrixTuple::unflatten(const Vector& v, const std::vector<Shape>& shapes) {
  std::vector<Matrix> layers;
  layers.reserve(shapes.size());
  Index offset = 0;
  for (const auto& s : shapes) {
    if (offset + s.size() > v.size()) throw InvalidInput("vector too short for tuple shapes");
    layers.push_back(v.segment(offset, s.size()).reshaped(s.rows, s.cols));
    offset += s.size();
  }
  if (offset != v.size()) throw InvalidInput("vector length does not match tuple shapes");
  return MatrixTuple(std::move(layers));
}

MatrixTuple& MatrixTuple::operator+=(const MatrixTuple& o) {
  require_same_shapes(*this, o);
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l] += o.layers_[l];
  return *this;
}

MatrixTuple& MatrixTuple::operator-=(const MatrixTuple& o) {
  require_same_shapes(*this, o);
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l] -= o.layers_[l];
  return *this;
}

MatrixTuple& MatrixTuple::operator*=(double s) {
  for (auto& m : layers_) m *= s;
  return *this;
}

MatrixTuple operator+(MatrixTuple a, const MatrixTuple& b) { return a += b; }
MatrixTuple operator-(MatrixTuple a, const MatrixTuple& b) { return a -= b; }
MatrixTuple operator*(double s, MatrixTuple a) { return a *= s; }

MatrixTuple product(const FactorTuple& factors) {
  std::vector<Matrix> layers;
  layers.reserve(factors.size());
  for (const auto& f : factors) layers.push_back(f.product());
  return MatrixTuple(std::move(layers));
}

double squared_norm(const FactorTuple& factors) {
  double s = 0.0;
  for (const auto& f : factors) s += f.a.squaredNorm() + f.b.squaredNorm();
  return s;
}

double summed_norm(const FactorTuple& factors) {
  double s = 0.0;
  for (const auto& f : factors) s += f.a.norm() + f.b.norm();
  return s;
}

bool all_finite(const FactorTuple& factors) {
  for (const auto& f : factors)
    if (!f.a.allFinite() || !f.b.allFinite()) return false;
  return true;
}

Vector flatten(const FactorTuple& factors) {
  Index total = 0;
  for (const auto& f : factors) total += f.a.size() + f.b.size();
  Vector v(total);
  Index offset = 0;
  for (const auto& f : factors) {
    v.segment(offset, f.a.size()) = f.a.reshaped();
    offset += f.a.size();
    v.segment(offset, f.b.size()) = f.b.reshaped();
    offset += f.b.size();
  }
  return v;
}

FactorTuple unflatten(const Vector& v, const FactorTuple& like) {
  FactorTuple out;
  out.reserve(like.size());
  Index offset = 0;
  for (const auto& f : like) {
    if (offset + f.a.size() + f.b.size() > v.size())
      throw InvalidInput("vector too short for factor shapes");
    FactorPair p;
    p.a = v.segment(offset, f.a.size()).reshaped(f.a.rows(), f.a.cols());
    offset += f.a.size();
    p.b = v.segment(offset, f.b.size()).reshaped(f.b.rows(), f.b.cols());
    offset += f.b.size();
    out.push_back(std::move(p));
  }
  if (offset != v.size()) throw InvalidInput("vector length does not match factor shapes");
  return out;
}

FactorTuple zeros_like(const FactorTuple& like) {
  FactorTuple out;
  out.reserve(like.size());
  for (const auto& f : like)
    out.push_back({Matrix::Zero(f.a.rows(), f.a.cols()), Matrix::Zero(f.b.rows(), f.b.cols())});
  return out;
}

}  // namespace lorascape
