#include "vseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace vseg {

void Shape5::validate() const {
  const std::array<std::int64_t, 5> ext = {n, c, d, h, w};
  std::int64_t total = 1;
  for (std::size_t i = 0; i < ext.size(); ++i) {
    if (ext[i] < 1) {
      throw ShapeError("shape " + str() + ": axis " + kAxisNames[i] + " must be >= 1");
    }
    if (total > std::numeric_limits<std::int64_t>::max() / ext[i]) {
      throw ShapeError("shape " + str() + ": element count overflows");
    }
    total *= ext[i];
  }
}

std::string Shape5::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << d << ',' << h << ',' << w << ')';
  return os.str();
}

Tensor::Tensor(Shape5 shape, Real fill) : shape_(shape) {
  shape_.validate();
  data_.assign(static_cast<std::size_t>(shape_.numel()), fill);
}

Tensor::Tensor(Shape5 shape, std::vector<Real> data) : shape_(shape), data_(std::move(data)) {
  shape_.validate();
  if (static_cast<std::int64_t>(data_.size()) != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::from_values(std::initializer_list<Real> values) {
  return Tensor(Shape5{1, 1, 1, 1, static_cast<std::int64_t>(values.size())},
                std::vector<Real>(values));
}

Tensor Tensor::uniform(Shape5 shape, std::mt19937_64& rng, Real lo, Real hi) {
  Tensor t(shape);
  std::uniform_real_distribution<Real> dist(lo, hi);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::normal(Shape5 shape, std::mt19937_64& rng, Real stddev) {
  Tensor t(shape);
  std::normal_distribution<Real> dist(0.0, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Real Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_.str());
  }
  return data_[0];
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape5 shape) const {
  shape.validate();
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

Real Tensor::sum() const {
  Real s = 0.0;
  for (Real v : data_) s += v;
  return s;
}

Real Tensor::max_abs() const {
  Real m = 0.0;
  for (Real v : data_) m = std::max(m, std::abs(v));
  return m;
}

void require_same_shape(const Shape5& a, const Shape5& b, const char* what) {
  const std::array<std::int64_t, 5> ea = {a.n, a.c, a.d, a.h, a.w};
  const std::array<std::int64_t, 5> eb = {b.n, b.c, b.d, b.h, b.w};
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (ea[i] != eb[i]) {
      throw ShapeError(std::string(what) + ": axis " + kAxisNames[i] + " differs (" +
                       std::to_string(ea[i]) + " vs " + std::to_string(eb[i]) + ")");
    }
  }
}

Real dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  Real s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  Real m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace vseg
