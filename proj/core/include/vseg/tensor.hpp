#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vseg/errors.hpp"

namespace vseg {

using Real = double;

// Extents of a 5-axis (n, c, d, h, w) tensor.
struct Shape5 {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t d = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t numel() const { return n * c * d * h * w; }
  std::int64_t spatial() const { return d * h * w; }
  std::array<std::int64_t, 3> spatial_extents() const { return {d, h, w}; }

  // Throws ShapeError if any extent is < 1 or the element count overflows.
  void validate() const;

  std::string str() const;

  friend bool operator==(const Shape5&, const Shape5&) = default;
};

inline constexpr std::array<const char*, 5> kAxisNames = {"n", "c", "d", "h", "w"};

// Dense row-major (n, c, d, h, w) array of Real.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape5 shape, Real fill = 0.0);
  Tensor(Shape5 shape, std::vector<Real> data);

  static Tensor scalar(Real v) { return Tensor(Shape5{1, 1, 1, 1, 1}, v); }
  // 1x1x1x1xN tensor holding `values`.
  static Tensor from_values(std::initializer_list<Real> values);
  // Uniform values in [lo, hi).
  static Tensor uniform(Shape5 shape, std::mt19937_64& rng, Real lo = -1.0, Real hi = 1.0);
  static Tensor normal(Shape5 shape, std::mt19937_64& rng, Real stddev = 1.0);

  const Shape5& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* raw() { return data_.data(); }
  const Real* raw() const { return data_.data(); }

  std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h,
                      std::int64_t w) const {
    return (((n * shape_.c + c) * shape_.d + d) * shape_.h + h) * shape_.w + w;
  }
  Real& at(std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(offset(n, c, d, h, w))];
  }
  Real at(std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(offset(n, c, d, h, w))];
  }
  Real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  Real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Value of a single-element tensor.
  Real item() const;

  void fill(Real v);
  Tensor reshaped(Shape5 shape) const;

  bool all_finite() const;
  Real sum() const;
  Real max_abs() const;

 private:
  Shape5 shape_{0, 0, 0, 0, 0};
  std::vector<Real> data_;
};

// Throws ShapeError naming the first differing axis.
void require_same_shape(const Shape5& a, const Shape5& b, const char* what);

Real dot(const Tensor& a, const Tensor& b);
Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace vseg
