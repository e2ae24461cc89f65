#pragma once

#include <cstdint>
#include <vector>

#include "vseg/tensor.hpp"

namespace vseg {

// Binary volume of extents (d, h, w), row-major, one byte per voxel (0 or 1).
struct Mask {
  std::int64_t d = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> voxels;

  Mask() = default;
  Mask(std::int64_t d_, std::int64_t h_, std::int64_t w_, std::uint8_t fill = 0)
      : d(d_), h(h_), w(w_), voxels(static_cast<std::size_t>(d_ * h_ * w_), fill) {}

  std::int64_t size() const { return d * h * w; }
  std::int64_t count() const;
  bool same_extents(const Mask& o) const { return d == o.d && h == o.h && w == o.w; }
  std::uint8_t& at(std::int64_t z, std::int64_t y, std::int64_t x) {
    return voxels[static_cast<std::size_t>((z * h + y) * w + x)];
  }
  std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return voxels[static_cast<std::size_t>((z * h + y) * w + x)];
  }

  // (1, 1, d, h, w) tensor of 0.0 / 1.0.
  Tensor to_tensor() const;
  // Stacks masks with identical extents into (n, 1, d, h, w).
  static Tensor stack(const std::vector<const Mask*>& masks);

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace vseg
