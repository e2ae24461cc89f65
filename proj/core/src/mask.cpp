#include "vseg/mask.hpp"

#include <algorithm>

namespace vseg {

std::int64_t Mask::count() const {
  return std::count_if(voxels.begin(), voxels.end(), [](std::uint8_t v) { return v != 0; });
}

Tensor Mask::to_tensor() const {
  Tensor t(Shape5{1, 1, d, h, w});
  for (std::int64_t i = 0; i < size(); ++i) t[i] = voxels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  return t;
}

Tensor Mask::stack(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw ShapeError("Mask::stack: no masks");
  const Mask& first = *masks.front();
  Tensor t(Shape5{static_cast<std::int64_t>(masks.size()), 1, first.d, first.h, first.w});
  std::int64_t i = 0;
  for (const Mask* m : masks) {
    if (!m->same_extents(first)) throw ShapeError("Mask::stack: masks have different extents");
    for (std::uint8_t v : m->voxels) t[i++] = v ? 1.0 : 0.0;
  }
  return t;
}

}  // namespace vseg
