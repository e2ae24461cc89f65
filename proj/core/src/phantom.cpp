#include "vseg/phantom.hpp"

#include <algorithm>
#include <cmath>

namespace vseg {

bool VolumeSample::same_content(const VolumeSample& o) const {
  if (!(image.shape() == o.image.shape())) return false;
  if (!std::equal(image.data().begin(), image.data().end(), o.image.data().begin())) return false;
  return lung_mask == o.lung_mask && lesion_mask == o.lesion_mask && spacing == o.spacing;
}

void PhantomSpec::validate() const {
  for (std::size_t a = 0; a < 3; ++a) {
    if (extents[a] < 4) throw ConfigError("phantom extents: every axis must be >= 4");
  }
  auto range_ok = [](const std::array<double, 2>& r) { return r[0] > 0.0 && r[1] >= r[0]; };
  if (!range_ok(lung_radius_d) || !range_ok(lung_radius_h) || !range_ok(lung_radius_w)) {
    throw ConfigError("lung_radius: ranges must be positive and ordered (zero-size lungs)");
  }
  if (lung_radius_w[1] > 0.25) throw ConfigError("lung_radius_w: two lungs must fit side by side (<= 0.25)");
  if (lung_exponent <= 0.0) throw ConfigError("lung_exponent: must be > 0");
  if (lesion_min < 0 || lesion_max < lesion_min) throw ConfigError("lesion count: need 0 <= min <= max");
  if (!range_ok(lesion_radius)) throw ConfigError("lesion_radius: range must be positive and ordered");
  if (lesion_band.hi < lesion_band.lo || wall_band.hi < wall_band.lo || lung_band.hi < lung_band.lo) {
    throw ConfigError("intensity bands: lo must not exceed hi");
  }
  if (noise < 0.0) throw ConfigError("noise: must be >= 0");
}

VolumeSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto [D, H, W] = spec.extents;

  VolumeSample s;
  s.seed = seed;
  s.image = Tensor(Shape5{1, 1, D, H, W}, spec.air);
  s.lung_mask = Mask(D, H, W);
  s.lesion_mask = Mask(D, H, W);

  // Chest: an elliptic cylinder of soft tissue along d.
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  const double body_ry = 0.47 * H, body_rx = 0.47 * W;
  const double wall = uni(spec.wall_band.lo, spec.wall_band.hi);

  struct Lung {
    double cz, cy, cx, rz, ry, rx, level;
  };
  std::array<Lung, 2> lungs{};
  for (int side = 0; side < 2; ++side) {
    Lung& l = lungs[static_cast<std::size_t>(side)];
    l.rz = uni(spec.lung_radius_d[0], spec.lung_radius_d[1]) * D;
    l.ry = uni(spec.lung_radius_h[0], spec.lung_radius_h[1]) * H;
    l.rx = uni(spec.lung_radius_w[0], spec.lung_radius_w[1]) * W;
    l.cz = (D - 1) / 2.0 + uni(-0.05, 0.05) * D;
    l.cy = cy + uni(-0.04, 0.04) * H;
    l.cx = cx + (side == 0 ? -1.0 : 1.0) * (0.25 * W) + uni(-0.02, 0.02) * W;
    l.level = uni(spec.lung_band.lo, spec.lung_band.hi);
  }
  auto lung_at = [&](double z, double y, double x) -> int {
    for (int i = 0; i < 2; ++i) {
      const Lung& l = lungs[static_cast<std::size_t>(i)];
      const double e = spec.lung_exponent;
      const double v = std::pow(std::abs(z - l.cz) / l.rz, e) + std::pow(std::abs(y - l.cy) / l.ry, e) +
                       std::pow(std::abs(x - l.cx) / l.rx, e);
      if (v <= 1.0) return i;
    }
    return -1;
  };

  for (std::int64_t z = 0; z < D; ++z) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const double by = (y - cy) / body_ry, bx = (x - cx) / body_rx;
        if (by * by + bx * bx > 1.0) continue;
        const int l = lung_at(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x));
        if (l >= 0) {
          s.image.at(0, 0, z, y, x) = lungs[static_cast<std::size_t>(l)].level;
          s.lung_mask.at(z, y, x) = 1;
        } else {
          s.image.at(0, 0, z, y, x) = wall;
        }
      }
    }
  }

  // Lesions: Gaussian blobs centered on lung voxels. Only lung voxels are
  // altered; the mask is the blob's half-maximum region within the lung.
  std::vector<std::int64_t> lung_voxels;
  for (std::int64_t i = 0; i < s.lung_mask.size(); ++i) {
    if (s.lung_mask.voxels[static_cast<std::size_t>(i)]) lung_voxels.push_back(i);
  }
  if (lung_voxels.empty()) throw ConfigError("phantom spec produced empty lungs (zero-size lungs)");
  const auto count = std::uniform_int_distribution<std::int64_t>(spec.lesion_min, spec.lesion_max)(rng);
  Tensor lesion_level(Shape5{1, 1, D, H, W}, 0.0);
  Tensor lesion_weight(Shape5{1, 1, D, H, W}, 0.0);
  for (std::int64_t k = 0; k < count; ++k) {
    const auto pick = std::uniform_int_distribution<std::size_t>(0, lung_voxels.size() - 1)(rng);
    const std::int64_t idx = lung_voxels[pick];
    const double cz = static_cast<double>(idx / (H * W));
    const double cyl = static_cast<double>((idx / W) % H);
    const double cxl = static_cast<double>(idx % W);
    const double radius = uni(spec.lesion_radius[0], spec.lesion_radius[1]);
    // exp(-r^2 / (2 sigma^2)) = 0.5 at r = radius.
    const double sigma2 = radius * radius / (2.0 * std::log(2.0));
    const double level = uni(spec.lesion_band.lo, spec.lesion_band.hi);
    for (std::int64_t z = 0; z < D; ++z) {
      for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
          if (!s.lung_mask.at(z, y, x)) continue;
          const double r2 = (z - cz) * (z - cz) + (y - cyl) * (y - cyl) + (x - cxl) * (x - cxl);
          const double p = std::exp(-r2 / (2.0 * sigma2));
          if (p > lesion_weight.at(0, 0, z, y, x)) {
            lesion_weight.at(0, 0, z, y, x) = p;
            lesion_level.at(0, 0, z, y, x) = level;
          }
        }
      }
    }
  }
  for (std::int64_t i = 0; i < lesion_weight.numel(); ++i) {
    const double p = lesion_weight[i];
    if (p <= 0.0) continue;
    s.image[i] = (1.0 - p) * s.image[i] + p * lesion_level[i];
    if (p >= 0.5) s.lesion_mask.voxels[static_cast<std::size_t>(i)] = 1;
  }

  std::normal_distribution<double> noise(0.0, spec.noise);
  for (Real& v : s.image.data()) {
    if (spec.noise > 0.0) v += noise(rng);
    v = static_cast<double>(static_cast<float>(v));
  }
  return s;
}

Tensor window_transform(const Tensor& image, double location, double breadth) {
  if (!(breadth > 0.0)) throw ConfigError("window breadth: must be > 0");
  Tensor out(image.shape());
  const double lo = location - breadth / 2.0;
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    out[i] = std::clamp((image[i] - lo) / breadth, 0.0, 1.0);
  }
  return out;
}

namespace {

Mask crop_mask(const Mask& m, const Extent3& off, const Extent3& size) {
  Mask out(size[0], size[1], size[2]);
  for (std::int64_t z = 0; z < size[0]; ++z)
    for (std::int64_t y = 0; y < size[1]; ++y)
      for (std::int64_t x = 0; x < size[2]; ++x) out.at(z, y, x) = m.at(z + off[0], y + off[1], x + off[2]);
  return out;
}

}  // namespace

VolumeSample crop_patch(const VolumeSample& sample, const Extent3& size, std::mt19937_64& rng) {
  const Extent3 ext = sample.extents();
  Extent3 off{};
  for (std::size_t a = 0; a < 3; ++a) {
    const std::string axis = kAxisNames[a + 2];
    if (size[a] < 1 || size[a] % 8 != 0) {
      throw ConfigError("patch size on axis " + axis + " must be a positive multiple of 8");
    }
    if (size[a] > ext[a]) {
      throw ConfigError("patch size on axis " + axis + " (" + std::to_string(size[a]) +
                        ") exceeds volume extent " + std::to_string(ext[a]));
    }
  }
  for (std::size_t a = 0; a < 3; ++a) {
    off[a] = std::uniform_int_distribution<std::int64_t>(0, ext[a] - size[a])(rng);
  }
  VolumeSample out;
  out.seed = sample.seed;
  out.spacing = sample.spacing;
  out.image = Tensor(Shape5{1, 1, size[0], size[1], size[2]});
  for (std::int64_t z = 0; z < size[0]; ++z)
    for (std::int64_t y = 0; y < size[1]; ++y)
      for (std::int64_t x = 0; x < size[2]; ++x)
        out.image.at(0, 0, z, y, x) = sample.image.at(0, 0, z + off[0], y + off[1], x + off[2]);
  out.lung_mask = crop_mask(sample.lung_mask, off, size);
  out.lesion_mask = crop_mask(sample.lesion_mask, off, size);
  return out;
}

}  // namespace vseg
