#pragma once

// Synthetic chest phantoms with exact lung and lesion masks, CT-style
// windowing, patch cropping and the VVOL1 volume file format.

#include <cstdint>
#include <filesystem>
#include <random>
#include <array>

#include "vseg/mask.hpp"
#include "vseg/net_config.hpp"
#include "vseg/ops.hpp"
#include "vseg/tensor.hpp"

namespace vseg {

struct VolumeSample {
  Tensor image;  // (1, 1, d, h, w), HU-like intensities
  Mask lung_mask;    // empty (size 0) when absent
  Mask lesion_mask;  // empty (size 0) when absent
  std::array<float, 3> spacing = {1.0f, 1.0f, 1.0f};  // mm along (d, h, w)
  std::uint64_t seed = 0;  // generator seed; not persisted by VVOL1

  Extent3 extents() const { return {image.shape().d, image.shape().h, image.shape().w}; }

  const Mask& mask_for(Task task) const { return task == Task::kLung ? lung_mask : lesion_mask; }
  Mask& mask_for(Task task) { return task == Task::kLung ? lung_mask : lesion_mask; }

  // Image, masks and spacing compare equal; the seed is metadata.
  bool same_content(const VolumeSample& o) const;
};

struct Band {
  double lo = 0.0;
  double hi = 0.0;
  bool overlaps(const Band& o) const { return lo <= o.hi && o.lo <= hi; }
};

struct PhantomSpec {
  Extent3 extents = {16, 32, 32};  // (d, h, w)
  // Two lungs; semi-axes as fractions of the (d, h, w) extents.
  std::array<double, 2> lung_radius_d = {0.30, 0.42};
  std::array<double, 2> lung_radius_h = {0.26, 0.34};
  std::array<double, 2> lung_radius_w = {0.15, 0.20};
  double lung_exponent = 2.5;  // superellipsoid exponent
  std::int64_t lesion_min = 1;
  std::int64_t lesion_max = 3;
  std::array<double, 2> lesion_radius = {2.5, 4.0};  // voxels, radius of the 0.5 iso-surface
  Band lesion_band{-600.0, -20.0};
  Band lung_band{-880.0, -780.0};
  Band wall_band{-100.0, 100.0};
  double air = -1000.0;
  double noise = 15.0;  // Gaussian noise standard deviation, HU

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Deterministic in (spec, seed). Lesions only alter lung voxels, so the lesion
// mask is a subset of the lung mask by construction. Image voxels are rounded
// to single precision so VVOL1 round-trips are exact.
VolumeSample generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

// clamp((x - (location - breadth / 2)) / breadth, 0, 1).
Tensor window_transform(const Tensor& image, double location, double breadth);

// Same-offset crop of image and both masks; offsets uniform over valid positions.
VolumeSample crop_patch(const VolumeSample& sample, const Extent3& size, std::mt19937_64& rng);

// VVOL1: "VVOL1", u32 d, h, w, f32 spacing x3, u8 mask flags (bit 0 lung,
// bit 1 lesion), f32 image voxels, then u8 voxels of each present mask. All
// little-endian, row-major.
void save_volume(const std::filesystem::path& path, const VolumeSample& sample);
VolumeSample load_volume(const std::filesystem::path& path);

// Writes a binary PGM (P5) of one slice of the windowed image, gray levels
// 0..254, with the boundary voxels of both masks burned in at 255. axis 0
// slices along d (image h x w), 1 along h (d x w), 2 along w (d x h).
void export_slice(const VolumeSample& sample, int axis, std::int64_t index, const std::filesystem::path& path,
                  double location = -500.0, double breadth = 1000.0);

}  // namespace vseg
