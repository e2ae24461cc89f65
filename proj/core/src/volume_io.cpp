#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "vseg/phantom.hpp"

namespace vseg {

namespace {
constexpr char kMagic[] = "VVOL1";
constexpr std::size_t kMagicLen = 5;
constexpr std::uint8_t kLungFlag = 1;
constexpr std::uint8_t kLesionFlag = 2;

void write_mask(std::ostream& os, const Mask& m, const Extent3& ext, const char* which) {
  if (m.d != ext[0] || m.h != ext[1] || m.w != ext[2]) {
    throw ShapeError(std::string("save_volume: ") + which + " mask extents differ from the image");
  }
  os.write(reinterpret_cast<const char*>(m.voxels.data()), static_cast<std::streamsize>(m.voxels.size()));
}

Mask read_mask(std::istream& is, const Extent3& ext, const char* which) {
  Mask m(ext[0], ext[1], ext[2]);
  const std::string bytes = detail::get_bytes(is, m.voxels.size(), which);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(bytes[i]);
    if (v > 1) throw FormatError(std::string(which) + " holds a non-binary voxel value");
    m.voxels[i] = v;
  }
  return m;
}

}  // namespace

void save_volume(const std::filesystem::path& path, const VolumeSample& sample) {
  const Extent3 ext = sample.extents();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, kMagicLen);
  for (std::int64_t e : ext) detail::put_le(os, static_cast<std::uint32_t>(e));
  for (float sp : sample.spacing) detail::put_f32(os, sp);
  std::uint8_t flags = 0;
  if (sample.lung_mask.size() > 0) flags |= kLungFlag;
  if (sample.lesion_mask.size() > 0) flags |= kLesionFlag;
  detail::put_le(os, flags);
  for (Real v : sample.image.data()) detail::put_f32(os, static_cast<float>(v));
  if (flags & kLungFlag) write_mask(os, sample.lung_mask, ext, "lung");
  if (flags & kLesionFlag) write_mask(os, sample.lesion_mask, ext, "lesion");
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

VolumeSample load_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  if (detail::get_bytes(is, kMagicLen, "magic") != std::string(kMagic, kMagicLen)) {
    throw FormatError("'" + path.string() + "' is not a VVOL1 volume (bad magic)");
  }
  Extent3 ext{};
  for (auto& e : ext) {
    e = detail::get_le<std::uint32_t>(is, "extents");
    if (e < 1 || e > 4096) throw FormatError("'" + path.string() + "': implausible extent " + std::to_string(e));
  }
  VolumeSample s;
  for (float& sp : s.spacing) sp = detail::get_f32(is, "spacing");
  const auto flags = detail::get_le<std::uint8_t>(is, "mask flags");
  if (flags & ~(kLungFlag | kLesionFlag)) throw FormatError("'" + path.string() + "': unknown mask flags");
  s.image = Tensor(Shape5{1, 1, ext[0], ext[1], ext[2]});
  for (Real& v : s.image.data()) v = detail::get_f32(is, "image voxels");
  if (flags & kLungFlag) s.lung_mask = read_mask(is, ext, "lung mask");
  if (flags & kLesionFlag) s.lesion_mask = read_mask(is, ext, "lesion mask");
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("'" + path.string() + "': trailing bytes after volume data");
  }
  return s;
}

void export_slice(const VolumeSample& sample, int axis, std::int64_t index, const std::filesystem::path& path,
                  double location, double breadth) {
  const Extent3 ext = sample.extents();
  if (axis < 0 || axis > 2) throw ConfigError("slice axis must be 0, 1 or 2");
  if (index < 0 || index >= ext[static_cast<std::size_t>(axis)]) {
    throw ConfigError("slice index " + std::to_string(index) + " outside axis extent " +
                      std::to_string(ext[static_cast<std::size_t>(axis)]));
  }
  const Tensor win = window_transform(sample.image, location, breadth);
  // Slice-local (row, col) -> volume (z, y, x).
  auto voxel = [&](std::int64_t r, std::int64_t c) -> Extent3 {
    if (axis == 0) return {index, r, c};
    if (axis == 1) return {r, index, c};
    return {r, c, index};
  };
  const std::int64_t rows = axis == 0 ? ext[1] : ext[0];
  const std::int64_t cols = axis == 2 ? ext[1] : ext[2];

  std::vector<std::uint8_t> pix(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto [z, y, x] = voxel(r, c);
      pix[static_cast<std::size_t>(r * cols + c)] =
          static_cast<std::uint8_t>(std::lround(win.at(0, 0, z, y, x) * 254.0));
    }
  }
  auto burn = [&](const Mask& m) {
    if (m.size() == 0) return;
    auto inside = [&](std::int64_t r, std::int64_t c) {
      if (r < 0 || c < 0 || r >= rows || c >= cols) return false;
      const auto [z, y, x] = voxel(r, c);
      return m.at(z, y, x) != 0;
    };
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) {
        if (!inside(r, c)) continue;
        if (!inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) || !inside(r, c + 1)) {
          pix[static_cast<std::size_t>(r * cols + c)] = 255;
        }
      }
    }
  };
  burn(sample.lung_mask);
  burn(sample.lesion_mask);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace vseg
