#include <fstream>

#include "binary_io.hpp"
#include "vseg/network.hpp"

namespace vseg {

namespace {
constexpr char kMagic[] = "VSEG1";
constexpr std::size_t kMagicLen = 5;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint '" + path.string() + "' for writing");
  os.write(kMagic, kMagicLen);
  const std::string cfg = net.config().to_text();
  detail::put_le(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& entries = net.params().entries();
  detail::put_le(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_le(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_le(os, static_cast<std::uint8_t>(e.trainable ? 1 : 0));
    const Shape5& s = e.value.shape();
    for (std::int64_t x : {s.n, s.c, s.d, s.h, s.w}) detail::put_le(os, static_cast<std::uint64_t>(x));
    for (Real v : e.value.data()) detail::put_f64(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  if (detail::get_bytes(is, kMagicLen, "magic") != std::string(kMagic, kMagicLen)) {
    throw FormatError("'" + path.string() + "' is not a VSEG1 checkpoint (bad magic)");
  }
  const auto cfg_len = detail::get_le<std::uint32_t>(is, "config length");
  if (cfg_len > (1u << 20)) throw FormatError("checkpoint config block too large");
  const NetConfig cfg = NetConfig::from_text(detail::get_bytes(is, cfg_len, "config"));
  const auto count = detail::get_le<std::uint32_t>(is, "entry count");
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_le<std::uint32_t>(is, "name length");
    if (name_len > 4096) throw FormatError("checkpoint parameter name too long");
    std::string name = detail::get_bytes(is, name_len, "parameter name");
    const bool trainable = detail::get_le<std::uint8_t>(is, "trainable flag") != 0;
    Shape5 s;
    s.n = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is, "shape"));
    s.c = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is, "shape"));
    s.d = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is, "shape"));
    s.h = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is, "shape"));
    s.w = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is, "shape"));
    try {
      s.validate();
    } catch (const ShapeError& e) {
      throw FormatError(std::string("checkpoint parameter '") + name + "': " + e.what());
    }
    if (s.numel() > (std::int64_t{1} << 32)) throw FormatError("checkpoint parameter '" + name + "' too large");
    Tensor t(s);
    for (Real& v : t.data()) v = detail::get_f64(is, "parameter values");
    store.add(std::move(name), std::move(t), trainable);
  }
  return Network(cfg, std::move(store));
}

}  // namespace vseg
