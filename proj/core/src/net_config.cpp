#include "vseg/net_config.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace vseg {

std::string to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::kNone: return "none";
    case AttentionKind::kCab: return "cab";
    case AttentionKind::kCeb: return "ceb";
    case AttentionKind::kPsb: return "psb";
    case AttentionKind::kFv: return "fv";
  }
  return "?";
}

std::string to_string(PyramidKind k) {
  switch (k) {
    case PyramidKind::kNone: return "none";
    case PyramidKind::kAspp: return "aspp";
    case PyramidKind::kResAspp: return "res_aspp";
    case PyramidKind::kPaspp: return "paspp";
  }
  return "?";
}

std::string to_string(OutputMode m) { return m == OutputMode::kSigmoid1 ? "sigmoid_1ch" : "softmax_2ch"; }

std::string to_string(Task t) { return t == Task::kLung ? "lung" : "lesion"; }

AttentionKind parse_attention(std::string_view s) {
  for (auto k : {AttentionKind::kNone, AttentionKind::kCab, AttentionKind::kCeb, AttentionKind::kPsb,
                 AttentionKind::kFv}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("encoder_attention: unknown value '" + std::string(s) + "' (none|cab|ceb|psb|fv)");
}

PyramidKind parse_pyramid(std::string_view s) {
  for (auto k : {PyramidKind::kNone, PyramidKind::kAspp, PyramidKind::kResAspp, PyramidKind::kPaspp}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("bottleneck: unknown value '" + std::string(s) + "' (none|aspp|res_aspp|paspp)");
}

OutputMode parse_output_mode(std::string_view s) {
  if (s == "sigmoid_1ch") return OutputMode::kSigmoid1;
  if (s == "softmax_2ch") return OutputMode::kSoftmax2;
  throw ConfigError("out_mode: unknown value '" + std::string(s) + "' (sigmoid_1ch|softmax_2ch)");
}

Task parse_task(std::string_view s) {
  if (s == "lung") return Task::kLung;
  if (s == "lesion") return Task::kLesion;
  throw ConfigError("task: unknown value '" + std::string(s) + "' (lung|lesion)");
}

void NetConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels: must be >= 1");
  if (in_channels < 1) throw ConfigError("in_channels: must be >= 1");
  if (!(window_breadth > 0.0)) throw ConfigError("window_breadth: must be > 0");
  // The pyramid runs at E4 width 8 * base_channels, a multiple of 4 for any base.
  if (bottleneck != PyramidKind::kNone && (8 * base_channels) % 4 != 0) {
    throw ConfigError("base_channels: bottleneck width must be divisible by 4");
  }
}

namespace {

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string NetConfig::to_text() const {
  std::ostringstream os;
  os << "base_channels=" << base_channels << '\n'
     << "bottleneck=" << to_string(bottleneck) << '\n'
     << "encoder_attention=" << to_string(encoder_attention) << '\n'
     << "eq7_literal=" << (eq7_literal ? "true" : "false") << '\n'
     << "in_channels=" << in_channels << '\n'
     << "out_mode=" << to_string(out_mode) << '\n'
     << "task=" << to_string(task) << '\n'
     << "window_breadth=" << format_real(window_breadth) << '\n'
     << "window_location=" << format_real(window_location) << '\n';
  return os.str();
}

NetConfig NetConfig::from_text(std::string_view text) {
  NetConfig cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line '" + line + "' is not key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "base_channels") {
      cfg.base_channels = parse_int(key, value);
    } else if (key == "bottleneck") {
      cfg.bottleneck = parse_pyramid(value);
    } else if (key == "encoder_attention") {
      cfg.encoder_attention = parse_attention(value);
    } else if (key == "eq7_literal") {
      cfg.eq7_literal = parse_bool(key, value);
    } else if (key == "in_channels") {
      cfg.in_channels = parse_int(key, value);
    } else if (key == "out_mode") {
      cfg.out_mode = parse_output_mode(value);
    } else if (key == "task") {
      cfg.task = parse_task(value);
    } else if (key == "window_breadth") {
      cfg.window_breadth = parse_real(key, value);
    } else if (key == "window_location") {
      cfg.window_location = parse_real(key, value);
    } else {
      throw ConfigError(key + ": unknown config key");
    }
  }
  cfg.validate();
  return cfg;
}

std::array<std::int64_t, 4> NetConfig::encoder_channels() const {
  return {base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels};
}

std::array<std::int64_t, 3> NetConfig::decoder_channels() const {
  return {4 * base_channels, 2 * base_channels, base_channels};
}

std::string NetConfig::label() const {
  if (encoder_attention == AttentionKind::kNone && bottleneck == PyramidKind::kNone) return "unet4";
  std::string s;
  if (encoder_attention != AttentionKind::kNone) s = to_string(encoder_attention);
  if (bottleneck != PyramidKind::kNone) s += (s.empty() ? "" : "+") + to_string(bottleneck);
  return s;
}

std::vector<NetConfig> ablation_configs(const NetConfig& base) {
  const std::pair<AttentionKind, PyramidKind> rows[] = {
      {AttentionKind::kNone, PyramidKind::kNone},   {AttentionKind::kCab, PyramidKind::kNone},
      {AttentionKind::kCeb, PyramidKind::kNone},    {AttentionKind::kPsb, PyramidKind::kNone},
      {AttentionKind::kFv, PyramidKind::kNone},     {AttentionKind::kNone, PyramidKind::kAspp},
      {AttentionKind::kNone, PyramidKind::kResAspp}, {AttentionKind::kNone, PyramidKind::kPaspp},
      {AttentionKind::kFv, PyramidKind::kPaspp},
  };
  std::vector<NetConfig> out;
  for (const auto& [att, pyr] : rows) {
    NetConfig c = base;
    c.encoder_attention = att;
    c.bottleneck = pyr;
    out.push_back(c);
  }
  return out;
}

}  // namespace vseg
