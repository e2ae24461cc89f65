#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vseg/blocks.hpp"

namespace vseg {

enum class OutputMode { kSigmoid1, kSoftmax2 };
enum class Task { kLung, kLesion };

struct NetConfig {
  std::int64_t base_channels = 8;
  AttentionKind encoder_attention = AttentionKind::kFv;
  PyramidKind bottleneck = PyramidKind::kPaspp;
  std::int64_t in_channels = 1;
  OutputMode out_mode = OutputMode::kSigmoid1;
  Task task = Task::kLesion;
  bool eq7_literal = true;
  // Intensity window mapping HU input to [0, 1] before the stem.
  double window_location = -400.0;
  double window_breadth = 1200.0;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Canonical "key=value" lines in a fixed key order, newline terminated.
  std::string to_text() const;
  // Parses to_text() output. Blank lines and '#' comments are ignored;
  // missing keys keep their defaults; unknown keys are errors.
  static NetConfig from_text(std::string_view text);

  std::array<std::int64_t, 4> encoder_channels() const;
  // Decoder levels D3, D2, D1.
  std::array<std::int64_t, 3> decoder_channels() const;
  std::int64_t output_channels() const { return out_mode == OutputMode::kSigmoid1 ? 1 : 2; }

  // Short label such as "fv+paspp" or "unet4".
  std::string label() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// The nine block configurations of the ablation study, baseline first and
// the full model last.
std::vector<NetConfig> ablation_configs(const NetConfig& base);

// Shortest round-trippable decimal form ("%.17g").
std::string format_real(double v);

std::string to_string(AttentionKind k);
std::string to_string(PyramidKind k);
std::string to_string(OutputMode m);
std::string to_string(Task t);
AttentionKind parse_attention(std::string_view s);
PyramidKind parse_pyramid(std::string_view s);
OutputMode parse_output_mode(std::string_view s);
Task parse_task(std::string_view s);

}  // namespace vseg
