#pragma once

// Composite building blocks. Each block owns a parameter layout (names in a
// ParamStore, declared once with declare()) and records its forward pass onto
// the tape of the input Var. Blocks are shape-preserving.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vseg/autodiff.hpp"

namespace vseg {

// Convolution, optionally followed by batch norm and ReLU. Normalized units
// carry no conv bias (the norm shift replaces it). Transposed units run
// conv_transpose3d with `spec` in their own direction.
struct ConvUnit {
  std::string name;
  ConvSpec spec;
  bool norm_relu = true;
  bool transposed = false;

  // Parameters: <name>.w, <name>.b (unnormalized only), <name>.bn.{gamma,beta}
  // and buffers <name>.bn.{mean,var}. Weights use He fan-in initialization.
  void declare(ParamStore& store, std::mt19937_64& rng) const;
  Var operator()(Var x, ParamStore& store) const;
  // Pre-normalization convolution output.
  Var conv(Var x, ParamStore& store) const;
};

// x + f(x), f = two 3x3x3 conv + BN + ReLU units.
class ResidualBlock {
 public:
  ResidualBlock(std::string name, std::int64_t channels);
  void declare(ParamStore& store, std::mt19937_64& rng) const;
  Var forward(Var x, ParamStore& store) const;

  std::int64_t channels() const { return channels_; }
  const ConvUnit& conv1() const { return conv1_; }
  const ConvUnit& conv2() const { return conv2_; }

 private:
  std::string name_;
  std::int64_t channels_;
  ConvUnit conv1_;
  ConvUnit conv2_;
};

// Single global gate per sample: sigmoid(conv1(relu(conv3(GAP(x))))) with the
// final conv mapping C -> 1, broadcast over channels and voxels.
class ContrastEnhancement {
 public:
  ContrastEnhancement(std::string name, std::int64_t channels);
  void declare(ParamStore& store, std::mt19937_64& rng) const;
  // Gate tensor of shape (n, 1, 1, 1, 1).
  Var gate(Var fv1, ParamStore& store) const;
  Var forward(Var fv1, ParamStore& store) const;

  const ConvUnit& mix() const { return mix_; }
  const ConvUnit& squeeze() const { return squeeze_; }

 private:
  std::int64_t channels_;
  ConvUnit mix_;
  ConvUnit squeeze_;
};

// Classic channel attention: like ContrastEnhancement but the final conv maps
// C -> C, one gate per channel broadcast over voxels only.
class ChannelAttention {
 public:
  ChannelAttention(std::string name, std::int64_t channels);
  void declare(ParamStore& store, std::mt19937_64& rng) const;
  // Gate tensor of shape (n, C, 1, 1, 1).
  Var gate(Var fv1, ParamStore& store) const;
  Var forward(Var fv1, ParamStore& store) const;

  const ConvUnit& mix() const { return mix_; }
  const ConvUnit& expand() const { return expand_; }

 private:
  std::int64_t channels_;
  ConvUnit mix_;
  ConvUnit expand_;
};

// Full-size spatial attention: A = sigmoid(conv(relu(bn(conv(x))))), output A * x.
class PositionSensitive {
 public:
  PositionSensitive(std::string name, std::int64_t channels);
  void declare(ParamStore& store, std::mt19937_64& rng) const;
  // Attention map with the shape of fv1.
  Var attention(Var fv1, ParamStore& store) const;
  Var forward(Var fv1, ParamStore& store) const;

  const ConvUnit& first() const { return first_; }
  const ConvUnit& second() const { return second_; }

 private:
  std::int64_t channels_;
  ConvUnit first_;
  ConvUnit second_;
};

enum class AttentionKind { kNone, kCab, kCeb, kPsb, kFv };

// Feature-variation style block:
//   fv1 = pre(x);  out = x + post(concat[branches(fv1)..., fv1]).
// kFv uses the contrast-enhancement and position-sensitive branches (post conv
// sees 3C channels); kCab/kCeb/kPsb keep the same structure with one branch.
class FeatureBlock {
 public:
  FeatureBlock(std::string name, std::int64_t channels, AttentionKind kind);
  void declare(ParamStore& store, std::mt19937_64& rng) const;
  Var forward(Var x, ParamStore& store) const;

  AttentionKind kind() const { return kind_; }
  std::int64_t channels() const { return channels_; }
  std::int64_t concat_channels() const { return post_.spec.in_channels; }
  const ConvUnit& pre() const { return pre_; }
  const ConvUnit& post() const { return post_; }
  const ContrastEnhancement& ceb() const { return ceb_; }
  const PositionSensitive& psb() const { return psb_; }
  const ChannelAttention& cab() const { return cab_; }

 private:
  std::string name_;
  std::int64_t channels_;
  AttentionKind kind_;
  ConvUnit pre_;
  ContrastEnhancement ceb_;
  PositionSensitive psb_;
  ChannelAttention cab_;
  ConvUnit post_;
};

enum class PyramidKind { kNone, kAspp, kResAspp, kPaspp };

// Atrous pyramid over four branches with dilations 1, 2, 4, 8.
//   Fp_t = reduce_t(x)                (C -> C/4, 1x1x1)
//   Fd_t = atrous_t(Fp_t)             (C/4 -> C/4, 3x3x3, dilation 2^(t-1))
// kAspp:    out = conv1(concat[Fd_1..Fd_4])
// kResAspp: out = conv1(concat[Fd'_1..Fd'_4])
// kPaspp:   Fd''_1 = conv1(concat[Fd'_1, Fd'_2]), Fd''_2 = conv1(concat[Fd'_3, Fd'_4]),
//           out = conv1(concat[Fd''_1, Fd''_2])
// with Fd'_t = Fd_t + Fd_1 + Fd_2 (t = 1, 2) and Fd_t + Fd_3 + Fd_4 (t = 3, 4)
// when `literal_sums` is set, otherwise Fd'_1 = Fd'_2 = Fd_1 + Fd_2 and
// Fd'_3 = Fd'_4 = Fd_3 + Fd_4.
class AtrousPyramid {
 public:
  static constexpr std::array<std::int64_t, 4> kDilations = {1, 2, 4, 8};

  AtrousPyramid(std::string name, std::int64_t channels, PyramidKind kind, bool literal_sums = true);
  void declare(ParamStore& store, std::mt19937_64& rng) const;
  Var forward(Var x, ParamStore& store) const;

  PyramidKind kind() const { return kind_; }
  bool literal_sums() const { return literal_sums_; }
  std::int64_t branch_channels() const { return channels_ / 4; }
  const std::array<ConvUnit, 4>& reduce() const { return reduce_; }
  const std::array<ConvUnit, 4>& atrous() const { return atrous_; }
  const std::array<ConvUnit, 2>& fuse() const { return fuse_; }
  const ConvUnit& output() const { return output_; }

 private:
  std::string name_;
  std::int64_t channels_;
  PyramidKind kind_;
  bool literal_sums_;
  std::array<ConvUnit, 4> reduce_;
  std::array<ConvUnit, 4> atrous_;
  std::array<ConvUnit, 2> fuse_;
  ConvUnit output_;
};

// Zeroes the conv weights and biases (".w" / ".b") of every unit whose name
// starts with `prefix`.
void zero_conv_weights(ParamStore& store, const std::string& prefix);

// Draws batch-norm scales in [0.5, 1.5], running variances in [0.5, 2], and
// norm shifts, running means and conv biases from N(0, 0.2^2). Gradient
// checks start from this state so no pre-activation sits exactly on a ReLU
// kink (a dead branch otherwise feeds exact zeros into the next unit).
void randomize_offsets(ParamStore& store, std::uint64_t seed);

}  // namespace vseg
