#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "vseg/autodiff.hpp"
#include "vseg/blocks.hpp"
#include "vseg/mask.hpp"
#include "vseg/net_config.hpp"

namespace vseg {

// Encoder-decoder segmentation network.
//
//   stem: 3x3x3 conv in_channels -> C1 (+BN+ReLU)
//   E1..E3: residual block, optional attention block, skip tap, stride-2 conv to the next width
//   E4: residual block, optional atrous pyramid
//   D3..D1: transposed stride-2 conv, concat with the encoder skip, 3x3x3 conv back
//           to the level width, residual block
//   head: 1x1x1 conv to 1 (sigmoid) or 2 (softmax) channels
class Network {
 public:
  Network(NetConfig cfg, std::uint64_t seed);
  // Declares no parameters; the caller fills params() (checkpoint loading).
  Network(NetConfig cfg, ParamStore params);

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }
  std::int64_t parameter_count() const { return params_->trainable_scalars(); }

  // Channels consumed by the post-concat conv at decoder levels D3, D2, D1.
  const std::array<std::int64_t, 3>& skip_concat_channels() const { return skip_concat_; }
  const std::vector<FeatureBlock>& attention_blocks() const { return attention_; }
  const std::optional<AtrousPyramid>& bottleneck() const { return pyramid_; }

  // Records the forward pass; returns per-voxel probabilities.
  Var forward(Var volume) const;

  // Throws ShapeError unless shape is (n, in_channels, d, h, w) with every
  // spatial extent divisible by 8.
  void check_input(const Shape5& shape) const;

 private:
  void build_layout();

  NetConfig cfg_;
  std::unique_ptr<ParamStore> params_;
  std::array<std::int64_t, 3> skip_concat_{};
  ConvUnit stem_;
  std::vector<ResidualBlock> enc_res_;
  std::vector<FeatureBlock> attention_;
  std::vector<ConvUnit> down_;
  std::optional<AtrousPyramid> pyramid_;
  std::vector<ConvUnit> up_;
  std::vector<ConvUnit> merge_;
  std::vector<ResidualBlock> dec_res_;
  ConvUnit head_;
};

// Windowed network input from a HU-like image, per cfg.window_*.
Tensor normalize_input(const NetConfig& cfg, const Tensor& image);

Network build_network(const NetConfig& cfg, std::uint64_t seed = 0);

// Probabilities for `volume`: (n,1,d,h,w) in sigmoid mode, (n,2,d,h,w) in
// softmax mode. Uses running batch-norm statistics unless mode is kTrain.
Tensor forward_segment(Network& net, const Tensor& volume, NormMode mode = NormMode::kInference);

// Foreground probability channel of forward_segment output as (n,1,d,h,w).
Tensor foreground(const Tensor& prob);

// One mask per batch item; voxel set iff foreground probability >= threshold.
std::vector<Mask> predict_mask(Network& net, const Tensor& volume, Real threshold = 0.5);
std::vector<Mask> threshold_mask(const Tensor& prob, Real threshold);

// Checkpoint container: "VSEG1", u32 config length, config text, u32 entry
// count, then per entry: u32 name length, name, u8 trainable, 5 x i64 shape,
// little-endian f64 values.
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace vseg
