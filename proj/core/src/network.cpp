#include "vseg/network.hpp"

#include "vseg/phantom.hpp"

namespace vseg {

Network::Network(NetConfig cfg, std::uint64_t seed) : cfg_(cfg), params_(std::make_unique<ParamStore>()) {
  cfg_.validate();
  build_layout();
  std::mt19937_64 rng(seed);
  ParamStore& s = *params_;
  stem_.declare(s, rng);
  for (std::size_t l = 0; l < 3; ++l) {
    enc_res_[l].declare(s, rng);
    if (!attention_.empty()) attention_[l].declare(s, rng);
    down_[l].declare(s, rng);
  }
  enc_res_[3].declare(s, rng);
  if (pyramid_) pyramid_->declare(s, rng);
  for (std::size_t l = 0; l < 3; ++l) {
    up_[l].declare(s, rng);
    merge_[l].declare(s, rng);
    dec_res_[l].declare(s, rng);
  }
  head_.declare(s, rng);
}

Network::Network(NetConfig cfg, ParamStore params)
    : cfg_(cfg), params_(std::make_unique<ParamStore>(std::move(params))) {
  cfg_.validate();
  build_layout();
  // The loaded store must match the layout exactly.
  const Network reference(cfg_, 0);
  const auto& want = reference.params().entries();
  const auto& got = params_->entries();
  if (want.size() != got.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(got.size()) + " tensors, config '" + cfg_.label() +
                      "' expects " + std::to_string(want.size()));
  }
  for (const auto& e : want) {
    if (!params_->contains(e.name)) throw ConfigError("checkpoint is missing parameter '" + e.name + "'");
    const auto& g = params_->entry(e.name);
    if (!(g.value.shape() == e.value.shape())) {
      throw ConfigError("checkpoint parameter '" + e.name + "' has shape " + g.value.shape().str() +
                        ", config expects " + e.value.shape().str());
    }
  }
}

void Network::build_layout() {
  const auto enc = cfg_.encoder_channels();
  const auto dec = cfg_.decoder_channels();
  stem_ = ConvUnit{"stem", ConvSpec::same(cfg_.in_channels, enc[0], 3)};
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string level = "e" + std::to_string(l + 1);
    enc_res_.emplace_back(level + ".res", enc[l]);
    if (l < 3) {
      if (cfg_.encoder_attention != AttentionKind::kNone) {
        attention_.emplace_back(level + ".att", enc[l], cfg_.encoder_attention);
      }
      down_.push_back(ConvUnit{level + ".down", ConvSpec::down(enc[l], enc[l + 1])});
    }
  }
  if (cfg_.bottleneck != PyramidKind::kNone) {
    pyramid_.emplace("e4.pyramid", enc[3], cfg_.bottleneck, cfg_.eq7_literal);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t level = 3 - i;  // D3, D2, D1
    const std::string name = "d" + std::to_string(level);
    const std::int64_t below = enc[level];
    const std::int64_t width = dec[i];
    up_.push_back(ConvUnit{name + ".up", ConvSpec::up(below, width), true, true});
    const std::int64_t skip = enc[level - 1];
    skip_concat_[i] = width + skip;
    if (skip_concat_[i] != 2 * width) {
      throw ConfigError("decoder level " + name + ": skip concat expects " + std::to_string(2 * width) +
                        " channels, got " + std::to_string(skip_concat_[i]));
    }
    merge_.push_back(ConvUnit{name + ".merge", ConvSpec::same(skip_concat_[i], width, 3)});
    dec_res_.emplace_back(name + ".res", width);
  }
  head_ = ConvUnit{"head", ConvSpec::same(dec[2], cfg_.output_channels(), 1), false};
}

void Network::check_input(const Shape5& shape) const {
  if (shape.c != cfg_.in_channels) {
    throw ShapeError("network input axis c is " + std::to_string(shape.c) + ", config expects " +
                     std::to_string(cfg_.in_channels));
  }
  const Extent3 ext = shape.spatial_extents();
  for (std::size_t a = 0; a < 3; ++a) {
    if (ext[a] % 8 != 0) {
      throw ShapeError("network input axis " + std::string(kAxisNames[a + 2]) + " extent " +
                       std::to_string(ext[a]) + " is not divisible by 8; pad the volume to a multiple of 8");
    }
  }
}

Var Network::forward(Var volume) const {
  check_input(volume.shape());
  ParamStore& s = *params_;
  Var x = stem_(volume, s);
  std::array<Var, 3> skips;
  for (std::size_t l = 0; l < 3; ++l) {
    x = enc_res_[l].forward(x, s);
    if (!attention_.empty()) x = attention_[l].forward(x, s);
    skips[l] = x;
    x = down_[l](x, s);
  }
  x = enc_res_[3].forward(x, s);
  if (pyramid_) x = pyramid_->forward(x, s);
  for (std::size_t i = 0; i < 3; ++i) {
    Var up = up_[i](x, s);
    Var cat = ad::concat_channels({up, skips[2 - i]});
    if (cat.shape().c != skip_concat_[i]) {
      throw ShapeError("decoder concat produced " + std::to_string(cat.shape().c) + " channels, expected " +
                       std::to_string(skip_concat_[i]));
    }
    x = dec_res_[i].forward(merge_[i](cat, s), s);
  }
  Var logits = head_(x, s);
  return cfg_.out_mode == OutputMode::kSigmoid1 ? ad::sigmoid(logits) : ad::softmax_channels(logits);
}

Tensor normalize_input(const NetConfig& cfg, const Tensor& image) {
  return window_transform(image, cfg.window_location, cfg.window_breadth);
}

Network build_network(const NetConfig& cfg, std::uint64_t seed) { return Network(cfg, seed); }

Tensor forward_segment(Network& net, const Tensor& volume, NormMode mode) {
  Tape tape(mode);
  Var out = net.forward(tape.input(volume));
  return out.value();
}

Tensor foreground(const Tensor& prob) {
  if (prob.shape().c == 1) return prob;
  return slice_channels(prob, prob.shape().c - 1, 1);
}

std::vector<Mask> threshold_mask(const Tensor& prob, Real threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("threshold: must lie in [0, 1], got " + std::to_string(threshold));
  }
  const Tensor fg = foreground(prob);
  const Shape5& s = fg.shape();
  std::vector<Mask> masks;
  for (std::int64_t n = 0; n < s.n; ++n) {
    Mask m(s.d, s.h, s.w);
    const Real* p = fg.raw() + n * s.spatial();
    for (std::int64_t i = 0; i < s.spatial(); ++i) m.voxels[static_cast<std::size_t>(i)] = p[i] >= threshold ? 1 : 0;
    masks.push_back(std::move(m));
  }
  return masks;
}

std::vector<Mask> predict_mask(Network& net, const Tensor& volume, Real threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("threshold: must lie in [0, 1], got " + std::to_string(threshold));
  }
  return threshold_mask(forward_segment(net, volume), threshold);
}

}  // namespace vseg
