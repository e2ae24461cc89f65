#include "vseg/blocks.hpp"

#include <cmath>

namespace vseg {
namespace {

void require_channels(Var x, std::int64_t channels, const std::string& block) {
  if (x.shape().c != channels) {
    throw ShapeError(block + ": input axis c is " + std::to_string(x.shape().c) + ", block expects " +
                     std::to_string(channels));
  }
}

ConvUnit unit(std::string name, ConvSpec spec, bool norm_relu = true) {
  return ConvUnit{std::move(name), spec, norm_relu};
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------

void ConvUnit::declare(ParamStore& store, std::mt19937_64& rng) const {
  const Shape5 ws = transposed ? adjoint_conv_spec(spec).weight_shape() : spec.weight_shape();
  const auto fan_in = static_cast<Real>(spec.in_channels * ws.d * ws.h * ws.w);
  store.add(name + ".w", Tensor::normal(ws, rng, std::sqrt(2.0 / fan_in)));
  const Shape5 per_channel{1, spec.out_channels, 1, 1, 1};
  if (norm_relu) {
    store.add(name + ".bn.gamma", Tensor(per_channel, 1.0));
    store.add(name + ".bn.beta", Tensor(per_channel, 0.0));
    store.add(name + ".bn.mean", Tensor(per_channel, 0.0), false);
    store.add(name + ".bn.var", Tensor(per_channel, 1.0), false);
  } else {
    store.add(name + ".b", Tensor(per_channel, 0.0));
  }
}

Var ConvUnit::conv(Var x, ParamStore& store) const {
  Tape& t = x.tape();
  Var b = norm_relu ? Var{} : t.param(store, name + ".b");
  Var w = t.param(store, name + ".w");
  return transposed ? ad::conv_transpose3d(x, w, b, spec) : ad::conv3d(x, w, b, spec);
}

Var ConvUnit::operator()(Var x, ParamStore& store) const {
  Var y = conv(x, store);
  if (!norm_relu) return y;
  Tape& t = x.tape();
  y = ad::batch_norm(y, t.param(store, name + ".bn.gamma"), t.param(store, name + ".bn.beta"),
                     store.get(name + ".bn.mean"), store.get(name + ".bn.var"));
  return ad::relu(y);
}

void zero_conv_weights(ParamStore& store, const std::string& prefix) {
  for (auto& e : store.entries()) {
    if (e.name.rfind(prefix, 0) == 0 && (ends_with(e.name, ".w") || ends_with(e.name, ".b"))) e.value.fill(0.0);
  }
}

void randomize_offsets(ParamStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> scale(0.5, 1.5);
  std::uniform_real_distribution<Real> variance(0.5, 2.0);
  std::normal_distribution<Real> shift(0.0, 0.2);
  for (auto& e : store.entries()) {
    for (auto& v : e.value.data()) {
      if (ends_with(e.name, ".bn.gamma")) {
        v = scale(rng);
      } else if (ends_with(e.name, ".bn.var")) {
        v = variance(rng);
      } else if (ends_with(e.name, ".bn.beta") || ends_with(e.name, ".bn.mean") || ends_with(e.name, ".b")) {
        v = shift(rng);
      }
    }
  }
}

// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(std::string name, std::int64_t channels)
    : name_(std::move(name)),
      channels_(channels),
      conv1_(unit(name_ + ".conv1", ConvSpec::same(channels, channels, 3))),
      conv2_(unit(name_ + ".conv2", ConvSpec::same(channels, channels, 3))) {}

void ResidualBlock::declare(ParamStore& store, std::mt19937_64& rng) const {
  conv1_.declare(store, rng);
  conv2_.declare(store, rng);
}

Var ResidualBlock::forward(Var x, ParamStore& store) const {
  require_channels(x, channels_, "residual block '" + name_ + "'");
  return ad::add(x, conv2_(conv1_(x, store), store));
}

// ---------------------------------------------------------------------------

ContrastEnhancement::ContrastEnhancement(std::string name, std::int64_t channels)
    : channels_(channels),
      // Runs on 1x1x1 pooled features, where batch statistics would be
      // degenerate, so it has a bias and a plain ReLU instead of BN.
      mix_(unit(name + ".mix", ConvSpec::same(channels, channels, 3), false)),
      squeeze_(unit(name + ".squeeze", ConvSpec::same(channels, 1, 1), false)) {}

void ContrastEnhancement::declare(ParamStore& store, std::mt19937_64& rng) const {
  mix_.declare(store, rng);
  squeeze_.declare(store, rng);
}

Var ContrastEnhancement::gate(Var fv1, ParamStore& store) const {
  require_channels(fv1, channels_, "contrast enhancement '" + mix_.name + "'");
  Var pooled = ad::global_avg_pool(fv1);
  return ad::sigmoid(squeeze_(ad::relu(mix_(pooled, store)), store));
}

Var ContrastEnhancement::forward(Var fv1, ParamStore& store) const {
  return ad::broadcast_mul(fv1, gate(fv1, store));
}

// ---------------------------------------------------------------------------

ChannelAttention::ChannelAttention(std::string name, std::int64_t channels)
    : channels_(channels),
      mix_(unit(name + ".mix", ConvSpec::same(channels, channels, 3), false)),
      expand_(unit(name + ".expand", ConvSpec::same(channels, channels, 1), false)) {}

void ChannelAttention::declare(ParamStore& store, std::mt19937_64& rng) const {
  mix_.declare(store, rng);
  expand_.declare(store, rng);
}

Var ChannelAttention::gate(Var fv1, ParamStore& store) const {
  require_channels(fv1, channels_, "channel attention '" + mix_.name + "'");
  Var pooled = ad::global_avg_pool(fv1);
  return ad::sigmoid(expand_(ad::relu(mix_(pooled, store)), store));
}

Var ChannelAttention::forward(Var fv1, ParamStore& store) const {
  return ad::broadcast_mul(fv1, gate(fv1, store));
}

// ---------------------------------------------------------------------------

PositionSensitive::PositionSensitive(std::string name, std::int64_t channels)
    : channels_(channels),
      first_(unit(name + ".conv1", ConvSpec::same(channels, channels, 3))),
      second_(unit(name + ".conv2", ConvSpec::same(channels, channels, 3), false)) {}

void PositionSensitive::declare(ParamStore& store, std::mt19937_64& rng) const {
  first_.declare(store, rng);
  second_.declare(store, rng);
}

Var PositionSensitive::attention(Var fv1, ParamStore& store) const {
  require_channels(fv1, channels_, "position sensitive '" + first_.name + "'");
  return ad::sigmoid(second_(first_(fv1, store), store));
}

Var PositionSensitive::forward(Var fv1, ParamStore& store) const {
  return ad::broadcast_mul(fv1, attention(fv1, store));
}

// ---------------------------------------------------------------------------

namespace {

std::int64_t branch_count(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kFv:
      return 2;
    case AttentionKind::kCab:
    case AttentionKind::kCeb:
    case AttentionKind::kPsb:
      return 1;
    case AttentionKind::kNone:
      break;
  }
  throw ConfigError("feature block: attention kind 'none' has no block");
}

}  // namespace

FeatureBlock::FeatureBlock(std::string name, std::int64_t channels, AttentionKind kind)
    : name_(std::move(name)),
      channels_(channels),
      kind_(kind),
      pre_(unit(name_ + ".pre", ConvSpec::same(channels, channels, 1))),
      ceb_(name_ + ".ceb", channels),
      psb_(name_ + ".psb", channels),
      cab_(name_ + ".cab", channels),
      post_(unit(name_ + ".post", ConvSpec::same((branch_count(kind) + 1) * channels, channels, 3))) {}

void FeatureBlock::declare(ParamStore& store, std::mt19937_64& rng) const {
  pre_.declare(store, rng);
  if (kind_ == AttentionKind::kCeb || kind_ == AttentionKind::kFv) ceb_.declare(store, rng);
  if (kind_ == AttentionKind::kPsb || kind_ == AttentionKind::kFv) psb_.declare(store, rng);
  if (kind_ == AttentionKind::kCab) cab_.declare(store, rng);
  post_.declare(store, rng);
}

Var FeatureBlock::forward(Var x, ParamStore& store) const {
  require_channels(x, channels_, "feature block '" + name_ + "'");
  Var fv1 = pre_(x, store);
  std::vector<Var> parts;
  if (kind_ == AttentionKind::kCeb || kind_ == AttentionKind::kFv) parts.push_back(ceb_.forward(fv1, store));
  if (kind_ == AttentionKind::kPsb || kind_ == AttentionKind::kFv) parts.push_back(psb_.forward(fv1, store));
  if (kind_ == AttentionKind::kCab) parts.push_back(cab_.forward(fv1, store));
  parts.push_back(fv1);
  return ad::add(x, post_(ad::concat_channels(parts), store));
}

// ---------------------------------------------------------------------------

AtrousPyramid::AtrousPyramid(std::string name, std::int64_t channels, PyramidKind kind, bool literal_sums)
    : name_(std::move(name)), channels_(channels), kind_(kind), literal_sums_(literal_sums) {
  if (kind == PyramidKind::kNone) throw ConfigError("atrous pyramid: kind 'none' has no block");
  if (channels < 4 || channels % 4 != 0) {
    throw ConfigError("atrous pyramid '" + name_ + "': channels (" + std::to_string(channels) +
                      ") must be a positive multiple of 4");
  }
  const std::int64_t q = channels / 4;
  for (std::size_t t = 0; t < 4; ++t) {
    reduce_[t] = unit(name_ + ".reduce" + std::to_string(t + 1), ConvSpec::same(channels, q, 1));
    atrous_[t] = unit(name_ + ".atrous" + std::to_string(t + 1), ConvSpec::same(q, q, 3, kDilations[t]));
  }
  for (std::size_t i = 0; i < 2; ++i) {
    fuse_[i] = unit(name_ + ".fuse" + std::to_string(i + 1), ConvSpec::same(2 * q, 2 * q, 1));
  }
  output_ = unit(name_ + ".out", ConvSpec::same(channels, channels, 1));
}

void AtrousPyramid::declare(ParamStore& store, std::mt19937_64& rng) const {
  for (const auto& u : reduce_) u.declare(store, rng);
  for (const auto& u : atrous_) u.declare(store, rng);
  if (kind_ == PyramidKind::kPaspp) {
    for (const auto& u : fuse_) u.declare(store, rng);
  }
  output_.declare(store, rng);
}

Var AtrousPyramid::forward(Var x, ParamStore& store) const {
  require_channels(x, channels_, "atrous pyramid '" + name_ + "'");
  std::array<Var, 4> fd;
  for (std::size_t t = 0; t < 4; ++t) fd[t] = atrous_[t](reduce_[t](x, store), store);
  if (kind_ == PyramidKind::kAspp) {
    return output_(ad::concat_channels({fd[0], fd[1], fd[2], fd[3]}), store);
  }

  std::array<Var, 4> fdp;
  if (literal_sums_) {
    fdp[0] = ad::add({fd[0], fd[0], fd[1]});
    fdp[1] = ad::add({fd[1], fd[0], fd[1]});
    fdp[2] = ad::add({fd[2], fd[2], fd[3]});
    fdp[3] = ad::add({fd[3], fd[2], fd[3]});
  } else {
    fdp[0] = fdp[1] = ad::add(fd[0], fd[1]);
    fdp[2] = fdp[3] = ad::add(fd[2], fd[3]);
  }
  if (kind_ == PyramidKind::kResAspp) {
    return output_(ad::concat_channels({fdp[0], fdp[1], fdp[2], fdp[3]}), store);
  }

  Var low = fuse_[0](ad::concat_channels({fdp[0], fdp[1]}), store);
  Var high = fuse_[1](ad::concat_channels({fdp[2], fdp[3]}), store);
  return output_(ad::concat_channels({low, high}), store);
}

}  // namespace vseg
