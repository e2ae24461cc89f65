#pragma once

// Primitive numerical kernels on Tensor values. Every kernel has its
// gradient counterpart here; the tape in autodiff.hpp wires them together.
//
// All kernels assign each output element to exactly one worker and
// accumulate in a fixed loop order, so results are bit-identical for any
// thread count.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vseg/tensor.hpp"

namespace vseg {

using Extent3 = std::array<std::int64_t, 3>;

struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  Extent3 kernel = {3, 3, 3};
  Extent3 stride = {1, 1, 1};
  std::int64_t dilation = 1;
  Extent3 padding = {0, 0, 0};

  // Stride-1 convolution whose zero padding preserves spatial extents.
  static ConvSpec same(std::int64_t in_c, std::int64_t out_c, std::int64_t k,
                       std::int64_t dilation = 1);
  // 3x3x3, stride 2, pad 1: halves even extents.
  static ConvSpec down(std::int64_t in_c, std::int64_t out_c);
  // Transposed counterpart of down(): 3x3x3, stride 2, pad 1, doubling.
  static ConvSpec up(std::int64_t in_c, std::int64_t out_c);

  Shape5 weight_shape() const { return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]}; }
  // Throws ConfigError for non-positive counts, stride or dilation.
  void validate() const;
};

// Spatial/channel shape produced by conv3d; throws ShapeError on channel
// mismatch or when the dilated kernel does not fit the padded input.
Shape5 conv3d_output_shape(const Shape5& in, const ConvSpec& spec);

// Cross-correlation with zero padding and isotropic dilation:
// y[n,o,p] = b[o] + sum_{i,k} w[o,i,k] * x[n,i,p*stride + k*dilation - pad].
Tensor conv3d(const Tensor& x, const Tensor& w, std::span<const Real> bias, const ConvSpec& spec);

// Gradient of conv3d w.r.t. its input, i.e. the adjoint of the linear map x -> conv3d(x, w, 0).
Tensor conv3d_backward_input(const Tensor& gy, const Tensor& w, const ConvSpec& spec,
                             const Shape5& input_shape);

struct ConvParamGrads {
  Tensor weight;
  std::vector<Real> bias;
};
ConvParamGrads conv3d_backward_params(const Tensor& x, const Tensor& gy, const ConvSpec& spec);

// Transposed convolution. `spec` is written in this op's own direction
// (in_channels = channels of x); weights are shaped (in_c, out_c, k...), the
// layout of the stride-s conv3d this op is the adjoint of. Output extents
// are exactly stride * input extents.
Shape5 conv_transpose3d_output_shape(const Shape5& in, const ConvSpec& spec);
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, std::span<const Real> bias,
                        const ConvSpec& spec);
// The forward (non-transposed) spec whose adjoint conv_transpose3d computes.
ConvSpec adjoint_conv_spec(const ConvSpec& transposed);

Tensor global_avg_pool(const Tensor& x);
// Spreads a (n,c,1,1,1) gradient evenly back over the spatial extents of `shape`.
Tensor global_avg_pool_backward(const Tensor& gy, const Shape5& shape);

Tensor concat_channels(std::span<const Tensor* const> inputs);
Tensor concat_channels(std::initializer_list<const Tensor*> inputs);
// Stacks tensors with identical (c, d, h, w) along the batch axis.
Tensor concat_batch(const std::vector<const Tensor*>& inputs);
// Channels [begin, begin + count) of x.
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count);

enum class Activation { kRelu, kSigmoid };

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor activate(const Tensor& x, Activation kind);
// Subgradient at 0 is 0.
Tensor relu_backward(const Tensor& gy, const Tensor& x);
Tensor sigmoid_backward(const Tensor& gy, const Tensor& y);

// Softmax across the channel axis at every voxel.
Tensor softmax_channels(const Tensor& x);
Tensor softmax_channels_backward(const Tensor& gy, const Tensor& y);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real k);

// True if every axis of b equals a's or is 1.
bool broadcastable_to(const Shape5& b, const Shape5& a);
// a * expand(b); b may have singleton axes. Output has a's shape.
Tensor broadcast_mul(const Tensor& a, const Tensor& b);
// Sums x over the axes where `target` is 1.
Tensor reduce_to(const Tensor& x, const Shape5& target);

struct BatchNormParams {
  static constexpr Real kEps = 1e-5;
  static constexpr Real kMomentum = 0.1;
};

enum class NormMode { kTrain, kInference };

struct BatchNormResult {
  Tensor y;
  Tensor xhat;
  std::vector<Real> inv_std;
};

// Per-channel normalization over (n, d, h, w). In kTrain mode the batch
// statistics are used and the running statistics are updated in place
// (unbiased variance); in kInference mode the running statistics are used.
BatchNormResult batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           Tensor& running_mean, Tensor& running_var, NormMode mode);

struct BatchNormGrads {
  Tensor x;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batch_norm_backward(const Tensor& gy, const BatchNormResult& fwd,
                                   const Tensor& gamma, NormMode mode);

}  // namespace vseg
