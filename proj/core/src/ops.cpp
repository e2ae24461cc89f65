#include "vseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace vseg {
namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

// Output indices o in [lo, hi] with 0 <= o*stride + offset < in_extent.
struct Range {
  std::int64_t lo;
  std::int64_t hi;
  bool empty() const { return hi < lo; }
};

Range valid_range(std::int64_t offset, std::int64_t stride, std::int64_t in_extent,
                  std::int64_t out_extent) {
  Range r{ceil_div(-offset, stride), floor_div(in_extent - 1 - offset, stride)};
  r.lo = std::max<std::int64_t>(r.lo, 0);
  r.hi = std::min<std::int64_t>(r.hi, out_extent - 1);
  return r;
}

struct ConvGeometry {
  std::int64_t n, ic, oc;
  std::int64_t d, h, w;     // input extents
  std::int64_t od, oh, ow;  // output extents
  std::int64_t kd, kh, kw;
  std::int64_t sd, sh, sw;
  std::int64_t pd, ph, pw;
  std::int64_t dil;

  std::int64_t in_plane() const { return d * h * w; }
  std::int64_t out_plane() const { return od * oh * ow; }
  std::int64_t kernel_volume() const { return kd * kh * kw; }
};

ConvGeometry make_geometry(const Shape5& in, const Shape5& out, const ConvSpec& s) {
  return {in.n,         s.in_channels, s.out_channels, in.d,         in.h,         in.w,
          out.d,        out.h,         out.w,          s.kernel[0],  s.kernel[1],  s.kernel[2],
          s.stride[0],  s.stride[1],   s.stride[2],    s.padding[0], s.padding[1], s.padding[2],
          s.dilation};
}

// Calls fn(x_row_offset, y_row_offset, ow_range) for every (od, oh) output
// row with od in [od0, od1) touched by kernel tap (kd, kh, kw). Offsets are
// relative to the start of a single channel plane; the x offset already
// includes the w shift.
template <typename Fn>
void for_each_row(const ConvGeometry& g, std::int64_t kd, std::int64_t kh, std::int64_t kw,
                  std::int64_t od0, std::int64_t od1, Fn&& fn) {
  const std::int64_t off_d = kd * g.dil - g.pd;
  const std::int64_t off_h = kh * g.dil - g.ph;
  const std::int64_t off_w = kw * g.dil - g.pw;
  Range rd = valid_range(off_d, g.sd, g.d, g.od);
  rd.lo = std::max(rd.lo, od0);
  rd.hi = std::min(rd.hi, od1 - 1);
  const Range rh = valid_range(off_h, g.sh, g.h, g.oh);
  const Range rw = valid_range(off_w, g.sw, g.w, g.ow);
  if (rd.empty() || rh.empty() || rw.empty()) return;
  for (std::int64_t od = rd.lo; od <= rd.hi; ++od) {
    const std::int64_t id = od * g.sd + off_d;
    for (std::int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
      const std::int64_t ih = oh * g.sh + off_h;
      fn((id * g.h + ih) * g.w + off_w, (od * g.oh + oh) * g.ow, rw);
    }
  }
}

void check_weight_shape(const Tensor& w, const ConvSpec& spec, const char* op) {
  const Shape5 expect = spec.weight_shape();
  const Shape5& got = w.shape();
  if (got.n != expect.n) {
    throw ShapeError(std::string(op) + ": weight axis 0 (out_channels) is " + std::to_string(got.n) +
                     ", expected " + std::to_string(expect.n));
  }
  if (got.c != expect.c) {
    throw ShapeError(std::string(op) + ": weight axis 1 (in_channels) is " + std::to_string(got.c) +
                     ", expected " + std::to_string(expect.c));
  }
  if (got.d != expect.d || got.h != expect.h || got.w != expect.w) {
    throw ShapeError(std::string(op) + ": weight kernel extents " + got.str() +
                     " do not match spec kernel " + expect.str());
  }
}

}  // namespace

ConvSpec ConvSpec::same(std::int64_t in_c, std::int64_t out_c, std::int64_t k, std::int64_t dilation) {
  ConvSpec s;
  s.in_channels = in_c;
  s.out_channels = out_c;
  s.kernel = {k, k, k};
  s.dilation = dilation;
  const std::int64_t p = dilation * (k - 1) / 2;
  s.padding = {p, p, p};
  return s;
}

ConvSpec ConvSpec::down(std::int64_t in_c, std::int64_t out_c) {
  ConvSpec s = same(in_c, out_c, 3);
  s.stride = {2, 2, 2};
  return s;
}

ConvSpec ConvSpec::up(std::int64_t in_c, std::int64_t out_c) { return down(in_c, out_c); }

void ConvSpec::validate() const {
  if (in_channels < 1) throw ConfigError("conv spec: in_channels must be >= 1");
  if (out_channels < 1) throw ConfigError("conv spec: out_channels must be >= 1");
  if (dilation < 1) throw ConfigError("conv spec: dilation must be >= 1");
  for (int a = 0; a < 3; ++a) {
    const std::string axis = kAxisNames[static_cast<std::size_t>(a) + 2];
    if (kernel[a] < 1) throw ConfigError("conv spec: kernel extent on axis " + axis + " must be >= 1");
    if (stride[a] < 1) throw ConfigError("conv spec: stride on axis " + axis + " must be >= 1");
    if (padding[a] < 0) throw ConfigError("conv spec: padding on axis " + axis + " must be >= 0");
  }
}

Shape5 conv3d_output_shape(const Shape5& in, const ConvSpec& spec) {
  spec.validate();
  in.validate();
  if (in.c != spec.in_channels) {
    throw ShapeError("conv3d: input axis c is " + std::to_string(in.c) + ", spec expects " +
                     std::to_string(spec.in_channels));
  }
  const Extent3 ext = in.spatial_extents();
  Extent3 out{};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t effective = spec.dilation * (spec.kernel[a] - 1) + 1;
    const std::int64_t padded = ext[a] + 2 * spec.padding[a];
    if (padded < effective) {
      throw ShapeError("conv3d: axis " + std::string(kAxisNames[static_cast<std::size_t>(a) + 2]) +
                       " padded extent " + std::to_string(padded) +
                       " is smaller than dilated kernel extent " + std::to_string(effective));
    }
    out[a] = (padded - effective) / spec.stride[a] + 1;
  }
  return {in.n, spec.out_channels, out[0], out[1], out[2]};
}

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Output depth slices [od0, od1) form one column block of the unfolded input.
struct Chunk {
  std::int64_t od0;
  std::int64_t od1;
};

std::vector<Chunk> make_chunks(const ConvGeometry& g) {
  constexpr std::int64_t kMaxColumnElements = std::int64_t{1} << 20;
  const std::int64_t rows = g.ic * g.kernel_volume();
  const std::int64_t per_slice = rows * g.oh * g.ow;
  const std::int64_t slices = std::max<std::int64_t>(1, kMaxColumnElements / std::max<std::int64_t>(per_slice, 1));
  std::vector<Chunk> chunks;
  for (std::int64_t od = 0; od < g.od; od += slices) chunks.push_back({od, std::min(g.od, od + slices)});
  return chunks;
}

// Visits, for every unfolded row (ic, kd, kh, kw) and every output row
// (od, oh) of the chunk, the matching input row segment:
// fn(row, col_offset, x_offset, ow_range).
template <typename Fn>
void for_each_unfolded(const ConvGeometry& g, const Chunk& ch, Fn&& fn) {
  for (std::int64_t ic = 0; ic < g.ic; ++ic) {
    for (std::int64_t kd = 0; kd < g.kd; ++kd) {
      for (std::int64_t kh = 0; kh < g.kh; ++kh) {
        for (std::int64_t kw = 0; kw < g.kw; ++kw) {
          const std::int64_t row = ((ic * g.kd + kd) * g.kh + kh) * g.kw + kw;
          for_each_row(g, kd, kh, kw, ch.od0, ch.od1, [&](std::int64_t xo, std::int64_t yo, Range rw) {
            fn(row, yo - ch.od0 * g.oh * g.ow, ic * g.in_plane() + xo, rw);
          });
        }
      }
    }
  }
}

// col (K x P) <- unfolded x for one sample.
void im2col(const Real* x, const ConvGeometry& g, const Chunk& ch, Real* col) {
  const std::int64_t cols = (ch.od1 - ch.od0) * g.oh * g.ow;
  std::fill(col, col + g.ic * g.kernel_volume() * cols, 0.0);
  for_each_unfolded(g, ch, [&](std::int64_t row, std::int64_t co, std::int64_t xo, Range rw) {
    Real* dst = col + row * cols + co;
    const Real* src = x + xo;
    if (g.sw == 1) {
      std::copy(src + rw.lo, src + rw.hi + 1, dst + rw.lo);
    } else {
      for (std::int64_t o = rw.lo; o <= rw.hi; ++o) dst[o] = src[o * g.sw];
    }
  });
}

// x += fold(col) for one sample.
void col2im(const Real* col, const ConvGeometry& g, const Chunk& ch, Real* x) {
  const std::int64_t cols = (ch.od1 - ch.od0) * g.oh * g.ow;
  for_each_unfolded(g, ch, [&](std::int64_t row, std::int64_t co, std::int64_t xo, Range rw) {
    const Real* src = col + row * cols + co;
    Real* dst = x + xo;
    if (g.sw == 1) {
      for (std::int64_t o = rw.lo; o <= rw.hi; ++o) dst[o] += src[o];
    } else {
      for (std::int64_t o = rw.lo; o <= rw.hi; ++o) dst[o * g.sw] += src[o];
    }
  });
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, std::span<const Real> bias, const ConvSpec& spec) {
  const Shape5 out_shape = conv3d_output_shape(x.shape(), spec);
  check_weight_shape(w, spec, "conv3d");
  if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != spec.out_channels) {
    throw ShapeError("conv3d: bias length " + std::to_string(bias.size()) + " != out_channels " +
                     std::to_string(spec.out_channels));
  }
  Tensor y(out_shape);
  const ConvGeometry g = make_geometry(x.shape(), out_shape, spec);
  const std::int64_t K = g.ic * g.kernel_volume();
  const ConstMap wm(w.raw(), g.oc, K);
  const auto chunks = make_chunks(g);
  const auto jobs = static_cast<std::int64_t>(chunks.size()) * g.n;

#pragma omp parallel
  {
    std::vector<Real> col;
#pragma omp for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
      const std::int64_t n = job / static_cast<std::int64_t>(chunks.size());
      const Chunk& ch = chunks[static_cast<std::size_t>(job % static_cast<std::int64_t>(chunks.size()))];
      const std::int64_t cols = (ch.od1 - ch.od0) * g.oh * g.ow;
      col.resize(static_cast<std::size_t>(K * cols));
      im2col(x.raw() + n * g.ic * g.in_plane(), g, ch, col.data());
      StridedMap ym(y.raw() + n * g.oc * g.out_plane() + ch.od0 * g.oh * g.ow, g.oc, cols,
                    Eigen::OuterStride<>(g.out_plane()));
      ym.noalias() = wm * ConstMap(col.data(), K, cols);
      if (!bias.empty()) {
        for (std::int64_t oc = 0; oc < g.oc; ++oc) ym.row(oc).array() += bias[static_cast<std::size_t>(oc)];
      }
    }
  }
  return y;
}

Tensor conv3d_backward_input(const Tensor& gy, const Tensor& w, const ConvSpec& spec,
                             const Shape5& input_shape) {
  const Shape5 out_shape = conv3d_output_shape(input_shape, spec);
  require_same_shape(gy.shape(), out_shape, "conv3d_backward_input: output gradient");
  check_weight_shape(w, spec, "conv3d_backward_input");
  Tensor gx(input_shape);
  const ConvGeometry g = make_geometry(input_shape, out_shape, spec);
  const std::int64_t K = g.ic * g.kernel_volume();
  const ConstMap wm(w.raw(), g.oc, K);
  const auto chunks = make_chunks(g);

  // Chunks of one sample fold into overlapping input regions, so they run in
  // order; samples are independent.
#pragma omp parallel
  {
    std::vector<Real> col;
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (const Chunk& ch : chunks) {
        const std::int64_t cols = (ch.od1 - ch.od0) * g.oh * g.ow;
        col.resize(static_cast<std::size_t>(K * cols));
        ConstStridedMap gym(gy.raw() + n * g.oc * g.out_plane() + ch.od0 * g.oh * g.ow, g.oc, cols,
                            Eigen::OuterStride<>(g.out_plane()));
        Eigen::Map<RowMat>(col.data(), K, cols).noalias() = wm.transpose() * gym;
        col2im(col.data(), g, ch, gx.raw() + n * g.ic * g.in_plane());
      }
    }
  }
  return gx;
}

ConvParamGrads conv3d_backward_params(const Tensor& x, const Tensor& gy, const ConvSpec& spec) {
  const Shape5 out_shape = conv3d_output_shape(x.shape(), spec);
  require_same_shape(gy.shape(), out_shape, "conv3d_backward_params: output gradient");
  ConvParamGrads grads{Tensor(spec.weight_shape()),
                       std::vector<Real>(static_cast<std::size_t>(spec.out_channels), 0.0)};
  const ConvGeometry g = make_geometry(x.shape(), out_shape, spec);
  const std::int64_t K = g.ic * g.kernel_volume();
  const auto chunks = make_chunks(g);
  const auto jobs = static_cast<std::int64_t>(chunks.size()) * g.n;

  // Per-job partial products, summed afterwards in job order.
  std::vector<RowMat> partial(static_cast<std::size_t>(jobs));
#pragma omp parallel
  {
    std::vector<Real> col;
#pragma omp for schedule(static)
    for (std::int64_t job = 0; job < jobs; ++job) {
      const std::int64_t n = job / static_cast<std::int64_t>(chunks.size());
      const Chunk& ch = chunks[static_cast<std::size_t>(job % static_cast<std::int64_t>(chunks.size()))];
      const std::int64_t cols = (ch.od1 - ch.od0) * g.oh * g.ow;
      col.resize(static_cast<std::size_t>(K * cols));
      im2col(x.raw() + n * g.ic * g.in_plane(), g, ch, col.data());
      ConstStridedMap gym(gy.raw() + n * g.oc * g.out_plane() + ch.od0 * g.oh * g.ow, g.oc, cols,
                          Eigen::OuterStride<>(g.out_plane()));
      partial[static_cast<std::size_t>(job)].noalias() = gym * ConstMap(col.data(), K, cols).transpose();
    }
  }
  Eigen::Map<RowMat> gw(grads.weight.raw(), g.oc, K);
  gw.setZero();
  for (const auto& p : partial) gw += p;

  for (std::int64_t oc = 0; oc < g.oc; ++oc) {
    Real acc = 0.0;
    for (std::int64_t n = 0; n < g.n; ++n) {
      const Real* gyp = gy.raw() + (n * g.oc + oc) * g.out_plane();
      for (std::int64_t i = 0; i < g.out_plane(); ++i) acc += gyp[i];
    }
    grads.bias[static_cast<std::size_t>(oc)] = acc;
  }
  return grads;
}

ConvSpec adjoint_conv_spec(const ConvSpec& transposed) {
  ConvSpec s = transposed;
  s.in_channels = transposed.out_channels;
  s.out_channels = transposed.in_channels;
  return s;
}

Shape5 conv_transpose3d_output_shape(const Shape5& in, const ConvSpec& spec) {
  spec.validate();
  if (in.c != spec.in_channels) {
    throw ShapeError("conv_transpose3d: input axis c is " + std::to_string(in.c) +
                     ", spec expects " + std::to_string(spec.in_channels));
  }
  const Shape5 out{in.n, spec.out_channels, in.d * spec.stride[0], in.h * spec.stride[1],
                   in.w * spec.stride[2]};
  // The output must be a shape the adjoint conv maps back onto `in`.
  const Shape5 back = conv3d_output_shape(out, adjoint_conv_spec(spec));
  const Extent3 want = in.spatial_extents();
  const Extent3 got = back.spatial_extents();
  for (int a = 0; a < 3; ++a) {
    if (want[a] != got[a]) {
      throw ShapeError("conv_transpose3d: axis " +
                       std::string(kAxisNames[static_cast<std::size_t>(a) + 2]) + " output extent " +
                       std::to_string(out.spatial_extents()[a]) +
                       " is not mapped back onto input extent " + std::to_string(want[a]) +
                       " by the adjoint convolution");
    }
  }
  return out;
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, std::span<const Real> bias,
                        const ConvSpec& spec) {
  const Shape5 out_shape = conv_transpose3d_output_shape(x.shape(), spec);
  const ConvSpec adj = adjoint_conv_spec(spec);
  check_weight_shape(w, adj, "conv_transpose3d");
  if (!bias.empty() && static_cast<std::int64_t>(bias.size()) != spec.out_channels) {
    throw ShapeError("conv_transpose3d: bias length " + std::to_string(bias.size()) +
                     " != out_channels " + std::to_string(spec.out_channels));
  }
  Tensor y = conv3d_backward_input(x, w, adj, out_shape);
  if (!bias.empty()) {
    const std::int64_t plane = out_shape.spatial();
    for (std::int64_t n = 0; n < out_shape.n; ++n) {
      for (std::int64_t c = 0; c < out_shape.c; ++c) {
        Real* p = y.raw() + (n * out_shape.c + c) * plane;
        const Real b = bias[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < plane; ++i) p[i] += b;
      }
    }
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape5& s = x.shape();
  Tensor y(Shape5{s.n, s.c, 1, 1, 1});
  const std::int64_t plane = s.spatial();
  for (std::int64_t i = 0; i < s.n * s.c; ++i) {
    const Real* p = x.raw() + i * plane;
    Real acc = 0.0;
    for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
    y[i] = acc / static_cast<Real>(plane);
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& gy, const Shape5& shape) {
  require_same_shape(gy.shape(), Shape5{shape.n, shape.c, 1, 1, 1}, "global_avg_pool_backward");
  Tensor gx(shape);
  const std::int64_t plane = shape.spatial();
  const Real inv = 1.0 / static_cast<Real>(plane);
  for (std::int64_t i = 0; i < shape.n * shape.c; ++i) {
    std::fill(gx.raw() + i * plane, gx.raw() + (i + 1) * plane, gy[i] * inv);
  }
  return gx;
}

Tensor concat_channels(std::span<const Tensor* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape5 first = inputs.front()->shape();
  std::int64_t channels = 0;
  for (const Tensor* t : inputs) {
    const Shape5& s = t->shape();
    const Shape5 probe{s.n, first.c, s.d, s.h, s.w};
    require_same_shape(probe, first, "concat_channels");
    channels += s.c;
  }
  Tensor y(Shape5{first.n, channels, first.d, first.h, first.w});
  const std::int64_t plane = first.spatial();
  for (std::int64_t n = 0; n < first.n; ++n) {
    Real* dst = y.raw() + n * channels * plane;
    for (const Tensor* t : inputs) {
      const std::int64_t block = t->shape().c * plane;
      const Real* src = t->raw() + n * block;
      std::copy(src, src + block, dst);
      dst += block;
    }
  }
  return y;
}

Tensor concat_channels(std::initializer_list<const Tensor*> inputs) {
  return concat_channels(std::span<const Tensor* const>(inputs.begin(), inputs.size()));
}

Tensor concat_batch(const std::vector<const Tensor*>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_batch: no inputs");
  const Shape5 first = inputs.front()->shape();
  std::int64_t n = 0;
  for (const Tensor* t : inputs) {
    const Shape5& s = t->shape();
    require_same_shape(Shape5{first.n, s.c, s.d, s.h, s.w}, Shape5{first.n, first.c, first.d, first.h, first.w},
                       "concat_batch");
    n += s.n;
  }
  Tensor y(Shape5{n, first.c, first.d, first.h, first.w});
  Real* dst = y.raw();
  for (const Tensor* t : inputs) dst = std::copy(t->raw(), t->raw() + t->numel(), dst);
  return y;
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count) {
  const Shape5& s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside axis c of extent " +
                     std::to_string(s.c));
  }
  Tensor y(Shape5{s.n, count, s.d, s.h, s.w});
  const std::int64_t plane = s.spatial();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const Real* src = x.raw() + (n * s.c + begin) * plane;
    std::copy(src, src + count * plane, y.raw() + n * count * plane);
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const Real v = x[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  return y;
}

Tensor activate(const Tensor& x, Activation kind) {
  return kind == Activation::kRelu ? relu(x) : sigmoid(x);
}

Tensor relu_backward(const Tensor& gy, const Tensor& x) {
  require_same_shape(gy.shape(), x.shape(), "relu_backward");
  Tensor gx(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
  return gx;
}

Tensor sigmoid_backward(const Tensor& gy, const Tensor& y) {
  require_same_shape(gy.shape(), y.shape(), "sigmoid_backward");
  Tensor gx(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) gx[i] = gy[i] * y[i] * (1.0 - y[i]);
  return gx;
}

Tensor softmax_channels(const Tensor& x) {
  const Shape5& s = x.shape();
  Tensor y(s);
  const std::int64_t plane = s.spatial();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const std::int64_t base = n * s.c * plane;
    for (std::int64_t v = 0; v < plane; ++v) {
      Real m = x[base + v];
      for (std::int64_t c = 1; c < s.c; ++c) m = std::max(m, x[base + c * plane + v]);
      Real z = 0.0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        const Real e = std::exp(x[base + c * plane + v] - m);
        y[base + c * plane + v] = e;
        z += e;
      }
      for (std::int64_t c = 0; c < s.c; ++c) y[base + c * plane + v] /= z;
    }
  }
  return y;
}

Tensor softmax_channels_backward(const Tensor& gy, const Tensor& y) {
  require_same_shape(gy.shape(), y.shape(), "softmax_channels_backward");
  const Shape5& s = y.shape();
  Tensor gx(s);
  const std::int64_t plane = s.spatial();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const std::int64_t base = n * s.c * plane;
    for (std::int64_t v = 0; v < plane; ++v) {
      Real inner = 0.0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        const std::int64_t i = base + c * plane + v;
        inner += gy[i] * y[i];
      }
      for (std::int64_t c = 0; c < s.c; ++c) {
        const std::int64_t i = base + c * plane + v;
        gx[i] = y[i] * (gy[i] - inner);
      }
    }
  }
  return gx;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

Tensor scale(const Tensor& a, Real k) {
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] * k;
  return y;
}

bool broadcastable_to(const Shape5& b, const Shape5& a) {
  const std::array<std::int64_t, 5> eb = {b.n, b.c, b.d, b.h, b.w};
  const std::array<std::int64_t, 5> ea = {a.n, a.c, a.d, a.h, a.w};
  for (std::size_t i = 0; i < 5; ++i) {
    if (eb[i] != ea[i] && eb[i] != 1) return false;
  }
  return true;
}

namespace {

// Strides of `b` laid against the index space of `a`, 0 on broadcast axes.
std::array<std::int64_t, 5> broadcast_strides(const Shape5& b, const Shape5& a) {
  const std::array<std::int64_t, 5> eb = {b.n, b.c, b.d, b.h, b.w};
  const std::array<std::int64_t, 5> ea = {a.n, a.c, a.d, a.h, a.w};
  std::array<std::int64_t, 5> strides{};
  std::int64_t acc = 1;
  for (int i = 4; i >= 0; --i) {
    const auto u = static_cast<std::size_t>(i);
    strides[u] = (eb[u] == ea[u]) ? acc : 0;
    acc *= eb[u];
  }
  return strides;
}

void require_broadcastable(const Shape5& b, const Shape5& a, const char* op) {
  const std::array<std::int64_t, 5> eb = {b.n, b.c, b.d, b.h, b.w};
  const std::array<std::int64_t, 5> ea = {a.n, a.c, a.d, a.h, a.w};
  for (std::size_t i = 0; i < 5; ++i) {
    if (eb[i] != ea[i] && eb[i] != 1) {
      throw ShapeError(std::string(op) + ": axis " + kAxisNames[i] + " extent " +
                       std::to_string(eb[i]) + " cannot broadcast to " + std::to_string(ea[i]));
    }
  }
}

// Visits (linear index into a, linear index into b) in row-major order of a.
template <typename Fn>
void for_each_broadcast(const Shape5& a, const std::array<std::int64_t, 5>& st, Fn&& fn) {
  std::int64_t i = 0;
  for (std::int64_t n = 0; n < a.n; ++n)
    for (std::int64_t c = 0; c < a.c; ++c)
      for (std::int64_t d = 0; d < a.d; ++d)
        for (std::int64_t h = 0; h < a.h; ++h) {
          const std::int64_t row = n * st[0] + c * st[1] + d * st[2] + h * st[3];
          for (std::int64_t w = 0; w < a.w; ++w) fn(i++, row + w * st[4]);
        }
}

}  // namespace

Tensor broadcast_mul(const Tensor& a, const Tensor& b) {
  require_broadcastable(b.shape(), a.shape(), "broadcast_mul");
  Tensor y(a.shape());
  const auto st = broadcast_strides(b.shape(), a.shape());
  for_each_broadcast(a.shape(), st, [&](std::int64_t i, std::int64_t j) { y[i] = a[i] * b[j]; });
  return y;
}

Tensor reduce_to(const Tensor& x, const Shape5& target) {
  require_broadcastable(target, x.shape(), "reduce_to");
  Tensor y(target);
  const auto st = broadcast_strides(target, x.shape());
  for_each_broadcast(x.shape(), st, [&](std::int64_t i, std::int64_t j) { y[j] += x[i]; });
  return y;
}

BatchNormResult batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           Tensor& running_mean, Tensor& running_var, NormMode mode) {
  const Shape5& s = x.shape();
  const Shape5 per_channel{1, s.c, 1, 1, 1};
  require_same_shape(gamma.shape(), per_channel, "batch_norm: gamma");
  require_same_shape(beta.shape(), per_channel, "batch_norm: beta");
  require_same_shape(running_mean.shape(), per_channel, "batch_norm: running_mean");
  require_same_shape(running_var.shape(), per_channel, "batch_norm: running_var");

  BatchNormResult r{Tensor(s), Tensor(s), std::vector<Real>(static_cast<std::size_t>(s.c))};
  const std::int64_t plane = s.spatial();
  const auto count = static_cast<Real>(s.n * plane);

  for (std::int64_t c = 0; c < s.c; ++c) {
    Real mean = 0.0;
    Real var = 0.0;
    if (mode == NormMode::kTrain) {
      for (std::int64_t n = 0; n < s.n; ++n) {
        const Real* p = x.raw() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= count;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const Real* p = x.raw() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      const Real unbiased = count > 1.0 ? var / (count - 1.0) : 0.0;
      var /= count;
      const Real m = BatchNormParams::kMomentum;
      running_mean[c] = (1.0 - m) * running_mean[c] + m * mean;
      running_var[c] = (1.0 - m) * running_var[c] + m * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const Real inv_std = 1.0 / std::sqrt(var + BatchNormParams::kEps);
    r.inv_std[static_cast<std::size_t>(c)] = inv_std;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::int64_t off = (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const Real xh = (x[off + i] - mean) * inv_std;
        r.xhat[off + i] = xh;
        r.y[off + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  return r;
}

BatchNormGrads batch_norm_backward(const Tensor& gy, const BatchNormResult& fwd, const Tensor& gamma,
                                   NormMode mode) {
  const Shape5& s = gy.shape();
  require_same_shape(s, fwd.xhat.shape(), "batch_norm_backward");
  BatchNormGrads g{Tensor(s), Tensor(gamma.shape()), Tensor(gamma.shape())};
  const std::int64_t plane = s.spatial();
  const auto count = static_cast<Real>(s.n * plane);

  for (std::int64_t c = 0; c < s.c; ++c) {
    Real sum_gy = 0.0;
    Real sum_gy_xhat = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::int64_t off = (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_gy += gy[off + i];
        sum_gy_xhat += gy[off + i] * fwd.xhat[off + i];
      }
    }
    g.beta[c] = sum_gy;
    g.gamma[c] = sum_gy_xhat;
    const Real k = gamma[c] * fwd.inv_std[static_cast<std::size_t>(c)];
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::int64_t off = (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        if (mode == NormMode::kTrain) {
          g.x[off + i] = k * (gy[off + i] - sum_gy / count - fwd.xhat[off + i] * sum_gy_xhat / count);
        } else {
          g.x[off + i] = k * gy[off + i];
        }
      }
    }
  }
  return g;
}

}  // namespace vseg
