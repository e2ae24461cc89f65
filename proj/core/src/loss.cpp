#include "vseg/loss.hpp"

#include <algorithm>
#include <cmath>

namespace vseg {
namespace {

void check_pair(const Tensor& prob, const Tensor& ref, const char* op) {
  const Shape5& p = prob.shape();
  const Shape5& g = ref.shape();
  if (g.c != 1) throw ShapeError(std::string(op) + ": reference axis c must be 1");
  if (p.c != 1 && p.c != 2) throw ShapeError(std::string(op) + ": probability axis c must be 1 or 2");
  require_same_shape(Shape5{p.n, 1, p.d, p.h, p.w}, g, op);
}

// Pointer to the foreground channel of sample n.
const Real* fg(const Tensor& prob, std::int64_t n) {
  const Shape5& s = prob.shape();
  return prob.raw() + (n * s.c + (s.c - 1)) * s.spatial();
}

struct DiceSums {
  Real inter = 0.0;
  Real psum = 0.0;
  Real gsum = 0.0;
};

DiceSums dice_sums(const Tensor& prob, const Tensor& ref) {
  DiceSums s;
  const Shape5& sh = prob.shape();
  for (std::int64_t n = 0; n < sh.n; ++n) {
    const Real* p = fg(prob, n);
    const Real* g = ref.raw() + n * sh.spatial();
    for (std::int64_t i = 0; i < sh.spatial(); ++i) {
      s.inter += p[i] * g[i];
      s.psum += p[i];
      s.gsum += g[i];
    }
  }
  return s;
}

Real clamp_prob(Real p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

Real soft_dice_loss(const Tensor& prob, const Tensor& ref) {
  check_pair(prob, ref, "soft_dice_loss");
  const DiceSums s = dice_sums(prob, ref);
  return 1.0 - (2.0 * s.inter + kDiceSmooth) / (s.psum + s.gsum + kDiceSmooth);
}

Real cross_entropy_loss(const Tensor& prob, const Tensor& ref) {
  check_pair(prob, ref, "cross_entropy_loss");
  const Shape5& sh = prob.shape();
  const std::int64_t plane = sh.spatial();
  Real acc = 0.0;
  for (std::int64_t n = 0; n < sh.n; ++n) {
    const Real* g = ref.raw() + n * plane;
    if (sh.c == 1) {
      const Real* p = fg(prob, n);
      for (std::int64_t i = 0; i < plane; ++i) {
        const Real q = clamp_prob(p[i]);
        acc -= g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q);
      }
    } else {
      const Real* p0 = prob.raw() + (n * 2) * plane;
      const Real* p1 = p0 + plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        acc -= g[i] * std::log(clamp_prob(p1[i])) + (1.0 - g[i]) * std::log(clamp_prob(p0[i]));
      }
    }
  }
  return acc / static_cast<Real>(sh.n * plane);
}

Real combined_loss(const Tensor& prob, const Tensor& ref) {
  return 0.5 * soft_dice_loss(prob, ref) + 0.5 * cross_entropy_loss(prob, ref);
}

namespace ad {

Var soft_dice_loss(Var prob, const Tensor& ref) {
  check_pair(prob.value(), ref, "soft_dice_loss");
  const Real value = vseg::soft_dice_loss(prob.value(), ref);
  return prob.tape().record(Tensor::scalar(value), {prob}, [prob, ref](Tape& tp, const Tensor& gy, const Tensor&) {
    const Tensor& p = prob.value();
    const Shape5& sh = p.shape();
    const DiceSums s = dice_sums(p, ref);
    const Real num = 2.0 * s.inter + kDiceSmooth;
    const Real den = s.psum + s.gsum + kDiceSmooth;
    const Real k = gy.item();
    Tensor gp(sh);
    for (std::int64_t n = 0; n < sh.n; ++n) {
      const Real* g = ref.raw() + n * sh.spatial();
      Real* out = gp.raw() + (n * sh.c + (sh.c - 1)) * sh.spatial();
      for (std::int64_t i = 0; i < sh.spatial(); ++i) {
        out[i] = -k * (2.0 * g[i] * den - num) / (den * den);
      }
    }
    tp.accumulate(prob, std::move(gp));
  });
}

Var cross_entropy_loss(Var prob, const Tensor& ref) {
  const Real value = vseg::cross_entropy_loss(prob.value(), ref);
  return prob.tape().record(Tensor::scalar(value), {prob}, [prob, ref](Tape& tp, const Tensor& gy, const Tensor&) {
    const Tensor& p = prob.value();
    const Shape5& sh = p.shape();
    const std::int64_t plane = sh.spatial();
    const Real k = gy.item() / static_cast<Real>(sh.n * plane);
    // d/dq of -log(q) is -1/q; zero where the clamp is active.
    auto dlog = [](Real q) { return (q > kProbClamp && q < 1.0 - kProbClamp) ? 1.0 / q : 0.0; };
    Tensor gp(sh);
    for (std::int64_t n = 0; n < sh.n; ++n) {
      const Real* g = ref.raw() + n * plane;
      if (sh.c == 1) {
        const Real* q = p.raw() + n * plane;
        Real* out = gp.raw() + n * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          out[i] = -k * (g[i] * dlog(q[i]) - (1.0 - g[i]) * dlog(1.0 - q[i]));
        }
      } else {
        const Real* q0 = p.raw() + n * 2 * plane;
        const Real* q1 = q0 + plane;
        Real* o0 = gp.raw() + n * 2 * plane;
        Real* o1 = o0 + plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          o1[i] = -k * g[i] * dlog(q1[i]);
          o0[i] = -k * (1.0 - g[i]) * dlog(q0[i]);
        }
      }
    }
    tp.accumulate(prob, std::move(gp));
  });
}

LossTerms combined_loss(Var prob, const Tensor& ref) {
  LossTerms t;
  t.dice = soft_dice_loss(prob, ref);
  t.cross_entropy = cross_entropy_loss(prob, ref);
  t.combined = add(scale(t.dice, 0.5), scale(t.cross_entropy, 0.5));
  return t;
}

}  // namespace ad
}  // namespace vseg
