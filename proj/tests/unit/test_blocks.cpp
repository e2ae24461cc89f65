#include <cmath>
#include <random>

#include "doctest.h"
#include "support/oracles.hpp"
#include "vseg/blocks.hpp"
#include "vseg/net_config.hpp"

using namespace vseg;

namespace {

template <typename Block>
Tensor run(const Block& b, ParamStore& p, const Tensor& x, NormMode mode = NormMode::kInference) {
  Tape t(mode);
  return b.forward(t.input(x), p).value();
}

template <typename Block>
Real check_block(const Block& b, ParamStore& p, const Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor proj = Tensor::normal(x.shape(), rng);
  Graph g(p, {"x"}, [&b, proj](Tape&, const std::map<std::string, Var>& in, ParamStore& ps) {
    return std::map<std::string, Var>{{"loss", ad::dot(b.forward(in.at("x"), ps), proj)}};
  });
  GradCheckOptions o;
  o.check_inputs = true;
  o.eps = 1e-5;
  return grad_check(g, {{"x", x}}, o).max_rel_error;
}

}  // namespace

TEST_SUITE("blocks") {
  TEST_CASE("residual block") {
    std::mt19937_64 rng(1);
    ResidualBlock rb("res", 4);
    ParamStore p;
    rb.declare(p, rng);
    const Tensor x = Tensor::normal({1, 4, 8, 8, 8}, rng);
    CHECK(run(rb, p, x).shape() == x.shape());

    ParamStore z = p;
    zero_conv_weights(z, "res");
    // Zero weights and zero shift leave only the skip path.
    CHECK(max_abs_diff(run(rb, z, x), x) == 0.0);

    Tape t;
    CHECK_THROWS_AS(rb.forward(t.input(Tensor(Shape5{1, 3, 2, 2, 2})), p), ShapeError);

    ParamStore small;
    ResidualBlock rs("res", 2);
    rs.declare(small, rng);
    randomize_offsets(small, 21);
    CHECK(check_block(rs, small, Tensor::normal({1, 2, 3, 3, 3}, rng), 2) < 1e-5);
  }

  TEST_CASE("contrast enhancement is one gate per sample") {
    std::mt19937_64 rng(2);
    ContrastEnhancement ceb("ceb", 3);
    ParamStore p;
    ceb.declare(p, rng);
    const Tensor x = Tensor::normal({2, 3, 4, 4, 4}, rng);

    ParamStore z = p;
    zero_conv_weights(z, "ceb.squeeze");
    CHECK(max_abs_diff(run(ceb, z, x), scale(x, 0.5)) < 1e-15);

    ParamStore sat = p;
    sat.get("ceb.squeeze.b").fill(40.0);
    CHECK(max_abs_diff(run(ceb, sat, x), x) < 1e-3);

    const Tensor y = run(ceb, p, x);
    for (std::int64_t n = 0; n < 2; ++n) {
      const Real r0 = y.at(n, 0, 0, 0, 0) / x.at(n, 0, 0, 0, 0);
      for (std::int64_t i = 0; i < 3 * 64; ++i) {
        const std::int64_t k = n * 3 * 64 + i;
        CHECK(y[k] / x[k] == doctest::Approx(r0).epsilon(1e-12));
      }
      CHECK(r0 > 0.0);
      CHECK(r0 < 1.0);
    }
    CHECK(check_block(ceb, p, Tensor::normal({1, 3, 3, 2, 3}, rng), 3) < 1e-5);
  }

  TEST_CASE("channel attention gates channels independently") {
    std::mt19937_64 rng(3);
    ChannelAttention cab("cab", 2);
    ParamStore p;
    cab.declare(p, rng);
    const Tensor x = Tensor::normal({1, 2, 3, 3, 3}, rng);

    ParamStore z = p;
    zero_conv_weights(z, "cab.expand");
    CHECK(max_abs_diff(run(cab, z, x), scale(x, 0.5)) < 1e-15);

    // Zero expand weights with distinct biases pin distinct per-channel gates.
    z.get("cab.expand.b")[0] = 1.0;
    z.get("cab.expand.b")[1] = -1.0;
    const Tensor y = run(cab, z, x);
    const Real g0 = 1.0 / (1.0 + std::exp(-1.0));
    for (std::int64_t i = 0; i < 27; ++i) {
      CHECK(y[i] == doctest::Approx(g0 * x[i]).epsilon(1e-12));
      CHECK(y[27 + i] == doctest::Approx((1.0 - g0) * x[27 + i]).epsilon(1e-12));
    }
    CHECK(check_block(cab, p, x, 4) < 1e-5);
  }

  TEST_CASE("position sensitive attention") {
    std::mt19937_64 rng(4);
    PositionSensitive psb("psb", 2);
    ParamStore p;
    psb.declare(p, rng);
    const Tensor x = Tensor::normal({1, 2, 4, 4, 4}, rng);

    ParamStore z = p;
    zero_conv_weights(z, "psb.conv2");
    CHECK(max_abs_diff(run(psb, z, x), scale(x, 0.5)) < 1e-15);

    const Tensor y = run(psb, p, x);
    bool varies = false;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      CHECK(std::abs(y[i]) <= std::abs(x[i]));
      if (i > 0 && std::abs(y[i] / x[i] - y[0] / x[0]) > 1e-6) varies = true;
    }
    CHECK(varies);
    Tape t;
    Tensor a = psb.attention(t.input(x), p).value();
    CHECK(a.shape() == x.shape());
    for (Real v : a.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    randomize_offsets(p, rng());
    CHECK(check_block(psb, p, Tensor::normal({1, 2, 3, 3, 3}, rng), 5) < 1e-5);
  }

  TEST_CASE("feature blocks") {
    std::mt19937_64 rng(5);
    const std::vector<std::pair<AttentionKind, std::int64_t>> kinds = {
        {AttentionKind::kFv, 3}, {AttentionKind::kCeb, 2}, {AttentionKind::kCab, 2}, {AttentionKind::kPsb, 2}};
    for (auto [kind, branches] : kinds) {
      FeatureBlock fb("fv", 4, kind);
      CHECK(fb.concat_channels() == branches * 4);
      ParamStore p;
      fb.declare(p, rng);
      const Tensor x = Tensor::normal({1, 4, 4, 4, 4}, rng);
      CHECK(run(fb, p, x).shape() == x.shape());
      ParamStore z = p;
      zero_conv_weights(z, "fv.post");
      CHECK(max_abs_diff(run(fb, z, x), x) == 0.0);
    }
    CHECK_THROWS_AS(FeatureBlock("x", 4, AttentionKind::kNone), ConfigError);
  }

  TEST_CASE("feature block gradient check") {
    std::mt19937_64 rng(6);
    FeatureBlock fb("fv", 2, AttentionKind::kFv);
    ParamStore p;
    fb.declare(p, rng);
    randomize_offsets(p, rng());
    CHECK(check_block(fb, p, Tensor::normal({1, 2, 3, 3, 3}, rng), 7) < 1e-4);
  }

  TEST_CASE("zeroed post conv cuts branch gradients and keeps the identity path") {
    std::mt19937_64 rng(7);
    FeatureBlock fb("fv", 2, AttentionKind::kFv);
    ParamStore p;
    fb.declare(p, rng);
    zero_conv_weights(p, "fv.post");
    const Tensor x = Tensor::normal({1, 2, 3, 3, 3}, rng);
    const Tensor proj = Tensor::normal(x.shape(), rng);
    Graph g(p, {"x"}, [&](Tape&, const std::map<std::string, Var>& in, ParamStore& ps) {
      return std::map<std::string, Var>{{"loss", ad::dot(fb.forward(in.at("x"), ps), proj)}};
    });
    g.forward({{"x", x}});
    GradientMap gm = g.backward();
    for (const auto& [name, grad] : gm.items()) {
      if (name.starts_with("fv.ceb") || name.starts_with("fv.psb") || name.starts_with("fv.pre")) {
        CAPTURE(name);
        CHECK(grad.max_abs() == 0.0);
      }
    }
    CHECK(max_abs_diff(g.input_grad("x"), proj) == 0.0);
  }

  TEST_CASE("atrous pyramid channel arithmetic") {
    AtrousPyramid pp("pp", 16, PyramidKind::kPaspp);
    CHECK(pp.branch_channels() == 4);
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(pp.reduce()[t].spec.out_channels == 4);
      CHECK(pp.atrous()[t].spec.dilation == (std::int64_t{1} << t));
    }
    CHECK(pp.fuse()[0].spec.out_channels == 8);
    CHECK(pp.output().spec.in_channels == 16);
    CHECK(pp.output().spec.out_channels == 16);
    CHECK_THROWS_AS(AtrousPyramid("bad", 6, PyramidKind::kPaspp), ConfigError);

    std::mt19937_64 rng(8);
    for (PyramidKind k : {PyramidKind::kAspp, PyramidKind::kResAspp, PyramidKind::kPaspp}) {
      AtrousPyramid a("a", 8, k);
      ParamStore p;
      a.declare(p, rng);
      const Tensor x = Tensor::normal({1, 8, 4, 4, 4}, rng);
      CHECK(run(a, p, x).shape() == x.shape());
    }
  }

  TEST_CASE("progressive pyramid matches its transcription") {
    std::mt19937_64 rng(9);
    for (bool literal : {true, false}) {
      AtrousPyramid pp("pp", 8, PyramidKind::kPaspp, literal);
      ParamStore p;
      pp.declare(p, rng);
      randomize_offsets(p, rng());
      const Tensor x = Tensor::normal({1, 8, 8, 8, 8}, rng);
      CHECK(max_abs_diff(run(pp, p, x), oracle::paspp(x, p, "pp", 8, literal)) < 1e-12);
    }
  }

  TEST_CASE("parallel pyramid with identical branches") {
    std::mt19937_64 rng(10);
    AtrousPyramid a("a", 4, PyramidKind::kAspp);
    ParamStore p;
    a.declare(p, rng);
    // Same reduce weights and kernels concentrated at the centre tap make the
    // four branches identical whatever their dilation.
    Tensor centre(Shape5{1, 1, 3, 3, 3}, 0.0);
    centre.at(0, 0, 1, 1, 1) = 1.3;
    for (int t = 1; t <= 4; ++t) {
      p.get("a.reduce" + std::to_string(t) + ".w") = p.get("a.reduce1.w");
      p.get("a.atrous" + std::to_string(t) + ".w") = centre;
    }
    p.get("a.out.w").fill(0.0);
    for (std::int64_t c = 0; c < 4; ++c) p.get("a.out.w").at(c, c, 0, 0, 0) = 1.0;
    const Tensor x = Tensor::normal({1, 4, 4, 4, 4}, rng);
    const Tensor y = run(a, p, x);
    for (std::int64_t i = 0; i < 64; ++i) {
      CHECK(y[i] == y[64 + i]);
      CHECK(y[i] == y[128 + i]);
      CHECK(y[i] == y[192 + i]);
    }
  }

  TEST_CASE("residual pyramid equals the progressive one under identity fusion") {
    std::mt19937_64 rng(11);
    AtrousPyramid pp("pp", 8, PyramidKind::kPaspp);
    AtrousPyramid ra("pp", 8, PyramidKind::kResAspp);
    ParamStore p;
    pp.declare(p, rng);
    for (const char* f : {"pp.fuse1", "pp.fuse2"}) {
      const std::string u(f);
      Tensor& w = p.get(u + ".w");
      w.fill(0.0);
      for (std::int64_t c = 0; c < 4; ++c) w.at(c, c, 0, 0, 0) = 1.0;
      // Fused inputs are sums of ReLU outputs, so only the norm needs undoing.
      p.get(u + ".bn.gamma").fill(std::sqrt(1.0 + BatchNormParams::kEps));
    }
    const Tensor x = Tensor::normal({1, 8, 4, 4, 4}, rng);
    CHECK(max_abs_diff(run(pp, p, x), run(ra, p, x)) < 1e-12);
  }

  TEST_CASE("pyramid gradient checks") {
    std::mt19937_64 rng(12);
    for (PyramidKind k : {PyramidKind::kAspp, PyramidKind::kResAspp, PyramidKind::kPaspp}) {
      AtrousPyramid a("a", 4, k);
      ParamStore p;
      a.declare(p, rng);
      randomize_offsets(p, rng());
      CAPTURE(to_string(k));
      CHECK(check_block(a, p, Tensor::normal({1, 4, 3, 3, 3}, rng), 13) < 1e-4);
    }
  }
}
