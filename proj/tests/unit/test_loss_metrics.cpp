#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "support/oracles.hpp"
#include "vseg/loss.hpp"
#include "vseg/metrics.hpp"

using namespace vseg;

namespace {

Mask from_bits(std::initializer_list<int> bits) {
  Mask m(1, 1, static_cast<std::int64_t>(bits.size()));
  std::size_t i = 0;
  for (int b : bits) m.voxels[i++] = static_cast<std::uint8_t>(b);
  return m;
}

Tensor half_ones(const Shape5& s) {
  Tensor g(s);
  for (std::int64_t i = 0; i < g.numel(); i += 2) g[i] = 1.0;
  return g;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("hand cases") {
    const Mask a = from_bits({1, 1, 1, 1, 0, 0, 0, 0});
    const Mask b = from_bits({0, 0, 1, 1, 1, 1, 0, 0});
    const Mask c = from_bits({0, 0, 0, 0, 0, 0, 1, 1});
    CHECK(dice_coefficient(a, a) == 1.0);
    CHECK(dice_coefficient(a, c) == 0.0);
    CHECK(dice_coefficient(a, b) == 0.5);
    CHECK(dice_coefficient(Mask(2, 2, 2), Mask(2, 2, 2)) == 1.0);
    CHECK(dice_coefficient(Mask(2, 2, 2), Mask(2, 2, 2, 1)) == 0.0);
  }

  TEST_CASE("superset and subset predictions") {
    const Mask ref = from_bits({0, 1, 1, 0, 0, 0});
    const Mask sup = from_bits({1, 1, 1, 1, 0, 0});
    const Mask sub = from_bits({0, 1, 0, 0, 0, 0});
    CHECK(sensitivity(sup, ref) == 1.0);
    CHECK(precision(sup, ref) < 1.0);
    CHECK(precision(sub, ref) == 1.0);
    CHECK(sensitivity(sub, ref) < 1.0);
  }

  TEST_CASE("empty denominators") {
    const Mask none(1, 2, 2);
    const Mask some = from_bits({1, 0, 0, 0});
    CHECK(sensitivity(none, none) == 1.0);
    CHECK(precision(none, none) == 1.0);
    CHECK(precision(Mask(1, 1, 4), some) == 0.0);
    CHECK(sensitivity(some, Mask(1, 1, 4)) == 0.0);
  }

  TEST_CASE("confusion counting oracle on random pairs") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
      const Mask p = oracle::random_mask(8, 8, 8, density(rng), rng);
      const Mask r = oracle::random_mask(8, 8, 8, density(rng), rng);
      const Confusion o = oracle::count(p, r);
      const Confusion c = confusion(p, r);
      CHECK(c.tp == o.tp);
      CHECK(c.fp == o.fp);
      CHECK(c.fn == o.fn);
      CHECK(c.tn == o.tn);
      CHECK(dice_coefficient(p, r) == oracle::dice(o));
      CHECK(sensitivity(p, r) == oracle::sensitivity(o));
      CHECK(precision(p, r) == oracle::precision(o));
      CHECK(dice_coefficient(p, r) == dice_coefficient(r, p));
      CHECK(dice_coefficient(p, r) >= 0.0);
      CHECK(dice_coefficient(p, r) <= 1.0);
    }
  }

  TEST_CASE("shape mismatch") {
    CHECK_THROWS_AS(dice_coefficient(Mask(2, 2, 2), Mask(2, 2, 3)), ShapeError);
    CHECK_THROWS_AS(sensitivity(Mask(2, 2, 2), Mask(1, 2, 2)), ShapeError);
    CHECK_THROWS_AS(precision(Mask(2, 3, 2), Mask(2, 2, 2)), ShapeError);
  }

  TEST_CASE("summary means and table format") {
    MetricsSummary s = summarize({{"a", Task::kLesion, 0.4, 1.0, 0.5}, {"b", Task::kLesion, 0.8, 0.5, 0.25}});
    CHECK(s.mean_dice == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(s.mean_sensitivity == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(s.mean_precision == doctest::Approx(0.375).epsilon(1e-15));
    CHECK_THROWS_AS(summarize({}), ConfigError);

    CHECK(format_metrics_line({"case_7", Task::kLung, 1.0 / 3.0, 1.0, 0.0}) ==
          "case_7\tlung\t0.333333\t1.000000\t0.000000");
    std::ostringstream os;
    write_metrics_table(os, s);
    CHECK(os.str() ==
          "case_id\ttask\tdice\tsensitivity\tprecision\n"
          "a\tlesion\t0.400000\t1.000000\t0.500000\n"
          "b\tlesion\t0.800000\t0.500000\t0.250000\n"
          "mean\tlesion\t0.600000\t0.750000\t0.375000\n");
  }
}

TEST_SUITE("loss") {
  TEST_CASE("soft dice closed forms") {
    const Shape5 s{1, 1, 2, 4, 4};
    const Tensor g = half_ones(s);
    CHECK(soft_dice_loss(g, g) <= kDiceSmooth);
    CHECK(soft_dice_loss(g, g) >= 0.0);

    const double n = static_cast<double>(s.numel());
    const double expected = 1.0 - (2.0 * 0.5 * (n / 2) + kDiceSmooth) / (0.5 * n + n / 2 + kDiceSmooth);
    CHECK(soft_dice_loss(Tensor(s, 0.5), g) == doctest::Approx(expected).epsilon(1e-15));
  }

  TEST_CASE("soft dice decreases as one voxel moves toward the reference") {
    std::mt19937_64 rng(3);
    const Shape5 s{1, 1, 2, 3, 3};
    const Tensor g = half_ones(s);
    Tensor p = Tensor::uniform(s, rng, 0.1, 0.9);
    for (std::int64_t i : {0, 1, 7}) {
      double prev = soft_dice_loss(p, g);
      const double target = g[i];
      for (int k = 0; k < 10; ++k) {
        p[i] += 0.1 * (target - p[i]);
        const double now = soft_dice_loss(p, g);
        CHECK(now < prev);
        prev = now;
      }
    }
  }

  TEST_CASE("cross entropy limits and the combined definition") {
    const Shape5 s{2, 1, 2, 3, 4};
    const Tensor g = half_ones(s);
    CHECK(cross_entropy_loss(Tensor(s, 0.5), g) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const double hard = cross_entropy_loss(g, g);
    CHECK(hard > 0.0);
    CHECK(hard < 2e-7);

    std::mt19937_64 rng(4);
    for (int k = 0; k < 20; ++k) {
      const Tensor p = Tensor::uniform(s, rng, 0.0, 1.0);
      Tensor r = Tensor::uniform(s, rng, 0.0, 1.0);
      for (Real& v : r.data()) v = v > 0.5 ? 1.0 : 0.0;
      CHECK(combined_loss(p, r) == 0.5 * soft_dice_loss(p, r) + 0.5 * cross_entropy_loss(p, r));
    }
  }

  TEST_CASE("two-channel form equals the binary form") {
    std::mt19937_64 rng(5);
    const Shape5 s{2, 1, 2, 2, 3};
    const Tensor p = Tensor::uniform(s, rng, 0.05, 0.95);
    const Tensor g = half_ones(s);
    Tensor two(Shape5{2, 2, 2, 2, 3});
    const std::int64_t sp = s.spatial();
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < sp; ++i) {
        two[(2 * n) * sp + i] = 1.0 - p[n * sp + i];
        two[(2 * n + 1) * sp + i] = p[n * sp + i];
      }
    CHECK(soft_dice_loss(two, g) == doctest::Approx(soft_dice_loss(p, g)).epsilon(1e-14));
    CHECK(cross_entropy_loss(two, g) == doctest::Approx(cross_entropy_loss(p, g)).epsilon(1e-14));
  }

  TEST_CASE("shape errors") {
    CHECK_THROWS_AS(soft_dice_loss(Tensor(Shape5{1, 3, 2, 2, 2}), Tensor(Shape5{1, 1, 2, 2, 2})), ShapeError);
    CHECK_THROWS_AS(cross_entropy_loss(Tensor(Shape5{1, 1, 2, 2, 2}), Tensor(Shape5{1, 1, 2, 2, 3})), ShapeError);
  }

  TEST_CASE("loss gradients against finite differences") {
    std::mt19937_64 rng(6);
    const Shape5 s{2, 1, 2, 3, 3};
    const Tensor g = half_ones(s);
    ParamStore p;
    p.add("p", Tensor::uniform(s, rng, 0.05, 0.95));
    using Fn = std::function<Var(Var)>;
    const std::vector<std::pair<const char*, Fn>> cases = {
        {"dice", [&](Var x) { return ad::soft_dice_loss(x, g); }},
        {"cross_entropy", [&](Var x) { return ad::cross_entropy_loss(x, g); }},
        {"combined", [&](Var x) { return ad::combined_loss(x, g).combined; }},
    };
    for (const auto& [name, fn] : cases) {
      Graph graph(p, {}, [fn](Tape& t, const std::map<std::string, Var>&, ParamStore& ps) {
        return std::map<std::string, Var>{{"loss", fn(t.param(ps, "p"))}};
      });
      CAPTURE(name);
      CHECK(grad_check(graph, {}).max_rel_error < 1e-6);
    }
  }

  TEST_CASE("autodiff values match the plain functions") {
    std::mt19937_64 rng(7);
    const Shape5 s{1, 1, 2, 4, 2};
    const Tensor p = Tensor::uniform(s, rng, 0.0, 1.0);
    const Tensor g = half_ones(s);
    Tape t;
    const ad::LossTerms l = ad::combined_loss(t.input(p), g);
    CHECK(l.dice.value().item() == soft_dice_loss(p, g));
    CHECK(l.cross_entropy.value().item() == cross_entropy_loss(p, g));
    CHECK(l.combined.value().item() == combined_loss(p, g));
  }
}
