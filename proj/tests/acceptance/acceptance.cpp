// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "support/oracles.hpp"
#include "vseg/blocks.hpp"
#include "vseg/loss.hpp"
#include "vseg/metrics.hpp"
#include "vseg/network.hpp"
#include "vseg/trainer.hpp"
#include "vseg_cli/cli.hpp"

using namespace vseg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---- convolution ----------------------------------------------------------

Outcome conv_oracle() {
  Stopwatch sw;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::int64_t> extent(3, 9), batch(1, 2);
  Real worst = 0.0;
  std::array<int, 4> dilations{};
  for (int i = 0; i < 200; ++i) {
    const ConvSpec s = oracle::random_spec(rng);
    ++dilations[static_cast<std::size_t>(std::countr_zero(static_cast<std::uint64_t>(s.dilation)))];
    const Tensor x = Tensor::normal({batch(rng), s.in_channels, extent(rng), extent(rng), extent(rng)}, rng);
    const Tensor w = Tensor::normal(s.weight_shape(), rng);
    std::vector<Real> b(static_cast<std::size_t>(s.out_channels));
    for (auto& v : b) v = std::normal_distribution<Real>()(rng);
    worst = std::max(worst, max_abs_diff(conv3d(x, w, b, s), oracle::naive_conv3d(x, w, b, s)));
  }
  const double t = sw.seconds();
  const bool all_dilations = std::all_of(dilations.begin(), dilations.end(), [](int n) { return n > 0; });
  return {worst < 1e-12 && t < 60.0 && all_dilations,
          fmt("max abs error %.2e (< 1e-12) over 200 specs, dilations 1/2/4/8 used %d/%d/%d/%d times, %.2f s (< 60 s)",
              worst, dilations[0], dilations[1], dilations[2], dilations[3], t)};
}

Outcome adjoint() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::int64_t> ch(1, 4), half(1, 4);
  Real worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::int64_t ic = ch(rng), oc = ch(rng);
    const ConvSpec down = ConvSpec::down(ic, oc);
    const ConvSpec up = ConvSpec::up(oc, ic);
    const Tensor w = Tensor::normal(down.weight_shape(), rng);
    const Tensor x = Tensor::normal({1, ic, 2 * half(rng), 2 * half(rng), 2 * half(rng)}, rng);
    const Tensor cx = conv3d(x, w, {}, down);
    const Tensor y = Tensor::normal(cx.shape(), rng);
    const Real lhs = dot(cx, y);
    const Real rhs = dot(x, conv_transpose3d(y, w, {}, up));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300}));
  }
  return {worst < 1e-10, fmt("max relative error %.2e (< 1e-10) over 50 random pairs", worst)};
}

// ---- gradients ------------------------------------------------------------

template <typename Block>
GradCheckReport check_block(const Block& b, std::int64_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore p;
  b.declare(p, rng);
  randomize_offsets(p, rng());
  const Tensor x = Tensor::normal({1, channels, 3, 3, 3}, rng);
  const Tensor proj = Tensor::normal(x.shape(), rng);
  Graph g(p, {"x"}, [&b, proj](Tape&, const std::map<std::string, Var>& in, ParamStore& ps) {
    return std::map<std::string, Var>{{"loss", ad::dot(b.forward(in.at("x"), ps), proj)}};
  });
  GradCheckOptions o;
  o.check_inputs = true;
  return grad_check(g, {{"x", x}}, o);
}

Outcome gradient_suite() {
  Stopwatch sw;
  std::vector<std::pair<std::string, GradCheckReport>> reports;
  reports.emplace_back("residual", check_block(ResidualBlock("res", 2), 2, 1));
  for (auto [kind, name] : {std::pair{AttentionKind::kCeb, "ceb"}, std::pair{AttentionKind::kPsb, "psb"},
                            std::pair{AttentionKind::kCab, "cab"}, std::pair{AttentionKind::kFv, "fv"}}) {
    reports.emplace_back(name, check_block(FeatureBlock("att", 2, kind), 2, 2));
  }
  for (auto [kind, name] : {std::pair{PyramidKind::kAspp, "aspp"}, std::pair{PyramidKind::kResAspp, "res_aspp"},
                            std::pair{PyramidKind::kPaspp, "paspp"}}) {
    reports.emplace_back(name, check_block(AtrousPyramid("pyr", 4, kind), 4, 3));
  }
  NetConfig tiny;
  tiny.base_channels = 2;
  GradCheckOptions o;
  o.eps = 1e-3;
  reports.emplace_back("network", cli::check_network(tiny, o, 1));
  const double t = sw.seconds();

  bool below = true;
  std::string parts;
  std::int64_t skipped = 0, checked = 0;
  for (const auto& [name, r] : reports) {
    below = below && r.max_rel_error < 1e-4;
    skipped += r.skipped;
    checked += r.checked;
    parts += fmt("%s %.1e, ", name.c_str(), r.max_rel_error);
  }
  return {below && t < 600.0, parts + fmt("%s < 1e-4; %lld elements, %lld skipped at kinks; %.0f s (< 600 s)",
                                         below ? "all" : "not all", static_cast<long long>(checked),
                                         static_cast<long long>(skipped), t)};
}

// ---- blocks and structure -------------------------------------------------

Outcome paspp_oracle() {
  std::mt19937_64 rng(31);
  Real worst = 0.0;
  int cases = 0;
  for (bool literal : {true, false}) {
    for (std::int64_t c : {4, 8, 16}) {
      for (int k = 0; k < 3; ++k) {
        AtrousPyramid pp("pp", c, PyramidKind::kPaspp, literal);
        ParamStore p;
        pp.declare(p, rng);
        randomize_offsets(p, rng());
        const Tensor x = Tensor::normal({1, c, 8, 8, 8}, rng);
        Tape t(NormMode::kInference);
        const Tensor y = pp.forward(t.input(x), p).value();
        worst = std::max(worst, max_abs_diff(y, oracle::paspp(x, p, "pp", c, literal)));
        ++cases;
      }
    }
  }
  return {worst < 1e-12, fmt("max abs error %.2e (< 1e-12) over %d inputs, both summation settings", worst, cases)};
}

Outcome structure() {
  std::mt19937_64 rng(5);
  const Tensor x = Tensor::uniform({1, 1, 16, 16, 16}, rng, 0.0, 1.0);
  std::vector<std::string> problems;
  int built = 0;
  for (const NetConfig& c : ablation_configs(NetConfig{})) {
    const std::int64_t b = c.base_channels;
    Network net(c, 1);
    ++built;
    auto fail = [&](const std::string& what) { problems.push_back(c.label() + ": " + what); };
    if (c.encoder_channels() != std::array<std::int64_t, 4>{b, 2 * b, 4 * b, 8 * b}) fail("encoder channels");
    if (c.decoder_channels() != std::array<std::int64_t, 3>{4 * b, 2 * b, b}) fail("decoder channels");
    if (forward_segment(net, x).shape() != Shape5{1, 1, 16, 16, 16}) fail("output shape");
    if (net.attention_blocks().size() != (c.encoder_attention == AttentionKind::kNone ? 0u : 3u)) fail("attention");
    if (net.bottleneck().has_value() != (c.bottleneck != PyramidKind::kNone)) fail("bottleneck");
    if (net.bottleneck()) {
      const AtrousPyramid& p = *net.bottleneck();
      const std::int64_t full = 8 * b;
      if (p.branch_channels() != full / 4) fail("pyramid quarter width");
      for (std::size_t t = 0; t < 4; ++t) {
        if (p.reduce()[t].spec.out_channels != full / 4) fail("reduce width");
        if (p.atrous()[t].spec.dilation != (std::int64_t{1} << t)) fail("dilation schedule");
      }
      if (c.bottleneck != PyramidKind::kAspp) {
        for (const auto& f : p.fuse())
          if (f.spec.out_channels != full / 2) fail("fuse half width");
      }
      if (p.output().spec.out_channels != full) fail("output width");
    }
  }
  std::string detail = fmt("%d/9 configurations built with base*{1,2,4,8} encoders, shape preserved on 16^3", built);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty() && built == 9, detail};
}

// ---- metrics --------------------------------------------------------------

Outcome metric_oracle() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  int mismatches = 0;
  for (int k = 0; k < 1000; ++k) {
    const Mask p = oracle::random_mask(8, 8, 8, density(rng), rng);
    const Mask r = oracle::random_mask(8, 8, 8, density(rng), rng);
    const Confusion c = oracle::count(p, r);
    if (dice_coefficient(p, r) != oracle::dice(c) || sensitivity(p, r) != oracle::sensitivity(c) ||
        precision(p, r) != oracle::precision(c)) {
      ++mismatches;
    }
  }
  Mask a(1, 1, 8), b(1, 1, 8), d(1, 1, 8);
  for (int i = 0; i < 4; ++i) a.voxels[static_cast<std::size_t>(i)] = 1;
  for (int i = 2; i < 6; ++i) b.voxels[static_cast<std::size_t>(i)] = 1;
  for (int i = 6; i < 8; ++i) d.voxels[static_cast<std::size_t>(i)] = 1;
  const bool hand = dice_coefficient(a, a) == 1.0 && dice_coefficient(a, d) == 0.0 && dice_coefficient(a, b) == 0.5;
  return {mismatches == 0 && hand,
          fmt("%d mismatches over 1000 random pairs (exact comparison); hand cases 1.0/0.0/0.5 %s", mismatches,
              hand ? "exact" : "WRONG")};
}

// ---- training -------------------------------------------------------------

struct TrainingBench {
  double lr0 = 1e-3;
  std::vector<LabeledSample> data;

  TrainingBench() {
    for (std::uint64_t s = 100; s < 104; ++s) data.push_back({"p" + std::to_string(s), generate_phantom({}, s)});
  }

  TrainConfig config(const NetConfig& net) const {
    TrainConfig cfg;
    cfg.net = net;
    cfg.lr0 = lr0;
    cfg.steps = 500;
    cfg.patch = {16, 32, 32};
    return cfg;
  }

  struct Run {
    double dice = 0.0;
    double seconds = 0.0;
    double worst_window_rise = 0.0;
  };

  Run train_and_score(const NetConfig& net) const {
    Stopwatch sw;
    TrainResult r = train(config(net), data);
    Run out;
    out.dice = evaluate(r.net, data).mean_dice;
    out.seconds = sw.seconds();
    // Mean loss of each 100-step window after step 100 against the previous window.
    std::vector<double> means;
    for (std::size_t s = 100; s + 100 <= r.history.size(); s += 100) {
      double m = 0.0;
      for (std::size_t i = s; i < s + 100; ++i) m += r.history[i].loss;
      means.push_back(m / 100.0);
    }
    for (std::size_t i = 1; i < means.size(); ++i)
      out.worst_window_rise = std::max(out.worst_window_rise, means[i] / means[i - 1] - 1.0);
    return out;
  }
};

// ---- reproducibility ------------------------------------------------------

Outcome reproducibility(const fs::path& work) {
  const fs::path data = work / "repro_data", a = work / "repro_a", b = work / "repro_b";
  for (const auto& d : {data, a, b}) fs::remove_all(d);
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  if (run({"gen-data", "--count", "4", "--seed", "100", "--out", data.string()}) != 0) {
    return {false, "gen-data failed: " + sink.str()};
  }
  for (const auto& out : {a, b}) {
    if (run({"train", "--data", data.string(), "--out", out.string(), "--steps", "20", "--seed", "11",
             "--deterministic"}) != 0) {
      return {false, "train failed: " + sink.str()};
    }
  }
  const std::string la = slurp(a / "train_log.tsv"), lb = slurp(b / "train_log.tsv");
  const auto rows = std::count(la.begin(), la.end(), '\n');
  const bool same = !la.empty() && la == lb;
  return {same && rows == 21,
          fmt("two 20-step train runs (base 8, seed 11): loss logs %s (%zu bytes, %lld lines)",
              same ? "byte-identical" : "DIFFER", la.size(), static_cast<long long>(rows))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vseg acceptance run"};
  std::vector<std::string> only;
  double overfit_lr = 1e-3;
  std::string work = (fs::temp_directory_path() / "vseg_acceptance").string();
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--overfit-lr", overfit_lr, "Initial learning rate of the overfit and ablation runs")
      ->capture_default_str();
  app.add_option("--work-dir", work, "Scratch directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  TrainingBench bench;
  bench.lr0 = overfit_lr;
  std::optional<TrainingBench::Run> full_run;
  auto full = [&]() -> const TrainingBench::Run& {
    if (!full_run) full_run = bench.train_and_score(NetConfig{});
    return *full_run;
  };

  const std::vector<Criterion> criteria = {
      {"conv-oracle", conv_oracle},
      {"adjoint", adjoint},
      {"gradient-suite", gradient_suite},
      {"paspp-oracle", paspp_oracle},
      {"structure", structure},
      {"metric-oracle", metric_oracle},
      {"overfit",
       [&] {
         const auto& r = full();
         return Outcome{r.dice >= 0.95 && r.seconds < 900.0,
                        fmt("fv+paspp base 8, 500 steps, lr0 %g, 4 phantoms: training lesion dice %.4f (>= 0.95), "
                            "%.0f s (< 900 s); worst 100-step window loss rise %.1f%%",
                            bench.lr0, r.dice, r.seconds, 100.0 * r.worst_window_rise)};
       }},
      {"ablation-direction",
       [&] {
         NetConfig unet4;
         unet4.encoder_attention = AttentionKind::kNone;
         unet4.bottleneck = PyramidKind::kNone;
         const auto base = bench.train_and_score(unet4);
         const auto& r = full();
         return Outcome{r.dice >= base.dice,
                        fmt("training dice fv+paspp %.4f %s unet4 %.4f (same seed, 500 steps, lr0 %g)", r.dice,
                            r.dice >= base.dice ? ">=" : "<", base.dice, bench.lr0)};
       }},
      {"reproducibility", [&] { return reproducibility(work); }},
  };

  int failed = 0, ran = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    ++ran;
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
