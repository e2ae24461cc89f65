#include "vseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "vseg/loss.hpp"

namespace vseg {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("lr0: must be > 0");
  if (decay < 0.0) throw ConfigError("decay: must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2: must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps: must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (steps < 1) throw ConfigError("steps: must be >= 1");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval: must be >= 0");
  for (std::size_t a = 0; a < 3; ++a) {
    if (patch[a] < 8 || patch[a] % 8 != 0) throw ConfigError("patch: every extent must be a positive multiple of 8");
  }
  net.validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "batch_size=" << batch_size << '\n'
     << "beta1=" << format_real(beta1) << '\n'
     << "beta2=" << format_real(beta2) << '\n'
     << "checkpoint_interval=" << checkpoint_interval << '\n'
     << "decay=" << format_real(decay) << '\n'
     << "eps=" << format_real(eps) << '\n'
     << "fixed_lr=" << (fixed_lr ? "true" : "false") << '\n'
     << "lr0=" << format_real(lr0) << '\n'
     << "patch=" << patch[0] << 'x' << patch[1] << 'x' << patch[2] << '\n'
     << "seed=" << seed << '\n'
     << "steps=" << steps << '\n'
     << net.to_text();
  return os.str();
}

TrainConfig TrainConfig::from_text(std::string_view text) {
  TrainConfig cfg;
  std::istringstream is{std::string(text)};
  std::string line;
  std::string net_text;
  auto number = [](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
  };
  auto integer = [](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const long long x = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return static_cast<std::int64_t>(x);
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
  };
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) {
      net_text += line + '\n';
      continue;
    }
    const std::string key = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    if (key == "batch_size") cfg.batch_size = integer(key, v);
    else if (key == "beta1") cfg.beta1 = number(key, v);
    else if (key == "beta2") cfg.beta2 = number(key, v);
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = integer(key, v);
    else if (key == "decay") cfg.decay = number(key, v);
    else if (key == "eps") cfg.eps = number(key, v);
    else if (key == "fixed_lr") cfg.fixed_lr = (v == "true" || v == "1");
    else if (key == "lr0") cfg.lr0 = number(key, v);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(integer(key, v));
    else if (key == "steps") cfg.steps = integer(key, v);
    else if (key == "patch") {
      Extent3 p{};
      char x1 = 0, x2 = 0;
      std::istringstream ps(v);
      if (!(ps >> p[0] >> x1 >> p[1] >> x2 >> p[2]) || x1 != 'x' || x2 != 'x') {
        throw ConfigError("patch: expected DxHxW, got '" + v + "'");
      }
      cfg.patch = p;
    } else {
      net_text += line + '\n';
    }
  }
  cfg.net = NetConfig::from_text(net_text);
  cfg.validate();
  return cfg;
}

double learning_rate(const TrainConfig& cfg, std::int64_t t) {
  if (cfg.fixed_lr) return cfg.lr0;
  return cfg.lr0 / (1.0 + cfg.decay * static_cast<double>(t));
}

void adam_step(ParamStore& params, const GradientMap& grads, AdamState& state, const TrainConfig& cfg) {
  for (const auto& [name, g] : grads.items()) {
    const Tensor& p = params.get(name);
    require_same_shape(p.shape(), g.shape(), ("adam_step: gradient of '" + name + "'").c_str());
  }
  state.t += 1;
  const auto t = static_cast<double>(state.t);
  const double lr = learning_rate(cfg, state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, g] : grads.items()) {
    Tensor& p = params.get(name);
    auto [mit, mnew] = state.m.try_emplace(name, Tensor(p.shape()));
    auto [vit, vnew] = state.v.try_emplace(name, Tensor(p.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::string format_step(const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld\t%.9e\t%.9e\t%.9e\t%.9e", static_cast<long long>(r.step), r.lr,
                r.dice_loss, r.ce_loss, r.loss);
  return buf;
}

namespace {

Network make_initial(const TrainConfig& cfg, const TrainOptions& opts) {
  if (opts.init == nullptr) return build_network(cfg.net, cfg.seed);
  if (!(opts.init->config() == cfg.net)) throw ConfigError("warm-start network config differs from net config");
  ParamStore copy;
  for (const auto& e : opts.init->params().entries()) copy.add(e.name, e.value, e.trainable);
  return Network(cfg.net, std::move(copy));
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<LabeledSample>& dataset, const TrainOptions& opts) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: dataset is empty");
  for (const auto& c : dataset) {
    if (c.sample.mask_for(cfg.net.task).size() == 0) {
      throw ConfigError("train: case '" + c.id + "' has no " + to_string(cfg.net.task) + " mask");
    }
  }

  TrainResult result{make_initial(cfg, opts), {}};
  Network& net = result.net;
  AdamState adam;
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  if (opts.log) *opts.log << kTrainLogHeader << '\n';
  if (!opts.checkpoint_dir.empty()) std::filesystem::create_directories(opts.checkpoint_dir);

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<VolumeSample> patches;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      patches.push_back(crop_patch(dataset[order[cursor++]].sample, cfg.patch, rng));
    }
    std::vector<const Tensor*> images;
    std::vector<const Mask*> masks;
    for (const auto& p : patches) {
      images.push_back(&p.image);
      masks.push_back(&p.mask_for(cfg.net.task));
    }
    const Tensor input = normalize_input(cfg.net, concat_batch(images));
    const Tensor ref = Mask::stack(masks);

    Tape tape(NormMode::kTrain);
    Var prob = net.forward(tape.input(input));
    ad::LossTerms loss = ad::combined_loss(prob, ref);
    StepRecord rec{step, learning_rate(cfg, step), loss.dice.value().item(), loss.cross_entropy.value().item(),
                   loss.combined.value().item()};
    if (!std::isfinite(rec.loss)) {
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss.combined);
    adam_step(net.params(), tape.gradients(net.params()), adam, cfg);

    if (opts.log) *opts.log << format_step(rec) << '\n';
    result.history.push_back(rec);
    if (!opts.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06lld.vseg", static_cast<long long>(step));
      save_checkpoint(opts.checkpoint_dir / name, net);
    }
  }
  if (!opts.checkpoint_dir.empty()) save_checkpoint(opts.checkpoint_dir / "final.vseg", net);
  return result;
}

MetricsSummary evaluate(Network& net, const std::vector<LabeledSample>& dataset, Real threshold) {
  if (dataset.empty()) throw ConfigError("evaluate: dataset is empty");
  const Task task = net.config().task;
  std::vector<MetricsRecord> records;
  for (const auto& c : dataset) {
    const Mask& ref = c.sample.mask_for(task);
    if (ref.size() == 0) throw ConfigError("evaluate: case '" + c.id + "' has no " + to_string(task) + " mask");
    const auto pred = predict_mask(net, normalize_input(net.config(), c.sample.image), threshold);
    records.push_back(measure(c.id, task, pred.front(), ref));
  }
  return summarize(std::move(records));
}

}  // namespace vseg
