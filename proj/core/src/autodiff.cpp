#include "vseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>

namespace vseg {

// ---------------------------------------------------------------------------
// ParamStore / GradientMap

Tensor& ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name) != 0) throw ConfigError("parameter '" + name + "' declared twice");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  return entries_.back().value;
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

const ParamStore::Entry& ParamStore::entry(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second];
}

Tensor& ParamStore::get(std::string_view name) { return const_cast<Entry&>(entry(name)).value; }

const Tensor& ParamStore::get(std::string_view name) const { return entry(name).value; }

std::int64_t ParamStore::trainable_scalars() const {
  std::int64_t total = 0;
  for (const auto& e : entries_) {
    if (e.trainable) total += e.value.numel();
  }
  return total;
}

void GradientMap::set(const std::string& name, Tensor grad) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    items_[it->second].second = std::move(grad);
    return;
  }
  index_.emplace(name, items_.size());
  items_.emplace_back(name, std::move(grad));
}

bool GradientMap::contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

const Tensor& GradientMap::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("no gradient for '" + std::string(name) + "'");
  return items_[it->second].second;
}

Tensor& GradientMap::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const GradientMap&>(*this).at(name));
}

GradientMap& GradientMap::operator+=(const GradientMap& other) {
  for (const auto& [name, g] : other.items_) {
    if (!contains(name)) throw ConfigError("gradient map has no entry '" + name + "'");
    Tensor& mine = at(name);
    require_same_shape(mine.shape(), g.shape(), "GradientMap::operator+=");
    for (std::int64_t i = 0; i < g.numel(); ++i) mine[i] += g[i];
  }
  return *this;
}

// ---------------------------------------------------------------------------
// Tape

Tape& Var::tape() const {
  if (tape_ == nullptr) throw StateError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

void Tape::check(Var v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= static_cast<std::int32_t>(nodes_.size())) {
    throw StateError("Var does not belong to this tape");
  }
}

Var Tape::input(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), std::nullopt, {}, requires_grad});
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::param(ParamStore& store, std::string_view name) {
  auto it = param_nodes_.find(std::string(name));
  if (it != param_nodes_.end()) return Var(this, it->second);
  const auto& e = store.entry(name);
  Var v = input(e.value, e.trainable);
  param_nodes_.emplace(std::string(name), v.id());
  return v;
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool needs = false;
  for (Var in : inputs) {
    check(in);
    needs = needs || nodes_[static_cast<std::size_t>(in.id())].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::nullopt, needs ? std::move(fn) : BackwardFn{}, needs});
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id())].value;
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id())].requires_grad;
}

Tensor Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  return n.grad ? *n.grad : Tensor(n.value.shape());
}

void Tape::accumulate(Var v, Tensor g) {
  check(v);
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.requires_grad) return;
  require_same_shape(g.shape(), n.value.shape(), "gradient accumulation");
  if (!n.grad) {
    n.grad = std::move(g);
    return;
  }
  Tensor& acc = *n.grad;
  for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
}

void Tape::backward(Var out) {
  check(out);
  if (value(out).numel() != 1) {
    throw ShapeError("backward: output has shape " + value(out).shape().str() + ", expected a scalar");
  }
  backward(out, Tensor(value(out).shape(), 1.0));
}

void Tape::backward(Var out, const Tensor& seed) {
  if (nodes_.empty()) throw StateError("backward called before any forward computation");
  if (backward_done_) throw StateError("backward already ran on this tape; run forward again");
  check(out);
  require_same_shape(seed.shape(), value(out).shape(), "backward seed");
  backward_done_ = true;
  nodes_[static_cast<std::size_t>(out.id())].grad = seed;
  for (std::int32_t id = out.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad || !n.backward) continue;
    // The closure may accumulate into earlier nodes only, so `n` stays valid.
    n.backward(*this, *n.grad, n.value);
  }
}

GradientMap Tape::gradients(const ParamStore& store) const {
  GradientMap map;
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    auto it = param_nodes_.find(e.name);
    if (it == param_nodes_.end()) {
      map.set(e.name, Tensor(e.value.shape()));
    } else {
      map.set(e.name, grad(Var(const_cast<Tape*>(this), it->second)));
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Fault injection

namespace {
std::mutex g_fault_mutex;
std::string g_fault_op;

Tensor maybe_fault(std::string_view op, Tensor g) {
  if (gradient_fault_active(op)) {
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= 1.5;
  }
  return g;
}
}  // namespace

void set_gradient_fault(std::string op_name) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op = std::move(op_name);
}

bool gradient_fault_active(std::string_view op_name) {
  std::lock_guard lock(g_fault_mutex);
  return !g_fault_op.empty() && g_fault_op == op_name;
}

// ---------------------------------------------------------------------------
// Activation-pattern fingerprint. While grad_check runs, every ReLU folds the
// sign pattern of its input into a per-thread hash, so a perturbed evaluation
// whose pattern differs from the unperturbed one is known to straddle a kink.

namespace {
thread_local bool t_watch_kinks = false;
thread_local std::uint64_t t_kink_pattern = 0;

void note_activation_pattern(const Tensor& x) {
  if (!t_watch_kinks) return;
  std::uint64_t h = t_kink_pattern ^ static_cast<std::uint64_t>(x.numel());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    h = (h ^ static_cast<std::uint64_t>(x[i] > 0.0)) * 0x100000001b3ULL;
  }
  t_kink_pattern = h;
}

struct KinkWatch {
  bool previous;
  KinkWatch() : previous(t_watch_kinks) { t_watch_kinks = true; }
  ~KinkWatch() { t_watch_kinks = previous; }
};
}  // namespace

// ---------------------------------------------------------------------------
// Differentiable ops

namespace ad {
namespace {

std::span<const Real> bias_span(Var bias) {
  if (!bias.valid()) return {};
  return bias.value().data();
}

Tensor bias_grad(const std::vector<Real>& g, std::int64_t channels) {
  return Tensor(Shape5{1, channels, 1, 1, 1}, g);
}

}  // namespace

Var conv3d(Var x, Var weight, Var bias, const ConvSpec& spec) {
  Tape& t = x.tape();
  if (bias.valid() && bias.value().numel() != spec.out_channels) {
    throw ShapeError("conv3d: bias has " + std::to_string(bias.value().numel()) +
                     " elements, expected " + std::to_string(spec.out_channels));
  }
  Tensor y = vseg::conv3d(x.value(), weight.value(), bias_span(bias), spec);
  std::vector<Var> inputs = {x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return t.record(std::move(y), inputs, [x, weight, bias, spec](Tape& tp, const Tensor& gy, const Tensor&) {
    if (tp.requires_grad(x)) {
      tp.accumulate(x, maybe_fault("conv3d", conv3d_backward_input(gy, weight.value(), spec, x.value().shape())));
    }
    if (tp.requires_grad(weight) || (bias.valid() && tp.requires_grad(bias))) {
      ConvParamGrads g = conv3d_backward_params(x.value(), gy, spec);
      tp.accumulate(weight, std::move(g.weight));
      if (bias.valid()) tp.accumulate(bias, bias_grad(g.bias, spec.out_channels));
    }
  });
}

Var conv_transpose3d(Var x, Var weight, Var bias, const ConvSpec& spec) {
  Tape& t = x.tape();
  Tensor y = vseg::conv_transpose3d(x.value(), weight.value(), bias_span(bias), spec);
  std::vector<Var> inputs = {x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return t.record(std::move(y), inputs, [x, weight, bias, spec](Tape& tp, const Tensor& gy, const Tensor&) {
    const ConvSpec adj = adjoint_conv_spec(spec);
    if (tp.requires_grad(x)) tp.accumulate(x, vseg::conv3d(gy, weight.value(), {}, adj));
    if (tp.requires_grad(weight)) {
      // Roles swap: gy is the "input" of the adjoint conv, x its "output".
      tp.accumulate(weight, conv3d_backward_params(gy, x.value(), adj).weight);
    }
    if (bias.valid() && tp.requires_grad(bias)) {
      Tensor gb = reduce_to(gy, Shape5{1, gy.shape().c, 1, 1, 1});
      tp.accumulate(bias, std::move(gb));
    }
  });
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var) {
  Tape& t = x.tape();
  const NormMode mode = t.norm_mode();
  auto fwd = std::make_shared<BatchNormResult>(
      vseg::batch_norm(x.value(), gamma.value(), beta.value(), running_mean, running_var, mode));
  Tensor y = fwd->y;
  fwd->y = Tensor();
  return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, fwd, mode](Tape& tp, const Tensor& gy, const Tensor&) {
    BatchNormGrads g = batch_norm_backward(gy, *fwd, gamma.value(), mode);
    tp.accumulate(x, maybe_fault("batch_norm", std::move(g.x)));
    tp.accumulate(gamma, std::move(g.gamma));
    tp.accumulate(beta, std::move(g.beta));
  });
}

Var relu(Var x) {
  note_activation_pattern(x.value());
  return x.tape().record(vseg::relu(x.value()), {x}, [x](Tape& tp, const Tensor& gy, const Tensor&) {
    tp.accumulate(x, maybe_fault("relu", relu_backward(gy, x.value())));
  });
}

Var sigmoid(Var x) {
  return x.tape().record(vseg::sigmoid(x.value()), {x}, [x](Tape& tp, const Tensor& gy, const Tensor& y) {
    tp.accumulate(x, maybe_fault("sigmoid", sigmoid_backward(gy, y)));
  });
}

Var activate(Var x, Activation kind) { return kind == Activation::kRelu ? relu(x) : sigmoid(x); }

Var softmax_channels(Var x) {
  return x.tape().record(vseg::softmax_channels(x.value()), {x},
                         [x](Tape& tp, const Tensor& gy, const Tensor& y) {
                           tp.accumulate(x, maybe_fault("softmax", softmax_channels_backward(gy, y)));
                         });
}

Var add(Var a, Var b) {
  return a.tape().record(vseg::add(a.value(), b.value()), {a, b},
                         [a, b](Tape& tp, const Tensor& gy, const Tensor&) {
                           tp.accumulate(a, maybe_fault("add", gy));
                           tp.accumulate(b, gy);
                         });
}

Var add(std::initializer_list<Var> terms) {
  if (terms.size() == 0) throw ShapeError("add: no terms");
  std::vector<Var> inputs(terms);
  Tensor y = inputs.front().value();
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    require_same_shape(inputs[i].shape(), y.shape(), "add");
    const Tensor& v = inputs[i].value();
    for (std::int64_t j = 0; j < y.numel(); ++j) y[j] += v[j];
  }
  return inputs.front().tape().record(std::move(y), inputs,
                                      [inputs](Tape& tp, const Tensor& gy, const Tensor&) {
                                        for (Var in : inputs) tp.accumulate(in, gy);
                                      });
}

Var scale(Var x, Real k) {
  return x.tape().record(vseg::scale(x.value(), k), {x}, [x, k](Tape& tp, const Tensor& gy, const Tensor&) {
    tp.accumulate(x, vseg::scale(gy, k));
  });
}

Var broadcast_mul(Var a, Var b) {
  return a.tape().record(vseg::broadcast_mul(a.value(), b.value()), {a, b},
                         [a, b](Tape& tp, const Tensor& gy, const Tensor&) {
                           if (tp.requires_grad(a)) {
                             tp.accumulate(a, maybe_fault("broadcast_mul", vseg::broadcast_mul(gy, b.value())));
                           }
                           if (tp.requires_grad(b)) {
                             tp.accumulate(b, reduce_to(vseg::broadcast_mul(gy, a.value()), b.shape()));
                           }
                         });
}

Var concat_channels(const std::vector<Var>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  for (Var v : inputs) values.push_back(&v.value());
  Tensor y = vseg::concat_channels(std::span<const Tensor* const>(values));
  return inputs.front().tape().record(std::move(y), inputs,
                                      [inputs](Tape& tp, const Tensor& gy, const Tensor&) {
                                        std::int64_t begin = 0;
                                        for (Var in : inputs) {
                                          const std::int64_t c = in.shape().c;
                                          if (tp.requires_grad(in)) tp.accumulate(in, slice_channels(gy, begin, c));
                                          begin += c;
                                        }
                                      });
}

Var global_avg_pool(Var x) {
  return x.tape().record(vseg::global_avg_pool(x.value()), {x}, [x](Tape& tp, const Tensor& gy, const Tensor&) {
    tp.accumulate(x, maybe_fault("global_avg_pool", global_avg_pool_backward(gy, x.shape())));
  });
}

Var identity(Var x) {
  return x.tape().record(x.value(), {x}, [x](Tape& tp, const Tensor& gy, const Tensor&) { tp.accumulate(x, gy); });
}

Var sum(Var x) {
  return x.tape().record(Tensor::scalar(x.value().sum()), {x}, [x](Tape& tp, const Tensor& gy, const Tensor&) {
    tp.accumulate(x, Tensor(x.shape(), gy.item()));
  });
}

Var dot(Var x, const Tensor& c) {
  return x.tape().record(Tensor::scalar(vseg::dot(x.value(), c)), {x},
                         [x, c](Tape& tp, const Tensor& gy, const Tensor&) {
                           tp.accumulate(x, vseg::scale(c, gy.item()));
                         });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(ParamStore& params, std::vector<std::string> input_names, Builder builder, NormMode norm_mode)
    : params_(params), input_names_(std::move(input_names)), builder_(std::move(builder)), norm_mode_(norm_mode) {}

Graph::Outputs Graph::forward(const Inputs& inputs) {
  for (const auto& name : input_names_) {
    if (inputs.count(name) == 0) throw StateError("graph input '" + name + "' is not bound");
  }
  tape_ = std::make_unique<Tape>(norm_mode_);
  input_vars_.clear();
  for (const auto& name : input_names_) input_vars_[name] = tape_->input(inputs.at(name), true);
  output_vars_ = builder_(*tape_, input_vars_, params_);
  Outputs out;
  for (const auto& [name, v] : output_vars_) out[name] = v.value();
  return out;
}

GradientMap Graph::backward(const std::string& output) {
  if (!tape_) throw StateError("backward called before forward");
  auto it = output_vars_.find(output);
  if (it == output_vars_.end()) throw StateError("graph has no output '" + output + "'");
  tape_->backward(it->second);
  return tape_->gradients(params_);
}

GradientMap Graph::backward(const std::string& output, const Tensor& seed) {
  if (!tape_) throw StateError("backward called before forward");
  auto it = output_vars_.find(output);
  if (it == output_vars_.end()) throw StateError("graph has no output '" + output + "'");
  tape_->backward(it->second, seed);
  return tape_->gradients(params_);
}

Tensor Graph::input_grad(const std::string& name) const {
  if (!tape_) throw StateError("input_grad called before forward");
  auto it = input_vars_.find(name);
  if (it == input_vars_.end()) throw StateError("graph has no input '" + name + "'");
  return tape_->grad(it->second);
}

// ---------------------------------------------------------------------------
// Gradient check

Real relative_error(Real analytic, Real numeric) {
  const Real denom = std::max({std::abs(analytic), std::abs(numeric), Real{1e-8}});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<std::int64_t> pick_indices(std::int64_t count, std::int64_t limit, std::mt19937_64& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (limit > 0 && limit < count) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(limit));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace

GradCheckReport grad_check(Graph& graph, const Graph::Inputs& inputs, const GradCheckOptions& opts) {
  ParamStore& store = graph.params();
  std::vector<std::pair<std::string, Tensor>> buffers;
  for (const auto& e : store.entries()) {
    if (!e.trainable) buffers.emplace_back(e.name, e.value);
  }
  auto restore = [&] {
    for (const auto& [name, v] : buffers) store.get(name) = v;
  };
  const KinkWatch watch;
  // Loss and activation pattern of one forward evaluation.
  auto loss_at = [&](const Graph::Inputs& in) {
    t_kink_pattern = 0;
    auto out = graph.forward(in);
    restore();
    auto it = out.find("loss");
    if (it == out.end()) throw StateError("grad_check: graph has no 'loss' output");
    if (it->second.numel() != 1) {
      throw ShapeError("grad_check: loss has shape " + it->second.shape().str() + ", expected a scalar");
    }
    return std::pair{it->second.item(), t_kink_pattern};
  };

  const std::uint64_t base_pattern = loss_at(inputs).second;
  graph.forward(inputs);
  restore();
  const GradientMap analytic = graph.backward("loss");
  std::map<std::string, Tensor> analytic_inputs;
  if (opts.check_inputs) {
    for (const auto& name : graph.input_names()) analytic_inputs[name] = graph.input_grad(name);
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckReport report;

  // Checks the elements of `target` picked by the sampler; `eval` evaluates
  // the loss with `target` as currently modified.
  auto check_tensor = [&](const std::string& name, Tensor& target, const Tensor& grad, auto&& eval) {
    GradCheckEntry entry{name, 0.0, 0, 0};
    for (std::int64_t i : pick_indices(target.numel(), opts.max_elements_per_param, rng)) {
      const Real orig = target[i];
      bool accepted = false;
      Real h = opts.eps * std::max<Real>(1.0, std::abs(orig));
      for (int attempt = 0; attempt <= opts.max_step_refinements && !accepted; ++attempt, h *= 0.5) {
        target[i] = orig + h;
        const auto [fp, pp] = eval();
        target[i] = orig - h;
        const auto [fm, pm] = eval();
        target[i] = orig;
        if (pp != base_pattern || pm != base_pattern) continue;
        entry.max_rel_error = std::max(entry.max_rel_error, relative_error(grad[i], (fp - fm) / (2.0 * h)));
        accepted = true;
      }
      if (accepted) {
        ++entry.checked;
      } else {
        ++entry.skipped;
      }
    }
    report.checked += entry.checked;
    report.skipped += entry.skipped;
    if (report.worst.empty() || entry.max_rel_error > report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst = name;
    }
    report.entries.push_back(std::move(entry));
  };

  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), e.name) == opts.only.end()) continue;
    check_tensor(e.name, e.value, analytic.at(e.name), [&] { return loss_at(inputs); });
  }

  if (opts.check_inputs) {
    for (const auto& name : graph.input_names()) {
      Graph::Inputs probe = inputs;
      check_tensor("input:" + name, probe.at(name), analytic_inputs.at(name), [&] { return loss_at(probe); });
    }
  }
  return report;
}

}  // namespace vseg
