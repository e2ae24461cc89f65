#pragma once

// Tape-based reverse-mode differentiation over the kernels in ops.hpp.
//
// A Tape is rebuilt for every forward pass. Each recorded node keeps its
// forward value and a closure that pushes the node's gradient into its
// inputs. backward() walks the nodes in reverse recording order, which is
// a valid reverse topological order because inputs are always recorded
// before the nodes that consume them.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vseg/ops.hpp"
#include "vseg/tensor.hpp"

namespace vseg {

// Named tensors owned by a model: trainable parameters plus non-trainable
// buffers such as batch-norm running statistics. Insertion order is kept and
// references stay valid while the store is alive.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  Tensor& add(std::string name, Tensor value, bool trainable = true);
  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  const Entry& entry(std::string_view name) const;

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Number of trainable scalars.
  std::int64_t trainable_scalars() const;

 private:
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradient per trainable parameter, shaped like the parameter.
class GradientMap {
 public:
  void set(const std::string& name, Tensor grad);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  // Element-wise sum; both maps must hold the same names and shapes.
  GradientMap& operator+=(const GradientMap& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  Tape& tape() const;
  std::int32_t id() const { return id_; }
  const Tensor& value() const;
  const Shape5& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

class Tape {
 public:
  // Receives the node's gradient and its own forward value.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out, const Tensor& out)>;

  explicit Tape(NormMode norm_mode = NormMode::kTrain) : norm_mode_(norm_mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NormMode norm_mode() const { return norm_mode_; }

  // Leaf holding a constant or a differentiable input.
  Var input(Tensor value, bool requires_grad = false);
  // Leaf bound to a named parameter. Repeated calls with the same name return
  // the same node, so gradients of reused parameters accumulate.
  Var param(ParamStore& store, std::string_view name);

  // Records a computed node. `fn` may be empty when no input needs a gradient.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  // Gradient of the last backward() target w.r.t. v; zeros if v was not reached.
  Tensor grad(Var v) const;

  // Adds `g` into the gradient slot of v (no-op for nodes without requires_grad).
  void accumulate(Var v, Tensor g);

  // Seeds d(out)/d(out) = 1; `out` must hold a single element.
  void backward(Var out);
  void backward(Var out, const Tensor& seed);

  // Gradients for every trainable entry of `store`; zeros for parameters the
  // recorded computation did not touch.
  GradientMap gradients(const ParamStore& store) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check(Var v) const;

  NormMode norm_mode_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::int32_t> param_nodes_;
  bool backward_done_ = false;
};

// Test hook: when set to an op name (e.g. "sigmoid"), that op's backward
// rule returns a deliberately wrong gradient. Empty string disables it.
void set_gradient_fault(std::string op_name);
bool gradient_fault_active(std::string_view op_name);

namespace ad {

Var conv3d(Var x, Var weight, Var bias, const ConvSpec& spec);
Var conv_transpose3d(Var x, Var weight, Var bias, const ConvSpec& spec);
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var);
Var relu(Var x);
Var sigmoid(Var x);
Var activate(Var x, Activation kind);
Var softmax_channels(Var x);
Var add(Var a, Var b);
Var add(std::initializer_list<Var> terms);
Var scale(Var x, Real k);
Var broadcast_mul(Var a, Var b);
Var concat_channels(const std::vector<Var>& inputs);
Var global_avg_pool(Var x);
Var identity(Var x);
// Scalar sum of all elements.
Var sum(Var x);
// Scalar <x, c> for a constant tensor c.
Var dot(Var x, const Tensor& c);

}  // namespace ad

// A differentiable computation over named inputs and a ParamStore. The
// builder records onto a fresh Tape on every forward() call.
class Graph {
 public:
  using Inputs = std::map<std::string, Tensor>;
  using Outputs = std::map<std::string, Tensor>;
  using Builder =
      std::function<std::map<std::string, Var>(Tape&, const std::map<std::string, Var>&, ParamStore&)>;

  Graph(ParamStore& params, std::vector<std::string> input_names, Builder builder,
        NormMode norm_mode = NormMode::kInference);

  // Throws StateError naming any unbound input slot.
  Outputs forward(const Inputs& inputs);

  // Backpropagates from the scalar output `output` (default "loss").
  GradientMap backward(const std::string& output = "loss");
  GradientMap backward(const std::string& output, const Tensor& seed);

  // Gradient w.r.t. a named input (inputs are recorded as differentiable).
  Tensor input_grad(const std::string& name) const;

  ParamStore& params() { return params_; }
  const std::vector<std::string>& input_names() const { return input_names_; }

 private:
  ParamStore& params_;
  std::vector<std::string> input_names_;
  Builder builder_;
  NormMode norm_mode_;
  std::unique_ptr<Tape> tape_;
  std::map<std::string, Var> input_vars_;
  std::map<std::string, Var> output_vars_;
};

struct GradCheckOptions {
  // Step is eps * max(1, |theta|).
  Real eps = 1e-4;
  // Maximum number of elements checked per parameter; 0 checks all. When
  // limited, elements are drawn with a fixed-seed generator.
  std::int64_t max_elements_per_param = 0;
  std::uint64_t seed = 1;
  // When a perturbed evaluation changes any ReLU activation pattern the step
  // straddles a kink; the element is retried with the step halved up to this
  // many times, then counted as skipped.
  int max_step_refinements = 10;
  // Also check gradients w.r.t. the graph inputs.
  bool check_inputs = false;
  // Restrict the check to these parameters; empty means all trainable ones.
  std::vector<std::string> only;
};

struct GradCheckEntry {
  std::string name;
  Real max_rel_error = 0.0;
  std::int64_t checked = 0;
  // Elements whose every tried step crossed a kink.
  std::int64_t skipped = 0;
};

struct GradCheckReport {
  Real max_rel_error = 0.0;
  std::string worst;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
  std::vector<GradCheckEntry> entries;
};

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), maximized over
// all checked elements. Numeric gradients use central differences on the
// scalar "loss" output, with steps that do not cross a ReLU kink.
// Non-trainable buffers are restored after every forward evaluation so
// running statistics do not drift during the check.
GradCheckReport grad_check(Graph& graph, const Graph::Inputs& inputs, const GradCheckOptions& opts = {});

Real relative_error(Real analytic, Real numeric);

}  // namespace vseg
