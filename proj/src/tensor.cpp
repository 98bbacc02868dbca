#include "dcanas/tensor.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <unordered_set>

namespace dcanas::inline DCANAS_PRECISION {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_mac_active = false;
thread_local std::uint64_t g_macs = 0;
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from(Shape{}, {value}, requires_grad);
}

Real Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

Tensor& Tensor::set_name(std::string name) {
  impl_->name = std::move(name);
  return *this;
}

Tensor Tensor::clone() const {
  return from(impl_->shape, impl_->data, impl_->requires_grad);
}

Tape record_tape(const Tensor& root) {
  Tape tape;
  if (!root.defined() || root.is_leaf()) return tape;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next_input] = stack.back();
    const Node* node = impl->node.get();
    if (node && next_input < node->inputs.size()) {
      TensorImpl* child = node->inputs[next_input++].get();
      if (child->node && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    if (node) {
      tape.ops.push_back(node);
      tape.outputs.push_back(impl);
    }
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    std::cerr << "warning: backward() on a tensor that does not require grad; "
                 "no gradients were produced\n";
    return;
  }
  Tape tape = record_tape(loss);
  TensorImpl* root = loss.impl().get();
  root->ensure_grad();
  root->grad[0] += Real(1);
  for (std::size_t k = tape.ops.size(); k-- > 0;) {
    TensorImpl* out = tape.outputs[k];
    const Node* node = tape.ops[k];
    if (out->grad.empty()) continue;
    for (const auto& in : node->inputs) {
      if (in->requires_grad) in->ensure_grad();
    }
    node->backward(*out);
  }
  // Release the graph. Nodes are detached first and destroyed together so no
  // raw pointer in the tape outlives its tensor.
  std::vector<std::shared_ptr<Node>> released;
  released.reserve(tape.outputs.size());
  for (TensorImpl* out : tape.outputs) released.push_back(std::move(out->node));
  released.clear();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool all_finite(std::span<const Real> values) {
  for (Real v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

MacCounter::MacCounter() : start_(g_macs), previous_active_(g_mac_active) { g_mac_active = true; }
MacCounter::~MacCounter() { g_mac_active = previous_active_; }
std::uint64_t MacCounter::count() const { return g_macs - start_; }

namespace detail {

void add_macs(std::uint64_t macs) {
  if (g_mac_active) g_macs += macs;
}

Tensor make_result(const char* op, Shape shape, std::vector<Real> data,
                   std::vector<std::shared_ptr<TensorImpl>> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
  }
  if (needs_grad) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

}  // namespace dcanas::inline DCANAS_PRECISION
