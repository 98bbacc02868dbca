#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcanas/real.hpp"

namespace dcanas::inline DCANAS_PRECISION {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised by primitives whose operands do not conform.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a NaN/Inf reaches a checked boundary.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl;

/// One recorded primitive application. Holds strong references to its inputs
/// so the graph stays alive until backward consumes it.
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Reads the output's grad and accumulates into the inputs' grads.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulated into
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
  std::string name;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

/// Dense row-major tensor with shared-handle semantics. Copies alias the same
/// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<Real> data() { return impl_->data; }
  std::span<const Real> data() const { return impl_->data; }
  std::vector<Real> to_vector() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<Real> grad() { return impl_->grad; }
  std::span<const Real> grad() const { return impl_->grad; }
  /// Allocates a zero gradient (or resets an existing one).
  void zero_grad() { impl_->grad.assign(impl_->data.size(), Real(0)); }
  void clear_grad() { impl_->grad.clear(); }

  Real item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl_->node == nullptr; }

  const std::string& name() const { return impl_->name; }
  Tensor& set_name(std::string name);

  /// Deep copy of data; the copy is a detached leaf.
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Topologically ordered record of the primitives that produced a tensor.
/// Every op appears after the ops that produced its inputs.
struct Tape {
  std::vector<const Node*> ops;
  std::vector<TensorImpl*> outputs;  // outputs[k] was produced by ops[k]
};

Tape record_tape(const Tensor& root);

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate; the
/// recorded graph is released afterwards.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool all_finite(std::span<const Real> values);

/// Counts multiply-accumulates executed by conv/linear/matmul primitives on
/// this thread while alive.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;
  std::uint64_t count() const;

 private:
  std::uint64_t start_;
  bool previous_active_;
};

namespace detail {
void add_macs(std::uint64_t macs);

/// Builds the output tensor of a primitive, recording a node when any input
/// requires grad and recording is enabled.
Tensor make_result(const char* op, Shape shape, std::vector<Real> data,
                   std::vector<std::shared_ptr<TensorImpl>> inputs,
                   std::function<void(const TensorImpl& out)> backward);
}  // namespace detail

}  // namespace dcanas::inline DCANAS_PRECISION
