#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcanas/tensor.hpp"

namespace dcanas {

struct SgdConfig {
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
};

struct AdamConfig {
  double lr = 6e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

}  // namespace dcanas

namespace dcanas::inline DCANAS_PRECISION {

enum class OptimizerKind { sgd_momentum, adam };

/// SGD-momentum or Adam over a fixed parameter list. Weight decay is the
/// classic L2 term folded into the gradient. step() requires every parameter
/// to carry a gradient and zeroes the gradients afterwards.
class Optimizer {
 public:
  static Optimizer sgd(std::vector<Tensor> params, SgdConfig cfg);
  static Optimizer adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  /// Gives every parameter a zero gradient buffer.
  void zero_grad();

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  OptimizerKind kind() const { return kind_; }
  std::int64_t step_count() const { return steps_; }
  std::span<const Tensor> params() const { return params_; }
  /// Momentum buffer (SGD) or first moment (Adam) of parameter i.
  std::span<const Real> first_buffer(std::size_t i) const { return first_[i]; }
  std::span<const Real> second_buffer(std::size_t i) const { return second_[i]; }

 private:
  Optimizer(OptimizerKind kind, std::vector<Tensor> params);

  OptimizerKind kind_;
  std::vector<Tensor> params_;
  std::vector<std::vector<Real>> first_;
  std::vector<std::vector<Real>> second_;
  double lr_ = 0;
  double momentum_ = 0;
  double beta1_ = 0, beta2_ = 0, eps_ = 0;
  double weight_decay_ = 0;
  std::int64_t steps_ = 0;
};

/// Half-cosine decay from initial_lr to floor_lr over total_steps.
struct CosineSchedule {
  double initial_lr = 0.025;
  std::int64_t total_steps = 1;
  double floor_lr = 0.0;

  double lr(std::int64_t step) const;
};

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace dcanas::inline DCANAS_PRECISION
