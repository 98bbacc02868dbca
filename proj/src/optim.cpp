#include "dcanas/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dcanas::inline DCANAS_PRECISION {

Optimizer::Optimizer(OptimizerKind kind, std::vector<Tensor> params)
    : kind_(kind), params_(std::move(params)) {
  for (const auto& p : params_) {
    if (!p.defined()) throw std::invalid_argument("optimizer: undefined parameter");
    first_.emplace_back(static_cast<std::size_t>(p.numel()), Real(0));
    second_.emplace_back(kind == OptimizerKind::adam ? static_cast<std::size_t>(p.numel()) : 0,
                         Real(0));
  }
}

Optimizer Optimizer::sgd(std::vector<Tensor> params, SgdConfig cfg) {
  Optimizer opt(OptimizerKind::sgd_momentum, std::move(params));
  opt.lr_ = cfg.lr;
  opt.momentum_ = cfg.momentum;
  opt.weight_decay_ = cfg.weight_decay;
  return opt;
}

Optimizer Optimizer::adam(std::vector<Tensor> params, AdamConfig cfg) {
  Optimizer opt(OptimizerKind::adam, std::move(params));
  opt.lr_ = cfg.lr;
  opt.beta1_ = cfg.beta1;
  opt.beta2_ = cfg.beta2;
  opt.eps_ = cfg.eps;
  opt.weight_decay_ = cfg.weight_decay;
  return opt;
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      const std::string& name = params_[i].name();
      throw std::logic_error("optimizer step: parameter '" + (name.empty() ? "#" + std::to_string(i) : name) +
                             "' has no gradient");
    }
  }
  ++steps_;
  const Real lr = static_cast<Real>(lr_);
  const Real wd = static_cast<Real>(weight_decay_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].data();
    auto g = params_[i].grad();
    auto& m = first_[i];
    if (kind_ == OptimizerKind::sgd_momentum) {
      const Real mu = static_cast<Real>(momentum_);
      for (std::size_t k = 0; k < w.size(); ++k) {
        const Real d = g[k] + wd * w[k];
        m[k] = steps_ == 1 ? d : mu * m[k] + d;
        w[k] -= lr * m[k];
      }
    } else {
      auto& v = second_[i];
      const Real b1 = static_cast<Real>(beta1_), b2 = static_cast<Real>(beta2_);
      const Real c1 = Real(1) - static_cast<Real>(std::pow(beta1_, static_cast<double>(steps_)));
      const Real c2 = Real(1) - static_cast<Real>(std::pow(beta2_, static_cast<double>(steps_)));
      const Real eps = static_cast<Real>(eps_);
      for (std::size_t k = 0; k < w.size(); ++k) {
        const Real d = g[k] + wd * w[k];
        m[k] = b1 * m[k] + (Real(1) - b1) * d;
        v[k] = b2 * v[k] + (Real(1) - b2) * d * d;
        const Real mhat = m[k] / c1;
        const Real vhat = v[k] / c2;
        w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
    std::fill(g.begin(), g.end(), Real(0));
  }
}

double CosineSchedule::lr(std::int64_t step) const {
  if (total_steps <= 0) throw std::invalid_argument("cosine schedule: total_steps must be positive");
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps)) /
                   static_cast<double>(total_steps);
  return floor_lr + (initial_lr - floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const Real factor = static_cast<Real>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace dcanas::inline DCANAS_PRECISION
