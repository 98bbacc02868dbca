#include <sstream>

#include "dcanas/constrained_search.hpp"
#include "dcanas/lug.hpp"
#include "dcanas/util.hpp"

namespace dcanas {

LagrangeState& lambda_step(LagrangeState& state, double k_s, double target) {
  const double violation = k_s - target;
  state.lambda = std::max(0.0, state.lambda + state.lr * violation);
  state.history.push_back({state.iteration++, state.lambda, k_s, violation});
  return state;
}

ConstraintSpec ConstraintSpec::direct(CostMetric metric, double kd_prime, double kd) {
  ConstraintSpec s;
  s.metric = metric;
  s.kd_prime = kd_prime;
  s.kd = kd > 0 ? kd : kd_prime;
  s.source = ConstraintSource::direct;
  return s;
}

ConstraintSpec ConstraintSpec::from_lug(const LookupGraph& lug, double kd) {
  const auto q = lug.lookup(kd);
  ConstraintSpec s;
  s.metric = lug.metric;
  s.kd = kd;
  s.kd_prime = q.kd_prime;
  s.source = ConstraintSource::lug;
  s.lug_extrapolated = q.extrapolated;
  return s;
}

void ConstraintSpec::validate() const {
  if (!(kd > 0) || !(kd_prime > 0)) {
    throw std::invalid_argument("constraint values must be positive (K_d=" + format_double(kd) +
                                ", K_d'=" + format_double(kd_prime) + ")");
  }
}

SearchRunConfig SearchRunConfig::desk() {
  SearchRunConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 32;
  cfg.w_opt = {0.05, 0.9, 3e-4};
  cfg.alpha_opt.lr = 3e-2;
  cfg.lambda_lr = 0.05;
  cfg.patience = 0;
  cfg.supernet = SupernetConfig::desk();
  cfg.target = TargetNetConfig::desk();
  return cfg;
}

void SearchRunConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (epochs > 100000) throw std::invalid_argument("epoch budget " + std::to_string(epochs) + " is out of range");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(val_fraction > 0 && val_fraction < 1)) throw std::invalid_argument("val_fraction must lie in (0, 1)");
  if (!(w_opt.lr > 0) || w_opt.momentum < 0 || w_opt.weight_decay < 0) throw std::invalid_argument("invalid w optimizer");
  if (!(alpha_opt.lr > 0) || alpha_opt.weight_decay < 0) throw std::invalid_argument("invalid alpha optimizer");
  if (!(lambda_lr > 0) || lambda_init < 0) throw std::invalid_argument("invalid lambda settings");
  if (patience < 0) throw std::invalid_argument("patience must be >= 0");
  supernet.validate();
  target.validate();
  if (target.in_channels != supernet.in_channels || target.height != supernet.height ||
      target.width != supernet.width || target.classes != supernet.classes) {
    throw std::invalid_argument("target and supernet disagree on input shape or classes");
  }
}

std::string SearchRunConfig::canonical() const {
  std::ostringstream os;
  auto kv = [&](const char* k, const auto& v) { os << k << '=' << v << '\n'; };
  auto kd = [&](const char* k, double v) { os << k << '=' << format_double(v) << '\n'; };
  kv("epochs", epochs);
  kv("batch_size", batch_size);
  kd("val_fraction", val_fraction);
  kd("w.lr", w_opt.lr);
  kd("w.momentum", w_opt.momentum);
  kd("w.weight_decay", w_opt.weight_decay);
  kd("w.lr_floor", w_lr_floor);
  kd("alpha.lr", alpha_opt.lr);
  kd("alpha.beta1", alpha_opt.beta1);
  kd("alpha.beta2", alpha_opt.beta2);
  kd("alpha.eps", alpha_opt.eps);
  kd("alpha.weight_decay", alpha_opt.weight_decay);
  kd("lambda.lr", lambda_lr);
  kd("lambda.init", lambda_init);
  kv("lambda.per_batch", lambda_per_batch);
  kv("normalize_cost", normalize_cost);
  kv("patience", patience);
  kv("max_steps_per_epoch", max_steps_per_epoch);
  kv("seed", seed);
  kv("supernet.cells", supernet.cells);
  kv("supernet.channels", supernet.channels);
  kv("supernet.nodes", supernet.nodes);
  kv("supernet.bottleneck_ratio", supernet.bottleneck_ratio);
  kv("supernet.stem_multiplier", supernet.stem_multiplier);
  kv("supernet.stem_stride", supernet.stem_stride);
  kv("supernet.input", std::to_string(supernet.in_channels) + "x" + std::to_string(supernet.height) + "x" +
                           std::to_string(supernet.width));
  kv("supernet.classes", supernet.classes);
  kv("supernet.flags", supernet.flags.str());
  kv("target.layers", target.layers);
  kv("target.channels", target.channels);
  kv("target.stem_multiplier", target.stem_multiplier);
  kv("target.stem_stride", target.stem_stride);
  kd("target.dropout", target.dropout);
  return os.str();
}

}  // namespace dcanas
