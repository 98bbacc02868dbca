#include <sstream>
#include <stdexcept>

#include "dcanas/eval_train.hpp"
#include "dcanas/util.hpp"

namespace dcanas {

EvalConfig EvalConfig::desk() {
  EvalConfig cfg;
  cfg.net = TargetNetConfig::desk();
  return cfg;
}

void EvalConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("eval epochs must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("eval batch size must be positive");
  if (!(opt.lr > 0) || opt.momentum < 0 || opt.weight_decay < 0) throw std::invalid_argument("invalid eval optimizer");
  if (grad_clip < 0) throw std::invalid_argument("grad_clip must be >= 0");
  if (cutout && cutout_length <= 0) throw std::invalid_argument("cutout length must be positive");
  if (label_smoothing < 0 || label_smoothing >= 1) throw std::invalid_argument("label smoothing must be in [0, 1)");
  if (auxiliary_head) throw std::invalid_argument("the auxiliary head is not supported");
  net.validate();
}

std::string EvalConfig::canonical() const {
  std::ostringstream os;
  auto kv = [&](const char* k, const auto& v) { os << k << '=' << v << '\n'; };
  auto kd = [&](const char* k, double v) { os << k << '=' << format_double(v) << '\n'; };
  kv("epochs", epochs);
  kv("batch_size", batch_size);
  kd("lr", opt.lr);
  kd("momentum", opt.momentum);
  kd("weight_decay", opt.weight_decay);
  kd("grad_clip", grad_clip);
  kv("cutout", cutout);
  kv("cutout_length", cutout_length);
  kd("label_smoothing", label_smoothing);
  kv("auxiliary_head", auxiliary_head);
  kv("seed", seed);
  kv("net.layers", net.layers);
  kv("net.channels", net.channels);
  kv("net.classes", net.classes);
  kv("net.stem_multiplier", net.stem_multiplier);
  kv("net.stem_stride", net.stem_stride);
  kv("net.input", std::to_string(net.in_channels) + "x" + std::to_string(net.height) + "x" +
                      std::to_string(net.width));
  kd("net.dropout", net.dropout);
  return os.str();
}

}  // namespace dcanas
