#include <stdexcept>

#include "dcanas/target_net.hpp"

namespace dcanas {

TargetNetConfig TargetNetConfig::desk() {
  TargetNetConfig cfg;
  cfg.layers = 4;
  cfg.channels = 4;
  cfg.classes = 2;
  cfg.stem_multiplier = 1;
  cfg.in_channels = 1;
  cfg.height = 16;
  cfg.width = 16;
  cfg.dropout = 0.0;
  return cfg;
}

StackSpec TargetNetConfig::stack(int nodes) const {
  StackSpec s;
  s.cells = layers;
  s.channels = channels;
  s.nodes = nodes;
  s.stem_multiplier = stem_multiplier;
  s.stem_stride = stem_stride;
  s.in_channels = in_channels;
  s.height = height;
  s.width = width;
  return s;
}

void TargetNetConfig::validate() const {
  if (layers < 3) throw std::invalid_argument("target net needs at least 3 layers, got " + std::to_string(layers));
  if (classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("dropout must be in [0, 1)");
}

}  // namespace dcanas
