#include <sstream>
#include <stdexcept>

#include "dcanas/search_space.hpp"

namespace dcanas {

std::string SearchFlags::str() const {
  std::string out;
  auto put = [&](bool on, const char* name) {
    if (!out.empty()) out += ',';
    if (!on) out += '-';
    out += name;
  };
  put(weight_sharing, "ws");
  put(channel_bottleneck, "cb");
  put(derived_cells, "dc");
  put(resource_constraint, "rc");
  return out;
}

SearchFlags parse_search_flags(std::string_view spec, SearchFlags base) {
  SearchFlags f = base;
  std::string token;
  std::istringstream is{std::string(spec)};
  while (std::getline(is, token, ',')) {
    while (!token.empty() && token.front() == ' ') token.erase(token.begin());
    while (!token.empty() && token.back() == ' ') token.pop_back();
    if (token.empty()) continue;
    if (token == "all") {
      f = SearchFlags{};
      continue;
    }
    if (token == "none") {
      f = SearchFlags::all_off();
      continue;
    }
    bool on = true;
    std::string name = token;
    if (name.front() == '-' || name.front() == '+') {
      on = name.front() == '+';
      name.erase(name.begin());
    }
    if (name == "ws") f.weight_sharing = on;
    else if (name == "cb") f.channel_bottleneck = on;
    else if (name == "dc") f.derived_cells = on;
    else if (name == "rc") f.resource_constraint = on;
    else throw std::invalid_argument("unknown search flag '" + token + "' (expected ws, cb, dc, rc)");
  }
  return f;
}

SupernetConfig SupernetConfig::desk() {
  SupernetConfig cfg;
  cfg.cells = 4;
  cfg.channels = 8;
  cfg.nodes = 4;
  cfg.in_channels = 1;
  cfg.height = 16;
  cfg.width = 16;
  cfg.classes = 2;
  return cfg;
}

StackSpec SupernetConfig::stack() const {
  StackSpec s;
  s.cells = cells;
  s.channels = channels;
  s.nodes = nodes;
  s.stem_multiplier = stem_multiplier;
  s.stem_stride = stem_stride;
  s.in_channels = in_channels;
  s.height = height;
  s.width = width;
  return s;
}

void SupernetConfig::validate() const {
  if (flags.derived_cells && cells < 2) {
    throw std::invalid_argument("derived cells need at least 2 cells, got " + std::to_string(cells));
  }
  if (bottleneck_ratio <= 0) {
    throw std::invalid_argument("bottleneck ratio must be positive, got " + std::to_string(bottleneck_ratio));
  }
  if (classes < 2) throw std::invalid_argument("need at least 2 classes");
  (void)stack_layout(stack());
}

}  // namespace dcanas
