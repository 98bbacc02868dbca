#include "dcanas/network_layout.hpp"

#include <stdexcept>
#include <string>

namespace dcanas {

int edge_count(int nodes) {
  if (nodes < 3) throw std::invalid_argument("a cell needs at least 3 nodes, got " + std::to_string(nodes));
  return nodes * (nodes - 1) / 2 - 1;
}

int edge_index(int target, int source) {
  if (target < 2 || source < 0 || source >= target) {
    throw std::invalid_argument("invalid edge " + std::to_string(source) + "->" + std::to_string(target));
  }
  return target * (target - 1) / 2 - 1 + source;
}

int halve_extent(int extent) { return (extent - 1) / 2 + 1; }

std::vector<bool> reduction_positions(int cells) {
  std::vector<bool> out(static_cast<std::size_t>(cells), false);
  if (cells <= 0) return out;
  out[static_cast<std::size_t>(cells / 3)] = true;
  out[static_cast<std::size_t>(2 * cells / 3)] = true;
  return out;
}

StackLayout stack_layout(const StackSpec& spec) {
  if (spec.cells < 1) throw std::invalid_argument("network needs at least one cell");
  if (spec.channels < 1) throw std::invalid_argument("channels must be positive");
  if (spec.nodes < 3) throw std::invalid_argument("cells need at least 3 nodes");
  if (spec.stem_multiplier < 1 || spec.stem_stride < 1) throw std::invalid_argument("invalid stem");
  if (spec.in_channels < 1 || spec.height < 1 || spec.width < 1) throw std::invalid_argument("invalid input shape");

  StackLayout layout;
  layout.stem_channels = spec.stem_multiplier * spec.channels;
  layout.stem_h = (spec.height - 1) / spec.stem_stride + 1;
  layout.stem_w = (spec.width - 1) / spec.stem_stride + 1;

  const int multiplier = spec.nodes - 2;
  const auto reductions = reduction_positions(spec.cells);
  int c_pp = layout.stem_channels, c_p = layout.stem_channels, c = spec.channels;
  int h = layout.stem_h, w = layout.stem_w;
  int pp_h = h, pp_w = w;
  bool reduction_prev = false;
  for (int i = 0; i < spec.cells; ++i) {
    CellLayout cell;
    const bool reduction = reductions[static_cast<std::size_t>(i)];
    if (reduction) {
      c *= 2;
      if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("reduction cell " + std::to_string(i) + " receives odd extent " +
                                    std::to_string(h) + "x" + std::to_string(w));
      }
    }
    cell.kind = reduction ? CellKind::reduction : CellKind::normal;
    cell.reduction_prev = reduction_prev;
    cell.c_prev_prev = c_pp;
    cell.c_prev = c_p;
    cell.channels = c;
    cell.prev_prev_h = pp_h;
    cell.prev_prev_w = pp_w;
    cell.in_h = h;
    cell.in_w = w;
    cell.out_h = reduction ? halve_extent(h) : h;
    cell.out_w = reduction ? halve_extent(w) : w;
    cell.out_channels = multiplier * c;
    layout.cells.push_back(cell);

    pp_h = h;
    pp_w = w;
    h = cell.out_h;
    w = cell.out_w;
    c_pp = c_p;
    c_p = cell.out_channels;
    reduction_prev = reduction;
  }
  layout.final_channels = c_p;
  return layout;
}

}  // namespace dcanas
