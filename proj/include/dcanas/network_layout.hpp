#pragma once

#include <cstdint>
#include <vector>

namespace dcanas {

enum class CellKind { normal, reduction };

/// Number of edges in a cell with two input nodes: sum_{j=2}^{nodes-1} j.
int edge_count(int nodes);
/// Index of edge (source -> target); targets start at 2.
int edge_index(int target, int source);
/// Spatial extent after a same-padded stride-2 operation.
int halve_extent(int extent);

/// Channel and spatial context of one cell in a stacked network.
struct CellLayout {
  CellKind kind = CellKind::normal;
  bool reduction_prev = false;
  int c_prev_prev = 0;
  int c_prev = 0;
  int channels = 0;  // per-node width inside the cell
  int in_h = 0, in_w = 0;      // spatial size of the cell inputs (after preprocessing)
  int prev_prev_h = 0, prev_prev_w = 0;  // spatial size of s0 before preprocessing
  int out_h = 0, out_w = 0;
  int out_channels = 0;  // intermediate-node concat width
};

struct StackSpec {
  int cells = 8;
  int channels = 16;
  int nodes = 6;
  int stem_multiplier = 3;
  int stem_stride = 1;
  int in_channels = 3;
  int height = 32;
  int width = 32;
};

struct StackLayout {
  int stem_channels = 0;
  int stem_h = 0, stem_w = 0;
  std::vector<CellLayout> cells;
  int final_channels = 0;
};

/// Reduction cells sit at floor(cells/3) and floor(2*cells/3); channels
/// double at each reduction.
std::vector<bool> reduction_positions(int cells);

/// Derives the per-cell context. Throws std::invalid_argument on a
/// configuration that cannot be stacked (too few nodes, odd extent at a
/// reduction, ...).
StackLayout stack_layout(const StackSpec& spec);

}  // namespace dcanas
