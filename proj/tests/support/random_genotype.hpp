#pragma once

#include <vector>

#include "dcanas/genotype.hpp"
#include "dcanas/op_set.hpp"
#include "dcanas/rng.hpp"

namespace dcanas::oracle {

/// Uniformly random valid genotype: two distinct sources per intermediate
/// node, each with a random non-zero op.
inline std::vector<GenotypeEdge> random_cell(int nodes, const OpSet& ops, Rng& rng) {
  std::vector<OpKind> choices;
  for (auto op : ops.ops()) {
    if (op != OpKind::zero) choices.push_back(op);
  }
  std::vector<GenotypeEdge> cell;
  for (int j = 2; j < nodes; ++j) {
    int a = static_cast<int>(rng.below(static_cast<std::size_t>(j)));
    int b = static_cast<int>(rng.below(static_cast<std::size_t>(j - 1)));
    if (b >= a) ++b;
    if (a > b) std::swap(a, b);
    cell.push_back({j, a, choices[rng.below(choices.size())]});
    cell.push_back({j, b, choices[rng.below(choices.size())]});
  }
  return cell;
}

inline Genotype random_genotype(int nodes, const OpSet& ops, Rng& rng) {
  Genotype g;
  g.nodes = nodes;
  g.normal = random_cell(nodes, ops, rng);
  g.reduction = random_cell(nodes, ops, rng);
  return g;
}

}  // namespace dcanas::oracle
