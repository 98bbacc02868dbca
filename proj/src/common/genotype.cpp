#include "dcanas/genotype.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dcanas {

void validate_genotype(const Genotype& g, const OpSet& ops) {
  if (g.nodes < 3) throw GenotypeError("genotype needs at least 3 nodes per cell");
  for (CellKind kind : {CellKind::normal, CellKind::reduction}) {
    const char* cell = kind == CellKind::normal ? "normal" : "reduction";
    const auto& edges = g.cell(kind);
    if (edges.size() != static_cast<std::size_t>(2 * (g.nodes - 2))) {
      throw GenotypeError(std::string(cell) + " cell has " + std::to_string(edges.size()) +
                          " edges, expected " + std::to_string(2 * (g.nodes - 2)));
    }
    std::vector<int> incoming(static_cast<std::size_t>(g.nodes), 0);
    for (const auto& e : edges) {
      if (e.target < 2 || e.target >= g.nodes || e.source < 0 || e.source >= e.target) {
        throw GenotypeError(std::string(cell) + " cell: invalid edge " + std::to_string(e.source) +
                            " -> " + std::to_string(e.target));
      }
      if (e.op == OpKind::zero) throw GenotypeError(std::string(cell) + " cell selects the zero op");
      if (!ops.contains(e.op)) {
        throw GenotypeError(std::string(cell) + " cell uses '" + std::string(op_name(e.op)) +
                            "' which is not in the op set");
      }
      ++incoming[static_cast<std::size_t>(e.target)];
    }
    for (int j = 2; j < g.nodes; ++j) {
      if (incoming[static_cast<std::size_t>(j)] != 2) {
        throw GenotypeError(std::string(cell) + " cell: node " + std::to_string(j) + " has " +
                            std::to_string(incoming[static_cast<std::size_t>(j)]) +
                            " incoming edges");
      }
    }
    for (std::size_t k = 1; k < edges.size(); ++k) {
      const auto& a = edges[k - 1];
      const auto& b = edges[k];
      if (a.target == b.target && a.source == b.source) {
        throw GenotypeError(std::string(cell) + " cell repeats edge " + std::to_string(a.source) +
                            " -> " + std::to_string(a.target));
      }
    }
  }
}

std::vector<GenotypeEdge> derive_cell(std::span<const double> alpha, int nodes, const OpSet& ops) {
  if (nodes < 3) throw GenotypeError("derivation needs at least 3 nodes");
  const std::size_t n_ops = ops.size();
  const auto n_edges = static_cast<std::size_t>(edge_count(nodes));
  if (alpha.size() != n_edges * n_ops) {
    throw GenotypeError("alpha has " + std::to_string(alpha.size()) + " entries, expected " +
                        std::to_string(n_edges * n_ops));
  }
  bool any_nonzero = false;
  for (OpKind op : ops.ops()) any_nonzero = any_nonzero || op != OpKind::zero;
  if (!any_nonzero) throw GenotypeError("op set has no non-zero op to derive");

  struct Choice {
    int source;
    OpKind op;
    double weight;
  };
  std::vector<GenotypeEdge> out;
  for (int j = 2; j < nodes; ++j) {
    std::vector<Choice> choices;
    for (int i = 0; i < j; ++i) {
      const auto row = alpha.subspan(static_cast<std::size_t>(edge_index(j, i)) * n_ops, n_ops);
      const double mx = *std::max_element(row.begin(), row.end());
      double denom = 0;
      for (double a : row) denom += std::exp(a - mx);
      Choice best{i, OpKind::zero, -1.0};
      for (std::size_t o = 0; o < n_ops; ++o) {
        if (ops[o] == OpKind::zero) continue;
        const double w = std::exp(row[o] - mx) / denom;
        if (w > best.weight) best = {i, ops[o], w};
      }
      choices.push_back(best);
    }
    // Stable sort keeps the lower source first among equal weights.
    std::stable_sort(choices.begin(), choices.end(),
                     [](const Choice& a, const Choice& b) { return a.weight > b.weight; });
    std::vector<GenotypeEdge> kept{{j, choices[0].source, choices[0].op},
                                   {j, choices[1].source, choices[1].op}};
    if (kept[0].source > kept[1].source) std::swap(kept[0], kept[1]);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

Genotype derive_genotype(std::span<const double> normal_alpha,
                         std::span<const double> reduction_alpha, int nodes, const OpSet& ops) {
  Genotype g;
  g.nodes = nodes;
  g.normal = derive_cell(normal_alpha, nodes, ops);
  g.reduction = derive_cell(reduction_alpha, nodes, ops);
  return g;
}

std::string serialize_genotype(const Genotype& g) {
  std::ostringstream os;
  os << "version 1\n";
  os << "cells " << g.nodes << '\n';
  for (CellKind kind : {CellKind::normal, CellKind::reduction}) {
    os << (kind == CellKind::normal ? "normal:" : "reduction:") << '\n';
    for (const auto& e : g.cell(kind)) {
      os << e.target << ' ' << e.source << ' ' << op_name(e.op) << '\n';
    }
  }
  return os.str();
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

int parse_int(const std::string& tok, int line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw GenotypeParseError(line, "expected an integer, got '" + tok + "'");
  }
}

}  // namespace

Genotype parse_genotype(std::string_view text, const OpSet& ops) {
  std::istringstream is{std::string(text)};
  std::string raw;
  int line_no = 0;
  int stage = 0;  // 0 version, 1 cells, 2 expect normal:, 3 normal entries, 4 reduction entries
  Genotype g;
  std::vector<GenotypeEdge>* current = nullptr;
  while (std::getline(is, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto toks = split_ws(raw);
    if (toks.empty()) continue;
    if (stage == 0) {
      if (toks.size() != 2 || toks[0] != "version") throw GenotypeParseError(line_no, "expected 'version 1'");
      if (toks[1] != "1") throw GenotypeParseError(line_no, "unsupported version '" + toks[1] + "'");
      stage = 1;
    } else if (stage == 1) {
      if (toks.size() != 2 || toks[0] != "cells") throw GenotypeParseError(line_no, "expected 'cells <N>'");
      g.nodes = parse_int(toks[1], line_no);
      if (g.nodes < 3) throw GenotypeParseError(line_no, "cells must be >= 3");
      stage = 2;
    } else if (stage == 2) {
      if (toks.size() != 1 || toks[0] != "normal:") throw GenotypeParseError(line_no, "expected 'normal:'");
      current = &g.normal;
      stage = 3;
    } else if (toks.size() == 1 && toks[0] == "reduction:" && stage == 3) {
      current = &g.reduction;
      stage = 4;
    } else {
      if (toks.size() != 3) {
        throw GenotypeParseError(line_no, "expected '<target> <source> <op_name>', got '" + raw + "'");
      }
      GenotypeEdge e;
      e.target = parse_int(toks[0], line_no);
      e.source = parse_int(toks[1], line_no);
      const auto op = op_from_name(toks[2]);
      if (!op) throw GenotypeParseError(line_no, "unknown op '" + toks[2] + "'");
      if (!ops.contains(*op)) throw GenotypeParseError(line_no, "op '" + toks[2] + "' is not in the op set");
      if (e.target < 2 || e.target >= g.nodes || e.source < 0 || e.source >= e.target) {
        throw GenotypeParseError(line_no, "invalid edge " + toks[1] + " -> " + toks[0]);
      }
      e.op = *op;
      current->push_back(e);
    }
  }
  if (stage < 4) throw GenotypeParseError(line_no + 1, "unexpected end of input");
  auto by_pos = [](const GenotypeEdge& a, const GenotypeEdge& b) {
    return std::pair(a.target, a.source) < std::pair(b.target, b.source);
  };
  std::sort(g.normal.begin(), g.normal.end(), by_pos);
  std::sort(g.reduction.begin(), g.reduction.end(), by_pos);
  validate_genotype(g, ops);
  return g;
}

void write_genotype_file(const std::filesystem::path& path, const Genotype& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write genotype file " + path.string());
  out << serialize_genotype(g);
}

Genotype read_genotype_file(const std::filesystem::path& path, const OpSet& ops) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read genotype file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_genotype(buf.str(), ops);
}

}  // namespace dcanas
