#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcanas/network_layout.hpp"
#include "dcanas/op_set.hpp"

namespace dcanas {

struct GenotypeEdge {
  int target = 0;
  int source = 0;
  OpKind op = OpKind::skip_connect;

  bool operator==(const GenotypeEdge&) const = default;
};

/// Discrete cell pair. Each intermediate node keeps exactly two incoming
/// edges; entries are ordered by (target, source).
struct Genotype {
  int nodes = 6;
  std::vector<GenotypeEdge> normal;
  std::vector<GenotypeEdge> reduction;

  const std::vector<GenotypeEdge>& cell(CellKind kind) const {
    return kind == CellKind::normal ? normal : reduction;
  }
  bool operator==(const Genotype&) const = default;
};

class GenotypeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parse failure; line() is 1-based.
class GenotypeParseError : public GenotypeError {
 public:
  GenotypeParseError(int line, const std::string& what)
      : GenotypeError("genotype line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Throws GenotypeError unless every invariant holds for `ops`.
void validate_genotype(const Genotype& g, const OpSet& ops);

/// alpha is row-major [edge_count(nodes) x ops.size()]. For each intermediate
/// node the two incoming edges with the largest non-zero-op softmax weight are
/// kept with their best non-zero op. Ties go to the lower source, then to the
/// earlier op in OpSet order.
std::vector<GenotypeEdge> derive_cell(std::span<const double> alpha, int nodes, const OpSet& ops);

Genotype derive_genotype(std::span<const double> normal_alpha,
                         std::span<const double> reduction_alpha, int nodes, const OpSet& ops);

std::string serialize_genotype(const Genotype& g);
Genotype parse_genotype(std::string_view text, const OpSet& ops);

void write_genotype_file(const std::filesystem::path& path, const Genotype& g);
Genotype read_genotype_file(const std::filesystem::path& path, const OpSet& ops);

}  // namespace dcanas
