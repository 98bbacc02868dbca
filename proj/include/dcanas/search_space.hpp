#pragma once

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dcanas/genotype.hpp"
#include "dcanas/layers.hpp"
#include "dcanas/network_layout.hpp"

namespace dcanas {

/// Search-time accelerations and the resource constraint, each toggleable.
struct SearchFlags {
  bool weight_sharing = true;
  bool channel_bottleneck = true;
  bool derived_cells = true;
  bool resource_constraint = true;

  static SearchFlags all_off() { return {false, false, false, false}; }
  /// Canonical "ws,cb,dc,rc" form with '-' marking disabled flags.
  std::string str() const;
  bool operator==(const SearchFlags&) const = default;
};

/// Applies comma-separated toggles ("ws", "-cb", "+dc", "all", "none") on top
/// of `base`. Throws std::invalid_argument on an unknown token.
SearchFlags parse_search_flags(std::string_view spec, SearchFlags base = {});

struct SupernetConfig {
  int cells = 8;
  int channels = 16;
  int nodes = 6;
  int bottleneck_ratio = 4;
  int stem_multiplier = 3;
  int stem_stride = 1;
  int in_channels = 3;
  int height = 32;
  int width = 32;
  int classes = 10;
  SearchFlags flags;

  /// 4 cells, 8 channels, 4 nodes on 1x16x16 inputs.
  static SupernetConfig desk();
  StackSpec stack() const;
  /// Throws std::invalid_argument on an unusable configuration.
  void validate() const;
};

}  // namespace dcanas

namespace dcanas::inline DCANAS_PRECISION {

/// Candidate op on one edge; a null `apply` stands for the zero op.
struct EdgeCandidate {
  std::string name;
  std::function<Tensor(const Tensor&)> apply;
};

/// sum_o softmax(alpha_row)_o * outputs[o]. Undefined outputs are zero ops and
/// contribute nothing; when every op is zero the result is zeros(zero_shape).
Tensor mix_outputs(const Tensor& alpha_row, std::span<const Tensor> outputs,
                   std::span<const std::string> names, const Shape& zero_shape = {});

Tensor mixed_edge_forward(const Tensor& alpha_row, const Tensor& z,
                          std::span<const EdgeCandidate> candidates);

/// Architecture parameters of the two trainable cells, each [edges x ops].
class AlphaTable {
 public:
  AlphaTable() = default;
  AlphaTable(int edges, int ops);
  /// Entries drawn as scale * N(0, 1), normal table first.
  static AlphaTable random(int edges, int ops, Rng& rng, double scale = 1e-3);

  Tensor& of(CellKind kind) { return kind == CellKind::normal ? normal_ : reduction_; }
  const Tensor& of(CellKind kind) const { return kind == CellKind::normal ? normal_ : reduction_; }
  int edges() const { return edges_; }
  int ops() const { return ops_; }
  std::vector<double> values(CellKind kind) const;
  std::vector<double> row_softmax(CellKind kind, int edge) const;
  std::vector<Tensor> params() const { return {normal_, reduction_}; }
  AlphaTable clone() const;

 private:
  int edges_ = 0, ops_ = 0;
  Tensor normal_, reduction_;
};

/// One supernet cell: preprocessing plus the candidate-op store. Under weight
/// sharing the store holds one module per (source node, op); otherwise one per
/// (edge, op).
class SearchCell {
 public:
  SearchCell(const CellLayout& layout, int nodes, const OpSet& ops, const OpOptions& op_opts,
             bool weight_sharing, Rng& rng, const std::string& name);

  Tensor forward_mixed(const Tensor& s0, const Tensor& s1, const Tensor& alpha, bool training);
  Tensor forward_derived(const Tensor& s0, const Tensor& s1,
                         const std::vector<GenotypeEdge>& edges, bool training);

  /// Module applied on edge (source -> target) for op index `op`; null for the
  /// zero op.
  const Module* op_module(int target, int source, std::size_t op) const;
  /// Number of parametric op modules in the store.
  std::size_t parametric_weight_objects() const;
  void collect_params(std::vector<Tensor>& out) const;
  const CellLayout& layout() const { return layout_; }
  CellKind kind() const { return layout_.kind; }
  std::int64_t op_evaluations() const { return evaluations_; }

 private:
  std::size_t slot(int target, int source) const;
  Tensor apply_op(std::size_t slot, std::size_t op, const Tensor& z, bool training);
  Shape edge_shape(const Tensor& s, int source) const;

  CellLayout layout_;
  int nodes_;
  OpSet ops_;
  bool weight_sharing_;
  std::unique_ptr<Module> pre0_, pre1_;
  std::vector<std::vector<std::unique_ptr<Module>>> store_;  // [slot][op]
  std::int64_t evaluations_ = 0;
};

/// Search-phase network. With derived cells on, only the first normal and
/// first reduction cell are mixed; the rest copy the current top-weighted ops
/// of their trainable counterpart. Otherwise every cell is mixed under the
/// shared per-kind alpha table.
class Supernet {
 public:
  Supernet(const SupernetConfig& cfg, const OpSet& ops, Rng& rng);

  Tensor forward(const Tensor& x, bool training);
  /// Refreshes derived-cell architectures from the current alpha.
  void rederive();
  Genotype genotype() const;

  AlphaTable& alphas() { return alphas_; }
  const AlphaTable& alphas() const { return alphas_; }
  std::vector<Tensor> weight_params() const;
  std::vector<Tensor> alpha_params() const { return alphas_.params(); }

  const SupernetConfig& config() const { return cfg_; }
  const OpSet& op_set() const { return ops_; }
  const StackLayout& layout() const { return layout_; }
  std::size_t cell_count() const { return cells_.size(); }
  const SearchCell& cell(std::size_t i) const { return *cells_[i]; }
  bool is_mixed(std::size_t i) const { return mixed_[i]; }
  const std::vector<GenotypeEdge>& derived_edges(CellKind kind) const {
    return kind == CellKind::normal ? derived_.normal : derived_.reduction;
  }
  std::int64_t op_evaluations() const;

 private:
  SupernetConfig cfg_;
  OpSet ops_;
  StackLayout layout_;
  Tensor stem_w_;
  BatchNorm stem_bn_;
  std::vector<std::unique_ptr<SearchCell>> cells_;
  std::vector<bool> mixed_;
  Tensor fc_w_, fc_b_;
  AlphaTable alphas_;
  Genotype derived_;
};

}  // namespace dcanas::inline DCANAS_PRECISION
