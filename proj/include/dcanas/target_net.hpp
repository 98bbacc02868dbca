#pragma once

#include <memory>
#include <vector>

#include "dcanas/genotype.hpp"
#include "dcanas/layers.hpp"
#include "dcanas/network_layout.hpp"

namespace dcanas {

/// Evaluation-phase network shape.
struct TargetNetConfig {
  int layers = 20;
  int channels = 36;
  int classes = 10;
  int stem_multiplier = 3;
  int stem_stride = 1;
  int in_channels = 3;
  int height = 32;
  int width = 32;
  double dropout = 0.2;  // before the classifier

  /// 4 layers, 4 channels, stem multiplier 1, 1x16x16 inputs, 2 classes.
  static TargetNetConfig desk();
  StackSpec stack(int nodes) const;
  void validate() const;
};

}  // namespace dcanas

namespace dcanas::inline DCANAS_PRECISION {

class TargetCell {
 public:
  TargetCell(const CellLayout& layout, const std::vector<GenotypeEdge>& edges, int nodes, Rng& rng,
             const std::string& name);
  Tensor forward(const Tensor& s0, const Tensor& s1, bool training);
  void collect_params(std::vector<Tensor>& out) const;
  /// Parameters of the selected ops only (preprocessing excluded).
  std::int64_t op_param_count() const;

 private:
  int nodes_;
  std::vector<GenotypeEdge> edges_;
  std::unique_ptr<Module> pre0_, pre1_;
  std::vector<std::unique_ptr<Module>> ops_;  // parallel to edges_; null never occurs
};

/// Stacked network built from a genotype, trained from scratch.
class TargetNet {
 public:
  TargetNet(const Genotype& g, const TargetNetConfig& cfg, const OpSet& ops, Rng& rng);

  /// `rng` drives dropout; it may be null when not training.
  Tensor forward(const Tensor& x, bool training, Rng* rng = nullptr);
  std::vector<Tensor> params() const;
  std::int64_t param_count() const;
  std::int64_t cell_op_param_count() const;
  /// Multiply-accumulates of one single-example forward pass.
  std::uint64_t count_macs();
  const TargetNetConfig& config() const { return cfg_; }

 private:
  TargetNetConfig cfg_;
  StackLayout layout_;
  Tensor stem_w_;
  BatchNorm stem_bn_;
  std::vector<std::unique_ptr<TargetCell>> cells_;
  Tensor fc_w_, fc_b_;
};

}  // namespace dcanas::inline DCANAS_PRECISION
