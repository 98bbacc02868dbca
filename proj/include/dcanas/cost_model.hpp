#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

#include "dcanas/genotype.hpp"
#include "dcanas/search_space.hpp"
#include "dcanas/target_net.hpp"

// Costs are parameter counts or multiply-accumulates (1 MAC = 1 FLOP unit).
// Pooling, activation and normalisation arithmetic is not counted.

namespace dcanas {

enum class CostMetric { params, flops };

std::string_view metric_name(CostMetric m);
std::optional<CostMetric> parse_metric(std::string_view name);

/// Channel/spatial context of one candidate op. in_h/in_w is the extent of
/// the op input; the output extent follows from the stride.
struct OpContext {
  int channels = 0;
  int in_h = 0;
  int in_w = 0;
  int stride = 1;
  int bottleneck_ratio = 1;
  bool affine = false;
};

/// Dense k x k convolution without bias on an out_h x out_w output.
std::int64_t plain_conv_cost(int kernel, int c_in, int c_out, int out_h, int out_w, CostMetric m,
                             bool bias = false);

/// Closed-form b(o).
std::int64_t op_cost(OpKind op, const OpContext& ctx, CostMetric m);

/// Memoised op_cost for one metric.
class CostTable {
 public:
  explicit CostTable(CostMetric metric) : metric_(metric) {}
  CostMetric metric() const { return metric_; }
  std::int64_t cost(OpKind op, const OpContext& ctx);
  std::size_t size() const { return cache_.size(); }

 private:
  using Key = std::tuple<int, int, int, int, int, int, bool>;
  CostMetric metric_;
  std::map<Key, std::int64_t> cache_;
};

/// k_s(alpha) = sum_kind sum_{e,o} softmax(alpha_kind[e])_o * coeff_kind[e][o], where
/// coeff aggregates b(o) over every cell of that kind with its own context.
struct SearchCostModel {
  CostMetric metric = CostMetric::params;
  int edges = 0;
  int ops = 0;
  std::vector<double> normal;     // [edges x ops]
  std::vector<double> reduction;  // [edges x ops]

  /// Double-precision evaluation, independent of the tensor engine.
  double value(std::span<const double> normal_alpha, std::span<const double> reduction_alpha) const;
  /// sum over edges of min_o / max_o coefficient.
  double lower_bound() const;
  double upper_bound() const;
};

/// Throws std::invalid_argument when `metric` differs from the table's.
SearchCostModel search_cost_model(const SupernetConfig& cfg, const OpSet& ops, CostTable& table,
                                  CostMetric metric);

struct DerivedCost {
  std::int64_t stem = 0;
  std::int64_t preprocess = 0;
  std::int64_t cell_ops = 0;
  std::int64_t classifier = 0;
  std::int64_t total() const { return stem + preprocess + cell_ops + classifier; }
};

/// Exact cost of the stacked evaluation network built from `g`.
DerivedCost derived_cost_breakdown(const Genotype& g, const TargetNetConfig& cfg, CostMetric m,
                                   const OpSet& ops);
std::int64_t derived_cost(const Genotype& g, const TargetNetConfig& cfg, CostMetric m,
                          const OpSet& ops);

}  // namespace dcanas

namespace dcanas::inline DCANAS_PRECISION {

struct SearchCost {
  Tensor value;  // scalar, differentiable w.r.t. both alpha tables
  CostMetric metric = CostMetric::params;
};

SearchCost search_cost(const AlphaTable& alpha, const SearchCostModel& model);
SearchCost search_cost(const AlphaTable& alpha, const SupernetConfig& cfg, const OpSet& ops,
                       CostTable& table, CostMetric metric);

struct GradCheckReport {
  double rel_error = 0;      // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0;
  std::size_t entries = 0;
  bool passed = false;
};

/// Compares the engine's dk_s/dalpha with central differences of
/// SearchCostModel::value in double precision.
GradCheckReport grad_check_search_cost(const AlphaTable& alpha, const SearchCostModel& model,
                                       double eps = 1e-5, double tolerance = 1e-4);

}  // namespace dcanas::inline DCANAS_PRECISION
