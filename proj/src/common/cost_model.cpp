#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dcanas/cost_model.hpp"

namespace dcanas {

std::string_view metric_name(CostMetric m) { return m == CostMetric::params ? "params" : "flops"; }

std::optional<CostMetric> parse_metric(std::string_view name) {
  if (name == "params") return CostMetric::params;
  if (name == "flops") return CostMetric::flops;
  return std::nullopt;
}

std::int64_t plain_conv_cost(int kernel, int c_in, int c_out, int out_h, int out_w, CostMetric m,
                             bool bias) {
  const std::int64_t weights = std::int64_t{kernel} * kernel * c_in * c_out;
  if (m == CostMetric::params) return weights + (bias ? c_out : 0);
  return weights * out_h * out_w;
}

namespace {

struct Extent {
  std::int64_t h, w;
};

Extent out_extent(const OpContext& ctx) {
  return {(ctx.in_h - 1) / ctx.stride + 1, (ctx.in_w - 1) / ctx.stride + 1};
}

// One relu -> depthwise -> pointwise -> bn block.
std::int64_t dw_pw_block(std::int64_t c, int k, Extent out, bool affine, CostMetric m) {
  const std::int64_t weights = c * k * k + c * c;
  if (m == CostMetric::params) return weights + (affine ? 2 * c : 0);
  return weights * out.h * out.w;
}

std::int64_t unwrapped(OpKind op, const OpContext& ctx, CostMetric m) {
  const Extent out = out_extent(ctx);
  const std::int64_t c = ctx.channels;
  switch (op) {
    case OpKind::zero:
    case OpKind::skip_connect:
    case OpKind::max_pool_3x3:
    case OpKind::avg_pool_3x3:
      return 0;
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
      return 2 * dw_pw_block(c, op_kernel(op), out, ctx.affine, m);
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5:
      return dw_pw_block(c, op_kernel(op), out, ctx.affine, m);
  }
  throw std::invalid_argument("op_cost: unknown op");
}

}  // namespace

std::int64_t op_cost(OpKind op, const OpContext& ctx, CostMetric m) {
  if (ctx.channels <= 0 || ctx.in_h <= 0 || ctx.in_w <= 0 || ctx.stride <= 0) {
    throw std::invalid_argument("op_cost: incomplete context");
  }
  if (ctx.bottleneck_ratio <= 0) throw std::invalid_argument("op_cost: bottleneck ratio must be positive");
  if (ctx.bottleneck_ratio == 1 || !is_parametric(op)) return unwrapped(op, ctx, m);

  const std::int64_t c = ctx.channels;
  const std::int64_t inner = std::max<std::int64_t>(1, c / ctx.bottleneck_ratio);
  OpContext inner_ctx = ctx;
  inner_ctx.channels = static_cast<int>(inner);
  inner_ctx.bottleneck_ratio = 1;
  const Extent out = out_extent(ctx);
  if (m == CostMetric::params) {
    const std::int64_t bn = ctx.affine ? 2 * inner + 2 * c : 0;
    return c * inner + unwrapped(op, inner_ctx, m) + inner * c + bn;
  }
  return c * inner * ctx.in_h * ctx.in_w + unwrapped(op, inner_ctx, m) + inner * c * out.h * out.w;
}

std::int64_t CostTable::cost(OpKind op, const OpContext& ctx) {
  const Key key{static_cast<int>(op), ctx.channels, ctx.in_h, ctx.in_w, ctx.stride, ctx.bottleneck_ratio,
                ctx.affine};
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const std::int64_t v = op_cost(op, ctx, metric_);
  cache_.emplace(key, v);
  return v;
}

double SearchCostModel::value(std::span<const double> normal_alpha,
                              std::span<const double> reduction_alpha) const {
  double total = 0;
  const std::size_t n_ops = static_cast<std::size_t>(ops);
  auto add = [&](std::span<const double> alpha, const std::vector<double>& coeff) {
    if (alpha.size() != coeff.size()) throw std::invalid_argument("search cost: alpha size mismatch");
    for (std::size_t e = 0; e < static_cast<std::size_t>(edges); ++e) {
      const auto row = alpha.subspan(e * n_ops, n_ops);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0, acc = 0;
      for (std::size_t o = 0; o < n_ops; ++o) {
        const double p = std::exp(row[o] - mx);
        z += p;
        acc += p * coeff[e * n_ops + o];
      }
      total += acc / z;
    }
  };
  add(normal_alpha, normal);
  add(reduction_alpha, reduction);
  return total;
}

namespace {

double edge_extreme(const SearchCostModel& m, bool upper) {
  double total = 0;
  const std::size_t n_ops = static_cast<std::size_t>(m.ops);
  for (const auto* coeff : {&m.normal, &m.reduction}) {
    for (std::size_t e = 0; e < static_cast<std::size_t>(m.edges); ++e) {
      auto first = coeff->begin() + static_cast<std::ptrdiff_t>(e * n_ops);
      auto last = first + static_cast<std::ptrdiff_t>(n_ops);
      total += upper ? *std::max_element(first, last) : *std::min_element(first, last);
    }
  }
  return total;
}

}  // namespace

double SearchCostModel::lower_bound() const { return edge_extreme(*this, false); }
double SearchCostModel::upper_bound() const { return edge_extreme(*this, true); }

SearchCostModel search_cost_model(const SupernetConfig& cfg, const OpSet& ops, CostTable& table,
                                  CostMetric metric) {
  if (table.metric() != metric) {
    throw std::invalid_argument("search cost: table holds " + std::string(metric_name(table.metric())) +
                                " costs but " + std::string(metric_name(metric)) + " was requested");
  }
  cfg.validate();
  const StackLayout layout = stack_layout(cfg.stack());
  SearchCostModel model;
  model.metric = metric;
  model.edges = edge_count(cfg.nodes);
  model.ops = static_cast<int>(ops.size());
  model.normal.assign(static_cast<std::size_t>(model.edges * model.ops), 0.0);
  model.reduction = model.normal;
  const int ratio = cfg.flags.channel_bottleneck ? cfg.bottleneck_ratio : 1;
  for (const auto& cell : layout.cells) {
    const bool reduction = cell.kind == CellKind::reduction;
    auto& coeff = reduction ? model.reduction : model.normal;
    for (int j = 2; j < cfg.nodes; ++j) {
      for (int i = 0; i < j; ++i) {
        OpContext ctx;
        ctx.channels = cell.channels;
        ctx.stride = reduction && i < 2 ? 2 : 1;
        ctx.in_h = i < 2 ? cell.in_h : cell.out_h;
        ctx.in_w = i < 2 ? cell.in_w : cell.out_w;
        ctx.bottleneck_ratio = ratio;
        ctx.affine = false;
        const std::size_t e = static_cast<std::size_t>(edge_index(j, i));
        for (std::size_t o = 0; o < ops.size(); ++o) {
          coeff[e * ops.size() + o] += static_cast<double>(table.cost(ops[o], ctx));
        }
      }
    }
  }
  return model;
}

DerivedCost derived_cost_breakdown(const Genotype& g, const TargetNetConfig& cfg, CostMetric m,
                                   const OpSet& ops) {
  cfg.validate();
  validate_genotype(g, ops);
  const StackLayout layout = stack_layout(cfg.stack(g.nodes));
  DerivedCost cost;
  const std::int64_t s = layout.stem_channels;
  cost.stem = plain_conv_cost(3, cfg.in_channels, static_cast<int>(s), layout.stem_h, layout.stem_w, m) +
              (m == CostMetric::params ? 2 * s : 0);
  for (const auto& cell : layout.cells) {
    const std::int64_t c = cell.channels;
    const std::int64_t bn = m == CostMetric::params ? 2 * c : 0;
    // pre0: factorized reduce when the previous cell reduced, else 1x1 conv.
    // Both cost c_prev_prev * c weights and land on the cell input extent.
    cost.preprocess += plain_conv_cost(1, cell.c_prev_prev, cell.channels, cell.in_h, cell.in_w, m) + bn;
    cost.preprocess += plain_conv_cost(1, cell.c_prev, cell.channels, cell.in_h, cell.in_w, m) + bn;
    const bool reduction = cell.kind == CellKind::reduction;
    for (const auto& e : g.cell(cell.kind)) {
      OpContext ctx;
      ctx.channels = cell.channels;
      ctx.stride = reduction && e.source < 2 ? 2 : 1;
      ctx.in_h = e.source < 2 ? cell.in_h : cell.out_h;
      ctx.in_w = e.source < 2 ? cell.in_w : cell.out_w;
      ctx.affine = true;
      cost.cell_ops += op_cost(e.op, ctx, m);
    }
  }
  cost.classifier = m == CostMetric::params
                        ? std::int64_t{layout.final_channels} * cfg.classes + cfg.classes
                        : std::int64_t{layout.final_channels} * cfg.classes;
  return cost;
}

std::int64_t derived_cost(const Genotype& g, const TargetNetConfig& cfg, CostMetric m, const OpSet& ops) {
  return derived_cost_breakdown(g, cfg, m, ops).total();
}

}  // namespace dcanas
