#include <gtest/gtest.h>

#include <cmath>

#include "cost_oracle.hpp"
#include "dcanas/cost_model.hpp"
#include "dcanas/layers.hpp"
#include "finite_diff.hpp"
#include "random_genotype.hpp"

using namespace dcanas;

namespace {

std::vector<double> random_alpha(int n, Rng& rng, double scale) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

AlphaTable table_from(const SearchCostModel& m, const std::vector<double>& normal, const std::vector<double>& reduction) {
  AlphaTable t(m.edges, m.ops);
  for (std::size_t i = 0; i < normal.size(); ++i) {
    t.of(CellKind::normal).data()[i] = static_cast<Real>(normal[i]);
    t.of(CellKind::reduction).data()[i] = static_cast<Real>(reduction[i]);
  }
  return t;
}

}  // namespace

TEST(OpCost, PlainConvFormula) {
  EXPECT_EQ(plain_conv_cost(3, 4, 8, 5, 5, CostMetric::params), 3 * 3 * 4 * 8);
  EXPECT_EQ(plain_conv_cost(3, 4, 8, 5, 5, CostMetric::flops), 3 * 3 * 4 * 8 * 25);
  EXPECT_EQ(plain_conv_cost(1, 6, 10, 1, 1, CostMetric::params, true), 6 * 10 + 10);
}

TEST(OpCost, MatchesInstantiatedModules) {
  // Every op, both strides, affine or not, with and without the bottleneck.
  const OpSet ops = OpSet::darts();
  for (auto op : ops.ops()) {
    for (int stride : {1, 2}) {
      for (bool affine : {false, true}) {
        for (int ratio : {1, 4}) {
          OpContext ctx{8, 6, 6, stride, ratio, affine};
          OpOptions opts{affine, !affine, ratio};
          Rng rng(1);
          auto mod = make_op(op, ctx.channels, stride, opts, rng, "op");
          const std::string where = std::string(op_name(op)) + " s" + std::to_string(stride) +
                                    (affine ? " affine" : "") + " r" + std::to_string(ratio);
          if (!mod) {
            EXPECT_EQ(op_cost(op, ctx, CostMetric::params), 0) << where;
            EXPECT_EQ(op_cost(op, ctx, CostMetric::flops), 0) << where;
            continue;
          }
          EXPECT_EQ(op_cost(op, ctx, CostMetric::params), mod->param_count()) << where;
          EXPECT_EQ(op_cost(op, ctx, CostMetric::flops), oracle::module_macs(*mod, 8, 6, 6)) << where;
        }
      }
    }
  }
}

TEST(OpCost, TableMemoisesIdenticalContexts) {
  CostTable t(CostMetric::flops);
  const OpContext ctx{8, 8, 8, 1, 1, false};
  const auto a = t.cost(OpKind::sep_conv_5x5, ctx);
  const auto b = t.cost(OpKind::sep_conv_5x5, ctx);
  EXPECT_EQ(a, b);
  EXPECT_EQ(t.size(), 1u);
  EXPECT_EQ(a, op_cost(OpKind::sep_conv_5x5, ctx, CostMetric::flops));
}

TEST(SearchCost, CoefficientsMatchMeasuredSupernet) {
  for (bool cb : {false, true}) {
    for (auto metric : {CostMetric::params, CostMetric::flops}) {
      SupernetConfig cfg = SupernetConfig::desk();
      cfg.flags.channel_bottleneck = cb;
      CostTable table(metric);
      const auto model = search_cost_model(cfg, OpSet::darts(), table, metric);
      const auto measured = oracle::measured_search_coefficients(cfg, OpSet::darts(), metric);
      EXPECT_EQ(model.normal, measured.normal) << "cb=" << cb << " " << metric_name(metric);
      EXPECT_EQ(model.reduction, measured.reduction) << "cb=" << cb << " " << metric_name(metric);
    }
  }
}

TEST(SearchCost, MetricMismatchIsRejected) {
  CostTable table(CostMetric::params);
  EXPECT_THROW(search_cost_model(SupernetConfig::desk(), OpSet::darts(), table, CostMetric::flops),
               std::invalid_argument);
}

TEST(SearchCost, TensorValueAgreesWithDoubleEvaluation) {
  Rng rng(4);
  CostTable table(CostMetric::params);
  const auto model = search_cost_model(SupernetConfig::desk(), OpSet::darts(), table, CostMetric::params);
  const auto n = random_alpha(model.edges * model.ops, rng, 1.0);
  const auto r = random_alpha(model.edges * model.ops, rng, 1.0);
  const auto t = table_from(model, n, r);
  const double engine = search_cost(t, model).value.item();
  EXPECT_NEAR(engine, model.value(n, r), 1e-4 * model.value(n, r));
}

TEST(SearchCost, ShiftInvariantAndBounded) {
  Rng rng(8);
  for (auto metric : {CostMetric::params, CostMetric::flops}) {
    CostTable table(metric);
    const auto model = search_cost_model(SupernetConfig::desk(), OpSet::darts(), table, metric);
    for (int trial = 0; trial < 25; ++trial) {
      auto n = random_alpha(model.edges * model.ops, rng, 2.0);
      auto r = random_alpha(model.edges * model.ops, rng, 2.0);
      const double base = model.value(n, r);
      EXPECT_GT(base, model.lower_bound());
      EXPECT_LT(base, model.upper_bound());
      // Add a different constant to every row.
      for (int e = 0; e < model.edges; ++e) {
        const double cn = 10 * rng.normal(), cr = 10 * rng.normal();
        for (int o = 0; o < model.ops; ++o) {
          n[static_cast<std::size_t>(e * model.ops + o)] += cn;
          r[static_cast<std::size_t>(e * model.ops + o)] += cr;
        }
      }
      EXPECT_NEAR(model.value(n, r), base, 1e-6 * std::max(1.0, base));
    }
  }
}

TEST(SearchCost, PeakedAlphaApproachesDerivedCellCost) {
  // With three nodes the single intermediate node keeps both incoming edges,
  // so a peaked alpha selects exactly the network the derived cost describes.
  // FLOPs are compared because search-time BN carries no affine parameters.
  SupernetConfig sc = SupernetConfig::desk();
  sc.nodes = 3;
  sc.flags = SearchFlags::all_off();
  TargetNetConfig tc = TargetNetConfig::desk();
  tc.layers = sc.cells;
  tc.channels = sc.channels;
  tc.stem_multiplier = sc.stem_multiplier;
  tc.stem_stride = sc.stem_stride;
  const OpSet ops = OpSet::darts();
  CostTable table(CostMetric::flops);
  const auto model = search_cost_model(sc, ops, table, CostMetric::flops);
  for (auto op : ops.ops()) {
    if (op == OpKind::zero) continue;
    std::vector<double> a(static_cast<std::size_t>(model.edges * model.ops), 0.0);
    for (int e = 0; e < model.edges; ++e) a[static_cast<std::size_t>(e * model.ops) + *ops.index_of(op)] = 20.0;
    const double ks = model.value(a, a);
    Genotype g;
    g.nodes = 3;
    g.normal = {{2, 0, op}, {2, 1, op}};
    g.reduction = g.normal;
    const double cell_ops = static_cast<double>(derived_cost_breakdown(g, tc, CostMetric::flops, ops).cell_ops);
    if (cell_ops == 0) {
      // Only the e^-20 leakage from the other candidates remains.
      EXPECT_LT(ks, 1e-6 * model.upper_bound()) << op_name(op);
    } else {
      EXPECT_NEAR(ks / cell_ops, 1.0, 0.01) << op_name(op);
    }
  }
}

TEST(DerivedCost, EqualsInstantiatedTargetNet) {
  Rng rng(21);
  const OpSet ops = OpSet::darts();
  for (int trial = 0; trial < 12; ++trial) {
    const Genotype g = oracle::random_genotype(4, ops, rng);
    TargetNetConfig cfg = TargetNetConfig::desk();
    cfg.stem_multiplier = 1 + trial % 3;
    cfg.layers = 3 + trial % 4;
    const auto counted = oracle::count_target_net(g, cfg, ops);
    EXPECT_EQ(derived_cost(g, cfg, CostMetric::params, ops), counted.params) << serialize_genotype(g);
    EXPECT_EQ(derived_cost(g, cfg, CostMetric::flops, ops), counted.macs) << serialize_genotype(g);
  }
}

TEST(DerivedCost, BreakdownSumsToTotalAndSkipCellsAreFree) {
  const OpSet ops = OpSet::darts();
  Genotype g;
  g.nodes = 4;
  g.normal = {{2, 0, OpKind::skip_connect}, {2, 1, OpKind::skip_connect},
              {3, 0, OpKind::skip_connect}, {3, 1, OpKind::skip_connect}};
  g.reduction = g.normal;
  const auto cfg = TargetNetConfig::desk();
  const auto b = derived_cost_breakdown(g, cfg, CostMetric::params, ops);
  EXPECT_EQ(b.cell_ops, 0);
  EXPECT_GT(b.stem, 0);
  EXPECT_GT(b.preprocess, 0);
  EXPECT_GT(b.classifier, 0);
  EXPECT_EQ(b.total(), derived_cost(g, cfg, CostMetric::params, ops));
  Rng rng(0);
  TargetNet net(g, cfg, ops, rng);
  EXPECT_EQ(net.cell_op_param_count(), 0);
}

TEST(DerivedCost, FullScaleNetworkParameterCount) {
  // 20 layers at 36 channels on 3x32x32 inputs, parameters only.
  Rng rng(2);
  const OpSet ops = OpSet::darts();
  const Genotype g = oracle::random_genotype(6, ops, rng);
  const TargetNetConfig cfg;
  Rng init(0);
  TargetNet net(g, cfg, ops, init);
  EXPECT_EQ(net.param_count(), derived_cost(g, cfg, CostMetric::params, ops));
}
