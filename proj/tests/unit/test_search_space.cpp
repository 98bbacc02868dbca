#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dcanas/search_space.hpp"
#include "finite_diff.hpp"

using namespace dcanas;

namespace {

SupernetConfig tiny(SearchFlags flags) {
  SupernetConfig cfg = SupernetConfig::desk();
  cfg.cells = 3;
  cfg.channels = 4;
  cfg.height = 8;
  cfg.width = 8;
  cfg.flags = flags;
  return cfg;
}

Tensor images(int n, const SupernetConfig& cfg, Rng& rng) {
  return oracle::random_tensor({n, cfg.in_channels, cfg.height, cfg.width}, rng, 1.0, false);
}

std::int64_t count(const std::vector<Tensor>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

}  // namespace

TEST(Layout, EdgeIndexEnumeratesEdgesInTargetMajorOrder) {
  int expected = 0;
  for (int target = 2; target < 6; ++target) {
    for (int source = 0; source < target; ++source) EXPECT_EQ(edge_index(target, source), expected++);
  }
  EXPECT_EQ(edge_count(6), expected);
  EXPECT_EQ(edge_count(4), 5);
  EXPECT_EQ(edge_count(3), 2);
}

TEST(Layout, ReductionsAtThirdsDoubleChannelsAndHalveExtent) {
  StackSpec s;
  s.cells = 8;
  s.channels = 16;
  s.nodes = 6;
  const auto layout = stack_layout(s);
  ASSERT_EQ(layout.cells.size(), 8u);
  int c = 16, h = 32;
  for (int i = 0; i < 8; ++i) {
    const auto& cl = layout.cells[static_cast<std::size_t>(i)];
    const bool red = i == 8 / 3 || i == 2 * 8 / 3;
    EXPECT_EQ(cl.kind == CellKind::reduction, red) << i;
    if (red) {
      c *= 2;
      h /= 2;
    }
    EXPECT_EQ(cl.channels, c);
    EXPECT_EQ(cl.out_h, h);
    EXPECT_EQ(cl.out_channels, 4 * c);
  }
  EXPECT_EQ(layout.final_channels, 4 * c);
}

TEST(Layout, OddExtentAtReductionIsRejected) {
  StackSpec s;
  s.cells = 3;
  s.height = 10;  // 10 -> 5 at the first reduction, 5 cannot halve
  s.width = 10;
  EXPECT_THROW(stack_layout(s), std::invalid_argument);
}

TEST(Flags, ParseTogglesAndRoundTrip) {
  EXPECT_EQ(parse_search_flags("none"), SearchFlags::all_off());
  EXPECT_EQ(parse_search_flags("all"), SearchFlags{});
  const auto f = parse_search_flags("-ws,-cb,-dc,-rc");
  EXPECT_EQ(f, SearchFlags::all_off());
  EXPECT_EQ(f.str(), "-ws,-cb,-dc,-rc");
  EXPECT_EQ(parse_search_flags(SearchFlags{}.str()), SearchFlags{});
  EXPECT_EQ(parse_search_flags("none,+cb").channel_bottleneck, true);
  EXPECT_THROW(parse_search_flags("ws,xx"), std::invalid_argument);
}

TEST(MixedEdge, OutputIsSoftmaxWeightedSumOfCandidates) {
  Rng rng(3);
  const Tensor z = oracle::random_tensor({2, 3, 4, 4}, rng, 1.0, false);
  const Tensor alpha = Tensor::from({3}, {0.3f, -1.2f, 2.0f});
  std::vector<EdgeCandidate> cands = {
      {"zero", nullptr},
      {"identity", [](const Tensor& t) { return t; }},
      {"double", [](const Tensor& t) { return scale(t, 2); }},
  };
  const Tensor y = mixed_edge_forward(alpha, z, cands);
  const double e0 = std::exp(0.3), e1 = std::exp(-1.2), e2 = std::exp(2.0), s = e0 + e1 + e2;
  for (std::int64_t i = 0; i < z.numel(); ++i) {
    const double expect = (e1 / s) * z.data()[i] + (e2 / s) * 2 * z.data()[i];
    EXPECT_NEAR(y.data()[i], expect, 1e-5);
  }
}

TEST(MixedEdge, AllZeroCandidatesGiveZeros) {
  const Tensor alpha = Tensor::from({1}, {0.0f});
  std::vector<Tensor> outs(1);
  std::vector<std::string> names{"zero"};
  const Tensor y = mix_outputs(alpha, outs, names, {1, 2, 3, 3});
  EXPECT_EQ(y.shape(), (Shape{1, 2, 3, 3}));
  for (Real v : y.data()) EXPECT_EQ(v, 0);
}

TEST(Supernet, ForwardShapeAndFiniteLogits) {
  Rng rng(1);
  const auto cfg = tiny(SearchFlags{});
  Supernet net(cfg, OpSet::darts(), rng);
  const Tensor y = net.forward(images(3, cfg, rng), true);
  EXPECT_EQ(y.shape(), (Shape{3, cfg.classes}));
  EXPECT_TRUE(all_finite(y.data()));
}

TEST(Supernet, SameSeedSameInitAndOutput) {
  const auto cfg = tiny(SearchFlags{});
  Rng r1(9), r2(9), d1(4), d2(4);
  Supernet a(cfg, OpSet::darts(), r1), b(cfg, OpSet::darts(), r2);
  const Tensor ya = a.forward(images(2, cfg, d1), true);
  const Tensor yb = b.forward(images(2, cfg, d2), true);
  EXPECT_EQ(ya.to_vector(), yb.to_vector());
}

TEST(Supernet, WeightSharingKeepsOneModulePerSourceAndOp) {
  // With sharing, nodes-1 distinct sources feed a cell; without it, every edge
  // owns its modules.
  const OpSet ops = OpSet::darts();
  std::size_t parametric = 0;
  for (auto op : ops.ops()) parametric += is_parametric(op) ? 1 : 0;
  for (bool ws : {true, false}) {
    SearchFlags f = SearchFlags::all_off();
    f.weight_sharing = ws;
    Rng rng(2);
    Supernet net(tiny(f), ops, rng);
    const int nodes = net.config().nodes;
    const std::size_t slots = ws ? static_cast<std::size_t>(nodes - 1) : static_cast<std::size_t>(edge_count(nodes));
    for (std::size_t i = 0; i < net.cell_count(); ++i) {
      EXPECT_EQ(net.cell(i).parametric_weight_objects(), slots * parametric) << "ws=" << ws << " cell " << i;
    }
    if (ws) {
      // Both edges leaving node 0 resolve to the same module object.
      for (std::size_t o = 0; o < ops.size(); ++o) {
        EXPECT_EQ(net.cell(0).op_module(2, 0, o), net.cell(0).op_module(3, 0, o));
      }
    } else {
      EXPECT_NE(net.cell(0).op_module(2, 0, *ops.index_of(OpKind::sep_conv_3x3)),
                net.cell(0).op_module(3, 0, *ops.index_of(OpKind::sep_conv_3x3)));
    }
  }
}

TEST(Supernet, BottleneckShrinksSearchWeights) {
  SearchFlags on = SearchFlags::all_off(), off = SearchFlags::all_off();
  on.channel_bottleneck = true;
  auto cfg_on = tiny(on), cfg_off = tiny(off);
  cfg_on.channels = cfg_off.channels = 8;
  Rng r1(5), r2(5);
  Supernet a(cfg_on, OpSet::darts(), r1), b(cfg_off, OpSet::darts(), r2);
  EXPECT_LT(count(a.weight_params()), count(b.weight_params()));
}

TEST(Supernet, DerivedCellsMixOnlyFirstOfEachKind) {
  SearchFlags f = SearchFlags::all_off();
  f.derived_cells = true;
  auto cfg = tiny(f);
  cfg.cells = 6;
  Rng rng(7);
  Supernet net(cfg, OpSet::darts(), rng);
  bool seen_normal = false, seen_reduction = false;
  for (std::size_t i = 0; i < net.cell_count(); ++i) {
    const bool reduction = net.cell(i).kind() == CellKind::reduction;
    bool& seen = reduction ? seen_reduction : seen_normal;
    EXPECT_EQ(net.is_mixed(i), !seen) << i;
    seen = true;
  }
  SearchFlags g = SearchFlags::all_off();
  Rng rng2(7);
  Supernet all(tiny(g), OpSet::darts(), rng2);
  for (std::size_t i = 0; i < all.cell_count(); ++i) EXPECT_TRUE(all.is_mixed(i));
}

TEST(Supernet, RederiveCopiesCurrentGenotypeIntoDerivedCells) {
  SearchFlags f = SearchFlags::all_off();
  f.derived_cells = true;
  auto cfg = tiny(f);
  cfg.cells = 6;
  Rng rng(11);
  Supernet net(cfg, OpSet::darts(), rng);
  const OpSet& ops = net.op_set();
  // Peak every edge on one op per kind.
  auto peak = [&](CellKind kind, OpKind op) {
    auto d = net.alphas().of(kind).data();
    for (int e = 0; e < net.alphas().edges(); ++e) {
      d[static_cast<std::size_t>(e) * ops.size() + *ops.index_of(op)] += 20;
    }
  };
  peak(CellKind::normal, OpKind::sep_conv_3x3);
  peak(CellKind::reduction, OpKind::max_pool_3x3);
  net.rederive();
  const Genotype g = net.genotype();
  EXPECT_EQ(net.derived_edges(CellKind::normal), g.normal);
  EXPECT_EQ(net.derived_edges(CellKind::reduction), g.reduction);
  for (const auto& e : g.normal) EXPECT_EQ(e.op, OpKind::sep_conv_3x3);
  for (const auto& e : g.reduction) EXPECT_EQ(e.op, OpKind::max_pool_3x3);
  // Derived cells still produce a valid forward pass.
  const Tensor y = net.forward(images(2, cfg, rng), true);
  EXPECT_TRUE(all_finite(y.data()));
}

TEST(Supernet, DerivedCellsEvaluateFewerOps) {
  SearchFlags with = SearchFlags::all_off(), without = SearchFlags::all_off();
  with.derived_cells = true;
  auto cw = tiny(with), co = tiny(without);
  cw.cells = co.cells = 6;
  Rng r1(3), r2(3), d1(1), d2(1);
  Supernet a(cw, OpSet::darts(), r1), b(co, OpSet::darts(), r2);
  (void)a.forward(images(1, cw, d1), true);
  (void)b.forward(images(1, co, d2), true);
  EXPECT_LT(a.op_evaluations(), b.op_evaluations());
}

TEST(Supernet, AlphaGradientReachesBothTables) {
  Rng rng(13);
  const auto cfg = tiny(SearchFlags::all_off());
  Supernet net(cfg, OpSet::darts(), rng);
  for (Tensor t : net.alpha_params()) t.zero_grad();
  const Tensor y = net.forward(images(2, cfg, rng), true);
  const std::vector<int> labels{0, 1};
  backward(cross_entropy(y, labels));
  for (const Tensor& t : net.alpha_params()) {
    double mag = 0;
    for (Real g : t.grad()) mag += std::abs(g);
    EXPECT_GT(mag, 0);
  }
}

TEST(Alpha, RandomInitIsSmallAndSeeded) {
  Rng a(1), b(1);
  const auto x = AlphaTable::random(5, 8, a);
  const auto y = AlphaTable::random(5, 8, b);
  EXPECT_EQ(x.values(CellKind::normal), y.values(CellKind::normal));
  EXPECT_EQ(x.values(CellKind::reduction), y.values(CellKind::reduction));
  for (double v : x.values(CellKind::normal)) EXPECT_LT(std::abs(v), 1e-2);
  const auto row = x.row_softmax(CellKind::normal, 0);
  double s = 0;
  for (double p : row) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
}
