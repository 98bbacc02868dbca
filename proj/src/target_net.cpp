#include "dcanas/target_net.hpp"

namespace dcanas::inline DCANAS_PRECISION {

TargetCell::TargetCell(const CellLayout& layout, const std::vector<GenotypeEdge>& edges, int nodes,
                       Rng& rng, const std::string& name)
    : nodes_(nodes), edges_(edges) {
  if (layout.reduction_prev) {
    pre0_ = std::make_unique<FactorizedReduce>(layout.c_prev_prev, layout.channels, true, rng, name + ".pre0");
  } else {
    pre0_ = std::make_unique<ReluConvBn>(layout.c_prev_prev, layout.channels, 1, 1, 0, true, rng,
                                         name + ".pre0");
  }
  pre1_ = std::make_unique<ReluConvBn>(layout.c_prev, layout.channels, 1, 1, 0, true, rng, name + ".pre1");
  OpOptions opts;
  opts.affine = true;
  const bool reduction = layout.kind == CellKind::reduction;
  for (const auto& e : edges_) {
    const int stride = reduction && e.source < 2 ? 2 : 1;
    ops_.push_back(make_op(e.op, layout.channels, stride, opts, rng,
                           name + ".edge" + std::to_string(e.source) + "_" + std::to_string(e.target)));
  }
}

Tensor TargetCell::forward(const Tensor& s0, const Tensor& s1, bool training) {
  std::vector<Tensor> states{pre0_->forward(s0, training), pre1_->forward(s1, training)};
  for (int j = 2; j < nodes_; ++j) {
    std::vector<Tensor> terms;
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      if (edges_[k].target != j) continue;
      terms.push_back(ops_[k]->forward(states[static_cast<std::size_t>(edges_[k].source)], training));
    }
    states.push_back(add_n(terms));
  }
  return concat(std::span(states).subspan(2), 1);
}

void TargetCell::collect_params(std::vector<Tensor>& out) const {
  pre0_->collect_params(out);
  pre1_->collect_params(out);
  for (const auto& m : ops_) m->collect_params(out);
}

std::int64_t TargetCell::op_param_count() const {
  std::int64_t n = 0;
  for (const auto& m : ops_) n += m->param_count();
  return n;
}

TargetNet::TargetNet(const Genotype& g, const TargetNetConfig& cfg, const OpSet& ops, Rng& rng)
    : cfg_(cfg),
      layout_((cfg.validate(), validate_genotype(g, ops), stack_layout(cfg.stack(g.nodes)))),
      stem_bn_(layout_.stem_channels, true, "stem.bn") {
  stem_w_ = init_weight({layout_.stem_channels, cfg.in_channels, 3, 3},
                        std::int64_t{cfg.in_channels} * 9, rng, "stem.conv");
  for (std::size_t i = 0; i < layout_.cells.size(); ++i) {
    const auto& cl = layout_.cells[i];
    cells_.push_back(std::make_unique<TargetCell>(cl, g.cell(cl.kind), g.nodes, rng, "cell" + std::to_string(i)));
  }
  fc_w_ = init_weight({cfg.classes, layout_.final_channels}, layout_.final_channels, rng, "classifier.w");
  fc_b_ = init_weight({cfg.classes}, layout_.final_channels, rng, "classifier.b");
}

Tensor TargetNet::forward(const Tensor& x, bool training, Rng* rng) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.height || x.dim(3) != cfg_.width) {
    throw ShapeError("target net: input " + shape_str(x.shape()) + " does not match stem");
  }
  Tensor s = stem_bn_.forward(conv2d(x, stem_w_, {cfg_.stem_stride, 1, 1}), training);
  Tensor s0 = s, s1 = s;
  for (auto& c : cells_) {
    Tensor out = c->forward(s0, s1, training);
    s0 = s1;
    s1 = out;
  }
  Tensor pooled = global_avg_pool(s1);
  if (training && cfg_.dropout > 0) {
    if (!rng) throw std::invalid_argument("target net: dropout needs an rng in training mode");
    pooled = dropout(pooled, static_cast<Real>(cfg_.dropout), *rng, true);
  }
  return linear(pooled, fc_w_, fc_b_);
}

std::vector<Tensor> TargetNet::params() const {
  std::vector<Tensor> out{stem_w_};
  stem_bn_.collect_params(out);
  for (const auto& c : cells_) c->collect_params(out);
  out.push_back(fc_w_);
  out.push_back(fc_b_);
  return out;
}

std::int64_t TargetNet::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : params()) n += p.numel();
  return n;
}

std::int64_t TargetNet::cell_op_param_count() const {
  std::int64_t n = 0;
  for (const auto& c : cells_) n += c->op_param_count();
  return n;
}

std::uint64_t TargetNet::count_macs() {
  NoGradGuard guard;
  // Eval-mode BN leaves the running statistics untouched.
  Tensor x = Tensor::zeros({1, cfg_.in_channels, cfg_.height, cfg_.width});
  MacCounter counter;
  (void)forward(x, false);
  return counter.count();
}

}  // namespace dcanas::inline DCANAS_PRECISION
