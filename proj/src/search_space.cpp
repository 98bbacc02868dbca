#include "dcanas/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace dcanas::inline DCANAS_PRECISION {

Tensor mix_outputs(const Tensor& alpha_row, std::span<const Tensor> outputs,
                   std::span<const std::string> names, const Shape& zero_shape) {
  if (alpha_row.rank() != 1 || alpha_row.dim(0) != static_cast<std::int64_t>(outputs.size())) {
    throw ShapeError("mixed_edge: alpha row " + shape_str(alpha_row.shape()) + " does not match " +
                     std::to_string(outputs.size()) + " ops");
  }
  std::vector<Tensor> terms;
  std::vector<int> index;
  const Shape* ref = nullptr;
  std::size_t ref_op = 0;
  for (std::size_t o = 0; o < outputs.size(); ++o) {
    if (!outputs[o].defined()) continue;
    if (ref && outputs[o].shape() != *ref) {
      throw ShapeError("mixed_edge: op '" + names[o] + "' produced " + shape_str(outputs[o].shape()) +
                       " but '" + names[ref_op] + "' produced " + shape_str(*ref));
    }
    if (!ref) {
      ref = &outputs[o].shape();
      ref_op = o;
    }
    terms.push_back(outputs[o]);
    index.push_back(static_cast<int>(o));
  }
  if (terms.empty()) return Tensor::zeros(zero_shape);
  return weighted_sum(terms, softmax(alpha_row), index);
}

Tensor mixed_edge_forward(const Tensor& alpha_row, const Tensor& z,
                          std::span<const EdgeCandidate> candidates) {
  std::vector<Tensor> outputs;
  std::vector<std::string> names;
  for (const auto& c : candidates) {
    outputs.push_back(c.apply ? c.apply(z) : Tensor());
    names.push_back(c.name);
  }
  return mix_outputs(alpha_row, outputs, names, z.shape());
}

AlphaTable::AlphaTable(int edges, int ops)
    : edges_(edges),
      ops_(ops),
      normal_(Tensor::zeros({edges, ops}, true)),
      reduction_(Tensor::zeros({edges, ops}, true)) {
  normal_.set_name("alpha.normal");
  reduction_.set_name("alpha.reduction");
}

AlphaTable AlphaTable::random(int edges, int ops, Rng& rng, double scale) {
  AlphaTable t(edges, ops);
  for (Real& v : t.normal_.data()) v = static_cast<Real>(scale * rng.normal());
  for (Real& v : t.reduction_.data()) v = static_cast<Real>(scale * rng.normal());
  return t;
}

std::vector<double> AlphaTable::values(CellKind kind) const {
  const auto d = of(kind).data();
  return {d.begin(), d.end()};
}

std::vector<double> AlphaTable::row_softmax(CellKind kind, int edge) const {
  const auto d = of(kind).data().subspan(static_cast<std::size_t>(edge) * static_cast<std::size_t>(ops_),
                                         static_cast<std::size_t>(ops_));
  const double mx = *std::max_element(d.begin(), d.end());
  std::vector<double> out(d.size());
  double total = 0;
  for (std::size_t o = 0; o < d.size(); ++o) total += out[o] = std::exp(double(d[o]) - mx);
  for (double& v : out) v /= total;
  return out;
}

AlphaTable AlphaTable::clone() const {
  AlphaTable t(edges_, ops_);
  std::copy(normal_.data().begin(), normal_.data().end(), t.normal_.data().begin());
  std::copy(reduction_.data().begin(), reduction_.data().end(), t.reduction_.data().begin());
  return t;
}

SearchCell::SearchCell(const CellLayout& layout, int nodes, const OpSet& ops,
                       const OpOptions& op_opts, bool weight_sharing, Rng& rng,
                       const std::string& name)
    : layout_(layout), nodes_(nodes), ops_(ops), weight_sharing_(weight_sharing) {
  const bool affine = op_opts.affine;
  if (layout.reduction_prev) {
    pre0_ = std::make_unique<FactorizedReduce>(layout.c_prev_prev, layout.channels, affine, rng,
                                               name + ".pre0");
  } else {
    pre0_ = std::make_unique<ReluConvBn>(layout.c_prev_prev, layout.channels, 1, 1, 0, affine, rng,
                                         name + ".pre0");
  }
  pre1_ = std::make_unique<ReluConvBn>(layout.c_prev, layout.channels, 1, 1, 0, affine, rng,
                                       name + ".pre1");

  const bool reduction = layout.kind == CellKind::reduction;
  auto build_slot = [&](int source, const std::string& slot_name) {
    std::vector<std::unique_ptr<Module>> row;
    const int stride = reduction && source < 2 ? 2 : 1;
    for (std::size_t o = 0; o < ops.size(); ++o) {
      row.push_back(make_op(ops[o], layout.channels, stride, op_opts, rng,
                            slot_name + "." + std::string(op_name(ops[o]))));
    }
    store_.push_back(std::move(row));
  };
  if (weight_sharing) {
    for (int i = 0; i < nodes - 1; ++i) build_slot(i, name + ".src" + std::to_string(i));
  } else {
    for (int j = 2; j < nodes; ++j) {
      for (int i = 0; i < j; ++i) {
        build_slot(i, name + ".edge" + std::to_string(i) + "_" + std::to_string(j));
      }
    }
  }
}

std::size_t SearchCell::slot(int target, int source) const {
  return weight_sharing_ ? static_cast<std::size_t>(source)
                         : static_cast<std::size_t>(edge_index(target, source));
}

Tensor SearchCell::apply_op(std::size_t slot, std::size_t op, const Tensor& z, bool training) {
  Module* m = store_[slot][op].get();
  if (!m) return {};
  ++evaluations_;
  return m->forward(z, training);
}

Shape SearchCell::edge_shape(const Tensor& s, int) const {
  return {s.dim(0), layout_.channels, layout_.out_h, layout_.out_w};
}

Tensor SearchCell::forward_mixed(const Tensor& s0, const Tensor& s1, const Tensor& alpha,
                                 bool training) {
  std::vector<Tensor> states{pre0_->forward(s0, training), pre1_->forward(s1, training)};
  const auto names = ops_.names();
  // Under weight sharing each source's op outputs are computed once and reused
  // by every outgoing edge.
  std::vector<std::vector<Tensor>> shared(static_cast<std::size_t>(nodes_));
  for (int j = 2; j < nodes_; ++j) {
    std::vector<Tensor> terms;
    for (int i = 0; i < j; ++i) {
      const std::size_t s = slot(j, i);
      std::vector<Tensor> local;
      std::vector<Tensor>* outs = &local;
      if (weight_sharing_) outs = &shared[static_cast<std::size_t>(i)];
      if (outs->empty()) {
        for (std::size_t o = 0; o < ops_.size(); ++o) {
          outs->push_back(apply_op(s, o, states[static_cast<std::size_t>(i)], training));
        }
      }
      terms.push_back(mix_outputs(select_row(alpha, edge_index(j, i)), *outs, names,
                                  edge_shape(states[0], i)));
    }
    states.push_back(add_n(terms));
  }
  return concat(std::span(states).subspan(2), 1);
}

Tensor SearchCell::forward_derived(const Tensor& s0, const Tensor& s1,
                                   const std::vector<GenotypeEdge>& edges, bool training) {
  std::vector<Tensor> states{pre0_->forward(s0, training), pre1_->forward(s1, training)};
  std::map<std::pair<std::size_t, std::size_t>, Tensor> cache;
  for (int j = 2; j < nodes_; ++j) {
    std::vector<Tensor> terms;
    for (const auto& e : edges) {
      if (e.target != j) continue;
      const std::size_t s = slot(j, e.source);
      const std::size_t o = *ops_.index_of(e.op);
      auto key = std::pair(s, o);
      auto it = cache.find(key);
      if (it == cache.end()) {
        it = cache.emplace(key, apply_op(s, o, states[static_cast<std::size_t>(e.source)], training)).first;
      }
      terms.push_back(it->second);
    }
    if (terms.empty()) throw GenotypeError("derived cell node " + std::to_string(j) + " has no inputs");
    states.push_back(add_n(terms));
  }
  return concat(std::span(states).subspan(2), 1);
}

const Module* SearchCell::op_module(int target, int source, std::size_t op) const {
  return store_.at(slot(target, source)).at(op).get();
}

std::size_t SearchCell::parametric_weight_objects() const {
  std::size_t n = 0;
  for (const auto& row : store_) {
    for (std::size_t o = 0; o < row.size(); ++o) n += row[o] && is_parametric(ops_[o]) ? 1 : 0;
  }
  return n;
}

void SearchCell::collect_params(std::vector<Tensor>& out) const {
  pre0_->collect_params(out);
  pre1_->collect_params(out);
  for (const auto& row : store_) {
    for (const auto& m : row) {
      if (m) m->collect_params(out);
    }
  }
}

Supernet::Supernet(const SupernetConfig& cfg, const OpSet& ops, Rng& rng)
    : cfg_(cfg), ops_(ops), layout_((cfg.validate(), stack_layout(cfg.stack()))),
      stem_bn_(layout_.stem_channels, false, "stem.bn") {
  stem_w_ = init_weight({layout_.stem_channels, cfg.in_channels, 3, 3},
                        std::int64_t{cfg.in_channels} * 9, rng, "stem.conv");
  OpOptions opts;
  opts.affine = false;
  opts.pool_bn = true;
  opts.bottleneck_ratio = cfg.flags.channel_bottleneck ? cfg.bottleneck_ratio : 1;
  bool seen_normal = false, seen_reduction = false;
  for (std::size_t i = 0; i < layout_.cells.size(); ++i) {
    const auto& cl = layout_.cells[i];
    cells_.push_back(std::make_unique<SearchCell>(cl, cfg.nodes, ops, opts, cfg.flags.weight_sharing,
                                                  rng, "cell" + std::to_string(i)));
    bool mixed = true;
    if (cfg.flags.derived_cells) {
      bool& seen = cl.kind == CellKind::normal ? seen_normal : seen_reduction;
      mixed = !seen;
      seen = true;
    }
    mixed_.push_back(mixed);
  }
  fc_w_ = init_weight({cfg.classes, layout_.final_channels}, layout_.final_channels, rng, "classifier.w");
  fc_b_ = init_weight({cfg.classes}, layout_.final_channels, rng, "classifier.b");
  alphas_ = AlphaTable::random(edge_count(cfg.nodes), static_cast<int>(ops.size()), rng);
  rederive();
}

void Supernet::rederive() {
  if (cfg_.flags.derived_cells) derived_ = genotype();
}

Genotype Supernet::genotype() const {
  return derive_genotype(alphas_.values(CellKind::normal), alphas_.values(CellKind::reduction),
                         cfg_.nodes, ops_);
}

Tensor Supernet::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.height || x.dim(3) != cfg_.width) {
    throw ShapeError("supernet: input " + shape_str(x.shape()) + " does not match stem [N x " +
                     std::to_string(cfg_.in_channels) + "x" + std::to_string(cfg_.height) + "x" +
                     std::to_string(cfg_.width) + "]");
  }
  Tensor s = stem_bn_.forward(conv2d(x, stem_w_, {cfg_.stem_stride, 1, 1}), training);
  Tensor s0 = s, s1 = s;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    SearchCell& c = *cells_[i];
    Tensor out = mixed_[i] ? c.forward_mixed(s0, s1, alphas_.of(c.kind()), training)
                           : c.forward_derived(s0, s1, derived_edges(c.kind()), training);
    s0 = s1;
    s1 = out;
  }
  return linear(global_avg_pool(s1), fc_w_, fc_b_);
}

std::vector<Tensor> Supernet::weight_params() const {
  std::vector<Tensor> out{stem_w_};
  for (const auto& c : cells_) c->collect_params(out);
  out.push_back(fc_w_);
  out.push_back(fc_b_);
  return out;
}

std::int64_t Supernet::op_evaluations() const {
  std::int64_t n = 0;
  for (const auto& c : cells_) n += c->op_evaluations();
  return n;
}

}  // namespace dcanas::inline DCANAS_PRECISION
