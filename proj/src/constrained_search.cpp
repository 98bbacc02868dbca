#include "dcanas/constrained_search.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "dcanas/batch_tensor.hpp"
#include "dcanas/util.hpp"

namespace dcanas::inline DCANAS_PRECISION {

Tensor lagrangian(const Tensor& val_loss, const Tensor& k_s, double target, double lambda) {
  if (lambda == 0.0) return val_loss;
  return add(val_loss, scale(add_scalar(k_s, static_cast<Real>(-target)), static_cast<Real>(lambda)));
}

namespace {

void set_requires_grad(const std::vector<Tensor>& params, bool on) {
  for (Tensor t : params) t.set_requires_grad(on);
}

[[noreturn]] void abort_run(const char* what, const Supernet& net, const LagrangeState& state, double loss) {
  std::ostringstream snap;
  snap << "loss=" << loss << " lambda=" << state.lambda << " iteration=" << state.iteration << "\n";
  snap << "alpha.normal=";
  for (double v : net.alphas().values(CellKind::normal)) snap << format_double(v) << ' ';
  snap << "\nalpha.reduction=";
  for (double v : net.alphas().values(CellKind::reduction)) snap << format_double(v) << ' ';
  snap << '\n';
  throw SearchAborted(std::string("search aborted: non-finite ") + what, snap.str());
}

Tensor normalized_cost(const SearchCost& k, const ConstraintSpec& spec, bool normalize) {
  return normalize ? scale(k.value, static_cast<Real>(1.0 / spec.kd_prime)) : k.value;
}

}  // namespace

StepMetrics search_step(Supernet& net, const Batch& train, const Batch& val, Optimizer& w_opt,
                        Optimizer& alpha_opt, LagrangeState& state, const ConstraintSpec& spec,
                        const SearchCostModel& cost, const StepOptions& opts) {
  StepMetrics m;
  const double target = opts.normalize_cost ? 1.0 : spec.kd_prime;
  const auto alphas = net.alpha_params();
  const auto weights = net.weight_params();

  // Weight step on the train batch. The penalty depends on alpha only, so it
  // is left out unless explicitly requested.
  {
    const bool with_penalty = opts.constrained && opts.penalty_in_train_loss;
    set_requires_grad(alphas, with_penalty);
    w_opt.zero_grad();
    Tensor logits = net.forward(batch_images(train), true);
    Tensor loss = cross_entropy(logits, train.labels);
    m.train_loss = loss.item();
    m.train_acc = accuracy(logits, train.labels);
    if (with_penalty) {
      loss = lagrangian(loss, normalized_cost(search_cost(net.alphas(), cost), spec, opts.normalize_cost), target,
                        state.lambda);
    }
    if (!std::isfinite(loss.item())) abort_run("train loss", net, state, loss.item());
    backward(loss);
    w_opt.step();
    set_requires_grad(alphas, true);
  }

  // Architecture step on the val batch under the Lagrangian.
  {
    set_requires_grad(weights, false);
    alpha_opt.zero_grad();
    Tensor logits = net.forward(batch_images(val), true);
    Tensor loss = cross_entropy(logits, val.labels);
    m.val_loss = loss.item();
    m.val_acc = accuracy(logits, val.labels);
    Tensor objective = loss;
    if (opts.constrained) {
      objective = lagrangian(loss, normalized_cost(search_cost(net.alphas(), cost), spec, opts.normalize_cost),
                             target, state.lambda);
    }
    if (!std::isfinite(objective.item())) abort_run("val objective", net, state, objective.item());
    backward(objective);
    alpha_opt.step();
    set_requires_grad(weights, true);
  }

  const auto an = net.alphas().values(CellKind::normal);
  const auto ar = net.alphas().values(CellKind::reduction);
  if (!all_finite(net.alphas().of(CellKind::normal).data()) || !all_finite(net.alphas().of(CellKind::reduction).data())) {
    abort_run("alpha", net, state, m.val_loss);
  }
  m.k_s = cost.value(an, ar);
  if (opts.constrained && opts.update_lambda) {
    lambda_step(state, opts.normalize_cost ? m.k_s / spec.kd_prime : m.k_s, target);
  }
  m.lambda = state.lambda;
  net.rederive();
  return m;
}

SearchResult run_search(const SearchRunConfig& cfg, const ConstraintSpec& spec, const Dataset& ds,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  const bool constrained = cfg.supernet.flags.resource_constraint;
  if (constrained) spec.validate();
  if (ds.channels != cfg.supernet.in_channels || ds.height != cfg.supernet.height ||
      ds.width != cfg.supernet.width || ds.classes != cfg.supernet.classes) {
    throw std::invalid_argument("dataset '" + ds.name + "' does not match the supernet input/classes");
  }
  Dataset local = ds;
  auto streams = split_and_batch(local, cfg.val_fraction, cfg.batch_size, cfg.seed);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  const OpSet ops = OpSet::darts();
  Rng rng(cfg.seed);
  Supernet net(cfg.supernet, ops, rng);
  CostTable table(spec.metric);
  const SearchCostModel cost = search_cost_model(cfg.supernet, ops, table, spec.metric);
  Optimizer w_opt = Optimizer::sgd(net.weight_params(), cfg.w_opt);
  Optimizer alpha_opt = Optimizer::adam(net.alpha_params(), cfg.alpha_opt);
  LagrangeState state;
  state.lambda = cfg.lambda_init;
  state.lr = cfg.lambda_lr;
  const CosineSchedule schedule{cfg.w_opt.lr, std::max(1, cfg.epochs), cfg.w_lr_floor};

  StepOptions opts;
  opts.constrained = constrained;
  opts.update_lambda = cfg.lambda_per_batch;
  opts.normalize_cost = cfg.normalize_cost;

  SearchResult result;
  result.seed = cfg.seed;
  std::size_t steps_per_epoch = streams.train.batches_per_epoch();
  if (cfg.max_steps_per_epoch > 0) steps_per_epoch = std::min(steps_per_epoch, cfg.max_steps_per_epoch);

  Genotype previous = net.genotype();
  int unchanged = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    w_opt.set_lr(schedule.lr(epoch));
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = w_opt.lr();
    double val_hits = 0;
    std::size_t val_seen = 0;
    StepMetrics sm;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const Batch train = streams.train.next();
      const Batch val = streams.val.next();
      sm = search_step(net, train, val, w_opt, alpha_opt, state, spec, cost, opts);
      em.train_loss += sm.train_loss;
      em.val_loss += sm.val_loss;
      val_hits += sm.val_acc * static_cast<double>(val.size());
      val_seen += val.size();
      result.lambda_trajectory.push_back(state.lambda);
      result.ks_trajectory.push_back(sm.k_s);
      ++result.steps;
    }
    if (constrained && !cfg.lambda_per_batch) {
      lambda_step(state, cfg.normalize_cost ? sm.k_s / spec.kd_prime : sm.k_s, cfg.normalize_cost ? 1.0 : spec.kd_prime);
    }
    em.train_loss /= static_cast<double>(steps_per_epoch);
    em.val_loss /= static_cast<double>(steps_per_epoch);
    em.val_acc = val_seen ? val_hits / static_cast<double>(val_seen) : 0.0;
    em.k_s = sm.k_s;
    em.lambda = state.lambda;
    em.violation = sm.k_s - spec.kd_prime;
    em.wall_clock_s = elapsed();
    result.best_val_acc = std::max(result.best_val_acc, em.val_acc);
    result.epochs.push_back(em);
    if (on_epoch) on_epoch(em);

    Genotype current = net.genotype();
    unchanged = current == previous ? unchanged + 1 : 0;
    previous = std::move(current);
    if (cfg.patience > 0 && unchanged >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  result.genotype = net.genotype();
  result.alpha_normal = net.alphas().values(CellKind::normal);
  result.alpha_reduction = net.alphas().values(CellKind::reduction);
  result.wall_clock_s = elapsed();
  result.derived_cost = derived_cost(result.genotype, cfg.target, spec.metric, ops);
  return result;
}

}  // namespace dcanas::inline DCANAS_PRECISION
