#include "dcanas/eval_train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "dcanas/batch_tensor.hpp"
#include "dcanas/ops.hpp"

namespace dcanas::inline DCANAS_PRECISION {

double evaluate_accuracy(TargetNet& net, const Dataset& ds, const std::vector<std::size_t>& indices,
                         std::size_t batch_size) {
  if (indices.empty()) return 0.0;
  NoGradGuard guard;
  BatchStream stream(ds, indices, batch_size, false, 0);
  double hits = 0;
  for (std::size_t b = 0; b < stream.batches_per_epoch(); ++b) {
    const Batch batch = stream.next();
    const Tensor logits = net.forward(batch_images(batch), false);
    hits += accuracy(logits, batch.labels) * static_cast<double>(batch.size());
  }
  return hits / static_cast<double>(indices.size());
}

EvalResult train_eval(const Genotype& g, const Dataset& ds, const EvalConfig& cfg, const OpSet& ops,
                      const EvalCallback& on_epoch) {
  cfg.validate();
  validate_genotype(g, ops);
  ds.validate();
  const auto train_idx = ds.training_pool();
  if (train_idx.empty() || ds.test.empty()) {
    throw std::invalid_argument("dataset '" + ds.name + "' needs non-empty training and test splits");
  }
  if (ds.channels != cfg.net.in_channels || ds.height != cfg.net.height || ds.width != cfg.net.width ||
      ds.classes != cfg.net.classes) {
    throw std::invalid_argument("dataset '" + ds.name + "' does not match the target network input/classes");
  }

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  // Separate streams for init, batching and augmentation keep each one
  // independent of the others' consumption.
  Rng init_rng(cfg.seed);
  Rng aug_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TargetNet net(g, cfg.net, ops, init_rng);
  std::vector<Tensor> params = net.params();
  Optimizer opt = Optimizer::sgd(params, cfg.opt);
  const CosineSchedule schedule{cfg.opt.lr, std::max(1, cfg.epochs), 0.0};
  BatchStream stream(ds, train_idx, cfg.batch_size, true, cfg.seed);

  EvalResult result;
  result.seed = cfg.seed;
  result.params = net.param_count();
  result.flops = static_cast<std::int64_t>(net.count_macs());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(schedule.lr(epoch));
    EvalEpoch ee;
    ee.epoch = epoch;
    ee.lr = opt.lr();
    double hits = 0;
    std::size_t seen = 0;
    const std::size_t steps = stream.batches_per_epoch();
    for (std::size_t s = 0; s < steps; ++s) {
      Batch batch = stream.next();
      if (cfg.cutout) apply_cutout(batch, cfg.cutout_length, aug_rng);
      opt.zero_grad();
      const Tensor logits = net.forward(batch_images(batch), true, &aug_rng);
      const Tensor loss = cross_entropy(logits, batch.labels, static_cast<Real>(cfg.label_smoothing));
      if (!std::isfinite(loss.item())) {
        std::ostringstream snap;
        snap << "epoch=" << epoch << " step=" << s << " loss=" << loss.item() << " lr=" << opt.lr();
        throw EvalAborted("evaluation aborted: non-finite training loss", snap.str());
      }
      backward(loss);
      if (cfg.grad_clip > 0) clip_grad_norm(params, cfg.grad_clip);
      opt.step();
      ee.train_loss += loss.item();
      hits += accuracy(logits, batch.labels) * static_cast<double>(batch.size());
      seen += batch.size();
    }
    ee.train_loss /= static_cast<double>(steps);
    ee.train_acc = hits / static_cast<double>(seen);
    ee.test_acc = evaluate_accuracy(net, ds, ds.test, cfg.batch_size);
    ee.wall_clock_s = elapsed();
    result.best_test_acc = std::max(result.best_test_acc, ee.test_acc);
    result.curve.push_back(ee);
    if (on_epoch) on_epoch(ee);
  }
  result.final_test_acc = cfg.epochs > 0 ? result.curve.back().test_acc
                                         : evaluate_accuracy(net, ds, ds.test, cfg.batch_size);
  if (cfg.epochs == 0) result.best_test_acc = result.final_test_acc;
  result.wall_clock_s = elapsed();
  return result;
}

}  // namespace dcanas::inline DCANAS_PRECISION
