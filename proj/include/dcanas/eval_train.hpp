#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcanas/data.hpp"
#include "dcanas/genotype.hpp"
#include "dcanas/op_set.hpp"
#include "dcanas/optim.hpp"
#include "dcanas/target_net.hpp"

namespace dcanas {

/// Training recipe for the derived network. Dropout lives in net.dropout.
struct EvalConfig {
  int epochs = 30;
  std::size_t batch_size = 128;
  SgdConfig opt{0.025, 0.9, 3e-4};
  double grad_clip = 5.0;  // global L2 norm; 0 disables
  bool cutout = false;
  int cutout_length = 16;
  double label_smoothing = 0.0;
  /// Accepted for recipe compatibility; must stay off.
  bool auxiliary_head = false;
  std::uint64_t seed = 0;
  TargetNetConfig net;

  /// Desk recipe on the 1x16x16 synthetic tasks.
  static EvalConfig desk();
  void validate() const;
  std::string canonical() const;
};

struct EvalEpoch {
  int epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = 0;
  double lr = 0;
  double wall_clock_s = 0;
};

struct EvalResult {
  double final_test_acc = 0;
  double best_test_acc = 0;
  std::int64_t params = 0;
  std::int64_t flops = 0;  // multiply-accumulates of one forward pass
  double wall_clock_s = 0;
  std::vector<EvalEpoch> curve;
  std::uint64_t seed = 0;
};

/// Non-finite training loss. snapshot() holds the epoch, step and loss.
class EvalAborted : public std::runtime_error {
 public:
  EvalAborted(const std::string& what, std::string snapshot)
      : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
  const std::string& snapshot() const { return snapshot_; }

 private:
  std::string snapshot_;
};

}  // namespace dcanas

namespace dcanas::inline DCANAS_PRECISION {

using EvalCallback = std::function<void(const EvalEpoch&)>;

/// Trains a fresh network for `g` on train + val and scores it on test after
/// every epoch. Deterministic for a fixed cfg.seed.
EvalResult train_eval(const Genotype& g, const Dataset& ds, const EvalConfig& cfg,
                      const OpSet& ops = OpSet::darts(), const EvalCallback& on_epoch = {});

/// Top-1 accuracy of `net` in inference mode over `indices`.
double evaluate_accuracy(TargetNet& net, const Dataset& ds, const std::vector<std::size_t>& indices,
                         std::size_t batch_size);

}  // namespace dcanas::inline DCANAS_PRECISION
