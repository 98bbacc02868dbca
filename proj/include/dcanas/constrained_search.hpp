#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcanas/cost_model.hpp"
#include "dcanas/data.hpp"
#include "dcanas/genotype.hpp"
#include "dcanas/optim.hpp"
#include "dcanas/search_space.hpp"
#include "dcanas/target_net.hpp"

namespace dcanas {

class LookupGraph;

/// Trainable multiplier with projected dual ascent. lambda >= 0 always.
struct LagrangeState {
  struct Entry {
    std::int64_t iteration;
    double lambda;
    double k_s;
    double violation;
  };
  double lambda = 0.0;
  double lr = 1e-3;
  std::int64_t iteration = 0;
  std::vector<Entry> history;
};

/// lambda <- max(0, lambda + lr * (k_s - target)); appends to the history.
LagrangeState& lambda_step(LagrangeState& state, double k_s, double target);

enum class ConstraintSource { direct, lug };

struct ConstraintSpec {
  double kd = 0;        // device constraint, metric units
  double kd_prime = 0;  // search constraint, metric units
  CostMetric metric = CostMetric::params;
  ConstraintSource source = ConstraintSource::direct;
  bool lug_extrapolated = false;

  static ConstraintSpec direct(CostMetric metric, double kd_prime, double kd = 0);
  static ConstraintSpec from_lug(const LookupGraph& lug, double kd);
  void validate() const;
};

struct SearchRunConfig {
  int epochs = 50;
  std::size_t batch_size = 64;
  double val_fraction = 0.5;
  SgdConfig w_opt{0.2, 0.9, 3e-4};
  double w_lr_floor = 0.0;
  AdamConfig alpha_opt{};
  double lambda_lr = 1e-3;
  double lambda_init = 0.0;
  bool lambda_per_batch = true;
  /// Penalty uses k_s / K_d' - 1 so lambda is dimensionless.
  bool normalize_cost = true;
  /// Stop when the genotype is unchanged for this many consecutive epochs; 0 disables.
  int patience = 10;
  /// Caps train batches per epoch; 0 means a full pass.
  std::size_t max_steps_per_epoch = 0;
  std::uint64_t seed = 0;
  SupernetConfig supernet;
  TargetNetConfig target;  // reporting network for the derived cost

  /// Scaled-down recipe for single-core runs on the synthetic tasks.
  static SearchRunConfig desk();
  void validate() const;
  /// Canonical key=value rendering; every field that influences a run.
  std::string canonical() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  double k_s = 0;
  double lambda = 0;
  double violation = 0;  // k_s - K_d' in metric units
  double lr = 0;
  double wall_clock_s = 0;
};

struct SearchResult {
  Genotype genotype;
  std::vector<double> alpha_normal;
  std::vector<double> alpha_reduction;
  std::vector<double> lambda_trajectory;  // after every step
  std::vector<double> ks_trajectory;      // after every alpha update
  std::vector<EpochMetrics> epochs;
  double best_val_acc = 0;
  double wall_clock_s = 0;
  std::int64_t derived_cost = 0;  // of `genotype` on cfg.target
  std::int64_t steps = 0;
  bool early_stopped = false;
  std::uint64_t seed = 0;
};

/// NaN/Inf during a run. snapshot() describes the state at the failure.
class SearchAborted : public std::runtime_error {
 public:
  SearchAborted(const std::string& what, std::string snapshot)
      : std::runtime_error(what), snapshot_(std::move(snapshot)) {}
  const std::string& snapshot() const { return snapshot_; }

 private:
  std::string snapshot_;
};

}  // namespace dcanas

namespace dcanas::inline DCANAS_PRECISION {

/// val_loss + lambda * (k_s - target), in whatever units k_s and target use.
Tensor lagrangian(const Tensor& val_loss, const Tensor& k_s, double target, double lambda);

struct StepOptions {
  bool constrained = true;
  bool update_lambda = true;
  /// Adds the (w-independent) penalty to the train loss as well. Used to
  /// verify that it leaves the weight update unchanged.
  bool penalty_in_train_loss = false;
  bool normalize_cost = true;
};

struct StepMetrics {
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
  double k_s = 0;  // after the alpha update
  double lambda = 0;
};

/// One alternation: w on the train batch, alpha on the val batch under the
/// Lagrangian, then lambda, then derived-cell refresh.
StepMetrics search_step(Supernet& net, const Batch& train, const Batch& val, Optimizer& w_opt,
                        Optimizer& alpha_opt, LagrangeState& state, const ConstraintSpec& spec,
                        const SearchCostModel& cost, const StepOptions& opts);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Full search. `ds` must carry a training pool; it is re-split into
/// train/val halves with the run seed.
SearchResult run_search(const SearchRunConfig& cfg, const ConstraintSpec& spec, const Dataset& ds,
                        const EpochCallback& on_epoch = {});

}  // namespace dcanas::inline DCANAS_PRECISION
