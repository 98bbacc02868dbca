#include <atomic>
#include <mutex>
#include <thread>

#include "dcanas/lug.hpp"

namespace dcanas::inline DCANAS_PRECISION {

LookupGraph build_lug(const SearchRunConfig& cfg, CostMetric metric, const Dataset& ds,
                      const LugBuildOptions& opts) {
  if (opts.grid.size() < 2) throw LugError("lookup graph grid needs at least 2 points to interpolate");
  for (std::size_t i = 1; i < opts.grid.size(); ++i) {
    if (!(opts.grid[i] > opts.grid[i - 1])) throw LugError("lookup graph grid must be strictly increasing");
  }
  if (opts.repeats < 1) throw LugError("repeats must be >= 1");
  cfg.validate();

  const std::size_t points = opts.grid.size();
  const std::size_t reps = static_cast<std::size_t>(opts.repeats);
  const std::size_t jobs = points * reps;
  std::vector<double> cost(jobs, 0.0);
  std::vector<char> ok(jobs, 0);
  std::vector<std::size_t> remaining(points, reps);
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::vector<std::size_t> finished_order;

  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t p = job / reps, r = job % reps;
      SearchRunConfig run = cfg;
      run.seed = cfg.seed + r;
      run.supernet.flags.resource_constraint = true;
      try {
        const auto res = run_search(run, ConstraintSpec::direct(metric, opts.grid[p]), ds);
        cost[job] = static_cast<double>(res.derived_cost);
        ok[job] = 1;
      } catch (const SearchAborted&) {
        ok[job] = 0;
      }
      std::lock_guard lock(mu);
      if (--remaining[p] == 0) finished_order.push_back(p);
    }
  };
  const int threads = std::max(1, std::min<int>(opts.parallel, static_cast<int>(jobs)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  LookupGraph g;
  g.metric = metric;
  g.dataset = opts.dataset.empty() ? ds.name : opts.dataset;
  g.config_hash = lug_config_hash(cfg, metric, g.dataset, opts.grid, opts.repeats);
  for (std::size_t p = 0; p < points; ++p) {
    std::vector<double> sample;
    for (std::size_t r = 0; r < reps; ++r) {
      if (ok[p * reps + r]) sample.push_back(cost[p * reps + r]);
    }
    LugPoint pt;
    pt.kd_prime = opts.grid[p];
    pt.seed_count = static_cast<int>(sample.size());
    if (sample.empty()) {
      pt.flag = LugFlag::failed;
    } else {
      pt.kd_measured = median(sample);
    }
    g.points.push_back(pt);
  }
  flag_monotonicity(g.points);
  if (opts.progress) {
    for (std::size_t p : finished_order) opts.progress(g.points[p], p);
  }
  g.validate();
  return g;
}

}  // namespace dcanas::inline DCANAS_PRECISION
