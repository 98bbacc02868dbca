// Built with DCANAS_DOUBLE. The helpers stay in an unnamed namespace: the
// shared test-support headers are compiled for 32 bits in the driver and
// would clash here.

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "acceptance.hpp"
#include "dcanas/batch_tensor.hpp"
#include "dcanas/cost_model.hpp"
#include "dcanas/search_space.hpp"

static_assert(sizeof(dcanas::Real) == 8, "gradient acceptance must run in 64-bit reals");

namespace dcanas::acceptance {
namespace {

constexpr double kTol = 1e-4;

struct Accumulator {
  double d2 = 0, a2 = 0, n2 = 0;
  std::size_t coords = 0;
  void add(double analytic, double numeric) {
    d2 += (analytic - numeric) * (analytic - numeric);
    a2 += analytic * analytic;
    n2 += numeric * numeric;
    ++coords;
  }
  double error() const {
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    return denom == 0 ? 1.0 : std::sqrt(d2) / denom;
  }
};

double central_difference(Real& x, const std::function<double()>& f, double eps) {
  const Real saved = x;
  x = saved + eps;
  const double up = f();
  x = saved - eps;
  const double down = f();
  x = saved;
  return (up - down) / (2 * eps);
}

/// Samples up to `per_tensor` coordinates of every tensor.
void check_tensors(std::vector<Tensor> params, const std::function<double()>& f, std::size_t per_tensor,
                   Rng& rng, Accumulator& acc) {
  for (Tensor& p : params) {
    const auto n = static_cast<std::size_t>(p.numel());
    const std::vector<Real> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t k = 0; k < std::min(per_tensor, n); ++k) {
      const std::size_t i = n <= per_tensor ? k : static_cast<std::size_t>(rng.below(n));
      acc.add(analytic[i], central_difference(p.data()[i], f, 1e-6));
    }
  }
}

struct SupernetErrors {
  double w = 0, alpha = 0;
  std::size_t coords = 0;
};

SupernetErrors supernet_errors(SearchFlags flags, std::uint64_t seed) {
  SupernetConfig cfg = SupernetConfig::desk();
  cfg.cells = 3;
  cfg.channels = 4;
  cfg.height = cfg.width = 8;
  cfg.classes = 3;
  cfg.flags = flags;
  Rng rng(seed);
  Supernet net(cfg, OpSet::darts(), rng);
  // Alpha away from uniform so every mixing weight is distinct.
  for (Tensor t : net.alpha_params())
    for (Real& v : t.data()) v = static_cast<Real>(rng.normal());
  net.rederive();

  Batch batch;
  batch.channels = 1;
  batch.height = batch.width = 8;
  for (int i = 0; i < 3 * 64; ++i) batch.images.push_back(static_cast<float>(rng.normal()));
  batch.labels = {0, 2, 1};
  const Tensor x = batch_images(batch);

  auto loss = [&] { return cross_entropy(net.forward(x, true), batch.labels); };
  std::vector<Tensor> all = net.weight_params();
  for (const Tensor& a : net.alpha_params()) all.push_back(a);
  for (Tensor& p : all) p.zero_grad();
  backward(loss());
  auto f = [&] {
    NoGradGuard guard;
    return static_cast<double>(loss().item());
  };
  Accumulator w, a;
  check_tensors(net.weight_params(), f, 4, rng, w);
  check_tensors(net.alpha_params(), f, 1000, rng, a);
  return {w.error(), a.error(), w.coords + a.coords};
}

double cost_error(CostMetric metric, std::uint64_t seed, std::size_t& coords) {
  const SupernetConfig cfg = SupernetConfig::desk();
  CostTable table(metric);
  const SearchCostModel model = search_cost_model(cfg, OpSet::darts(), table, metric);
  Rng rng(seed);
  AlphaTable alpha = AlphaTable::random(model.edges, model.ops, rng, 1.0);
  for (Tensor t : alpha.params()) t.zero_grad();
  backward(search_cost(alpha, model).value);
  // Differences taken through the double-precision evaluator, not the graph.
  auto f = [&] {
    const auto n = alpha.values(CellKind::normal), r = alpha.values(CellKind::reduction);
    return model.value(n, r);
  };
  Accumulator acc;
  check_tensors(alpha.params(), f, 1000, rng, acc);
  coords += acc.coords;
  return acc.error();
}

}  // namespace

Outcome gradient_check_f64() {
  double worst = 0;
  std::size_t coords = 0;
  std::ostringstream detail;
  detail.precision(2);
  detail << std::scientific;
  for (auto [name, flags] : {std::pair{"all-off", SearchFlags::all_off()}, std::pair{"all-on", SearchFlags{}}}) {
    const SupernetErrors e = supernet_errors(flags, 5);
    worst = std::max({worst, e.w, e.alpha});
    coords += e.coords;
    detail << name << " w " << e.w << " alpha " << e.alpha << "; ";
  }
  for (auto metric : {CostMetric::params, CostMetric::flops}) {
    const double e = cost_error(metric, 6, coords);
    worst = std::max(worst, e);
    detail << "k_s(" << metric_name(metric) << ") " << e << "; ";
  }
  detail << coords << " coordinates, worst " << worst << " (tol 1e-4)";
  return {worst < kTol, detail.str()};
}

}  // namespace dcanas::acceptance
