#include "dcanas/cost_model.hpp"

#include <cmath>

#include "dcanas/ops.hpp"

namespace dcanas::inline DCANAS_PRECISION {

SearchCost search_cost(const AlphaTable& alpha, const SearchCostModel& model) {
  if (alpha.edges() != model.edges || alpha.ops() != model.ops) {
    throw ShapeError("search_cost: alpha table " + std::to_string(alpha.edges()) + "x" +
                     std::to_string(alpha.ops()) + " does not match cost model " +
                     std::to_string(model.edges) + "x" + std::to_string(model.ops));
  }
  const std::vector<Real> cn(model.normal.begin(), model.normal.end());
  const std::vector<Real> cr(model.reduction.begin(), model.reduction.end());
  Tensor kn = dot_const(softmax(alpha.of(CellKind::normal)), cn);
  Tensor kr = dot_const(softmax(alpha.of(CellKind::reduction)), cr);
  return {add(kn, kr), model.metric};
}

SearchCost search_cost(const AlphaTable& alpha, const SupernetConfig& cfg, const OpSet& ops,
                       CostTable& table, CostMetric metric) {
  return search_cost(alpha, search_cost_model(cfg, ops, table, metric));
}

GradCheckReport grad_check_search_cost(const AlphaTable& alpha, const SearchCostModel& model,
                                       double eps, double tolerance) {
  AlphaTable a = alpha.clone();
  for (Tensor& t : a.params()) t.zero_grad();
  backward(search_cost(a, model).value);

  std::vector<double> n = a.values(CellKind::normal);
  std::vector<double> r = a.values(CellKind::reduction);
  GradCheckReport report;
  double diff2 = 0, an2 = 0, nu2 = 0;
  auto check = [&](std::vector<double>& values, std::span<const Real> analytic) {
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + eps;
      const double up = model.value(n, r);
      values[k] = saved - eps;
      const double down = model.value(n, r);
      values[k] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double d = static_cast<double>(analytic[k]) - numeric;
      diff2 += d * d;
      an2 += static_cast<double>(analytic[k]) * analytic[k];
      nu2 += numeric * numeric;
      report.max_abs_error = std::max(report.max_abs_error, std::abs(d));
      ++report.entries;
    }
  };
  check(n, a.of(CellKind::normal).grad());
  check(r, a.of(CellKind::reduction).grad());
  const double denom = std::max(std::sqrt(an2), std::sqrt(nu2));
  report.rel_error = denom > 0 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
  report.passed = report.rel_error < tolerance;
  return report;
}

}  // namespace dcanas::inline DCANAS_PRECISION
