#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcanas/constrained_search.hpp"
#include "dcanas/cost_model.hpp"

namespace dcanas {

enum class LugFlag { ok, nonmono, failed };
std::string_view lug_flag_name(LugFlag f);

struct LugPoint {
  double kd_prime = 0;
  double kd_measured = 0;  // median evaluation-phase cost over successful repeats
  int seed_count = 0;      // successful repeats
  LugFlag flag = LugFlag::ok;

  bool operator==(const LugPoint&) const = default;
};

class LugError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calibrated map from device constraint K_d to search constraint K_d'.
/// Immutable once built.
class LookupGraph {
 public:
  struct Query {
    double kd_prime = 0;
    bool extrapolated = false;
  };

  CostMetric metric = CostMetric::params;
  std::string dataset;
  std::string config_hash;
  std::vector<LugPoint> points;  // strictly increasing kd_prime

  /// Throws LugError unless >= 2 usable points with increasing kd_prime.
  void validate() const;
  /// Usable points as (kd_prime, isotonic kd_measured).
  std::vector<std::pair<double, double>> curve() const;
  /// Inverse piecewise-linear interpolation over the isotonic curve. On a
  /// plateau the smallest kd_prime wins; outside the calibrated range the
  /// nearest end is returned with `extrapolated` set.
  Query lookup(double kd) const;

  bool operator==(const LookupGraph&) const = default;
};

/// Weighted pool-adjacent-violators fit: the non-decreasing sequence closest
/// to `y` in weighted least squares.
std::vector<double> isotonic_fit(std::span<const double> y, std::span<const double> weights = {});

/// Median of a non-empty sample.
double median(std::vector<double> v);

/// Assigns ok/nonmono flags from raw medians; failed points are left alone.
void flag_monotonicity(std::vector<LugPoint>& points);

std::string serialize_lug(const LookupGraph& g);
LookupGraph parse_lug(std::string_view text);
void write_lug_file(const std::filesystem::path& path, const LookupGraph& g);
LookupGraph read_lug_file(const std::filesystem::path& path);

/// "lo:hi:n" (geometric, inclusive) or a comma-separated explicit list.
/// The result is sorted and strictly increasing.
std::vector<double> parse_grid(std::string_view spec);
/// n points from lo to hi in geometric progression.
std::vector<double> geometric_grid(double lo, double hi, int n);

/// Hash of everything that determines a build.
std::string lug_config_hash(const SearchRunConfig& cfg, CostMetric metric, std::string_view dataset,
                            std::span<const double> grid, int repeats);

}  // namespace dcanas

namespace dcanas::inline DCANAS_PRECISION {

struct LugBuildOptions {
  std::vector<double> grid;
  int repeats = 3;
  int parallel = 1;
  std::string dataset;
  /// Called once per grid point in completion order, after all workers join.
  std::function<void(const LugPoint&, std::size_t index)> progress;
};

/// Runs `repeats` searches per grid point (seeds cfg.seed + r) with up to
/// `parallel` concurrent workers and records the median derived cost.
LookupGraph build_lug(const SearchRunConfig& cfg, CostMetric metric, const Dataset& ds,
                      const LugBuildOptions& opts);

}  // namespace dcanas::inline DCANAS_PRECISION
