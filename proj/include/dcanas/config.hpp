#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dcanas/constrained_search.hpp"
#include "dcanas/cost_model.hpp"
#include "dcanas/data.hpp"
#include "dcanas/eval_train.hpp"

namespace dcanas {

/// Bad configuration text or value. line() is 1-based, 0 when not from a file.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Flat key=value text with [section] headers. Entries are addressed as
/// "section.key"; keys before the first header belong to no section. '#' and
/// ';' start comment lines.
class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text);
  static ConfigFile load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  /// Applies one "section.key=value" override.
  void assign(std::string_view assignment);
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

struct DataConfig {
  /// spiral | moons | blobs | idx | cifar
  std::string source = "spiral";
  SyntheticSpec synthetic{};
  std::filesystem::path images, labels, test_images, test_labels;  // idx
  std::filesystem::path path, test_path;                             // cifar
  std::size_t take = 0;
  std::size_t test_take = 0;

  DataConfig() { synthetic.seed = 7; }
  std::string canonical() const;
  /// Input files that determine the dataset; empty for synthetic sources.
  std::vector<std::filesystem::path> inputs() const;
};

struct LugSettings {
  std::string grid;  // empty: derived from an unconstrained search
  int repeats = 3;
  int parallel = 1;
};

/// Everything a command needs, starting from the desk presets.
struct RunConfig {
  SearchRunConfig search = SearchRunConfig::desk();
  EvalConfig eval = EvalConfig::desk();
  DataConfig data;
  LugSettings lug;
  CostMetric metric = CostMetric::params;

  /// Sectioned key=value text that resolves back to this configuration.
  std::string canonical() const;
};

/// Overlays `file` on the desk presets. Unknown keys and malformed values
/// raise ConfigError.
RunConfig resolve_config(const ConfigFile& file);

/// Strict scalar parsing for configuration and command-line values.
int parse_int(std::string_view text, std::string_view what);
double parse_real(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

/// Constraint with unit suffix: K or M for parameters, MF or GF for
/// multiply-accumulates. A bare number is taken as-is.
double parse_constraint(std::string_view text, CostMetric metric);

/// Loads (and normalises) the configured dataset.
Dataset load_dataset(const DataConfig& cfg);

/// Points the supernet, target net and eval net at the dataset's input shape
/// and class count.
void adapt_to_dataset(RunConfig& cfg, const Dataset& ds);

}  // namespace dcanas
