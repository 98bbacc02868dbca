#include "dcanas/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "dcanas/util.hpp"

namespace dcanas {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string bool_text(bool v) { return v ? "true" : "false"; }

// One binding per configuration key: how to read it into RunConfig and how to
// render it back. The table is the single source of truth for both directions.
struct Binding {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

template <typename Get>
Binding int_key(const char* key, Get get) {
  return {key, [get, key](RunConfig& c, const std::string& v) { get(c) = parse_int(v, key); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Binding size_key(const char* key, Get get) {
  return {key,
          [get, key](RunConfig& c, const std::string& v) {
            const int n = parse_int(v, key);
            if (n < 0) throw ConfigError(std::string(key) + " must be >= 0");
            get(c) = static_cast<std::size_t>(n);
          },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Binding u64_key(const char* key, Get get) {
  return {key,
          [get, key](RunConfig& c, const std::string& v) {
            std::uint64_t out = 0;
            const auto t = trim(v);
            const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
            if (ec != std::errc() || p != t.data() + t.size() || t.empty()) {
              throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + v + "'");
            }
            get(c) = out;
          },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Binding real_key(const char* key, Get get) {
  return {key, [get, key](RunConfig& c, const std::string& v) { get(c) = parse_real(v, key); },
          [get](const RunConfig& c) { return format_double(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Binding bool_key(const char* key, Get get) {
  return {key, [get, key](RunConfig& c, const std::string& v) { get(c) = parse_bool(v, key); },
          [get](const RunConfig& c) { return bool_text(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Binding text_key(const char* key, Get get) {
  return {key, [get](RunConfig& c, const std::string& v) { get(c) = std::string(trim(v)); },
          [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Binding path_key(const char* key, Get get) {
  return {key, [get](RunConfig& c, const std::string& v) { get(c) = std::string(trim(v)); },
          [get](const RunConfig& c) { return get(const_cast<RunConfig&>(c)).string(); }};
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      {"metric",
       [](RunConfig& c, const std::string& v) {
         const auto m = parse_metric(trim(v));
         if (!m) throw ConfigError("metric: expected params or flops, got '" + v + "'");
         c.metric = *m;
       },
       [](const RunConfig& c) { return std::string(metric_name(c.metric)); }},

      int_key("search.epochs", [](RunConfig& c) -> int& { return c.search.epochs; }),
      size_key("search.batch_size", [](RunConfig& c) -> std::size_t& { return c.search.batch_size; }),
      real_key("search.val_fraction", [](RunConfig& c) -> double& { return c.search.val_fraction; }),
      real_key("search.w_lr", [](RunConfig& c) -> double& { return c.search.w_opt.lr; }),
      real_key("search.w_momentum", [](RunConfig& c) -> double& { return c.search.w_opt.momentum; }),
      real_key("search.w_weight_decay", [](RunConfig& c) -> double& { return c.search.w_opt.weight_decay; }),
      real_key("search.w_lr_floor", [](RunConfig& c) -> double& { return c.search.w_lr_floor; }),
      real_key("search.alpha_lr", [](RunConfig& c) -> double& { return c.search.alpha_opt.lr; }),
      real_key("search.alpha_beta1", [](RunConfig& c) -> double& { return c.search.alpha_opt.beta1; }),
      real_key("search.alpha_beta2", [](RunConfig& c) -> double& { return c.search.alpha_opt.beta2; }),
      real_key("search.alpha_eps", [](RunConfig& c) -> double& { return c.search.alpha_opt.eps; }),
      real_key("search.alpha_weight_decay", [](RunConfig& c) -> double& { return c.search.alpha_opt.weight_decay; }),
      real_key("search.lambda_lr", [](RunConfig& c) -> double& { return c.search.lambda_lr; }),
      real_key("search.lambda_init", [](RunConfig& c) -> double& { return c.search.lambda_init; }),
      bool_key("search.lambda_per_batch", [](RunConfig& c) -> bool& { return c.search.lambda_per_batch; }),
      bool_key("search.normalize_cost", [](RunConfig& c) -> bool& { return c.search.normalize_cost; }),
      int_key("search.patience", [](RunConfig& c) -> int& { return c.search.patience; }),
      size_key("search.max_steps_per_epoch", [](RunConfig& c) -> std::size_t& { return c.search.max_steps_per_epoch; }),
      u64_key("search.seed", [](RunConfig& c) -> std::uint64_t& { return c.search.seed; }),

      int_key("supernet.cells", [](RunConfig& c) -> int& { return c.search.supernet.cells; }),
      int_key("supernet.channels", [](RunConfig& c) -> int& { return c.search.supernet.channels; }),
      int_key("supernet.nodes", [](RunConfig& c) -> int& { return c.search.supernet.nodes; }),
      int_key("supernet.bottleneck_ratio", [](RunConfig& c) -> int& { return c.search.supernet.bottleneck_ratio; }),
      int_key("supernet.stem_multiplier", [](RunConfig& c) -> int& { return c.search.supernet.stem_multiplier; }),
      int_key("supernet.stem_stride", [](RunConfig& c) -> int& { return c.search.supernet.stem_stride; }),
      {"supernet.flags",
       [](RunConfig& c, const std::string& v) {
         try {
           c.search.supernet.flags = parse_search_flags(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       },
       [](const RunConfig& c) { return c.search.supernet.flags.str(); }},

      int_key("target.layers", [](RunConfig& c) -> int& { return c.search.target.layers; }),
      int_key("target.channels", [](RunConfig& c) -> int& { return c.search.target.channels; }),
      int_key("target.stem_multiplier", [](RunConfig& c) -> int& { return c.search.target.stem_multiplier; }),
      int_key("target.stem_stride", [](RunConfig& c) -> int& { return c.search.target.stem_stride; }),
      real_key("target.dropout", [](RunConfig& c) -> double& { return c.search.target.dropout; }),

      int_key("eval.epochs", [](RunConfig& c) -> int& { return c.eval.epochs; }),
      size_key("eval.batch_size", [](RunConfig& c) -> std::size_t& { return c.eval.batch_size; }),
      real_key("eval.lr", [](RunConfig& c) -> double& { return c.eval.opt.lr; }),
      real_key("eval.momentum", [](RunConfig& c) -> double& { return c.eval.opt.momentum; }),
      real_key("eval.weight_decay", [](RunConfig& c) -> double& { return c.eval.opt.weight_decay; }),
      real_key("eval.grad_clip", [](RunConfig& c) -> double& { return c.eval.grad_clip; }),
      bool_key("eval.cutout", [](RunConfig& c) -> bool& { return c.eval.cutout; }),
      int_key("eval.cutout_length", [](RunConfig& c) -> int& { return c.eval.cutout_length; }),
      real_key("eval.label_smoothing", [](RunConfig& c) -> double& { return c.eval.label_smoothing; }),
      bool_key("eval.auxiliary_head", [](RunConfig& c) -> bool& { return c.eval.auxiliary_head; }),
      u64_key("eval.seed", [](RunConfig& c) -> std::uint64_t& { return c.eval.seed; }),

      text_key("data.source", [](RunConfig& c) -> std::string& { return c.data.source; }),
      size_key("data.n", [](RunConfig& c) -> std::size_t& { return c.data.synthetic.n; }),
      size_key("data.test_n", [](RunConfig& c) -> std::size_t& { return c.data.synthetic.test_n; }),
      int_key("data.classes", [](RunConfig& c) -> int& { return c.data.synthetic.classes; }),
      real_key("data.noise", [](RunConfig& c) -> double& { return c.data.synthetic.noise; }),
      u64_key("data.seed", [](RunConfig& c) -> std::uint64_t& { return c.data.synthetic.seed; }),
      int_key("data.size", [](RunConfig& c) -> int& { return c.data.synthetic.size; }),
      path_key("data.images", [](RunConfig& c) -> std::filesystem::path& { return c.data.images; }),
      path_key("data.labels", [](RunConfig& c) -> std::filesystem::path& { return c.data.labels; }),
      path_key("data.test_images", [](RunConfig& c) -> std::filesystem::path& { return c.data.test_images; }),
      path_key("data.test_labels", [](RunConfig& c) -> std::filesystem::path& { return c.data.test_labels; }),
      path_key("data.path", [](RunConfig& c) -> std::filesystem::path& { return c.data.path; }),
      path_key("data.test_path", [](RunConfig& c) -> std::filesystem::path& { return c.data.test_path; }),
      size_key("data.take", [](RunConfig& c) -> std::size_t& { return c.data.take; }),
      size_key("data.test_take", [](RunConfig& c) -> std::size_t& { return c.data.test_take; }),

      text_key("lug.grid", [](RunConfig& c) -> std::string& { return c.lug.grid; }),
      int_key("lug.repeats", [](RunConfig& c) -> int& { return c.lug.repeats; }),
      int_key("lug.parallel", [](RunConfig& c) -> int& { return c.lug.parallel; }),
  };
  return table;
}

}  // namespace

int parse_int(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  int out = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size()) {
    throw ConfigError(std::string(what) + ": expected an integer, got '" + std::string(text) + "'");
  }
  return out;
}

double parse_real(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  double out = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || p != t.data() + t.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(what) + ": expected a number, got '" + std::string(text) + "'");
  }
  return out;
}

bool parse_bool(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  throw ConfigError(std::string(what) + ": expected true or false, got '" + std::string(text) + "'");
}

double parse_constraint(std::string_view text, CostMetric metric) {
  const auto t = trim(text);
  std::size_t split = t.size();
  while (split > 0 && std::isalpha(static_cast<unsigned char>(t[split - 1]))) --split;
  const std::string_view number = t.substr(0, split);
  const std::string_view unit = t.substr(split);
  double scale = 1.0;
  if (unit.empty()) {
    scale = 1.0;
  } else if (metric == CostMetric::params && (unit == "K" || unit == "k")) {
    scale = 1e3;
  } else if (metric == CostMetric::params && unit == "M") {
    scale = 1e6;
  } else if (metric == CostMetric::flops && unit == "MF") {
    scale = 1e6;
  } else if (metric == CostMetric::flops && unit == "GF") {
    scale = 1e9;
  } else {
    throw ConfigError("constraint '" + std::string(text) + "': unit '" + std::string(unit) + "' is not valid for " +
                      std::string(metric_name(metric)) +
                      (metric == CostMetric::params ? " (use K or M)" : " (use MF or GF)"));
  }
  const double v = parse_real(number, "constraint") * scale;
  if (!(v > 0)) throw ConfigError("constraint '" + std::string(text) + "' must be positive");
  return v;
}

ConfigFile ConfigFile::parse(std::string_view text) {
  ConfigFile out;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.front() == '#' || line.front() == ';') {
      if (end == text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError("malformed section header", line_no);
      section = std::string(trim(line.substr(1, line.size() - 2)));
    } else {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value", line_no);
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("empty key", line_no);
      const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      out.entries_[full] = std::string(trim(line.substr(eq + 1)));
      // Validate the key eagerly so errors point at the offending line.
      bool known = false;
      for (const auto& b : bindings()) known = known || full == b.key;
      if (!known) throw ConfigError("unknown key '" + full + "'", line_no);
    }
    if (end == text.size()) break;
  }
  return out;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ConfigFile::assign(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(trim(assignment.substr(0, eq)));
  bool known = false;
  for (const auto& b : bindings()) known = known || key == b.key;
  if (!known) throw ConfigError("unknown key '" + key + "'");
  entries_[key] = std::string(trim(assignment.substr(eq + 1)));
}

std::optional<std::string> ConfigFile::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

RunConfig resolve_config(const ConfigFile& file) {
  RunConfig cfg;
  for (const auto& [key, value] : file.entries()) {
    const Binding* match = nullptr;
    for (const auto& b : bindings()) {
      if (key == b.key) match = &b;
    }
    if (!match) throw ConfigError("unknown key '" + key + "'");
    try {
      match->read(cfg, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  if (cfg.data.source != "idx" && cfg.data.source != "cifar") {
    try {
      cfg.data.synthetic.kind = parse_synthetic_kind(cfg.data.source);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(e.what()) + " (data.source also accepts idx and cifar)");
    }
  }
  // The eval network follows the target section; dropout lives there too.
  cfg.eval.net = cfg.search.target;
  return cfg;
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  std::string section = "\x01";
  for (const auto& b : bindings()) {
    const std::string_view key = b.key;
    const auto dot = key.find('.');
    const std::string sec = dot == std::string_view::npos ? "" : std::string(key.substr(0, dot));
    const std::string name(dot == std::string_view::npos ? key : key.substr(dot + 1));
    if (sec != section) {
      if (!sec.empty()) os << "\n[" << sec << "]\n";
      section = sec;
    }
    os << name << " = " << b.write(*this) << '\n';
  }
  return os.str();
}

std::string DataConfig::canonical() const {
  RunConfig tmp;
  tmp.data = *this;
  std::ostringstream os;
  for (const auto& b : bindings()) {
    if (std::string_view(b.key).starts_with("data.")) os << b.key << '=' << b.write(tmp) << '\n';
  }
  return os.str();
}

std::vector<std::filesystem::path> DataConfig::inputs() const {
  std::vector<std::filesystem::path> out;
  if (source == "idx") {
    for (const auto& p : {images, labels, test_images, test_labels}) {
      if (!p.empty()) out.push_back(p);
    }
  } else if (source == "cifar") {
    for (const auto& p : {path, test_path}) {
      if (!p.empty()) out.push_back(p);
    }
  }
  return out;
}

Dataset load_dataset(const DataConfig& cfg) {
  Dataset ds;
  if (cfg.source == "idx") {
    if (cfg.images.empty() || cfg.labels.empty()) throw ConfigError("idx data needs data.images and data.labels");
    ds = load_idx(cfg.images, cfg.labels, cfg.take);
    if (!cfg.test_images.empty() || !cfg.test_labels.empty()) {
      if (cfg.test_images.empty() || cfg.test_labels.empty()) {
        throw ConfigError("idx test data needs both data.test_images and data.test_labels");
      }
      attach_test_set(ds, load_idx(cfg.test_images, cfg.test_labels, cfg.test_take));
    }
  } else if (cfg.source == "cifar") {
    if (cfg.path.empty()) throw ConfigError("cifar data needs data.path");
    ds = load_cifar_binary(cfg.path, cfg.take);
    if (!cfg.test_path.empty()) attach_test_set(ds, load_cifar_binary(cfg.test_path, cfg.test_take));
  } else {
    SyntheticSpec spec = cfg.synthetic;
    try {
      spec.kind = parse_synthetic_kind(cfg.source);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(e.what()) + " (data.source also accepts idx and cifar)");
    }
    if (cfg.take > 0) spec.n = std::min(spec.n, cfg.take);
    ds = make_synthetic(spec);
  }
  normalize(ds);
  return ds;
}

void adapt_to_dataset(RunConfig& cfg, const Dataset& ds) {
  for (auto* shape : {&cfg.search.target, &cfg.eval.net}) {
    shape->in_channels = ds.channels;
    shape->height = ds.height;
    shape->width = ds.width;
    shape->classes = ds.classes;
  }
  auto& s = cfg.search.supernet;
  s.in_channels = ds.channels;
  s.height = ds.height;
  s.width = ds.width;
  s.classes = ds.classes;
}

}  // namespace dcanas
