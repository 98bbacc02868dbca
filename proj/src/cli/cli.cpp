#include "dcanas/cli.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcanas/config.hpp"
#include "dcanas/constrained_search.hpp"
#include "dcanas/eval_train.hpp"
#include "dcanas/lug.hpp"
#include "dcanas/util.hpp"

namespace dcanas {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Precondition failures detected by the tool itself map to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    while (!item.empty() && item.front() == ' ') item.erase(item.begin());
    while (!item.empty() && item.back() == ' ') item.pop_back();
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Options shared by every subcommand that runs something.
struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::optional<std::size_t> take;
  std::string metric;
  bool deterministic = false;

  void attach(CLI::App* app, bool with_metric = true) {
    app->add_option("--config", config, "key=value configuration file with [section] headers");
    app->add_option("--set", sets, "override one configuration key (section.key=value); repeatable");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--dataset", dataset, "data source: spiral, moons, blobs, idx or cifar");
    app->add_option("--take", take, "keep only the first N training examples");
    if (with_metric) app->add_option("--metric", metric, "cost metric: params or flops");
    // Runs are single-threaded inside and therefore always deterministic; the
    // flag is accepted for scripts that pass it explicitly.
    app->add_flag("--deterministic", deterministic, "require bit-reproducible results");
  }

  RunConfig resolve() const {
    ConfigFile file = config.empty() ? ConfigFile{} : ConfigFile::load(config);
    for (const auto& s : sets) file.assign(s);
    if (!dataset.empty()) file.set("data.source", dataset);
    if (take) file.set("data.take", std::to_string(*take));
    if (!metric.empty()) file.set("metric", metric);
    if (seed) {
      file.set("search.seed", std::to_string(*seed));
      file.set("eval.seed", std::to_string(*seed));
    }
    return resolve_config(file);
  }
};

std::string run_id(const std::string& command, const std::string& canonical) {
  return hex64(fnv1a64(command + '\n' + canonical)).substr(0, 16);
}

// Written before the run starts and rewritten on completion.
class Manifest {
 public:
  Manifest(fs::path file, std::string command, const std::vector<std::string>& args, const RunConfig& cfg,
           std::uint64_t seed)
      : file_(std::move(file)) {
    const std::string canonical = cfg.canonical();
    doc_["run"] = run_id(command, canonical);
    doc_["command"] = std::move(command);
    doc_["argv"] = args;
    doc_["config"] = canonical;
    doc_["config_hash"] = hex64(fnv1a64(canonical));
    doc_["seed"] = seed;
    doc_["started_at"] = utc_now();
    doc_["finished_at"] = nullptr;
    doc_["status"] = "running";
    doc_["artifacts"] = json::object();
    doc_["inputs"] = json::object();
    for (const auto& p : cfg.data.inputs()) input(p);
  }

  const std::string& id() const { return doc_["run"].get_ref<const std::string&>(); }
  const fs::path& path() const { return file_; }
  void artifact(const std::string& name, const fs::path& p) { doc_["artifacts"][name] = p.string(); }
  void input(const fs::path& p) { doc_["inputs"][p.string()] = git_blob_hash(p); }
  void set(const std::string& key, json value) { doc_[key] = std::move(value); }

  void write() const {
    if (file_.has_parent_path()) fs::create_directories(file_.parent_path());
    std::ofstream os(file_, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest " + file_.string());
    os << doc_.dump(2) << '\n';
  }
  void finish(const std::string& status) {
    doc_["finished_at"] = utc_now();
    doc_["status"] = status;
    write();
  }

 private:
  fs::path file_;
  json doc_;
};

// One self-delimiting JSON object per line; records are never rewritten.
class MetricsStream {
 public:
  MetricsStream(const fs::path& file, std::string run) : run_(std::move(run)) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    os_.open(file, std::ios::binary | std::ios::trunc);
    if (!os_) throw std::runtime_error("cannot write metrics " + file.string());
  }
  void emit(const std::string& phase, int epoch, const json& fields) {
    json rec;
    rec["run"] = run_;
    rec["phase"] = phase;
    rec["epoch"] = epoch;
    for (const auto& [k, v] : fields.items()) rec[k] = v;
    os_ << rec.dump() << '\n';
    os_.flush();
  }

 private:
  std::string run_;
  std::ofstream os_;
};

json epoch_json(const EpochMetrics& m) {
  return {{"train_loss", m.train_loss}, {"val_loss", m.val_loss}, {"val_acc", m.val_acc},
          {"k_s", m.k_s},               {"lambda", m.lambda},     {"violation", m.violation},
          {"lr", m.lr},                 {"wall_clock_s", m.wall_clock_s}};
}

json eval_epoch_json(const EvalEpoch& e) {
  return {{"train_loss", e.train_loss}, {"train_acc", e.train_acc}, {"test_acc", e.test_acc},
          {"lr", e.lr},                 {"wall_clock_s", e.wall_clock_s}};
}

json eval_result_json(const EvalResult& r) {
  return {{"final_test_acc", r.final_test_acc}, {"best_test_acc", r.best_test_acc}, {"params", r.params},
          {"flops", r.flops}, {"wall_clock_s", r.wall_clock_s}, {"epochs", r.curve.size()}, {"seed", r.seed}};
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

// Resolves the search constraint from --constraint / --lug / --kd-prime.
ConstraintSpec resolve_constraint(const RunConfig& cfg, const std::string& constraint, const std::string& lug_path,
                                  std::optional<double> kd_prime, Manifest* manifest, std::ostream& err) {
  if (!cfg.search.supernet.flags.resource_constraint) {
    return ConstraintSpec::direct(cfg.metric, 1.0);
  }
  if (!lug_path.empty() && kd_prime) throw UsageError("pass either --lug or --kd-prime, not both");
  std::optional<double> kd;
  if (!constraint.empty()) kd = parse_constraint(constraint, cfg.metric);
  if (kd_prime) {
    if (!(*kd_prime > 0)) throw UsageError("--kd-prime must be positive");
    return ConstraintSpec::direct(cfg.metric, *kd_prime, kd.value_or(*kd_prime));
  }
  if (lug_path.empty()) {
    if (kd) {
      throw UsageError("a device constraint needs a lookup graph: build one with `dcanas lug build` and pass "
                       "--lug, or give the search constraint directly with --kd-prime");
    }
    throw UsageError("the resource constraint is enabled: pass --constraint with --lug, or --kd-prime "
                     "(or disable it with --flags -rc)");
  }
  if (!kd) throw UsageError("--lug needs --constraint");
  const LookupGraph lug = read_lug_file(lug_path);
  if (lug.metric != cfg.metric) {
    throw UsageError("lookup graph " + lug_path + " is calibrated for " + std::string(metric_name(lug.metric)) +
                     ", the run uses " + std::string(metric_name(cfg.metric)));
  }
  if (manifest) manifest->input(lug_path);
  ConstraintSpec spec = ConstraintSpec::from_lug(lug, *kd);
  if (spec.lug_extrapolated) {
    err << "warning: K_d=" << format_double(*kd) << " lies outside the calibrated range of " << lug_path
        << "; using the nearest end K_d'=" << format_double(spec.kd_prime) << '\n';
  }
  return spec;
}

json constraint_json(const ConstraintSpec& spec, bool enabled) {
  if (!enabled) return nullptr;
  return {{"metric", metric_name(spec.metric)},
          {"kd", spec.kd},
          {"kd_prime", spec.kd_prime},
          {"source", spec.source == ConstraintSource::lug ? "lug" : "direct"},
          {"extrapolated", spec.lug_extrapolated}};
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  CommonOptions common;
  std::string constraint, lug, flags, out = "dcanas-search";
  std::optional<double> kd_prime;
  std::optional<int> epochs;
};

int cmd_search(const SearchArgs& a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.common.resolve();
  if (!a.flags.empty()) cfg.search.supernet.flags = parse_search_flags(a.flags, cfg.search.supernet.flags);
  if (a.epochs) cfg.search.epochs = *a.epochs;
  const Dataset ds = load_dataset(cfg.data);
  adapt_to_dataset(cfg, ds);

  const fs::path dir = a.out;
  Manifest manifest(dir / "manifest.json", "search", args, cfg, cfg.search.seed);
  const bool rc = cfg.search.supernet.flags.resource_constraint;
  const ConstraintSpec spec = resolve_constraint(cfg, a.constraint, a.lug, a.kd_prime, &manifest, err);
  manifest.set("constraint", constraint_json(spec, rc));
  manifest.artifact("metrics", dir / "metrics.jsonl");
  manifest.artifact("genotype", dir / "genotype.txt");
  manifest.artifact("result", dir / "result.json");
  manifest.write();

  MetricsStream metrics(dir / "metrics.jsonl", manifest.id());
  SearchResult r;
  try {
    r = run_search(cfg.search, spec, ds, [&](const EpochMetrics& m) {
      metrics.emit("search", m.epoch, epoch_json(m));
      err << "search epoch " << m.epoch << ": val_acc " << format_double(m.val_acc) << ", k_s "
          << format_double(m.k_s) << ", lambda " << format_double(m.lambda) << '\n';
    });
  } catch (const SearchAborted& e) {
    write_text(dir / "abort.txt", std::string(e.what()) + "\n" + e.snapshot());
    manifest.artifact("abort", dir / "abort.txt");
    manifest.finish("aborted");
    throw;
  }

  write_genotype_file(dir / "genotype.txt", r.genotype);
  json res;
  res["run"] = manifest.id();
  res["manifest"] = manifest.path().string();
  res["seed"] = r.seed;
  res["flags"] = cfg.search.supernet.flags.str();
  res["constraint"] = constraint_json(spec, rc);
  res["derived_cost"] = r.derived_cost;
  res["metric"] = metric_name(spec.metric);
  res["k_s"] = r.ks_trajectory.empty() ? 0.0 : r.ks_trajectory.back();
  res["lambda"] = r.lambda_trajectory.empty() ? 0.0 : r.lambda_trajectory.back();
  res["best_val_acc"] = r.best_val_acc;
  res["steps"] = r.steps;
  res["epochs"] = r.epochs.size();
  res["early_stopped"] = r.early_stopped;
  res["wall_clock_s"] = r.wall_clock_s;
  res["genotype"] = serialize_genotype(r.genotype);
  res["alpha_normal"] = r.alpha_normal;
  res["alpha_reduction"] = r.alpha_reduction;
  write_text(dir / "result.json", res.dump(2) + "\n");
  metrics.emit("search_result", static_cast<int>(r.epochs.size()),
               {{"derived_cost", r.derived_cost}, {"best_val_acc", r.best_val_acc}, {"wall_clock_s", r.wall_clock_s}});
  manifest.finish("ok");

  out << serialize_genotype(r.genotype);
  out << "derived_" << metric_name(spec.metric) << ' ' << r.derived_cost << '\n';
  if (rc && spec.kd > 0) {
    out << "constraint K_d " << format_double(spec.kd) << " (K_d' " << format_double(spec.kd_prime) << ") "
        << (static_cast<double>(r.derived_cost) <= spec.kd ? "met" : "exceeded") << '\n';
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------

struct LugArgs {
  CommonOptions common;
  std::string grid, out;
  std::optional<int> repeats, parallel, epochs;
};

int cmd_lug_build(const LugArgs& a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.common.resolve();
  if (!a.grid.empty()) cfg.lug.grid = a.grid;
  if (a.repeats) cfg.lug.repeats = *a.repeats;
  if (a.parallel) cfg.lug.parallel = *a.parallel;
  if (a.epochs) cfg.search.epochs = *a.epochs;
  if (cfg.lug.repeats < 1) throw UsageError("--repeats must be >= 1");
  if (cfg.lug.parallel < 1) throw UsageError("--parallel must be >= 1");
  cfg.search.supernet.flags.resource_constraint = true;
  const Dataset ds = load_dataset(cfg.data);
  adapt_to_dataset(cfg, ds);

  const fs::path file = a.out;
  fs::path manifest_path = file;
  manifest_path += ".manifest.json";
  Manifest manifest(manifest_path, "lug build", args, cfg, cfg.search.seed);
  manifest.artifact("lug", file);
  manifest.write();

  std::vector<double> grid;
  if (cfg.lug.grid.empty()) {
    // Bracket the useful region around the unconstrained search cost.
    SearchRunConfig free_cfg = cfg.search;
    free_cfg.supernet.flags.resource_constraint = false;
    err << "lug: no grid given; running an unconstrained search to anchor it\n";
    const SearchResult anchor = run_search(free_cfg, ConstraintSpec::direct(cfg.metric, 1.0), ds);
    const double ks = anchor.ks_trajectory.empty() ? 0.0 : anchor.ks_trajectory.back();
    if (!(ks > 0)) throw std::runtime_error("unconstrained anchor search produced no cost");
    grid = geometric_grid(0.25 * ks, 1.5 * ks, 5);
    manifest.set("anchor_k_s", ks);
  } else {
    try {
      grid = parse_grid(cfg.lug.grid);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (grid.size() < 2) throw UsageError("grid '" + cfg.lug.grid + "' has fewer than 2 points; interpolation needs >= 2");
  }
  manifest.set("grid", grid);

  LugBuildOptions opts;
  opts.grid = grid;
  opts.repeats = cfg.lug.repeats;
  opts.parallel = capped_parallelism(cfg.lug.parallel);
  opts.dataset = ds.name;
  opts.progress = [&](const LugPoint& p, std::size_t i) {
    err << "lug point " << i + 1 << "/" << grid.size() << ": K_d'=" << format_double(p.kd_prime)
        << " -> K_d=" << format_double(p.kd_measured) << " (" << p.seed_count << " runs, " << lug_flag_name(p.flag)
        << ")\n";
  };
  LookupGraph g;
  try {
    g = build_lug(cfg.search, cfg.metric, ds, opts);
  } catch (...) {
    manifest.finish("aborted");
    throw;
  }
  write_lug_file(file, g);
  manifest.finish("ok");
  out << serialize_lug(g);
  return exit_ok;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonOptions common;
  std::string genotype, out = "dcanas-eval";
  std::optional<int> epochs;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.common.resolve();
  if (a.epochs) cfg.eval.epochs = *a.epochs;
  const OpSet ops = OpSet::darts();
  const Genotype g = read_genotype_file(a.genotype, ops);
  const Dataset ds = load_dataset(cfg.data);
  adapt_to_dataset(cfg, ds);

  const fs::path dir = a.out;
  Manifest manifest(dir / "manifest.json", "eval", args, cfg, cfg.eval.seed);
  manifest.input(a.genotype);
  manifest.artifact("metrics", dir / "metrics.jsonl");
  manifest.artifact("result", dir / "result.json");
  manifest.write();
  MetricsStream metrics(dir / "metrics.jsonl", manifest.id());

  EvalResult r;
  try {
    r = train_eval(g, ds, cfg.eval, ops, [&](const EvalEpoch& e) {
      metrics.emit("eval", e.epoch, eval_epoch_json(e));
      err << "eval epoch " << e.epoch << ": train_loss " << format_double(e.train_loss) << ", test_acc "
          << format_double(e.test_acc) << '\n';
    });
  } catch (const EvalAborted& e) {
    write_text(dir / "abort.txt", std::string(e.what()) + "\n" + e.snapshot());
    manifest.artifact("abort", dir / "abort.txt");
    manifest.finish("aborted");
    throw;
  }
  json res = eval_result_json(r);
  metrics.emit("eval_result", static_cast<int>(r.curve.size()), res);
  res["run"] = manifest.id();
  res["manifest"] = manifest.path().string();
  write_text(dir / "result.json", res.dump(2) + "\n");
  manifest.finish("ok");
  out << res.dump() << '\n';
  return exit_ok;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  CommonOptions common;
  std::string constraints, seeds, lug, out;
  std::vector<std::string> flag_sets;
  std::optional<double> kd_prime_ratio;
  std::optional<int> parallel, epochs, eval_epochs;
  bool skip_eval = false;
};

struct SweepJob {
  std::size_t row = 0;
  std::uint64_t seed = 0;
  SearchRunConfig search;
  ConstraintSpec spec;
  // Outputs.
  double accuracy = std::nan("");
  std::int64_t params = 0, flops = 0;
  double search_s = 0;
  std::string error;
};

struct SweepRow {
  std::string flags;
  std::string constraint;  // as given, "-" when unconstrained
  ConstraintSpec spec;
  bool constrained = false;
};

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return v.empty() ? std::nan("") : 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : ""; }

int cmd_sweep(const SweepArgs& a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg = a.common.resolve();
  if (a.epochs) cfg.search.epochs = *a.epochs;
  if (a.eval_epochs) cfg.eval.epochs = *a.eval_epochs;
  const auto constraint_list = split_list(a.constraints);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(a.seeds)) {
    const int v = parse_int(s, "--seeds");
    if (v < 0) throw UsageError("seeds must be non-negative");
    seeds.push_back(static_cast<std::uint64_t>(v));
  }
  if (seeds.empty()) throw UsageError("--seeds is empty");
  std::vector<SearchFlags> flag_sets;
  for (const auto& f : a.flag_sets) flag_sets.push_back(parse_search_flags(f, cfg.search.supernet.flags));
  if (flag_sets.empty()) flag_sets.push_back(cfg.search.supernet.flags);

  const Dataset ds = load_dataset(cfg.data);
  adapt_to_dataset(cfg, ds);
  const fs::path csv_path = a.out;
  fs::path base = a.out.empty() ? fs::path("dcanas-sweep.csv") : csv_path;
  fs::path manifest_path = base, metrics_path = base;
  manifest_path += ".manifest.json";
  metrics_path += ".metrics.jsonl";
  Manifest manifest(manifest_path, "sweep", args, cfg, seeds.front());
  if (!a.out.empty()) manifest.artifact("table", csv_path);
  manifest.artifact("metrics", metrics_path);

  std::optional<LookupGraph> lug;
  if (!a.lug.empty()) {
    lug = read_lug_file(a.lug);
    if (lug->metric != cfg.metric) throw UsageError("lookup graph metric does not match --metric");
    manifest.input(a.lug);
  }

  std::vector<SweepRow> rows;
  for (const auto& fs_ : flag_sets) {
    if (!fs_.resource_constraint) {
      rows.push_back({fs_.str(), "-", ConstraintSpec::direct(cfg.metric, 1.0), false});
      continue;
    }
    if (constraint_list.empty()) throw UsageError("--constraints is empty but flag set " + fs_.str() + " enables rc");
    for (const auto& c : constraint_list) {
      const double kd = parse_constraint(c, cfg.metric);
      ConstraintSpec spec;
      if (lug) {
        spec = ConstraintSpec::from_lug(*lug, kd);
        if (spec.lug_extrapolated) err << "warning: constraint " << c << " lies outside the LUG range\n";
      } else if (a.kd_prime_ratio) {
        spec = ConstraintSpec::direct(cfg.metric, kd * *a.kd_prime_ratio, kd);
      } else {
        throw UsageError("constrained sweeps need --lug (or --kd-prime-ratio); build one with `dcanas lug build`");
      }
      rows.push_back({fs_.str(), c, spec, true});
    }
  }
  json row_meta = json::array();
  for (const auto& r : rows) row_meta.push_back({{"flags", r.flags}, {"constraint", r.constraint}, {"spec", constraint_json(r.spec, r.constrained)}});
  manifest.set("rows", row_meta);
  manifest.set("seeds", seeds);
  manifest.write();

  std::vector<SweepJob> jobs;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    for (auto seed : seeds) {
      SweepJob j;
      j.row = ri;
      j.seed = seed;
      j.search = cfg.search;
      j.spec = rows[ri].spec;
      j.search.seed = seed;
      j.search.supernet.flags = parse_search_flags(rows[ri].flags);
      jobs.push_back(std::move(j));
    }
  }

  const int workers = std::min<int>(capped_parallelism(a.parallel.value_or(1)), static_cast<int>(jobs.size()));
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      SweepJob& j = jobs[i];
      try {
        const SearchResult sr = run_search(j.search, j.spec, ds);
        j.search_s = sr.wall_clock_s;
        if (!a.skip_eval) {
          EvalConfig ec = cfg.eval;
          ec.seed = j.seed;
          const EvalResult er = train_eval(sr.genotype, ds, ec);
          j.accuracy = er.final_test_acc;
          j.params = er.params;
          j.flops = er.flops;
        } else {
          j.params = derived_cost(sr.genotype, cfg.search.target, CostMetric::params, OpSet::darts());
          j.flops = derived_cost(sr.genotype, cfg.search.target, CostMetric::flops, OpSet::darts());
        }
      } catch (const std::exception& e) {
        j.error = e.what();
      }
      std::lock_guard lock(log_mutex);
      err << "sweep " << rows[j.row].flags << " " << rows[j.row].constraint << " seed " << j.seed << ": "
          << (j.error.empty() ? "acc " + csv_number(j.accuracy) + ", params " + std::to_string(j.params)
                              : "failed: " + j.error)
          << '\n';
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Aggregation happens after all workers joined, in job order.
  MetricsStream metrics(metrics_path, manifest.id());
  std::ostringstream table;
  table << "flags,constraint,kd_prime,seeds,acc_mean,acc_std,params_mean,flops_mean,search_seconds_mean,failed\n";
  bool any_failed = false;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    std::vector<double> acc, params, flops, secs;
    int failed = 0;
    for (const auto& j : jobs) {
      if (j.row != ri) continue;
      metrics.emit("sweep_run", 0,
                   {{"flags", rows[ri].flags}, {"constraint", rows[ri].constraint}, {"seed", j.seed},
                    {"test_acc", std::isfinite(j.accuracy) ? json(j.accuracy) : json(nullptr)},
                    {"params", j.params}, {"flops", j.flops}, {"search_seconds", j.search_s},
                    {"error", j.error.empty() ? json(nullptr) : json(j.error)}});
      if (!j.error.empty()) {
        ++failed;
        continue;
      }
      if (std::isfinite(j.accuracy)) acc.push_back(j.accuracy);
      params.push_back(static_cast<double>(j.params));
      flops.push_back(static_cast<double>(j.flops));
      secs.push_back(j.search_s);
    }
    any_failed = any_failed || failed > 0;
    const auto& r = rows[ri];
    table << r.flags << ',' << r.constraint << ',' << (r.constrained ? format_double(r.spec.kd_prime) : "") << ','
          << seeds.size() - static_cast<std::size_t>(failed) << ',' << csv_number(mean_of(acc)) << ','
          << csv_number(std_of(acc)) << ',' << csv_number(mean_of(params)) << ',' << csv_number(mean_of(flops))
          << ',' << csv_number(mean_of(secs)) << ',' << failed << '\n';
  }
  if (!a.out.empty()) write_text(csv_path, table.str());
  manifest.finish(any_failed ? "partial" : "ok");
  out << table.str();
  return any_failed ? exit_runtime : exit_ok;
}

// ---------------------------------------------------------------------------

struct CostArgs {
  std::string config, genotype, metric = "params", input;
  std::vector<std::string> sets;
  std::optional<int> channels, cells, classes, stem_multiplier;
};

int cmd_cost(const CostArgs& a, std::ostream& out) {
  ConfigFile file = a.config.empty() ? ConfigFile{} : ConfigFile::load(a.config);
  for (const auto& s : a.sets) file.assign(s);
  RunConfig cfg = resolve_config(file);
  const auto metric = parse_metric(a.metric);
  if (!metric) throw UsageError("--metric must be params or flops");
  TargetNetConfig net = cfg.search.target;
  if (a.channels) net.channels = *a.channels;
  if (a.cells) net.layers = *a.cells;
  if (a.classes) net.classes = *a.classes;
  if (a.stem_multiplier) net.stem_multiplier = *a.stem_multiplier;
  if (!a.input.empty()) {
    int c = 0, h = 0, w = 0;
    char x1 = 0, x2 = 0;
    std::istringstream is(a.input);
    if (!(is >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || !is.eof()) {
      throw UsageError("--input must look like CxHxW, got '" + a.input + "'");
    }
    net.in_channels = c;
    net.height = h;
    net.width = w;
  }
  const OpSet ops = OpSet::darts();
  const Genotype g = read_genotype_file(a.genotype, ops);
  out << derived_cost(g, net, *metric, ops) << '\n';
  return exit_ok;
}

}  // namespace

int capped_parallelism(int requested) {
  int n = std::max(1, requested);
  if (const char* env = std::getenv("DCANAS_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap > 0) n = std::min<long>(n, cap);
  }
  return n;
}

std::string git_blob_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string body = ss.str();
  const std::string object = "blob " + std::to_string(body.size()) + std::string(1, '\0') + body;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(object.data(), object.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string outs;
  for (unsigned i = 0; i < len; ++i) {
    outs += hex[md[i] >> 4];
    outs += hex[md[i] & 15];
  }
  return outs;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Resource-constrained differentiable architecture search", "dcanas"};
  app.require_subcommand(1);

  SearchArgs search;
  auto* s = app.add_subcommand("search", "search a cell architecture under a resource constraint");
  search.common.attach(s);
  s->add_option("--constraint", search.constraint, "device constraint K_d, e.g. 2K, 1.5M, 300MF, 1GF");
  s->add_option("--lug", search.lug, "lookup graph used to translate K_d into K_d'");
  s->add_option("--kd-prime", search.kd_prime, "search constraint K_d' given directly");
  s->add_option("--flags", search.flags, "toggles such as ws,cb,dc,rc or -ws,-cb,-dc,-rc");
  s->add_option("--epochs", search.epochs, "search epochs");
  s->add_option("--out", search.out, "output directory");

  LugArgs lug;
  auto* l = app.add_subcommand("lug", "lookup graph tools");
  l->require_subcommand(1);
  auto* lb = l->add_subcommand("build", "calibrate K_d' -> K_d by repeated searches");
  lug.common.attach(lb);
  lb->add_option("--grid", lug.grid, "lo:hi:n geometric grid or explicit list of K_d' values");
  lb->add_option("--repeats", lug.repeats, "searches per grid point");
  lb->add_option("--parallel", lug.parallel, "concurrent searches (capped by DCANAS_THREADS)");
  lb->add_option("--epochs", lug.epochs, "search epochs");
  lb->add_option("--out", lug.out, "lookup graph file")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "train a genotype from scratch and report test accuracy");
  eval.common.attach(e, false);
  e->add_option("--genotype", eval.genotype, "genotype file")->required();
  e->add_option("--epochs", eval.epochs, "training epochs");
  e->add_option("--out", eval.out, "output directory");

  SweepArgs sweep;
  auto* w = app.add_subcommand("sweep", "search + eval over constraints and seeds; prints a CSV table");
  sweep.common.attach(w);
  w->add_option("--constraints", sweep.constraints, "comma-separated device constraints, e.g. 2K,4K,8K");
  w->add_option("--seeds", sweep.seeds, "comma-separated seeds")->required();
  w->add_option("--lug", sweep.lug, "lookup graph for K_d -> K_d'");
  w->add_option("--kd-prime-ratio", sweep.kd_prime_ratio, "use K_d' = ratio * K_d instead of a lookup graph");
  w->add_option("--flags", sweep.flag_sets, "flag set; repeat for an ablation (one row per set)");
  w->add_option("--parallel", sweep.parallel, "concurrent runs (capped by DCANAS_THREADS)");
  w->add_option("--epochs", sweep.epochs, "search epochs");
  w->add_option("--eval-epochs", sweep.eval_epochs, "evaluation epochs");
  w->add_flag("--skip-eval", sweep.skip_eval, "search only; accuracy columns stay empty");
  w->add_option("--out", sweep.out, "CSV file (also printed to stdout)");

  CostArgs cost;
  auto* c = app.add_subcommand("cost", "exact parameter or MAC count of a genotype's network");
  c->add_option("--config", cost.config, "configuration file");
  c->add_option("--set", cost.sets, "override one configuration key");
  c->add_option("--genotype", cost.genotype, "genotype file")->required();
  c->add_option("--metric", cost.metric, "params or flops");
  c->add_option("--channels", cost.channels, "initial channels");
  c->add_option("--cells", cost.cells, "number of cells (layers)");
  c->add_option("--classes", cost.classes, "classifier outputs");
  c->add_option("--stem-multiplier", cost.stem_multiplier, "stem width multiplier");
  c->add_option("--input", cost.input, "input shape CxHxW");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n" << "run 'dcanas --help' for usage\n";
    return exit_usage;
  }

  try {
    if (s->parsed()) return cmd_search(search, args, out, err);
    if (lb->parsed()) return cmd_lug_build(lug, args, out, err);
    if (e->parsed()) return cmd_eval(eval, args, out, err);
    if (w->parsed()) return cmd_sweep(sweep, args, out, err);
    if (c->parsed()) return cmd_cost(cost, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_usage;
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_usage;
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_usage;
  } catch (const SearchAborted& ex) {
    err << "error: " << ex.what() << '\n' << ex.snapshot();
    return exit_runtime;
  } catch (const EvalAborted& ex) {
    err << "error: " << ex.what() << '\n' << ex.snapshot() << '\n';
    return exit_runtime;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_runtime;
  }
  return exit_usage;
}

}  // namespace dcanas
