#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcanas/cli.hpp"
#include "dcanas/config.hpp"
#include "dcanas/lug.hpp"
#include "json.hpp"

using namespace dcanas;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

/// Tiny search and eval budget on 1x8x8 spiral images.
std::vector<std::string> tiny(std::vector<std::string> args) {
  for (const char* s : {"search.epochs=1", "search.batch_size=8", "search.max_steps_per_epoch=2", "supernet.cells=3",
                        "supernet.channels=4", "target.layers=3", "data.n=48", "data.test_n=16", "data.size=8",
                        "eval.epochs=1", "eval.batch_size=16"}) {
    args.push_back("--set");
    args.push_back(s);
  }
  return args;
}

class TempDir {
 public:
  TempDir()
      : path_(fs::temp_directory_path() /
              ("dcanas_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

const char* kGenotype =
    "version 1\ncells 4\nnormal:\n2 0 sep_conv_3x3\n2 1 skip_connect\n3 0 dil_conv_3x3\n3 2 max_pool_3x3\n"
    "reduction:\n2 0 max_pool_3x3\n2 1 sep_conv_5x5\n3 1 avg_pool_3x3\n3 2 skip_connect\n";

}  // namespace

TEST(Config, SectionsCommentsAndOverrides) {
  const auto f = ConfigFile::parse("# comment\n; also\n[search]\nepochs = 3\n\n[data]\nsource=moons\n");
  EXPECT_EQ(f.get("search.epochs"), "3");
  EXPECT_EQ(f.get("data.source"), "moons");
  EXPECT_FALSE(f.get("search.seed"));
  auto g = f;
  g.assign("search.epochs=9");
  EXPECT_EQ(g.get("search.epochs"), "9");
  EXPECT_THROW(g.assign("novalue"), ConfigError);
  const RunConfig cfg = resolve_config(g);
  EXPECT_EQ(cfg.search.epochs, 9);
  EXPECT_EQ(cfg.data.synthetic.kind, SyntheticKind::moons);
  EXPECT_THROW(resolve_config(ConfigFile::parse("[data]\nsource=rings\n")), ConfigError);
}

TEST(Config, UnknownKeyNamesItsLine) {
  try {
    resolve_config(ConfigFile::parse("[search]\nepochs=2\nepoks=3\n"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("epoks"), std::string::npos);
  }
  EXPECT_THROW(resolve_config(ConfigFile::parse("[search]\nepochs=two\n")), ConfigError);
  EXPECT_THROW(resolve_config(ConfigFile::parse("[eval]\ncutout=maybe\n")), ConfigError);
  EXPECT_THROW(ConfigFile::parse("[search\nepochs=1\n"), ConfigError);
}

TEST(Config, CanonicalTextResolvesToSameConfig) {
  ConfigFile f;
  f.assign("search.alpha_lr=0.007");
  f.assign("supernet.flags=-ws,cb");
  f.assign("eval.label_smoothing=0.1");
  f.assign("data.source=blobs");
  f.assign("data.classes=3");
  f.assign("lug.repeats=5");
  f.assign("metric=flops");
  const RunConfig a = resolve_config(f);
  const RunConfig b = resolve_config(ConfigFile::parse(a.canonical()));
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(b.search.canonical(), a.search.canonical());
  EXPECT_EQ(b.eval.canonical(), a.eval.canonical());
  EXPECT_EQ(b.metric, CostMetric::flops);
  EXPECT_FALSE(b.search.supernet.flags.weight_sharing);
  EXPECT_EQ(b.lug.repeats, 5);
}

TEST(Config, ConstraintUnits) {
  EXPECT_EQ(parse_constraint("2K", CostMetric::params), 2000);
  EXPECT_EQ(parse_constraint("2k", CostMetric::params), 2000);
  EXPECT_EQ(parse_constraint("1.5M", CostMetric::params), 1.5e6);
  EXPECT_EQ(parse_constraint("300MF", CostMetric::flops), 3e8);
  EXPECT_EQ(parse_constraint("1GF", CostMetric::flops), 1e9);
  EXPECT_EQ(parse_constraint("4500", CostMetric::params), 4500);
  EXPECT_THROW(parse_constraint("300MF", CostMetric::params), ConfigError);
  EXPECT_THROW(parse_constraint("2K", CostMetric::flops), ConfigError);
  EXPECT_THROW(parse_constraint("-2K", CostMetric::params), ConfigError);
  EXPECT_THROW(parse_constraint("K", CostMetric::params), ConfigError);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli({}).code, exit_usage);
  EXPECT_EQ(cli({"frobnicate"}).code, exit_usage);
  EXPECT_EQ(cli({"eval"}).code, exit_usage);  // --genotype is required
  EXPECT_EQ(cli({"search", "--set", "search.nope=1"}).code, exit_usage);
  EXPECT_EQ(cli({"--help"}).code, exit_ok);
}

TEST(Cli, DeviceConstraintWithoutLookupGraphIsExplained) {
  const auto r = cli(tiny({"search", "--constraint", "2K"}));
  EXPECT_EQ(r.code, exit_usage);
  EXPECT_NE(r.err.find("lug build"), std::string::npos);
  EXPECT_NE(r.err.find("--kd-prime"), std::string::npos);
}

TEST(Cli, CostMatchesLibrary) {
  TempDir dir;
  write(dir / "g.txt", kGenotype);
  const Genotype g = parse_genotype(kGenotype, OpSet::darts());
  TargetNetConfig net = TargetNetConfig::desk();
  auto r = cli({"cost", "--genotype", dir / "g.txt", "--channels", "4", "--cells", "4", "--classes", "2",
                "--stem-multiplier", "1", "--input", "1x16x16"});
  ASSERT_EQ(r.code, exit_ok) << r.err;
  EXPECT_EQ(r.out, std::to_string(derived_cost(g, net, CostMetric::params, OpSet::darts())) + "\n");
  r = cli({"cost", "--genotype", dir / "g.txt", "--metric", "flops"});
  ASSERT_EQ(r.code, exit_ok) << r.err;
  EXPECT_EQ(r.out, std::to_string(derived_cost(g, net, CostMetric::flops, OpSet::darts())) + "\n");
  EXPECT_EQ(cli({"cost", "--genotype", dir / "g.txt", "--input", "1x16"}).code, exit_usage);
  EXPECT_EQ(cli({"cost", "--genotype", dir / "missing.txt"}).code, exit_runtime);
}

TEST(Cli, SearchWritesArtifacts) {
  TempDir dir;
  const std::string out = dir / "run";
  const auto r = cli(tiny({"search", "--kd-prime", "3000", "--out", out, "--seed", "4"}));
  ASSERT_EQ(r.code, exit_ok) << r.err;
  EXPECT_NE(r.out.find("derived_params "), std::string::npos);
  const Genotype g = read_genotype_file(fs::path(out) / "genotype.txt", OpSet::darts());
  EXPECT_EQ(r.out.substr(0, r.out.find("derived_")), serialize_genotype(g));

  const json manifest = json::parse(slurp(fs::path(out) / "manifest.json"));
  EXPECT_EQ(manifest["status"], "ok");
  EXPECT_EQ(manifest["command"], "search");
  EXPECT_EQ(manifest["seed"], 4);
  EXPECT_EQ(manifest["run"].get<std::string>().size(), 16u);
  EXPECT_FALSE(manifest["config_hash"].get<std::string>().empty());
  EXPECT_TRUE(manifest.contains("finished_at"));

  const json result = json::parse(slurp(fs::path(out) / "result.json"));
  EXPECT_EQ(result["derived_cost"].get<std::int64_t>(),
            derived_cost(g, [] {
              TargetNetConfig t = TargetNetConfig::desk();
              t.layers = 3;
              t.height = t.width = 8;
              return t;
            }(), CostMetric::params, OpSet::darts()));
  EXPECT_EQ(result["constraint"]["kd_prime"], 3000.0);

  std::ifstream metrics(fs::path(out) / "metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(metrics, line); ++lines) {
    const json m = json::parse(line);
    EXPECT_EQ(m["run"], manifest["run"]);
    EXPECT_TRUE(m.contains("phase"));
  }
  EXPECT_EQ(lines, 2);  // one epoch plus the result record

  // Same command, same seed: same genotype and same run id.
  const auto again = cli(tiny({"search", "--kd-prime", "3000", "--out", dir / "run2", "--seed", "4"}));
  EXPECT_EQ(again.out, r.out);
  EXPECT_EQ(json::parse(slurp(fs::path(dir / "run2") / "manifest.json"))["config_hash"], manifest["config_hash"]);
}

TEST(Cli, LookupGraphBuildThenSearch) {
  TempDir dir;
  const std::string lug = dir / "lug.csv";
  EXPECT_EQ(cli(tiny({"lug", "build", "--grid", "500", "--out", lug})).code, exit_usage);
  auto r = cli(tiny({"lug", "build", "--grid", "500,20000", "--repeats", "1", "--out", lug}));
  ASSERT_EQ(r.code, exit_ok) << r.err;
  const LookupGraph g = read_lug_file(lug);
  EXPECT_EQ(g.points.size(), 2u);
  EXPECT_EQ(r.out, slurp(lug));
  EXPECT_TRUE(fs::exists(lug + ".manifest.json"));

  const double mid = 0.5 * (g.curve().front().second + g.curve().back().second);
  r = cli(tiny({"search", "--lug", lug, "--constraint", std::to_string(static_cast<long>(mid)), "--out",
                dir / "s"}));
  ASSERT_EQ(r.code, exit_ok) << r.err;
  const json result = json::parse(slurp(fs::path(dir / "s") / "result.json"));
  EXPECT_EQ(result["constraint"]["source"], "lug");
  const auto manifest = json::parse(slurp(fs::path(dir / "s") / "manifest.json"));
  EXPECT_EQ(manifest["inputs"].size(), 1u);
  // A params graph cannot serve a flops run.
  EXPECT_EQ(cli(tiny({"search", "--metric", "flops", "--lug", lug, "--constraint", "1MF"})).code, exit_usage);
}

TEST(Cli, EvalPrintsResult) {
  TempDir dir;
  write(dir / "g.txt", kGenotype);
  const auto r = cli(tiny({"eval", "--genotype", dir / "g.txt", "--out", dir / "e"}));
  ASSERT_EQ(r.code, exit_ok) << r.err;
  const json res = json::parse(r.out);
  EXPECT_GE(res["final_test_acc"].get<double>(), 0.0);
  EXPECT_LE(res["final_test_acc"].get<double>(), 1.0);
  TargetNetConfig t = TargetNetConfig::desk();
  t.layers = 3;
  t.height = t.width = 8;
  EXPECT_EQ(res["params"].get<std::int64_t>(),
            derived_cost(parse_genotype(kGenotype, OpSet::darts()), t, CostMetric::params, OpSet::darts()));
}

TEST(Cli, SweepProducesOneRowPerConstraint) {
  TempDir dir;
  const std::string csv = dir / "sweep.csv";
  const auto r = cli(tiny({"sweep", "--constraints", "2K,4K,8K", "--kd-prime-ratio", "1", "--seeds", "1,2",
                           "--skip-eval", "--out", csv}));
  ASSERT_EQ(r.code, exit_ok) << r.err;
  std::istringstream is(slurp(csv));
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "flags,constraint,kd_prime,seeds,acc_mean,acc_std,params_mean,flops_mean,search_seconds_mean,failed");
  EXPECT_EQ(lines[1].substr(lines[1].find(",2K,"), 9), ",2K,2000,");
  EXPECT_EQ(r.out, slurp(csv));
  EXPECT_TRUE(fs::exists(csv + ".metrics.jsonl"));
}

TEST(Parallelism, EnvironmentCap) {
  unsetenv("DCANAS_THREADS");
  EXPECT_EQ(capped_parallelism(8), 8);
  EXPECT_EQ(capped_parallelism(0), 1);
  setenv("DCANAS_THREADS", "2", 1);
  EXPECT_EQ(capped_parallelism(8), 2);
  EXPECT_EQ(capped_parallelism(1), 1);
  setenv("DCANAS_THREADS", "lots", 1);
  EXPECT_EQ(capped_parallelism(8), 8);
  unsetenv("DCANAS_THREADS");
}

TEST(Hashing, GitBlobId) {
  TempDir dir;
  write(dir / "hello.txt", "hello\n");
  EXPECT_EQ(git_blob_hash(dir / "hello.txt"), "ce013625030ba8dba906f756967f9e9ca394464a");
  write(dir / "empty.txt", "");
  EXPECT_EQ(git_blob_hash(dir / "empty.txt"), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
