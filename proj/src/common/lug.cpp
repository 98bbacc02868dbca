#include "dcanas/lug.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

#include "dcanas/util.hpp"

namespace dcanas {

std::string_view lug_flag_name(LugFlag f) {
  switch (f) {
    case LugFlag::ok:
      return "ok";
    case LugFlag::nonmono:
      return "nonmono";
    case LugFlag::failed:
      return "failed";
  }
  return "?";
}

void LookupGraph::validate() const {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i].kd_prime > points[i - 1].kd_prime)) {
      throw LugError("lookup graph kd_prime values must be strictly increasing");
    }
  }
  const auto usable = std::count_if(points.begin(), points.end(), [](const LugPoint& p) { return p.flag != LugFlag::failed; });
  if (usable < 2) {
    throw LugError("lookup graph needs at least 2 successful points, has " + std::to_string(usable));
  }
}

std::vector<std::pair<double, double>> LookupGraph::curve() const {
  std::vector<double> x, y, w;
  for (const auto& p : points) {
    if (p.flag == LugFlag::failed) continue;
    x.push_back(p.kd_prime);
    y.push_back(p.kd_measured);
    w.push_back(std::max(1, p.seed_count));
  }
  const auto fit = isotonic_fit(y, w);
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < x.size(); ++i) out.emplace_back(x[i], fit[i]);
  return out;
}

LookupGraph::Query LookupGraph::lookup(double kd) const {
  if (!(kd > 0)) throw LugError("lookup needs a positive K_d");
  validate();
  const auto c = curve();
  if (kd < c.front().second) return {c.front().first, true};
  if (kd > c.back().second) return {c.back().first, true};
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k].second == kd) return {c[k].first, false};
    if (c[k].second > kd) {
      const auto& [x0, m0] = c[k - 1];
      const auto& [x1, m1] = c[k];
      return {x0 + (kd - m0) / (m1 - m0) * (x1 - x0), false};
    }
  }
  return {c.back().first, false};
}

std::vector<double> isotonic_fit(std::span<const double> y, std::span<const double> weights) {
  struct Block {
    double mean, weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < y.size(); ++i) {
    blocks.push_back({y[i], weights.empty() ? 1.0 : weights[i], 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
      Block b = blocks.back();
      blocks.pop_back();
      Block& a = blocks.back();
      const double w = a.weight + b.weight;
      a.mean = (a.mean * a.weight + b.mean * b.weight) / w;
      a.weight = w;
      a.count += b.count;
    }
  }
  std::vector<double> out;
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.mean);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void flag_monotonicity(std::vector<LugPoint>& points) {
  double running_max = -std::numeric_limits<double>::infinity();
  for (auto& p : points) {
    if (p.flag == LugFlag::failed) continue;
    p.flag = p.kd_measured < running_max ? LugFlag::nonmono : LugFlag::ok;
    running_max = std::max(running_max, p.kd_measured);
  }
}

std::string serialize_lug(const LookupGraph& g) {
  std::ostringstream os;
  os << metric_name(g.metric) << ',' << g.dataset << ',' << g.config_hash << '\n';
  for (const auto& p : g.points) {
    os << format_double(p.kd_prime) << ',' << format_double(p.kd_measured) << ',' << p.seed_count << ','
       << lug_flag_name(p.flag) << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s, int line) {
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
    throw LugError("lookup graph line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

LookupGraph parse_lug(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  int line_no = 0;
  LookupGraph g;
  bool header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (!header) {
      if (f.size() != 3) throw LugError("lookup graph line 1: expected 'metric,dataset,config_hash'");
      const auto m = parse_metric(f[0]);
      if (!m) throw LugError("lookup graph line 1: unknown metric '" + f[0] + "'");
      g.metric = *m;
      g.dataset = f[1];
      g.config_hash = f[2];
      header = true;
      continue;
    }
    if (f.size() != 4) {
      throw LugError("lookup graph line " + std::to_string(line_no) + ": expected 'kd_prime,kd_measured,seed_count,flag'");
    }
    LugPoint p;
    p.kd_prime = parse_number(f[0], line_no);
    p.kd_measured = parse_number(f[1], line_no);
    const double seeds = parse_number(f[2], line_no);
    if (seeds < 0 || seeds != std::floor(seeds)) throw LugError("lookup graph line " + std::to_string(line_no) + ": bad seed_count");
    p.seed_count = static_cast<int>(seeds);
    if (f[3] == "ok") p.flag = LugFlag::ok;
    else if (f[3] == "nonmono") p.flag = LugFlag::nonmono;
    else if (f[3] == "failed") p.flag = LugFlag::failed;
    else throw LugError("lookup graph line " + std::to_string(line_no) + ": unknown flag '" + f[3] + "'");
    g.points.push_back(p);
  }
  if (!header) throw LugError("lookup graph is empty");
  g.validate();
  return g;
}

void write_lug_file(const std::filesystem::path& path, const LookupGraph& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LugError("cannot write " + path.string());
  out << serialize_lug(g);
}

LookupGraph read_lug_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LugError("cannot read lookup graph " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_lug(buf.str());
}

std::vector<double> geometric_grid(double lo, double hi, int n) {
  if (n < 1 || !(lo > 0) || !(hi >= lo)) throw std::invalid_argument("grid needs 0 < lo <= hi and n >= 1");
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
  }
  out.back() = hi;
  out.front() = lo;
  return out;
}

std::vector<double> parse_grid(std::string_view spec) {
  const std::string s(spec);
  std::vector<double> out;
  if (s.find(':') != std::string::npos) {
    const auto f = split(s, ':');
    if (f.size() != 3) throw std::invalid_argument("grid must be lo:hi:n, got '" + s + "'");
    double lo = 0, hi = 0, n = 0;
    try {
      lo = parse_number(f[0], 0);
      hi = parse_number(f[1], 0);
      n = parse_number(f[2], 0);
    } catch (const LugError&) {
      throw std::invalid_argument("grid must be lo:hi:n, got '" + s + "'");
    }
    if (n != std::floor(n)) throw std::invalid_argument("grid point count must be an integer");
    out = geometric_grid(lo, hi, static_cast<int>(n));
  } else {
    for (const auto& tok : split(s, ',')) {
      try {
        out.push_back(parse_number(tok, 0));
      } catch (const LugError&) {
        throw std::invalid_argument("bad grid value '" + tok + "'");
      }
    }
    std::sort(out.begin(), out.end());
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (!(out[i] > out[i - 1])) throw std::invalid_argument("grid values must be distinct");
  }
  for (double v : out) {
    if (!(v > 0)) throw std::invalid_argument("grid values must be positive");
  }
  return out;
}

std::string lug_config_hash(const SearchRunConfig& cfg, CostMetric metric, std::string_view dataset,
                            std::span<const double> grid, int repeats) {
  std::string key = cfg.canonical();
  key += "metric=" + std::string(metric_name(metric)) + "\n";
  key += "dataset=" + std::string(dataset) + "\n";
  key += "repeats=" + std::to_string(repeats) + "\ngrid=";
  for (double v : grid) key += format_double(v) + ";";
  return hex64(fnv1a64(key));
}

}  // namespace dcanas
