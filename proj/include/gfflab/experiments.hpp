#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfflab/current.hpp"
#include "gfflab/errors.hpp"
#include "gfflab/explore.hpp"
#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/levelset.hpp"
#include "gfflab/loopsoup.hpp"
#include "gfflab/parallel.hpp"
#include "gfflab/repulsion.hpp"
#include "gfflab/rng.hpp"
#include "gfflab/stats.hpp"
#include "gfflab/walks.hpp"

namespace gfflab {

inline constexpr const char* kVersion = "0.3.0";

struct ExperimentConfig {
  std::string experiment;
  std::vector<int> ns;
  std::vector<double> lambdas;
  double alpha = 0.25;
  double beta = 0.75;
  double chi = 0.6;
  double epsilon = 0.0;  // 0 means 1/N
  double mesh = 8.0;
  std::size_t replicas = 1000;
  std::uint64_t seed = 1;
  std::string out = ".";
  unsigned threads = 1;
  // experiment-specific knobs
  std::size_t walks = 10000;
  std::size_t clusters = 20;
  std::size_t chains = 4;
  std::size_t burn_in = 200;
  std::size_t samples = 1000;
  std::size_t thin = 10;
  std::size_t pairs = 20;
  std::size_t fixtures = 20;
  double bin_width = 0.1;

  double eps_for(int n) const { return epsilon > 0.0 ? epsilon : 1.0 / n; }

  void validate() const {
    if (!(0.0 < alpha && alpha < beta && beta < 1.0)) throw ConfigError("config: need 0 < alpha < beta < 1");
    if (!(chi > 0.5)) throw ConfigError("config: chi must exceed 1/2");
    if (replicas < 1) throw ConfigError("config: replicas must be at least 1");
    if (ns.empty()) throw ConfigError("config: N list is empty");
    for (int n : ns)
      if (n < 3) throw ConfigError("config: every N must be at least 3");
    if (threads < 1) throw ConfigError("config: threads must be at least 1");
  }
};

struct ExperimentInfo {
  std::string id;
  std::string target;
  std::string summary;
  std::function<void(ExperimentConfig&)> defaults;
};

inline const std::vector<ExperimentInfo>& registry() {
  static const std::vector<ExperimentInfo> r = {
      {"prop21_crossing", "one-arm crossing lower bound",
       "P(open crossing of the annulus in the lambda level set) versus lambda",
       [](ExperimentConfig& c) {
         c.ns = {128};
         c.lambdas = {0.5, 1.0, 1.5, 2.0};
         c.replicas = 10000;
       }},
      {"thm11_distance", "chemical distance in positive level sets",
       "P(D_{N,lambda} <= N exp((log N)^chi)) for the annulus",
       [](ExperimentConfig& c) {
         c.ns = {32, 64, 128};
         c.lambdas = {0.5, 1.0, 2.0};
         c.replicas = 2000;
       }},
      {"cor35_distance", "chemical distance in negative level sets", "P(D_{N,-lambda} <= N exp((log N)^chi)) for the annulus",
       [](ExperimentConfig& c) {
         c.ns = {32, 64, 128};
         c.lambdas = {1.0};
         c.replicas = 2000;
       }},
      {"thm12_loop_distance", "chemical distance in the critical loop soup",
       "P(loop-soup chemical distance <= N exp((log N)^chi)) at alpha = 1/2",
       [](ExperimentConfig& c) {
         c.ns = {32, 64, 128};
         c.replicas = 500;
       }},
      {"isomorphism", "Occupation field isomorphism", "Per-vertex KS of l_x vs eta_x^2/2 and covariance vs G^2/32",
       [](ExperimentConfig& c) {
         c.ns = {7};
         c.replicas = 100000;
       }},
      {"makarov", "Makarov heavy set", "Harmonic measure of heavy points on level-set clusters",
       [](ExperimentConfig& c) {
         c.ns = {16, 32, 64};
         c.clusters = 20;
         c.walks = 10000;
       }},
      {"current_consistency", "Random current representation", "Loop soup edges and jump counts against random currents",
       [](ExperimentConfig& c) {
         c.ns = {4};
         c.replicas = 1000000;
       }},
      {"domination", "level-set edges dominated by the loop soup", "Inequality grid and coupled edge marginals",
       [](ExperimentConfig& c) {
         c.ns = {4};
         c.lambdas = {2.0, 3.0, 4.0};
         c.replicas = 100000;
       }},
      {"variance_gap", "observable variance gap", "Exact Var X, variance gap, contour fixtures",
       [](ExperimentConfig& c) {
         c.ns = {33, 65, 129};
         c.lambdas = {0.2};
         c.replicas = 10000;
       }},
      {"repulsion_profile", "entropic repulsion",
       "Constrained means with and without a pinned point, Brascamp-Lieb ordering",
       [](ExperimentConfig& c) {
         c.ns = {9, 17, 33};
         c.lambdas = {1.0};
       }},
  };
  return r;
}

inline const ExperimentInfo& experiment_info(const std::string& id) {
  for (const auto& e : registry())
    if (e.id == id) return e;
  throw ConfigError("unknown experiment id: " + id);
}

inline ExperimentConfig default_config(const std::string& id) {
  ExperimentConfig c;
  c.experiment = id;
  experiment_info(id).defaults(c);
  return c;
}

// ---------------------------------------------------------------------------
// Flat key = value configuration

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T x{};
  is >> x;
  if (!is || !is.eof()) {
    std::string rest;
    if (is && (is >> rest)) throw ConfigError("config: bad value for " + key + ": " + v);
    if (!is.eof() && !is) throw ConfigError("config: bad value for " + key + ": " + v);
  }
  if (!is && !is.eof()) throw ConfigError("config: bad value for " + key + ": " + v);
  return x;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::string body = v;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') throw ConfigError("config: unterminated list for " + key);
    body = body.substr(1, body.size() - 2);
  }
  std::vector<T> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_number<T>(key, item));
  }
  return out;
}

}  // namespace detail

/// Parses `key = value` lines; `#` starts a comment, lists are `[a, b, c]`.
/// The experiment key selects the defaults the other keys override.
inline ExperimentConfig parse_config(std::istream& is, const std::string& experiment_hint = "") {
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
    kv.emplace_back(detail::trim(line.substr(0, eq)), detail::unquote(detail::trim(line.substr(eq + 1))));
  }
  std::string id = experiment_hint;
  for (const auto& [k, v] : kv)
    if (k == "experiment") id = v;
  if (id.empty()) throw ConfigError("config: no experiment id");
  ExperimentConfig c = default_config(id);
  using detail::parse_list;
  using detail::parse_number;
  for (const auto& [k, v] : kv) {
    if (k == "experiment") continue;
    else if (k == "N" || k == "ns") c.ns = parse_list<int>(k, v);
    else if (k == "lambda" || k == "lambdas") c.lambdas = parse_list<double>(k, v);
    else if (k == "alpha") c.alpha = parse_number<double>(k, v);
    else if (k == "beta") c.beta = parse_number<double>(k, v);
    else if (k == "chi") c.chi = parse_number<double>(k, v);
    else if (k == "epsilon") c.epsilon = parse_number<double>(k, v);
    else if (k == "mesh") c.mesh = parse_number<double>(k, v);
    else if (k == "replicas") c.replicas = parse_number<std::size_t>(k, v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "out") c.out = v;
    else if (k == "threads") c.threads = parse_number<unsigned>(k, v);
    else if (k == "walks") c.walks = parse_number<std::size_t>(k, v);
    else if (k == "clusters") c.clusters = parse_number<std::size_t>(k, v);
    else if (k == "chains") c.chains = parse_number<std::size_t>(k, v);
    else if (k == "burn_in") c.burn_in = parse_number<std::size_t>(k, v);
    else if (k == "samples") c.samples = parse_number<std::size_t>(k, v);
    else if (k == "thin") c.thin = parse_number<std::size_t>(k, v);
    else if (k == "pairs") c.pairs = parse_number<std::size_t>(k, v);
    else if (k == "fixtures") c.fixtures = parse_number<std::size_t>(k, v);
    else if (k == "bin_width") c.bin_width = parse_number<double>(k, v);
    else throw ConfigError("config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text, const std::string& experiment_hint = "") {
  std::istringstream is(text);
  return parse_config(is, experiment_hint);
}

inline ExperimentConfig parse_config_file(const std::string& path, const std::string& experiment_hint = "") {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  return parse_config(is, experiment_hint);
}

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::string experiment;
  std::string params;
  std::string statistic;
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t replicas = 0;
  double wall_time = 0.0;
};

struct ResultSet {
  ExperimentConfig config;
  std::vector<ResultRow> rows;
  std::vector<std::string> failures;  // per-replica errors, recorded not fatal

  const ResultRow* find(const std::string& statistic, const std::string& params) const {
    for (const auto& r : rows)
      if (r.statistic == statistic && r.params == params) return &r;
    return nullptr;
  }
  std::vector<const ResultRow*> all(const std::string& statistic) const {
    std::vector<const ResultRow*> out;
    for (const auto& r : rows)
      if (r.statistic == statistic) out.push_back(&r);
    return out;
  }
};

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

inline std::string pn(int n) { return "N=" + std::to_string(n); }
inline std::string pnl(int n, double l) { return "N=" + std::to_string(n) + ";lambda=" + fmt(l); }

inline double distance_threshold(int n, double chi) {
  return static_cast<double>(n) * std::exp(std::pow(std::log(static_cast<double>(n)), chi));
}

inline void add(ResultSet& rs, std::string params, std::string stat, double est, double lo, double hi, std::size_t reps,
                double wall) {
  rs.rows.push_back({rs.config.experiment, std::move(params), std::move(stat), est, lo, hi, reps, wall});
}

inline void add(ResultSet& rs, std::string params, std::string stat, const stats::Interval& ci, std::size_t reps, double wall) {
  add(rs, std::move(params), std::move(stat), ci.estimate, ci.low, ci.high, reps, wall);
}

/// Row without an interval: ci_low = ci_high = estimate.
inline void add_point(ResultSet& rs, std::string params, std::string stat, double value, std::size_t reps, double wall) {
  add(rs, std::move(params), std::move(stat), value, value, value, reps, wall);
}

inline Rng replica_rng(const ExperimentConfig& c, std::uint64_t replica, std::uint32_t stream) {
  return make_rng(c.seed, {c.experiment, replica, stream});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Runners

namespace runners {

using detail::add;
using detail::add_point;
using detail::replica_rng;

inline void crossing(ResultSet& rs) {
  const auto& c = rs.config;
  for (std::size_t ni = 0; ni < c.ns.size(); ++ni) {
    const int n = c.ns[ni];
    detail::Stopwatch sw;
    const Box box(n);
    const SparseDgffSampler sampler{Domain(box)};
    const std::size_t nl = c.lambdas.size();
    std::vector<char> hit(c.replicas * nl, 0);
    parallel_for(c.replicas, c.threads, [&](std::size_t r) {
      Rng rng = replica_rng(c, r, static_cast<std::uint32_t>(ni));
      const auto f = sampler.sample(rng);
      for (std::size_t li = 0; li < nl; ++li) hit[r * nl + li] = crosses(level_set(box, f.values, c.lambdas[li]), c.alpha, c.beta);
    });
    std::vector<double> xs, ys;
    for (std::size_t li = 0; li < nl; ++li) {
      std::size_t k = 0;
      for (std::size_t r = 0; r < c.replicas; ++r) k += hit[r * nl + li] != 0;
      add(rs, detail::pnl(n, c.lambdas[li]), "crossing_prob", stats::wilson(k, c.replicas), c.replicas, sw.seconds());
      // Resolvable: at least five non-crossing replicas.
      if (c.replicas - k >= 5) {
        xs.push_back(c.lambdas[li] * c.lambdas[li]);
        ys.push_back(std::log(1.0 - static_cast<double>(k) / static_cast<double>(c.replicas)));
      }
    }
    const std::string p = detail::pn(n) + ";points=" + std::to_string(xs.size());
    if (xs.size() >= 2) {
      const auto fit = stats::linear_fit(xs, ys);
      add_point(rs, p, "fit_slope", fit.slope, c.replicas, sw.seconds());
      add_point(rs, p, "fit_r2", fit.r2, c.replicas, sw.seconds());
    } else {
      add_point(rs, p, "fit_points", static_cast<double>(xs.size()), c.replicas, sw.seconds());
    }
  }
}

/// Shared by the two level-set distance experiments; sign = -1 uses level -lambda.
inline void level_distance(ResultSet& rs, double sign) {
  const auto& c = rs.config;
  for (std::size_t ni = 0; ni < c.ns.size(); ++ni) {
    const int n = c.ns[ni];
    detail::Stopwatch sw;
    const Box box(n);
    const SparseDgffSampler sampler{Domain(box)};
    const double thr = detail::distance_threshold(n, c.chi);
    const std::size_t nl = c.lambdas.size();
    std::vector<int> dist(c.replicas * nl, kInfiniteDistance);
    parallel_for(c.replicas, c.threads, [&](std::size_t r) {
      Rng rng = replica_rng(c, r, static_cast<std::uint32_t>(ni));
      const auto f = sampler.sample(rng);
      for (std::size_t li = 0; li < nl; ++li)
        dist[r * nl + li] = annulus_distance(level_set(box, f.values, sign * c.lambdas[li]), c.alpha, c.beta);
    });
    for (std::size_t li = 0; li < nl; ++li) {
      std::size_t k = 0;
      std::vector<double> finite;
      for (std::size_t r = 0; r < c.replicas; ++r) {
        const int d = dist[r * nl + li];
        if (d != kInfiniteDistance) finite.push_back(d);
        if (d != kInfiniteDistance && d <= thr) ++k;
      }
      const auto p = detail::pnl(n, c.lambdas[li]);
      add(rs, p, "short_path_prob", stats::wilson(k, c.replicas), c.replicas, sw.seconds());
      if (!finite.empty()) {
        const auto m = stats::mean_se(finite);
        add(rs, p, "mean_distance_given_cross", stats::normal_interval(m), finite.size(), sw.seconds());
      }
    }
  }
}

inline void loop_distance(ResultSet& rs) {
  const auto& c = rs.config;
  for (std::size_t ni = 0; ni < c.ns.size(); ++ni) {
    const int n = c.ns[ni];
    detail::Stopwatch sw;
    const Box box(n);
    const LoopSoupSampler sampler(Domain(box), 0.5);
    const double thr = detail::distance_threshold(n, c.chi);
    const auto a = box.boundary_of(box.scaled_box(c.alpha));
    const auto b = box.boundary_of(box.scaled_box(c.beta));
    std::vector<int> dist(c.replicas);
    parallel_for(c.replicas, c.threads, [&](std::size_t r) {
      Rng rng = replica_rng(c, r, static_cast<std::uint32_t>(ni));
      const auto s = sampler.sample(rng);
      dist[r] = loop_chemical_distance(box, induced_graph(box, s), a, b);
    });
    std::size_t k = 0;
    std::vector<double> finite;
    for (int d : dist) {
      if (d != kInfiniteDistance) finite.push_back(d);
      if (d != kInfiniteDistance && d <= thr) ++k;
    }
    add(rs, detail::pn(n), "short_path_prob", stats::wilson(k, c.replicas), c.replicas, sw.seconds());
    if (!finite.empty())
      add(rs, detail::pn(n), "mean_distance_given_cross", stats::normal_interval(stats::mean_se(finite)), finite.size(),
          sw.seconds());
  }
}

inline void isomorphism(ResultSet& rs) {
  const auto& c = rs.config;
  const int n = c.ns.front();
  detail::Stopwatch sw;
  const Box box(n);
  const Domain dom(box);
  const LoopSoupSampler soup(dom, 0.5);
  const SparseDgffSampler field(dom);
  const auto& iv = dom.free_vertices();
  const std::size_t m = iv.size();
  std::vector<double> occ(c.replicas * m), sq(c.replicas * m);
  parallel_for(c.replicas, c.threads, [&](std::size_t r) {
    Rng r0 = replica_rng(c, r, 0), r1 = replica_rng(c, r, 1);
    const auto l = occupation_field(soup.sample(r0));
    const auto f = field.sample(r1);
    for (std::size_t k = 0; k < m; ++k) {
      occ[r * m + k] = l[iv[k]];
      sq[r * m + k] = 0.5 * f.values[iv[k]] * f.values[iv[k]];
    }
  });
  auto column = [&](const std::vector<double>& v, std::size_t k) {
    std::vector<double> col(c.replicas);
    for (std::size_t r = 0; r < c.replicas; ++r) col[r] = v[r * m + k];
    return col;
  };
  for (std::size_t k = 0; k < m; ++k) {
    const auto ks = stats::ks_two_sample(column(occ, k), column(sq, k));
    const Point p = box.coord(iv[k]);
    const std::string at = "x=" + std::to_string(p.x) + ";y=" + std::to_string(p.y);
    add_point(rs, at, "ks_pvalue", ks.p_value, c.replicas, sw.seconds());
    add_point(rs, at, "ks_statistic", ks.statistic, c.replicas, sw.seconds());
  }
  const GreenMatrix g(dom);
  Rng pick = make_rng(c.seed, {c.experiment, 0, kMaxStreams - 1});
  std::uniform_int_distribution<std::size_t> ui(0, m - 1);
  for (std::size_t q = 0; q < c.pairs; ++q) {
    std::size_t a = ui(pick), b = ui(pick);
    while (b == a) b = ui(pick);
    const auto cov = stats::covariance(column(occ, a), column(occ, b));
    const double gab = g(iv[a], iv[b]);
    const double target = gab * gab / 32.0;
    const double z = (cov.mean - target) / cov.se;
    const Point pa = box.coord(iv[a]), pb = box.coord(iv[b]);
    const std::string uv =
        "u=" + std::to_string(pa.x) + "," + std::to_string(pa.y) + ";v=" + std::to_string(pb.x) + "," + std::to_string(pb.y);
    add_point(rs, uv, "cov_z", z, c.replicas, sw.seconds());
    add(rs, uv, "cov", stats::normal_interval(cov), c.replicas, sw.seconds());
    add_point(rs, uv, "cov_exact", target, c.replicas, sw.seconds());
  }
}

/// Largest nearest-neighbour cluster of {eta <= 0} among interior vertices.
inline std::vector<Point> largest_cluster(const Box& box, const std::vector<double>& values) {
  std::vector<int> comp(box.size(), -1);
  std::vector<Vertex> best, cur;
  int label = 0;
  for (Vertex s : box.interior()) {
    if (comp[s] >= 0 || values[s] > 0.0) continue;
    cur.clear();
    comp[s] = label;
    cur.push_back(s);
    for (std::size_t h = 0; h < cur.size(); ++h)
      for (int d = 0; d < 4; ++d) {
        const auto w = box.neighbor(cur[h], d);
        if (w == kNone) continue;
        const auto wu = static_cast<Vertex>(w);
        if (box.on_boundary(wu) || comp[wu] >= 0 || values[wu] > 0.0) continue;
        comp[wu] = label;
        cur.push_back(wu);
      }
    if (cur.size() > best.size()) best = cur;
    ++label;
  }
  std::vector<Point> pts;
  for (Vertex v : best) pts.push_back(box.coord(v));
  std::sort(pts.begin(), pts.end());
  return pts;
}

inline void makarov(ResultSet& rs) {
  const auto& c = rs.config;
  for (std::size_t ni = 0; ni < c.ns.size(); ++ni) {
    const int n = c.ns[ni];
    detail::Stopwatch sw;
    const Box box(n + 2);
    const SparseDgffSampler sampler{Domain(box)};
    std::vector<double> stat(c.clusters), thr(c.clusters), diam(c.clusters), peak(c.clusters);
    std::vector<char> conv(c.clusters);
    parallel_for(c.clusters, c.threads, [&](std::size_t r) {
      Rng rng = replica_rng(c, r, static_cast<std::uint32_t>(ni));
      std::vector<Point> a;
      do a = largest_cluster(box, sampler.sample(rng).values);
      while (l1_diameter(a) < 8);
      const auto res = makarov_statistic(a, c.chi, rng, c.walks);
      stat[r] = res.statistic;
      thr[r] = res.threshold;
      diam[r] = res.diameter;
      peak[r] = res.max_point_mass;
      conv[r] = res.converged;
    });
    const auto ms = stats::mean_se(stat);
    add(rs, detail::pn(n), "heavy_mass", stats::normal_interval(ms), c.clusters, sw.seconds());
    add(rs, detail::pn(n), "threshold_mean", stats::normal_interval(stats::mean_se(thr)), c.clusters, sw.seconds());
    add(rs, detail::pn(n), "max_point_mass_mean", stats::normal_interval(stats::mean_se(peak)), c.clusters, sw.seconds());
    add(rs, detail::pn(n), "diameter_mean", stats::normal_interval(stats::mean_se(diam)), c.clusters, sw.seconds());
    const double cf = static_cast<double>(std::count(conv.begin(), conv.end(), 1)) / static_cast<double>(c.clusters);
    add_point(rs, detail::pn(n), "converged_fraction", cf, c.clusters, sw.seconds());
  }
}

/// N = 4 box with the top interior row killed: two free vertices joined by one edge.
inline Domain two_vertex_domain() {
  const Box box(4);
  std::vector<char> killed(box.size(), 0);
  killed[box.index(1, 2)] = killed[box.index(2, 2)] = 1;
  return Domain(box, killed);
}

inline void current_consistency(ResultSet& rs) {
  const auto& c = rs.config;
  detail::Stopwatch sw;
  const Domain d = two_vertex_domain();
  Rng rng = replica_rng(c, 0, 0);
  const auto samples = collect_jump_samples(d, rng, c.replicas);
  std::size_t open = 0;
  for (const auto& s : samples) open += s.jumps[0] > 0;
  const double target = 1.0 - std::sqrt(15.0 / 16.0);
  const auto ci = stats::wilson(open, c.replicas);
  const double se = std::sqrt(target * (1.0 - target) / static_cast<double>(c.replicas));
  add(rs, "domain=two_vertex", "edge_open", ci, c.replicas, sw.seconds());
  add_point(rs, "domain=two_vertex", "edge_open_exact", target, c.replicas, sw.seconds());
  add_point(rs, "domain=two_vertex", "edge_open_z", (ci.estimate - target) / se, c.replicas, sw.seconds());

  for (double w : {c.bin_width / 2.0, c.bin_width, 2.0 * c.bin_width}) {
    const auto rep = loop_current_consistency(d, samples, w);
    const std::string p = "bin_width=" + detail::fmt(w);
    add_point(rs, p, "jump_tv_max", rep.max_tv, c.replicas, sw.seconds());
    add_point(rs, p, "jump_tv_weighted", rep.weighted_tv, c.replicas, sw.seconds());
    add_point(rs, p, "bins_used", static_cast<double>(rep.bins.size()), c.replicas, sw.seconds());
    add_point(rs, p, "bins_undersampled", static_cast<double>(rep.undersampled), c.replicas, sw.seconds());
  }

  const SmallGraph tri = triangle();
  const std::vector<double> beta(3, 1.0);
  const auto law = brute_force_current_law(tri, beta, 20);
  Rng rr = replica_rng(c, 0, 1);
  const RejectionCurrentSampler rej(tri, beta, rr);
  const std::size_t accepts = std::min<std::size_t>(c.replicas, 100000);
  std::map<CurrentConfig, std::size_t> hist;
  for (std::size_t i = 0; i < accepts; ++i) ++hist[rej.sample(rr)];
  double tv = 0.0, seen = 0.0;
  for (const auto& [cfg, k] : hist) {
    const double p = law.p(cfg);
    tv += std::abs(static_cast<double>(k) / static_cast<double>(accepts) - p);
    seen += p;
  }
  tv = 0.5 * (tv + 1.0 - seen);
  add_point(rs, "graph=triangle;beta=1", "rejection_tv", tv, accepts, sw.seconds());
  add_point(rs, "graph=triangle;beta=1", "rejection_acceptance", rej.acceptance, accepts, sw.seconds());
}

inline void domination(ResultSet& rs) {
  const auto& c = rs.config;
  detail::Stopwatch sw;
  for (double l : c.lambdas) {
    const auto g = domination_grid(l, 50.0, 400);
    const std::string p = "lambda=" + detail::fmt(l);
    add_point(rs, p, "grid_worst_log_ratio", g.worst, g.points, sw.seconds());
    add_point(rs, p, "grid_worst_lx", g.worst_lx, g.points, sw.seconds());
    add_point(rs, p, "grid_worst_ly", g.worst_ly, g.points, sw.seconds());
  }
  for (std::size_t li = 0; li < c.lambdas.size(); ++li) {
    Rng rng = replica_rng(c, 0, static_cast<std::uint32_t>(li));
    const auto mc = domination_mc(c.lambdas[li], rng, c.replicas);
    const std::string p = "domain=two_vertex;lambda=" + detail::fmt(c.lambdas[li]);
    add(rs, p, "p_in_O", mc.p_o, c.replicas, sw.seconds());
    add(rs, p, "p_soup_open", mc.p_soup, c.replicas, sw.seconds());
    add_point(rs, p, "coupling_violations", static_cast<double>(mc.violations), c.replicas, sw.seconds());
  }
}

inline void variance_gap(ResultSet& rs) {
  const auto& c = rs.config;
  for (int n : c.ns) {
    detail::Stopwatch sw;
    const Box box(n);
    const double v = observable_variance(box, c.beta);
    const double g = gfflab::variance_gap(box, c.alpha, c.beta);
    add_point(rs, detail::pn(n), "var_x", v, 0, sw.seconds());
    add_point(rs, detail::pn(n), "gap", g, 0, sw.seconds());
  }
  // Monte Carlo Var X and contour fixtures at the smallest N.
  const int n = c.ns.front();
  detail::Stopwatch sw;
  const Box box(n);
  const SparseDgffSampler sampler{Domain(box)};
  std::vector<double> xs(c.replicas);
  parallel_for(c.replicas, c.threads, [&](std::size_t r) {
    Rng rng = replica_rng(c, r, 0);
    xs[r] = observable(box, sampler.sample(rng).values, c.beta);
  });
  const auto m = stats::mean_se(xs);
  std::vector<double> dev(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) dev[i] = (xs[i] - m.mean) * (xs[i] - m.mean);
  const auto vm = stats::mean_se(dev);
  const double exact = observable_variance(box, c.beta);
  add(rs, detail::pn(n), "var_x_mc", stats::normal_interval(vm), c.replicas, sw.seconds());
  add_point(rs, detail::pn(n), "var_x_mc_z", (vm.mean - exact) / vm.se, c.replicas, sw.seconds());
  add_point(rs, detail::pn(n), "mean_x_mc_z", m.mean / m.se, c.replicas, sw.seconds());

  const double lambda = c.lambdas.empty() ? 1.0 : c.lambdas.front();
  const double c3 = escape_before_min(box, c.alpha, (1.0 + c.beta) / 2.0);
  const double gap = gfflab::variance_gap(box, c.alpha, c.beta);
  double mean_margin = INFINITY, var_margin = INFINITY;
  std::size_t found = 0, tried = 0;
  for (std::size_t r = 0; found < c.fixtures && tried < 50 * c.fixtures; ++r, ++tried) {
    Rng rng = replica_rng(c, r, 1);
    const auto f = sampler.sample(rng);
    const auto ct = minimal_closed_contour(box, f.values, lambda, c.alpha, c.beta);
    if (!ct.found) continue;
    ++found;
    const auto st = conditional_stats(box, ct.contour, f.values, c.beta);
    mean_margin = std::min(mean_margin, st.mean - c3 * lambda);
    var_margin = std::min(var_margin, exact - gap - st.variance);
  }
  add_point(rs, detail::pn(n), "c3", c3, 0, sw.seconds());
  add_point(rs, detail::pn(n), "contour_mean_margin", mean_margin, found, sw.seconds());
  add_point(rs, detail::pn(n), "contour_var_margin", var_margin, found, sw.seconds());
}

inline void repulsion(ResultSet& rs) {
  const auto& c = rs.config;
  const double lambda = c.lambdas.empty() ? 1.0 : c.lambdas.front();
  ChainOptions opt;
  opt.chains = std::max<std::size_t>(c.chains, 4);
  opt.burn_in = c.burn_in;
  opt.samples = c.samples;
  opt.thin = c.thin;
  for (std::size_t ni = 0; ni < c.ns.size(); ++ni) {
    const int n = c.ns[ni];
    detail::Stopwatch sw;
    for (int pinned = 1; pinned >= 0; --pinned) {
      const auto in = entropic_instance(n, lambda, c.eps_for(n), pinned != 0);
      std::vector<Rng> rngs;
      for (std::size_t k = 0; k < opt.chains; ++k)
        rngs.push_back(replica_rng(c, ni * 64 + k + (pinned ? 0 : 16), 0));
      const auto est = entropic_mean(in, rngs, opt);
      const std::string tag = pinned ? "pinned" : "unpinned";
      add(rs, detail::pn(n), tag + "_mean", stats::normal_interval(est.mean), opt.chains * opt.samples, sw.seconds());
      add_point(rs, detail::pn(n), tag + "_rhat", est.rhat, opt.chains * opt.samples, sw.seconds());

      // Brascamp-Lieb: l = ring weights of X.
      const auto ring = observable_ring(in.box, c.beta);
      std::vector<double> l(in.box.size(), 0.0);
      for (Vertex u : ring) l[u] = 1.0 / static_cast<double>(ring.size());
      for (auto& r : rngs) r.discard(1);
      std::vector<Rng> rb;
      for (std::size_t k = 0; k < opt.chains; ++k) rb.push_back(replica_rng(c, ni * 64 + k + (pinned ? 32 : 48), 0));
      const auto bl = brascamp_lieb_check(in.sampler(), l, rb, opt);
      add(rs, detail::pn(n) + ";" + tag, "bl_conditional_var", stats::normal_interval(bl.conditional),
          opt.chains * opt.samples, sw.seconds());
      add_point(rs, detail::pn(n) + ";" + tag, "bl_unconditional_var", bl.unconditional, 0, sw.seconds());
    }
  }
}

}  // namespace runners

inline ResultSet run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ResultSet rs;
  rs.config = cfg;
  const auto& id = cfg.experiment;
  experiment_info(id);
  if (id == "prop21_crossing") runners::crossing(rs);
  else if (id == "thm11_distance") runners::level_distance(rs, +1.0);
  else if (id == "cor35_distance") runners::level_distance(rs, -1.0);
  else if (id == "thm12_loop_distance") runners::loop_distance(rs);
  else if (id == "isomorphism") runners::isomorphism(rs);
  else if (id == "makarov") runners::makarov(rs);
  else if (id == "current_consistency") runners::current_consistency(rs);
  else if (id == "domination") runners::domination(rs);
  else if (id == "variance_gap") runners::variance_gap(rs);
  else if (id == "repulsion_profile") runners::repulsion(rs);
  return rs;
}

// ---------------------------------------------------------------------------
// Pass/fail checks

struct CheckResult {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    pass = false;
    if (!detail.empty()) detail += "; ";
    detail += why;
  }
};

namespace detail {

inline int param_n(const std::string& params) {
  const auto p = params.find("N=");
  return p == std::string::npos ? 0 : std::stoi(params.substr(p + 2));
}

/// Consecutive estimates may only drop while the confidence intervals still overlap.
inline bool nondecreasing_within_ci(const std::vector<const ResultRow*>& rows) {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i]->ci_high < rows[i - 1]->ci_low) return false;
  return true;
}

}  // namespace detail

inline CheckResult check_experiment(const ResultSet& rs) {
  CheckResult cr;
  const auto& c = rs.config;
  const auto& id = c.experiment;
  std::ostringstream info;
  if (id == "prop21_crossing") {
    for (int n : c.ns) {
      std::vector<const ResultRow*> rows;
      for (double l : c.lambdas) rows.push_back(rs.find("crossing_prob", detail::pnl(n, l)));
      if (!detail::nondecreasing_within_ci(rows)) cr.fail("crossing probability decreases in lambda at N=" + std::to_string(n));
      const ResultRow *r2 = nullptr, *slope = nullptr;
      for (const auto& r : rs.rows)
        if (detail::param_n(r.params) == n) {
          if (r.statistic == "fit_r2") r2 = &r;
          if (r.statistic == "fit_slope") slope = &r;
        }
      if (!r2) cr.fail("fewer than two resolvable lambdas at N=" + std::to_string(n));
      else {
        if (r2->estimate < 0.9) cr.fail("fit R^2 " + detail::fmt(r2->estimate) + " < 0.9");
        if (slope->estimate >= 0.0) cr.fail("log(1-P) does not decrease in lambda^2");
        info << "N=" << n << " slope=" << detail::fmt(slope->estimate) << " R2=" << detail::fmt(r2->estimate) << " ("
             << r2->params << ")";
      }
    }
  } else if (id == "thm11_distance") {
    for (int n : c.ns) {
      std::vector<const ResultRow*> rows;
      for (double l : c.lambdas) rows.push_back(rs.find("short_path_prob", detail::pnl(n, l)));
      if (!detail::nondecreasing_within_ci(rows)) cr.fail("short-path probability decreases in lambda at N=" + std::to_string(n));
    }
  } else if (id == "cor35_distance" || id == "thm12_loop_distance") {
    for (const auto* r : rs.all("short_path_prob")) {
      info << r->params << " P=" << detail::fmt(r->estimate) << " [" << detail::fmt(r->ci_low) << "," << detail::fmt(r->ci_high)
           << "] ";
      if (r->ci_low <= 0.02) cr.fail(r->params + " CI lower bound " + detail::fmt(r->ci_low) + " <= 0.02");
    }
  } else if (id == "isomorphism") {
    const auto ks = rs.all("ks_pvalue");
    const double level = 0.01 / static_cast<double>(std::max<std::size_t>(ks.size(), 1));
    double pmin = 1.0, zmax = 0.0;
    for (const auto* r : ks) pmin = std::min(pmin, r->estimate);
    for (const auto* r : rs.all("cov_z")) zmax = std::max(zmax, std::abs(r->estimate));
    if (pmin < level) cr.fail("KS p-value " + detail::fmt(pmin) + " below Bonferroni level " + detail::fmt(level));
    if (zmax > 5.0) cr.fail("covariance |z| " + detail::fmt(zmax) + " > 5");
    info << "min KS p=" << detail::fmt(pmin) << " max cov |z|=" << detail::fmt(zmax);
  } else if (id == "makarov") {
    std::vector<const ResultRow*> rows = rs.all("heavy_mass");
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i]->estimate > rows[i - 1]->estimate && rows[i]->ci_low > rows[i - 1]->ci_high)
        cr.fail("heavy mass increases from " + rows[i - 1]->params + " to " + rows[i]->params);
    for (const auto* r : rows) info << r->params << " " << detail::fmt(r->estimate) << " ";
  } else if (id == "current_consistency") {
    const auto* z = rs.find("edge_open_z", "domain=two_vertex");
    if (!z || std::abs(z->estimate) > 3.0) cr.fail("edge-open frequency off by more than 3 sigma");
    const auto* tv = rs.find("rejection_tv", "graph=triangle;beta=1");
    if (!tv || tv->estimate >= 0.02) cr.fail("rejection sampler TV >= 0.02");
    const auto* jt = rs.find("jump_tv_max", "bin_width=" + detail::fmt(c.bin_width));
    if (!jt || jt->estimate >= 0.05) cr.fail("jump-count TV >= 0.05 at the nominal bin width");
    if (z && tv && jt)
      info << "z=" << detail::fmt(z->estimate) << " rejTV=" << detail::fmt(tv->estimate) << " jumpTV=" << detail::fmt(jt->estimate);
  } else if (id == "domination") {
    for (const auto* r : rs.all("grid_worst_log_ratio"))
      if (r->estimate > 0.0) cr.fail("grid inequality violated at " + r->params);
    for (double l : c.lambdas) {
      const std::string p = "domain=two_vertex;lambda=" + detail::fmt(l);
      const auto *o = rs.find("p_in_O", p), *s = rs.find("p_soup_open", p);
      const double sd = std::sqrt(std::max(s->estimate * (1 - s->estimate), 1e-12) / static_cast<double>(s->replicas));
      if (o->estimate > s->estimate + 3.0 * sd) cr.fail("edge marginal ordering fails at " + p);
    }
  } else if (id == "variance_gap") {
    const auto gaps = rs.all("gap");
    double lo = INFINITY, hi = 0.0;
    for (const auto* g : gaps) {
      if (!(g->estimate > 0.0)) cr.fail("nonpositive gap at " + g->params);
      lo = std::min(lo, g->estimate);
      hi = std::max(hi, g->estimate);
    }
    if (hi > 0.0 && (hi - lo) / hi > 0.25) cr.fail("gap varies by more than 25% across N");
    const auto* z = rs.all("var_x_mc_z").front();
    if (std::abs(z->estimate) > 5.0) cr.fail("MC Var X off by more than 5 sigma");
    const auto* mm = rs.all("contour_mean_margin").front();
    const auto* vm = rs.all("contour_var_margin").front();
    if (mm->replicas == 0) cr.fail("no contour fixture found");
    if (mm->estimate < -1e-9) cr.fail("conditional mean below c3*lambda");
    if (vm->estimate < -1e-9) cr.fail("conditional variance above Var X - gap");
    info << "gap range [" << detail::fmt(lo) << "," << detail::fmt(hi) << "] varZ=" << detail::fmt(z->estimate)
         << " fixtures=" << mm->replicas;
  } else if (id == "repulsion_profile") {
    for (const auto& r : rs.rows)
      if (r.statistic == "bl_conditional_var") {
        const std::string tag = r.params.substr(r.params.find(';') + 1);
        const auto* u = rs.find("bl_unconditional_var", r.params);
        const double se = (r.ci_high - r.ci_low) / (2.0 * 1.959963984540054);
        if (r.estimate > u->estimate + 3.0 * se) cr.fail("Brascamp-Lieb ordering fails at " + r.params);
      }
    std::vector<double> logn, pm, um;
    for (int n : c.ns) {
      logn.push_back(std::log(static_cast<double>(n)));
      pm.push_back(rs.find("pinned_mean", detail::pn(n))->estimate);
      um.push_back(rs.find("unpinned_mean", detail::pn(n))->estimate);
    }
    for (std::size_t i = 1; i < um.size(); ++i)
      if (um[i] <= um[i - 1]) cr.fail("unpinned mean does not grow between N=" + std::to_string(c.ns[i - 1]) + " and " +
                                      std::to_string(c.ns[i]));
    if (logn.size() >= 2) {
      const double sp = stats::linear_fit(logn, pm).slope, su = stats::linear_fit(logn, um).slope;
      if (!(sp < 0.5 * su)) cr.fail("pinned mean grows comparably to the unpinned control");
      info << "slope vs log N: pinned=" << detail::fmt(sp) << " unpinned=" << detail::fmt(su);
    }
  }
  if (cr.pass) cr.detail = info.str();
  else if (!info.str().empty()) cr.detail += " | " + info.str();
  return cr;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + tmp);
    os << content;
    if (!os) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::string results_csv(const ResultSet& rs, bool with_wall_time = true) {
  std::ostringstream os;
  os << "# experiment=" << rs.config.experiment << " seed=" << rs.config.seed << " version=" << kVersion << "\n";
  os << "experiment,params,statistic,estimate,ci_low,ci_high,replicas" << (with_wall_time ? ",wall_time" : "") << "\n";
  os << std::setprecision(17);
  for (const auto& r : rs.rows) {
    os << r.experiment << ',' << r.params << ',' << r.statistic << ',' << r.estimate << ',' << r.ci_low << ',' << r.ci_high << ','
       << r.replicas;
    if (with_wall_time) os << ',' << std::setprecision(4) << r.wall_time << std::setprecision(17);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json config_json(const ExperimentConfig& c) {
  return {{"experiment", c.experiment}, {"N", c.ns},          {"lambda", c.lambdas},  {"alpha", c.alpha},
          {"beta", c.beta},             {"chi", c.chi},       {"epsilon", c.epsilon}, {"mesh", c.mesh},
          {"replicas", c.replicas},     {"seed", c.seed},     {"threads", c.threads}, {"walks", c.walks},
          {"clusters", c.clusters},     {"chains", c.chains}, {"burn_in", c.burn_in}, {"samples", c.samples},
          {"thin", c.thin},             {"pairs", c.pairs},   {"fixtures", c.fixtures}, {"bin_width", c.bin_width}};
}

/// Writes <out>/<id>_seed<S>.csv and the .json sidecar; returns the CSV path.
inline std::string write_results(const ResultSet& rs, const CheckResult* check = nullptr) {
  const auto& c = rs.config;
  std::filesystem::create_directories(c.out);
  const std::string stem = c.experiment + "_seed" + std::to_string(c.seed);
  const auto dir = std::filesystem::path(c.out);
  detail::write_atomic(dir / (stem + ".csv"), results_csv(rs));
  nlohmann::json j;
  j["config"] = config_json(c);
  j["environment"] = {{"version", kVersion}, {"compiler", __VERSION__}, {"hardware_threads", std::thread::hardware_concurrency()}};
  j["target"] = experiment_info(c.experiment).target;
  j["failures"] = rs.failures;
  if (check) j["check"] = {{"pass", check->pass}, {"detail", check->detail}};
  detail::write_atomic(dir / (stem + ".json"), j.dump(2) + "\n");
  return (dir / (stem + ".csv")).string();
}

}  // namespace gfflab
