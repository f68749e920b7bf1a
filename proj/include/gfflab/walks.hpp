#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gfflab/errors.hpp"
#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/rng.hpp"
#include "gfflab/stats.hpp"

namespace gfflab {

struct HarmonicMeasureRow {
  Vertex start = 0;
  std::vector<Vertex> target;
  std::vector<double> mass;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  bool exact = true;

  double mass_of(const std::vector<Vertex>& subset) const {
    double s = 0.0;
    for (Vertex u : subset) {
      auto it = std::find(target.begin(), target.end(), u);
      if (it != target.end()) s += mass[static_cast<std::size_t>(it - target.begin())];
    }
    return s;
  }
};

namespace detail {

inline std::vector<char> to_mask(std::size_t n, const std::vector<Vertex>& set) {
  std::vector<char> m(n, 0);
  for (Vertex v : set) m[v] = 1;
  return m;
}

/// Vertices reachable from the starts without touching the target. Throws
/// if that region reaches the box boundary, since the walk could then leave.
inline std::vector<char> confined_region(const Box& box, const std::vector<char>& target, const std::vector<Vertex>& starts) {
  std::vector<char> seen(box.size(), 0);
  std::deque<Vertex> q;
  for (Vertex s : starts)
    if (!target[s] && !seen[s]) {
      seen[s] = 1;
      q.push_back(s);
    }
  while (!q.empty()) {
    const Vertex v = q.front();
    q.pop_front();
    if (box.on_boundary(v)) throw RangeError("harmonic measure: the walk can leave the box before hitting the target");
    for (int d = 0; d < 4; ++d) {
      const auto w = box.neighbor(v, d);
      if (w == kNone) continue;
      const auto wu = static_cast<Vertex>(w);
      if (!target[wu] && !seen[wu]) {
        seen[wu] = 1;
        q.push_back(wu);
      }
    }
  }
  return seen;
}

}  // namespace detail

/// Exact hitting distributions P_v(S_{tau_A} = u), one row per start.
inline std::vector<HarmonicMeasureRow> harmonic_measure_exact(const Box& box, const std::vector<Vertex>& target,
                                                              const std::vector<Vertex>& starts) {
  if (target.empty()) throw RangeError("harmonic_measure_exact: empty target");
  const auto tmask = detail::to_mask(box.size(), target);
  const auto region = detail::confined_region(box, tmask, starts);
  std::vector<char> killed(box.size(), 1);
  bool any = false;
  for (Vertex v = 0; v < box.size(); ++v)
    if (region[v]) {
      killed[v] = 0;
      any = true;
    }
  std::vector<HarmonicMeasureRow> rows;
  std::unique_ptr<SparseGreen> g;
  if (any) {
    // Domain forces the box boundary killed; the region never touches it.
    g = std::make_unique<SparseGreen>(Domain(box, killed));
  }
  for (Vertex s : starts) {
    HarmonicMeasureRow row{s, target, std::vector<double>(target.size(), 0.0), {}, {}, true};
    if (tmask[s]) {
      row.mass[static_cast<std::size_t>(std::find(target.begin(), target.end(), s) - target.begin())] = 1.0;
    } else {
      std::vector<double> f(box.size(), 0.0);
      f[s] = 1.0;
      const auto gs = g->apply(f);  // G(s, .) by symmetry
      for (std::size_t k = 0; k < target.size(); ++k) {
        double m = 0.0;
        for (int d = 0; d < 4; ++d) {
          const auto w = box.neighbor(target[k], d);
          if (w != kNone && region[static_cast<Vertex>(w)]) m += gs[static_cast<Vertex>(w)];
        }
        row.mass[k] = 0.25 * m;
      }
    }
    row.ci_low = row.mass;
    row.ci_high = row.mass;
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Monte Carlo hitting distribution with Wilson intervals.
inline HarmonicMeasureRow harmonic_measure_mc(const Box& box, Vertex start, const std::vector<Vertex>& target, Rng& rng,
                                              std::size_t n_walks) {
  if (n_walks < 1) throw RangeError("harmonic_measure_mc: need at least one walk");
  const auto tmask = detail::to_mask(box.size(), target);
  std::vector<std::ptrdiff_t> slot(box.size(), kNone);
  for (std::size_t k = 0; k < target.size(); ++k) slot[target[k]] = static_cast<std::ptrdiff_t>(k);
  std::vector<std::size_t> hits(target.size(), 0);
  std::uniform_int_distribution<int> dir(0, 3);
  for (std::size_t w = 0; w < n_walks; ++w) {
    Vertex v = start;
    while (!tmask[v]) {
      const auto nx = box.neighbor(v, dir(rng));
      if (nx == kNone) throw RangeError("harmonic_measure_mc: the walk left the box");
      v = static_cast<Vertex>(nx);
    }
    ++hits[static_cast<std::size_t>(slot[v])];
  }
  HarmonicMeasureRow row{start, target, {}, {}, {}, false};
  for (std::size_t k = 0; k < target.size(); ++k) {
    const auto ci = stats::wilson(hits[k], n_walks);
    row.mass.push_back(ci.estimate);
    row.ci_low.push_back(ci.low);
    row.ci_high.push_back(ci.high);
  }
  return row;
}

// ---------------------------------------------------------------------------
// Exit distributions of squares, used to jump a walk across empty space.

/// Exit law of SRW started at the centre of {|x|_inf < r}, stored for one
/// side as a CDF over y in (-r, r); the other three sides follow by rotation.
class SquareExitTable {
 public:
  static const SquareExitTable& instance() {
    static SquareExitTable t;
    return t;
  }
  static constexpr int kMaxLevel = 7;  // radii 2, 4, ..., 128

  int radius(int level) const { return 1 << level; }

  /// Largest tabulated radius strictly below `limit`, or 0 if none.
  int level_below(int limit) const {
    int lv = 0;
    for (int k = 1; k <= kMaxLevel; ++k)
      if ((1 << k) < limit) lv = k;
    return lv;
  }

  Point sample_exit(int level, Rng& rng) const {
    const auto& cdf = cdf_[static_cast<std::size_t>(level)];
    const int r = 1 << level;
    const double u = uniform01(rng);
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u * cdf.back());
    const int y = static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1)) - (r - 1);
    switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
      case 0: return {r, y};
      case 1: return {-y, r};
      case 2: return {-r, -y};
      default: return {y, -r};
    }
  }

 private:
  SquareExitTable() : cdf_(kMaxLevel + 1) {
    for (int lv = 1; lv <= kMaxLevel; ++lv) {
      const int r = 1 << lv;
      const Box sq(2 * r + 1);
      std::vector<Vertex> side;
      for (int y = -(r - 1); y <= r - 1; ++y) side.push_back(sq.vertex({r, y}));
      const Vertex c = sq.vertex({0, 0});
      const auto row = harmonic_measure_exact(sq, sq.boundary(), {c});
      auto& cdf = cdf_[static_cast<std::size_t>(lv)];
      double acc = 0.0;
      for (Vertex v : side) {
        acc += row[0].mass_of({v});
        cdf.push_back(acc);
      }
    }
  }
  std::vector<std::vector<double>> cdf_;
};

// ---------------------------------------------------------------------------
// Harmonic measure from infinity

inline int l1_diameter(const std::vector<Point>& a) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) d = std::max(d, l1(a[i], a[j]));
  return d;
}

inline bool nn_connected(const std::vector<Point>& a) {
  if (a.empty()) return false;
  std::map<Point, bool> seen;
  for (auto p : a) seen[p] = false;
  std::deque<Point> q{a.front()};
  seen[a.front()] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    const Point p = q.front();
    q.pop_front();
    for (auto s : kSteps) {
      auto it = seen.find({p.x + s.x, p.y + s.y});
      if (it != seen.end() && !it->second) {
        it->second = true;
        ++count;
        q.push_back(it->first);
      }
    }
  }
  return count == a.size();
}

/// Walks started far away until they hit a finite set A. Around A a
/// Chebyshev distance map is kept so the walk can jump by exact square-exit
/// draws whenever the square misses A.
class InfinityWalker {
 public:
  explicit InfinityWalker(std::vector<Point> a) : a_(std::move(a)) {
    if (a_.empty()) throw RangeError("InfinityWalker: empty set");
    lo_ = hi_ = a_.front();
    for (auto p : a_) {
      lo_.x = std::min(lo_.x, p.x);
      lo_.y = std::min(lo_.y, p.y);
      hi_.x = std::max(hi_.x, p.x);
      hi_.y = std::max(hi_.y, p.y);
    }
    diam_ = l1_diameter(a_);
    centre_ = {(lo_.x + hi_.x) / 2, (lo_.y + hi_.y) / 2};
    gx0_ = lo_.x - kMargin;
    gy0_ = lo_.y - kMargin;
    gw_ = hi_.x - lo_.x + 1 + 2 * kMargin;
    gh_ = hi_.y - lo_.y + 1 + 2 * kMargin;
    dist_.assign(static_cast<std::size_t>(gw_ * gh_), std::numeric_limits<int>::max());
    slot_.assign(dist_.size(), -1);
    std::deque<std::size_t> q;
    for (std::size_t k = 0; k < a_.size(); ++k) {
      const auto c = cell(a_[k]);
      if (slot_[c] >= 0) throw RangeError("InfinityWalker: repeated point");
      slot_[c] = static_cast<int>(k);
      dist_[c] = 0;
      q.push_back(c);
    }
    while (!q.empty()) {  // Chebyshev distance transform by 8-neighbour BFS
      const auto c = q.front();
      q.pop_front();
      const int cx = static_cast<int>(c % static_cast<std::size_t>(gw_)), cy = static_cast<int>(c / static_cast<std::size_t>(gw_));
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= gw_ || ny >= gh_) continue;
          const auto nc = static_cast<std::size_t>(ny * gw_ + nx);
          if (dist_[nc] > dist_[c] + 1) {
            dist_[nc] = dist_[c] + 1;
            q.push_back(nc);
          }
        }
    }
  }

  const std::vector<Point>& points() const { return a_; }
  int diameter() const { return diam_; }
  Point centre() const { return centre_; }

  /// Index in A of the first point hit by a walk started uniformly on the
  /// discrete circle of the given radius around the centre of A. Walks that
  /// stray beyond four times that radius are restarted on the circle.
  std::size_t walk(double radius, Rng& rng) const {
    const auto& table = SquareExitTable::instance();
    std::uniform_int_distribution<int> dir(0, 3);
    const double kill = 4.0 * radius;
    Point p = on_circle(radius, rng);
    for (;;) {
      const int d = distance(p);
      if (d == 0) return static_cast<std::size_t>(slot_[cell(p)]);
      if (linf(p, centre_) > kill) {
        p = on_circle(radius, rng);
        continue;
      }
      const int lv = table.level_below(d);
      if (lv >= 1) {
        const Point s = table.sample_exit(lv, rng);
        p = {p.x + s.x, p.y + s.y};
      } else {
        const Point s = kSteps[static_cast<std::size_t>(dir(rng))];
        p = {p.x + s.x, p.y + s.y};
      }
    }
  }

 private:
  static constexpr int kMargin = 160;

  Point on_circle(double radius, Rng& rng) const {
    const double th = 2.0 * std::numbers::pi * uniform01(rng);
    return {centre_.x + static_cast<int>(std::lround(radius * std::cos(th))),
            centre_.y + static_cast<int>(std::lround(radius * std::sin(th)))};
  }
  std::size_t cell(Point p) const { return static_cast<std::size_t>((p.y - gy0_) * gw_ + (p.x - gx0_)); }
  /// Lower bound on the l-infinity distance from p to A (exact near A).
  int distance(Point p) const {
    const int x = p.x - gx0_, y = p.y - gy0_;
    if (x >= 0 && y >= 0 && x < gw_ && y < gh_) return dist_[cell(p)];
    const int bx = std::max({lo_.x - p.x, p.x - hi_.x, 0});
    const int by = std::max({lo_.y - p.y, p.y - hi_.y, 0});
    return std::max(bx, by);
  }

  std::vector<Point> a_;
  Point lo_, hi_, centre_;
  int diam_ = 0;
  int gx0_ = 0, gy0_ = 0, gw_ = 0, gh_ = 0;
  std::vector<int> dist_;
  std::vector<int> slot_;
};

struct HmInfinityEstimate {
  std::vector<Point> points;
  std::vector<double> mass;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::vector<double> mass_doubled;  // the doubled-radius rerun
  double radius = 0.0;
  std::size_t walks = 0;
  bool converged = true;

  double mass_at(Point u) const {
    auto it = std::find(points.begin(), points.end(), u);
    return it == points.end() ? 0.0 : mass[static_cast<std::size_t>(it - points.begin())];
  }
};

struct HmInfinityOptions {
  double radius_multiplier = 8.0;
  std::size_t walks = 10000;
};

inline std::vector<std::size_t> hit_counts(const InfinityWalker& w, double radius, std::size_t walks, Rng& rng) {
  std::vector<std::size_t> c(w.points().size(), 0);
  for (std::size_t i = 0; i < walks; ++i) ++c[w.walk(radius, rng)];
  return c;
}

/// Harmonic measure from infinity of every point of A, estimated from
/// far-circle starts, with a doubled-radius agreement check.
inline HmInfinityEstimate hm_infinity(const std::vector<Point>& a, Rng& rng, HmInfinityOptions opt = {}) {
  if (!(opt.radius_multiplier >= 4.0)) throw RangeError("hm_infinity: radius multiplier must be at least 4");
  if (!nn_connected(a)) throw RangeError("hm_infinity: set must be connected");
  HmInfinityEstimate est;
  est.points = a;
  est.walks = opt.walks;
  if (a.size() == 1) {
    est.mass = est.ci_low = est.ci_high = est.mass_doubled = {1.0};
    return est;
  }
  const InfinityWalker walker(a);
  est.radius = opt.radius_multiplier * std::max(1, walker.diameter());
  const auto c1 = hit_counts(walker, est.radius, opt.walks, rng);
  const auto c2 = hit_counts(walker, 2.0 * est.radius, opt.walks, rng);
  const double n = static_cast<double>(opt.walks);
  // Family-wise 1% agreement band across all points.
  const double z = stats::normal_quantile(1.0 - 0.005 / static_cast<double>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto ci = stats::wilson(c1[k], opt.walks);
    est.mass.push_back(ci.estimate);
    est.ci_low.push_back(ci.low);
    est.ci_high.push_back(ci.high);
    const double p2 = static_cast<double>(c2[k]) / n;
    est.mass_doubled.push_back(p2);
    const double pooled = 0.5 * (ci.estimate + p2);
    const double se = std::sqrt(std::max(pooled * (1 - pooled), 1.0 / n) * 2.0 / n);
    if (std::abs(ci.estimate - p2) > z * se) est.converged = false;
  }
  return est;
}

struct MakarovResult {
  int diameter = 0;
  double chi = 0.0;
  double threshold = 0.0;
  std::vector<Point> heavy;
  double statistic = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double max_point_mass = 0.0;
  double max_point_halfwidth = 0.0;  // pass-1 pointwise error at the heaviest point
  bool converged = true;
};

/// Harmonic-measure mass of the heavy points {x : Hm(inf,x;A) >= n^-1 e^{(log n)^chi}}.
/// Pass 1 decides the heavy set, an independent pass 2 measures its mass.
inline MakarovResult makarov_statistic(const std::vector<Point>& a, double chi, Rng& rng, std::size_t walks = 10000) {
  if (!(chi > 0.5)) throw RangeError("makarov_statistic: chi must exceed 1/2");
  MakarovResult r;
  r.chi = chi;
  r.diameter = l1_diameter(a);
  if (r.diameter < 8) throw RangeError("makarov_statistic: diameter must be at least 8");
  const double n = r.diameter;
  r.threshold = std::exp(std::pow(std::log(n), chi)) / n;
  const auto pass1 = hm_infinity(a, rng, {8.0, walks});
  r.converged = pass1.converged;
  std::vector<char> heavy(a.size(), 0);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (pass1.mass[k] > r.max_point_mass) {
      r.max_point_mass = pass1.mass[k];
      r.max_point_halfwidth = 0.5 * (pass1.ci_high[k] - pass1.ci_low[k]);
    }
    if (pass1.mass[k] >= r.threshold) {
      heavy[k] = 1;
      r.heavy.push_back(a[k]);
    }
  }
  const InfinityWalker walker(a);
  const auto counts = hit_counts(walker, pass1.radius, walks, rng);
  std::size_t in_heavy = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (heavy[k]) in_heavy += counts[k];
  const auto ci = stats::wilson(in_heavy, walks);
  r.statistic = ci.estimate;
  r.ci_low = ci.low;
  r.ci_high = ci.high;
  return r;
}

// ---------------------------------------------------------------------------
// Potential kernel

/// a(x) for |x|_inf <= radius: a(0)=0, harmonic off the origin, a ~ (2/pi) log|x| + kappa.
class PotentialKernel {
 public:
  static constexpr double kKappa = (2.0 * std::numbers::egamma + 3.0 * std::numbers::ln2) / std::numbers::pi;

  /// Large-|x| expansion used as the far boundary condition.
  static double asymptotic(Point x) {
    const double r2 = static_cast<double>(x.x) * x.x + static_cast<double>(x.y) * x.y;
    const double r = std::sqrt(r2);
    const double cos4 = (std::pow(x.x, 4) - 6.0 * x.x * x.x * static_cast<double>(x.y) * x.y + std::pow(x.y, 4)) / (r2 * r2);
    return 2.0 / std::numbers::pi * std::log(r) + kKappa - cos4 / (6.0 * std::numbers::pi * r2);
  }

  explicit PotentialKernel(int radius) : radius_(radius) {
    if (radius < 2) throw RangeError("potential_kernel: radius must be at least 2");
    int pad = 4;
    auto prev = solve(radius * pad);
    for (;;) {
      auto next = solve(radius * pad * 2);
      double diff = 0.0;
      for (std::size_t i = 0; i < prev.size(); ++i) diff = std::max(diff, std::abs(prev[i] - next[i]));
      stability_ = diff;
      table_ = std::move(next);
      if (diff < 1e-6) break;
      pad *= 2;
      if (pad > 16) throw PrecisionError("potential_kernel: refinement did not stabilise to 1e-6");
      prev = table_;
    }
  }

  int radius() const { return radius_; }
  double stability() const { return stability_; }
  double operator()(Point x) const { return (*this)(x.x, x.y); }
  double operator()(int x, int y) const {
    if (std::abs(x) > radius_ || std::abs(y) > radius_) throw RangeError("potential_kernel: point outside table");
    const int w = 2 * radius_ + 1;
    return table_[static_cast<std::size_t>((y + radius_) * w + (x + radius_))];
  }

 private:
  /// Dirichlet problem on {|x|_inf <= p} with a(0)=0 and asymptotic data on
  /// the outer ring; returns the values for |x|_inf <= radius_.
  std::vector<double> solve(int p) const {
    const Box grid(2 * p + 1);
    std::vector<char> pinned(grid.size(), 0);
    std::vector<double> values(grid.size(), 0.0);
    for (Vertex v : grid.boundary()) {
      pinned[v] = 1;
      values[v] = asymptotic(grid.coord(v));
    }
    const Vertex origin = grid.vertex({0, 0});
    pinned[origin] = 1;
    std::vector<WeightedEdge> edges;
    for (const auto& e : grid.edges()) edges.push_back({e.u, e.v, 1.0});
    const GaussianMarkovField lap(grid.size(), edges, pinned);
    const auto a = lap.harmonic_extension(values);
    std::vector<double> out;
    for (int y = -radius_; y <= radius_; ++y)
      for (int x = -radius_; x <= radius_; ++x) out.push_back(a[grid.vertex({x, y})]);
    return out;
  }

  int radius_;
  double stability_ = 0.0;
  std::vector<double> table_;
};

/// Exact harmonic measure from infinity through the potential kernel:
/// sum_y H(y) a(x - y) is the same constant for every x in A, sum H = 1.
inline std::vector<double> hm_infinity_exact(const std::vector<Point>& a, const PotentialKernel& pk) {
  const auto n = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + 1, n + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto pi = a[static_cast<std::size_t>(i)], pj = a[static_cast<std::size_t>(j)];
      m(i, j) = pk(pi.x - pj.x, pi.y - pj.y);
    }
    m(i, n) = -1.0;
    m(n, i) = 1.0;
  }
  rhs[n] = 1.0;
  const Eigen::VectorXd sol = m.partialPivLu().solve(rhs);
  return std::vector<double>(sol.data(), sol.data() + n);
}

// ---------------------------------------------------------------------------
// Harmonic profile around a point on a long edge

/// f(u) = |v'-w| g(u-v) + |v-w| g(u-v') with g = C (pi/2) a + C1, where w
/// sits a fraction t of the way from v to v' along the edge e(1) = (v,v').
/// Distances are Euclidean in the plane, so |v-w| = t and |v'-w| = 1-t.
struct HarmonicProfile {
  Box box;
  Vertex v = 0, vp = 0;
  double t = 0.5;
  double c = 1.0, c1 = 0.0;
  std::vector<double> f;  // per box vertex
  double f_w = 0.0;
  double dg0 = 0.0;
  double residual_v = 0.0, residual_vp = 0.0;
  double bound = 0.0;  // sup |f(u) - C log(|u-w|+2) - C1| over V_N and w
  double min_f = 0.0;
};

inline HarmonicProfile build_harmonic_profile(const Box& box, Vertex v, Vertex vp, double t, double c, double c1,
                                              const PotentialKernel& pk) {
  if (!(t > 0.0 && t < 1.0)) throw RangeError("build_harmonic_profile: w must lie strictly inside the edge");
  if (!(c > 0.0 && c1 > 0.0)) throw RangeError("build_harmonic_profile: C and C1 must be positive");
  const Point pv = box.coord(v), pvp = box.coord(vp);
  if (l1(pv, pvp) != 1) throw RangeError("build_harmonic_profile: v and v' must be lattice neighbours");
  if (pk.radius() < box.side() + 1) throw RangeError("build_harmonic_profile: potential kernel table too small");
  HarmonicProfile h{box, v, vp, t, c, c1, std::vector<double>(box.size()), 0, 0, 0, 0, 0, 0};
  const double scale = c * std::numbers::pi / 2.0;
  auto g = [&](int x, int y) { return scale * pk(x, y) + c1; };
  auto f_at = [&](Point u) { return (1.0 - t) * g(u.x - pv.x, u.y - pv.y) + t * g(u.x - pvp.x, u.y - pvp.y); };
  for (Vertex u = 0; u < box.size(); ++u) h.f[u] = f_at(box.coord(u));
  double sum_nb = 0.0;
  for (auto s : kSteps) sum_nb += g(s.x, s.y);
  h.dg0 = sum_nb - 4.0 * g(0, 0);
  const Point e{pvp.x - pv.x, pvp.y - pv.y};
  h.f_w = (t * t + (1 - t) * (1 - t)) * g(0, 0) - 8.0 * t * (1 - t) * h.dg0 + t * (1 - t) * (g(e.x, e.y) + g(-e.x, -e.y));

  auto residual = [&](Point x, Point other, double dist) {
    double rhs = 0.0;
    for (auto s : kSteps) {
      const Point y{x.x + s.x, x.y + s.y};
      if (y == other) continue;
      rhs += f_at(y);
    }
    rhs += 7.0 / 8.0 * f_at(other) + h.f_w / (8.0 * dist);
    const double lhs = (3.0 + 7.0 / 8.0 + 1.0 / (8.0 * dist)) * f_at(x);
    return std::abs(lhs - rhs);
  };
  h.residual_v = residual(pv, pvp, t);
  h.residual_vp = residual(pvp, pv, 1.0 - t);
  if (h.residual_v > 1e-9 || h.residual_vp > 1e-9)
    throw PrecisionError("build_harmonic_profile: harmonicity identity fails; kernel table is wrong");

  const double wx = pv.x + t * e.x, wy = pv.y + t * e.y;
  h.min_f = h.f_w;
  h.bound = std::abs(h.f_w - c * std::log(2.0) - c1);
  for (Vertex u = 0; u < box.size(); ++u) {
    const Point pu = box.coord(u);
    const double dist = std::hypot(pu.x - wx, pu.y - wy);
    h.bound = std::max(h.bound, std::abs(h.f[u] - c * std::log(dist + 2.0) - c1));
    h.min_f = std::min(h.min_f, h.f[u]);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Escape probabilities

/// P_u(hit V_{alpha N} before the outer boundary), for every vertex u.
inline std::vector<double> escape_before_probs(const Box& box, double alpha) {
  const auto inner = box.scaled_box(alpha);
  std::vector<char> pinned(box.size(), 0);
  std::vector<double> values(box.size(), 0.0);
  for (Vertex v = 0; v < box.size(); ++v) {
    if (box.in(inner, v)) {
      pinned[v] = 1;
      values[v] = 1.0;
    }
    if (box.on_boundary(v)) pinned[v] = 1;
  }
  std::vector<WeightedEdge> edges;
  for (const auto& e : box.edges()) edges.push_back({e.u, e.v, 1.0});
  return GaussianMarkovField(box.size(), edges, pinned).harmonic_extension(values);
}

inline double escape_before_prob(const Box& box, Vertex u, double alpha) { return escape_before_probs(box, alpha)[u]; }

/// Minimum of the escape probability over the ring boundary of V_{r N}.
inline double escape_before_min(const Box& box, double alpha, double r) {
  const auto p = escape_before_probs(box, alpha);
  double m = 1.0;
  for (Vertex u : box.boundary_of(box.scaled_box(r))) m = std::min(m, p[u]);
  return m;
}

/// Fraction of walks from `start` (a point of V) that get l-infinity
/// distance d away from the start before returning to V.
inline double escape_frequency(const std::vector<Point>& set, Point start, int d, Rng& rng, std::size_t walks) {
  std::map<Point, bool> in;
  for (auto p : set) in[p] = true;
  std::uniform_int_distribution<int> dir(0, 3);
  std::size_t escaped = 0;
  for (std::size_t w = 0; w < walks; ++w) {
    Point p = start;
    for (;;) {
      const Point s = kSteps[static_cast<std::size_t>(dir(rng))];
      p = {p.x + s.x, p.y + s.y};
      if (in.count(p)) break;
      if (linf(p, start) >= d) {
        ++escaped;
        break;
      }
    }
  }
  return static_cast<double>(escaped) / static_cast<double>(walks);
}

}  // namespace gfflab
