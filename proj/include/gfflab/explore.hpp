#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/levelset.hpp"

namespace gfflab {

/// Frontier size below which the exploration counts as "thin": N e^{-(log N)^chi}.
inline double thin_threshold(int n, double chi) {
  return static_cast<double>(n) * std::exp(-std::pow(std::log(static_cast<double>(n)), chi));
}

/// Record of the discrete exploration. a[i] is A_i, b_new[i] the closed
/// vertices first seen at step i (so B_i is the union of b_new[0..i]) and
/// joined[v] the step at which v entered I (-1 if never).
struct ExplorationTrace {
  std::vector<std::vector<Vertex>> a;
  std::vector<std::vector<Vertex>> b_new;
  std::vector<int> joined;
  int tau = -1;  // -1 when no A_i is thin before the run stops
  double chi = 0.6;
  double threshold = 0.0;
  bool reached_boundary = false;

  int last_step() const { return static_cast<int>(a.size()) - 1; }
  std::vector<char> explored(int i) const {
    std::vector<char> m(joined.size(), 0);
    for (std::size_t v = 0; v < joined.size(); ++v) m[v] = joined[v] >= 0 && joined[v] <= i;
    return m;
  }
  std::vector<Vertex> b(int i) const {
    std::vector<Vertex> out;
    for (int k = 0; k <= i && k < static_cast<int>(b_new.size()); ++k)
      out.insert(out.end(), b_new[static_cast<std::size_t>(k)].begin(), b_new[static_cast<std::size_t>(k)].end());
    return out;
  }
};

inline ExplorationTrace explore_discrete(const Box& box, std::span<const double> values, double lambda, double alpha,
                                         double chi = 0.6) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw RangeError("explore_discrete: alpha must lie in (0,1)");
  const SubBox inner = box.scaled_box(alpha);
  ExplorationTrace tr;
  tr.chi = chi;
  tr.threshold = thin_threshold(box.side(), chi);
  tr.joined.assign(box.size(), -1);
  std::vector<Vertex> a0, b0;
  for (Vertex v : box.vertices_of(inner)) {
    tr.joined[v] = 0;
    if (values[v] <= lambda) a0.push_back(v);
    else if (inner.on_boundary(box.col(v), box.row(v))) b0.push_back(v);
  }
  tr.a.push_back(std::move(a0));
  tr.b_new.push_back(std::move(b0));
  for (int i = 0;; ++i) {
    const auto& ai = tr.a[static_cast<std::size_t>(i)];
    if (ai.empty()) break;
    std::vector<Vertex> next, closed;
    for (Vertex v : ai)
      for (int d = 0; d < 4; ++d) {
        const auto w = box.neighbor(v, d);
        if (w == kNone) continue;
        const auto wu = static_cast<Vertex>(w);
        if (tr.joined[wu] >= 0) continue;
        tr.joined[wu] = i + 1;
        (values[wu] <= lambda ? next : closed).push_back(wu);
        if (box.on_boundary(wu)) tr.reached_boundary = true;
      }
    std::sort(next.begin(), next.end());
    std::sort(closed.begin(), closed.end());
    tr.a.push_back(std::move(next));
    tr.b_new.push_back(std::move(closed));
    if (tr.reached_boundary) break;
  }
  for (std::size_t i = 0; i < tr.a.size(); ++i)
    if (static_cast<double>(tr.a[i].size()) <= tr.threshold) {
      tr.tau = static_cast<int>(i);
      break;
    }
  return tr;
}

inline void write_trace_csv(const ExplorationTrace& tr, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("write_trace_csv: cannot open " + path);
  os << "# tau=" << tr.tau << " chi=" << tr.chi << " threshold=" << tr.threshold << "\n";
  os << "i,A_size,B_size\n";
  std::size_t b = 0;
  for (std::size_t i = 0; i < tr.a.size(); ++i) {
    b += tr.b_new[i].size();
    os << i << ',' << tr.a[i].size() << ',' << b << '\n';
  }
}

// ---------------------------------------------------------------------------
// Metric exploration along the long edges e(1)

/// One side (> lambda or < -lambda) of the metric exploration. Nodes are
/// numbered as in metric_node(): lattice vertices, then e(1) mesh points.
struct MetricExplorationTrace {
  int sign = 1;
  std::vector<std::vector<Vertex>> a;             // lattice points A_i
  std::vector<std::vector<std::size_t>> b_new;    // nodes added to B at step i
  std::vector<int> joined_i;                      // step a node entered I, -1 if never
  std::vector<int> joined_b;                      // step a node entered B, -1 if never

  std::vector<char> explored() const {
    std::vector<char> m(joined_i.size(), 0);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = joined_i[k] >= 0 || joined_b[k] >= 0;
    return m;
  }
};

struct MetricExploration {
  MetricExplorationTrace above, below;
  std::vector<Vertex> b0;  // lattice points of the inner ring with |value| <= lambda + eps
  int tau = -1;
  double threshold = 0.0;
  double epsilon = 0.0;
  std::size_t mesh_pairs = 0;
  std::size_t jump_violations = 0;  // adjacent mesh values differing by more than eps
  bool lambda_c_violated() const { return jump_violations > 0; }
};

namespace detail {

inline MetricExplorationTrace explore_side(const MetricGraphSpec& spec, const std::vector<double>& x, int sign, double lambda,
                                           double eps, const SubBox& inner) {
  const Box& box = spec.base;
  const int k_pts = spec.families[0].interior_points;
  MetricExplorationTrace tr;
  tr.sign = sign;
  tr.joined_i.assign(x.size(), -1);
  tr.joined_b.assign(x.size(), -1);
  auto high = [&](std::size_t node) { return sign * x[node] > lambda + eps; };
  std::vector<Vertex> a0;
  for (Vertex v : box.boundary_of(inner))
    if (high(v)) {
      a0.push_back(v);
      tr.joined_i[v] = 0;
    }
  tr.a.push_back(std::move(a0));
  tr.b_new.emplace_back();
  std::vector<std::size_t> path;
  for (int i = 0;; ++i) {
    const auto& ai = tr.a[static_cast<std::size_t>(i)];
    if (ai.empty()) break;
    auto in_i = [&](std::size_t node) { return tr.joined_i[node] >= 0 && tr.joined_i[node] <= i; };
    std::vector<Vertex> next;
    std::vector<std::size_t> closed;
    for (Vertex v : ai)
      for (int d = 0; d < 4; ++d) {
        const auto eid = box.edge_id(v, d);
        if (eid == kNone) continue;
        const auto e = static_cast<std::size_t>(eid);
        const Edge& ed = box.edges()[e];
        const Vertex u = ed.u == v ? ed.v : ed.u;
        if (box.in(inner, u)) continue;
        path.clear();
        if (ed.u == v)
          for (int k = 0; k < k_pts; ++k) path.push_back(metric_node(spec, e, k));
        else
          for (int k = k_pts - 1; k >= 0; --k) path.push_back(metric_node(spec, e, k));
        path.push_back(u);
        bool covered = in_i(v);
        for (std::size_t node : path) covered = covered && in_i(node);
        if (covered) continue;
        bool stopped = false;
        for (std::size_t node : path) {
          if (!high(node)) {
            if (tr.joined_b[node] < 0) {
              tr.joined_b[node] = i + 1;
              closed.push_back(node);
            }
            stopped = true;
            break;
          }
          if (tr.joined_i[node] < 0) tr.joined_i[node] = i + 1;
        }
        if (!stopped && tr.joined_i[u] == i + 1 && std::find(next.begin(), next.end(), u) == next.end()) next.push_back(u);
      }
    std::sort(next.begin(), next.end());
    std::sort(closed.begin(), closed.end());
    tr.a.push_back(std::move(next));
    tr.b_new.push_back(std::move(closed));
  }
  return tr;
}

}  // namespace detail

inline MetricExploration explore_metric(const MetricFieldSample& m, double lambda, double eps, double alpha, double chi = 0.6) {
  const MetricGraphSpec& spec = *m.spec;
  const Box& box = spec.base;
  if (!(lambda >= 0.0)) throw RangeError("explore_metric: lambda must be nonnegative");
  if (!(eps > 0.0)) throw RangeError("explore_metric: slack must be positive");
  const SubBox inner = box.scaled_box(alpha);
  const auto x = metric_nodes(m);
  MetricExploration res;
  res.epsilon = eps;
  res.threshold = thin_threshold(box.side(), chi);
  for (Vertex v : box.boundary_of(inner))
    if (std::abs(x[v]) <= lambda + eps) res.b0.push_back(v);
  res.above = detail::explore_side(spec, x, +1, lambda, eps, inner);
  res.below = detail::explore_side(spec, x, -1, lambda, eps, inner);
  const std::size_t steps = std::max(res.above.a.size(), res.below.a.size());
  for (std::size_t i = 0; i < steps; ++i) {
    std::size_t s = 0;
    if (i < res.above.a.size()) s += res.above.a[i].size();
    if (i < res.below.a.size()) s += res.below.a[i].size();
    if (static_cast<double>(s) <= res.threshold) {
      res.tau = static_cast<int>(i);
      break;
    }
  }
  if (res.tau < 0) res.tau = static_cast<int>(steps);
  const int k_pts = spec.families[0].interior_points;
  for (std::size_t e = 0; e < box.edges().size(); ++e) {
    double prev = x[box.edges()[e].u];
    for (int k = 0; k <= k_pts; ++k) {
      const double cur = k < k_pts ? x[metric_node(spec, e, k)] : x[box.edges()[e].v];
      ++res.mesh_pairs;
      if (std::abs(cur - prev) > eps) ++res.jump_violations;
      prev = cur;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// The observable X and its exact conditional statistics

/// The ring boundary of V_{(1+beta)N/2}.
inline std::vector<Vertex> observable_ring(const Box& box, double beta) {
  const SubBox b = box.scaled_box((1.0 + beta) / 2.0);
  if (!(b.side < box.side())) throw RangeError("observable: ring must sit strictly inside the box");
  auto ring = box.boundary_of(b);
  if (ring.empty()) throw RangeError("observable: empty ring");
  return ring;
}

inline double observable(const Box& box, std::span<const double> values, double beta) {
  const auto ring = observable_ring(box, beta);
  double s = 0.0;
  for (Vertex v : ring) s += values[v];
  return s / static_cast<double>(ring.size());
}

/// Var X = (1/4)|ring|^{-2} sum over ring pairs of G_{V_N}(u,v).
inline double observable_variance(const Box& box, double beta) {
  const auto ring = observable_ring(box, beta);
  const double r = static_cast<double>(ring.size());
  return 0.25 * SparseGreen(Domain(box)).pair_sum(ring) / (r * r);
}

/// Variance removed from X by killing the walk on V_{alpha N}.
inline double variance_gap(const Box& box, double alpha, double beta) {
  if (!(0.0 < alpha && alpha < beta && beta < 1.0)) throw RangeError("variance_gap: need 0 < alpha < beta < 1");
  const auto ring = observable_ring(box, beta);
  const double r = static_cast<double>(ring.size());
  const double full = SparseGreen(Domain(box)).pair_sum(ring);
  const auto killed = box.mask_of(box.scaled_box(alpha));
  const double cut = SparseGreen(Domain(box, killed)).pair_sum(ring);
  return 0.25 * (full - cut) / (r * r);
}

struct ConditionalStats {
  double mean = 0.0;
  double variance = 0.0;
  std::array<double, 4> split{};  // contribution of each label class to the mean
  std::vector<double> weights;    // harmonic-measure weight of each pinned vertex
};

/// Exact law of X given the values on S (and zero on the boundary). When
/// `labels` is given (one entry per vertex of S, in 0..3) the conditional
/// mean is also split into the four label classes.
inline ConditionalStats conditional_stats(const Box& box, const std::vector<Vertex>& s, std::span<const double> values, double beta,
                                          const std::vector<int>& labels = {}) {
  const auto ring = observable_ring(box, beta);
  std::vector<char> pinned(box.size(), 0);
  for (Vertex v : s) pinned[v] = 1;
  const auto field = lattice_field(Domain(box, pinned));
  std::vector<double> w(box.size(), 0.0);
  for (Vertex v : ring) w[v] += 1.0 / static_cast<double>(ring.size());
  ConditionalStats st;
  st.weights = field.pinned_weights(w);
  st.variance = field.conditional_variance(w);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Vertex v = s[k];
    const double contrib = st.weights[v] * values[v];
    st.mean += contrib;
    if (!labels.empty()) st.split[static_cast<std::size_t>(labels[k] & 3)] += contrib;
  }
  return st;
}

}  // namespace gfflab
