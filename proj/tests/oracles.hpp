#pragma once
// Test-side oracles shared by the unit tests and the acceptance binary.
// Nothing here calls into the code it checks beyond reading its output.

#include <deque>
#include <string>
#include <vector>

#include "gfflab/explore.hpp"
#include "gfflab/gfield.hpp"

namespace oracle {

using gfflab::Box;
using gfflab::Vertex;

/// Empty string when the trace satisfies every per-step invariant, else the first problem found.
inline std::string check_trace(const Box& box, const std::vector<double>& values, double lambda, double alpha,
                               const gfflab::ExplorationTrace& tr) {
  const auto inner = box.scaled_box(alpha);
  const int last = tr.last_step();
  std::vector<int> a_step(box.size(), -1), b_step(box.size(), -1);
  for (int i = 0; i <= last; ++i) {
    for (Vertex v : tr.a[static_cast<std::size_t>(i)]) {
      if (a_step[v] >= 0 || b_step[v] >= 0) return "A sets overlap at step " + std::to_string(i);
      if (!(values[v] <= lambda)) return "closed vertex in A";
      a_step[v] = i;
    }
    for (Vertex v : tr.b_new[static_cast<std::size_t>(i)]) {
      if (a_step[v] >= 0 || b_step[v] >= 0) return "B overlaps A or B at step " + std::to_string(i);
      if (!(values[v] > lambda)) return "open vertex in B";
      b_step[v] = i;
    }
  }
  for (int i = 1; i <= last; ++i) {
    for (Vertex v : tr.a[static_cast<std::size_t>(i)]) {
      bool linked = false;
      for (int d = 0; d < 4; ++d) {
        const auto w = box.neighbor(v, d);
        linked = linked || (w != gfflab::kNone && a_step[static_cast<Vertex>(w)] == i - 1);
      }
      if (!linked) return "A_" + std::to_string(i) + " vertex not adjacent to A_" + std::to_string(i - 1);
    }
  }
  // I_i: everything explored by step i. Its inner vertex boundary must sit in A_i or B_i.
  for (int i = 0; i <= last; ++i) {
    const auto ex = tr.explored(i);
    for (Vertex v = 0; v < box.size(); ++v) {
      if (!ex[v]) continue;
      bool exposed = false;
      for (int d = 0; d < 4; ++d) {
        const auto w = box.neighbor(v, d);
        exposed = exposed || (w != gfflab::kNone && !ex[static_cast<Vertex>(w)]);
      }
      if (exposed && a_step[v] != i && !(b_step[v] >= 0 && b_step[v] <= i))
        return "boundary of I_" + std::to_string(i) + " outside A_i and B_i";
    }
    // I_i connected through lattice edges.
    std::vector<char> seen(box.size(), 0);
    std::deque<Vertex> q;
    const Vertex root = box.vertices_of(inner).front();
    seen[root] = 1;
    q.push_back(root);
    std::size_t reached = 1, total = 0;
    for (Vertex v = 0; v < box.size(); ++v) total += ex[v] != 0;
    while (!q.empty()) {
      const Vertex v = q.front();
      q.pop_front();
      for (int d = 0; d < 4; ++d) {
        const auto w = box.neighbor(v, d);
        if (w == gfflab::kNone) continue;
        const auto wu = static_cast<Vertex>(w);
        if (ex[wu] && !seen[wu]) {
          seen[wu] = 1;
          ++reached;
          q.push_back(wu);
        }
      }
    }
    if (reached != total) return "I_" + std::to_string(i) + " disconnected";
  }
  int tau = -1;
  for (int i = 0; i <= last; ++i)
    if (static_cast<double>(tr.a[static_cast<std::size_t>(i)].size()) <= gfflab::thin_threshold(box.side(), tr.chi)) {
      tau = i;
      break;
    }
  if (tau != tr.tau) return "tau mismatch";
  return "";
}

/// Open-cluster distance from the open part of V_{alpha N}; -1 when unreachable.
inline std::vector<int> shell_distances(const Box& box, const std::vector<double>& values, double lambda, double alpha) {
  const auto inner = box.scaled_box(alpha);
  std::vector<int> dist(box.size(), -1);
  std::deque<Vertex> q;
  for (Vertex v : box.vertices_of(inner))
    if (values[v] <= lambda) {
      dist[v] = 0;
      q.push_back(v);
    }
  while (!q.empty()) {
    const Vertex v = q.front();
    q.pop_front();
    for (int d = 0; d < 4; ++d) {
      const auto w = box.neighbor(v, d);
      if (w == gfflab::kNone) continue;
      const auto wu = static_cast<Vertex>(w);
      if (dist[wu] >= 0 || box.in(inner, wu) || !(values[wu] <= lambda)) continue;
      dist[wu] = dist[v] + 1;
      q.push_back(wu);
    }
  }
  return dist;
}

/// Empty string when A_i = {v outside V_{alpha N} : shell distance i} for every recorded step.
inline std::string check_bfs_equivalence(const Box& box, const std::vector<double>& values, double lambda, double alpha,
                                         const gfflab::ExplorationTrace& tr) {
  const auto dist = shell_distances(box, values, lambda, alpha);
  const auto inner = box.scaled_box(alpha);
  const int last = tr.last_step();
  int max_dist = 0;
  for (int i = 1; i <= last; ++i) {
    std::vector<Vertex> shell;
    for (Vertex v = 0; v < box.size(); ++v)
      if (dist[v] == i && !box.in(inner, v)) shell.push_back(v);
    if (shell != tr.a[static_cast<std::size_t>(i)]) return "A_" + std::to_string(i) + " differs from BFS shell";
  }
  for (int d : dist) max_dist = std::max(max_dist, d);
  if (!tr.reached_boundary && max_dist > last) return "exploration stopped before the BFS did";
  return "";
}

inline bool same_trace(const gfflab::ExplorationTrace& a, const gfflab::ExplorationTrace& b) {
  return a.a == b.a && a.b_new == b.b_new && a.joined == b.joined && a.tau == b.tau && a.reached_boundary == b.reached_boundary;
}

inline bool same_trace(const gfflab::MetricExploration& a, const gfflab::MetricExploration& b) {
  auto eq = [](const gfflab::MetricExplorationTrace& x, const gfflab::MetricExplorationTrace& y) {
    return x.a == y.a && x.b_new == y.b_new && x.joined_i == y.joined_i && x.joined_b == y.joined_b;
  };
  return eq(a.above, b.above) && eq(a.below, b.below) && a.tau == b.tau && a.b0 == b.b0;
}

/// Resample everything off the explored set and rerun the discrete exploration.
inline bool discrete_measurable(const Box& box, const std::vector<double>& values, double lambda, double alpha,
                                const gfflab::ExplorationTrace& tr, gfflab::Rng& rng) {
  const auto mask = tr.explored(tr.last_step());
  const gfflab::ConditionalDgffSampler cond(box, mask);
  const auto fresh = cond.sample(values, rng);
  return same_trace(tr, gfflab::explore_discrete(box, fresh.values, lambda, alpha, tr.chi));
}

/// Same for the metric exploration: pin explored nodes and the inner ring.
inline bool metric_measurable(const gfflab::MetricFieldSample& m, double lambda, double eps, double alpha,
                              const gfflab::MetricExploration& ex, gfflab::Rng& rng) {
  const auto& spec = m.spec;
  const Box& box = spec->base;
  auto mask = ex.above.explored();
  const auto below = ex.below.explored();
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = mask[k] || below[k];
  for (Vertex v : box.boundary_of(box.scaled_box(alpha))) mask[v] = 1;
  const auto field = gfflab::metric_field(*spec, mask);
  const auto x = gfflab::metric_nodes(m);
  const auto y = field.sample(x, rng);
  const auto m2 = gfflab::metric_from_nodes(spec, y, rng);
  return same_trace(ex, gfflab::explore_metric(m2, lambda, eps, alpha));
}

}  // namespace oracle
