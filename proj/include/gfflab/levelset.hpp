#pragma once

#include <deque>
#include <limits>
#include <span>
#include <vector>

#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"

namespace gfflab {

inline constexpr int kInfiniteDistance = std::numeric_limits<int>::max();

/// H_{N,lambda}: vertices with value at most lambda are open.
struct LevelSet {
  const Box* box = nullptr;
  double lambda = 0.0;
  std::vector<char> open;

  bool is_open(Vertex v) const { return open[v] != 0; }
  std::size_t count() const {
    std::size_t c = 0;
    for (char o : open) c += o != 0;
    return c;
  }
};

inline LevelSet level_set(const Box& box, std::span<const double> values, double lambda) {
  LevelSet ls{&box, lambda, std::vector<char>(box.size())};
  for (Vertex v = 0; v < box.size(); ++v) ls.open[v] = values[v] <= lambda ? 1 : 0;
  return ls;
}

/// Multi-source BFS over open vertices; -1 marks unreachable vertices.
/// Neighbours are scanned N, E, S, W.
inline std::vector<int> bfs_distances(const Box& box, const std::vector<char>& open, const std::vector<Vertex>& sources) {
  std::vector<int> dist(box.size(), -1);
  std::deque<Vertex> q;
  for (Vertex s : sources)
    if (open[s] && dist[s] < 0) {
      dist[s] = 0;
      q.push_back(s);
    }
  while (!q.empty()) {
    const Vertex v = q.front();
    q.pop_front();
    for (int d = 0; d < 4; ++d) {
      const auto w = box.neighbor(v, d);
      if (w == kNone) continue;
      const auto wu = static_cast<Vertex>(w);
      if (open[wu] && dist[wu] < 0) {
        dist[wu] = dist[v] + 1;
        q.push_back(wu);
      }
    }
  }
  return dist;
}

/// Graph distance in H between vertex sets A and B, kInfiniteDistance if none.
inline int chemical_distance(const LevelSet& ls, const std::vector<Vertex>& a, const std::vector<Vertex>& b) {
  const auto dist = bfs_distances(*ls.box, ls.open, a);
  int best = kInfiniteDistance;
  for (Vertex v : b)
    if (dist[v] >= 0) best = std::min(best, dist[v]);
  return best;
}

/// D(boundary of V_{alpha N}, boundary of V_{beta N}) in the level set.
inline int annulus_distance(const LevelSet& ls, double alpha, double beta) {
  const Box& box = *ls.box;
  return chemical_distance(ls, box.boundary_of(box.scaled_box(alpha)), box.boundary_of(box.scaled_box(beta)));
}

struct ContourResult {
  bool found = false;
  std::vector<Vertex> contour;   // C*, closed vertices
  std::vector<char> enclosed;    // C-bar*, including C* itself
};

/// The minimal lambda-closed *-contour in V_{beta N} surrounding V_{alpha N}.
/// Built from T = V_{alpha N} + open clusters reached from it + their closed
/// outer neighbours; the enclosed region is T with its holes filled and the
/// contour is the part of that region facing the outside (or lying on the
/// boundary of V_{beta N}).
inline ContourResult minimal_closed_contour(const Box& box, std::span<const double> values, double lambda, double alpha,
                                            double beta) {
  if (!(0.0 < alpha && alpha < beta && beta < 1.0)) throw RangeError("minimal_closed_contour: need 0 < alpha < beta < 1");
  const SubBox inner = box.scaled_box(alpha), outer = box.scaled_box(beta);
  if (outer.side - inner.side < 2) throw RangeError("minimal_closed_contour: annulus too thin");
  auto open = [&](Vertex v) { return values[v] <= lambda; };
  auto in_outer = [&](Vertex v) { return box.in(outer, v); };

  std::vector<char> t(box.size(), 0);
  std::deque<Vertex> q;
  for (Vertex v : box.vertices_of(inner)) {
    t[v] = 1;
    if (open(v)) q.push_back(v);
  }
  // Grow the open clusters of V_{alpha N} inside V_{beta N}; closed
  // neighbours are added to T but not expanded.
  std::vector<char> visited(box.size(), 0);
  for (Vertex v : q) visited[v] = 1;
  ContourResult res;
  while (!q.empty()) {
    const Vertex v = q.front();
    q.pop_front();
    if (outer.on_boundary(box.col(v), box.row(v))) return res;  // open crossing
    for (int d = 0; d < 4; ++d) {
      const auto w = box.neighbor(v, d);
      if (w == kNone) continue;
      const auto wu = static_cast<Vertex>(w);
      if (!in_outer(wu) || visited[wu]) continue;
      visited[wu] = 1;
      t[wu] = 1;
      if (open(wu)) q.push_back(wu);
    }
  }
  // Exterior: vertices of V_{beta N} outside T connected to its boundary.
  std::vector<char> exterior(box.size(), 0);
  for (Vertex v : box.boundary_of(outer))
    if (!t[v]) {
      exterior[v] = 1;
      q.push_back(v);
    }
  while (!q.empty()) {
    const Vertex v = q.front();
    q.pop_front();
    for (int d = 0; d < 4; ++d) {
      const auto w = box.neighbor(v, d);
      if (w == kNone) continue;
      const auto wu = static_cast<Vertex>(w);
      if (in_outer(wu) && !t[wu] && !exterior[wu]) {
        exterior[wu] = 1;
        q.push_back(wu);
      }
    }
  }
  res.found = true;
  res.enclosed.assign(box.size(), 0);
  for (Vertex v : box.vertices_of(outer))
    if (!exterior[v]) res.enclosed[v] = 1;
  for (Vertex v : box.vertices_of(outer)) {
    if (!res.enclosed[v]) continue;
    bool facing = outer.on_boundary(box.col(v), box.row(v));
    for (int d = 0; d < 4 && !facing; ++d) {
      const auto w = box.neighbor(v, d);
      facing = w != kNone && exterior[static_cast<Vertex>(w)];
    }
    if (facing) res.contour.push_back(v);
  }
  return res;
}

/// True iff some open path joins the boundaries of V_{alpha N} and V_{beta N}.
inline bool crosses(const LevelSet& ls, double alpha, double beta) {
  return annulus_distance(ls, alpha, beta) != kInfiniteDistance;
}

}  // namespace gfflab
