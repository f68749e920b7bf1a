#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "gfflab/errors.hpp"

namespace gfflab {

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

inline int l1(Point a, Point b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }
inline int linf(Point a, Point b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); }

using Vertex = std::size_t;
inline constexpr std::ptrdiff_t kNone = -1;

/// Neighbour directions, in the fixed order used by every BFS: N, E, S, W.
inline constexpr std::array<Point, 4> kSteps{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};

/// Concentric sub-box inside a Box, in the parent's index coordinates.
struct SubBox {
  int offset = 0;  // index of the first row/column
  int side = 0;
  bool contains(int col, int row) const {
    return col >= offset && col < offset + side && row >= offset && row < offset + side;
  }
  bool on_boundary(int col, int row) const {
    return contains(col, row) &&
           (col == offset || row == offset || col == offset + side - 1 || row == offset + side - 1);
  }
};

struct Edge {
  Vertex u = 0;
  Vertex v = 0;
};

/// The N x N box V_N. Vertices are numbered row-major (index = row*N + col);
/// this is also the lexicographic order used for loop rooting and
/// exploration. Centred at the origin for odd N and at (1/2,1/2) for even N.
class Box {
 public:
  explicit Box(int n) : n_(n) {
    if (n < 3) throw SizeError("Box: N must be at least 3");
    const std::size_t sz = size();
    boundary_flag_.assign(sz, 0);
    for (Vertex v = 0; v < sz; ++v) {
      const int c = col(v), r = row(v);
      if (c == 0 || r == 0 || c == n - 1 || r == n - 1) {
        boundary_flag_[v] = 1;
        boundary_.push_back(v);
      } else {
        interior_.push_back(v);
      }
    }
    edge_of_.assign(sz, {kNone, kNone, kNone, kNone});
    for (Vertex v = 0; v < sz; ++v) {
      for (int d : {1, 0}) {  // E then N, so edges come out in vertex order
        const auto w = neighbor(v, d);
        if (w == kNone) continue;
        const auto id = static_cast<std::ptrdiff_t>(edges_.size());
        edges_.push_back({v, static_cast<Vertex>(w)});
        edge_of_[v][static_cast<std::size_t>(d)] = id;
        edge_of_[static_cast<Vertex>(w)][static_cast<std::size_t>((d + 2) % 4)] = id;
      }
    }
  }

  int side() const { return n_; }
  std::size_t size() const { return static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_); }

  Vertex index(int col, int row) const { return static_cast<Vertex>(row) * static_cast<Vertex>(n_) + static_cast<Vertex>(col); }
  int col(Vertex v) const { return static_cast<int>(v % static_cast<Vertex>(n_)); }
  int row(Vertex v) const { return static_cast<int>(v / static_cast<Vertex>(n_)); }
  bool contains_index(int col, int row) const { return col >= 0 && row >= 0 && col < n_ && row < n_; }

  /// Offset between index coordinates and centred lattice coordinates.
  int origin() const { return (n_ - 1) / 2; }
  Point coord(Vertex v) const { return {col(v) - origin(), row(v) - origin()}; }
  bool contains(Point p) const { return contains_index(p.x + origin(), p.y + origin()); }
  Vertex vertex(Point p) const {
    if (!contains(p)) throw RangeError("Box::vertex: point outside the box");
    return index(p.x + origin(), p.y + origin());
  }

  bool on_boundary(Vertex v) const { return boundary_flag_[v] != 0; }
  const std::vector<Vertex>& boundary() const { return boundary_; }
  const std::vector<Vertex>& interior() const { return interior_; }

  /// Neighbour in direction d (0..3 = N,E,S,W) or kNone outside the box.
  std::ptrdiff_t neighbor(Vertex v, int d) const {
    const int c = col(v) + kSteps[static_cast<std::size_t>(d)].x;
    const int r = row(v) + kSteps[static_cast<std::size_t>(d)].y;
    if (!contains_index(c, r)) return kNone;
    return static_cast<std::ptrdiff_t>(index(c, r));
  }
  std::array<std::ptrdiff_t, 4> neighbors(Vertex v) const {
    return {neighbor(v, 0), neighbor(v, 1), neighbor(v, 2), neighbor(v, 3)};
  }
  /// l-infinity neighbours (the *-adjacency of closed contours).
  std::vector<Vertex> star_neighbors(Vertex v) const {
    std::vector<Vertex> out;
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const int c = col(v) + dc, r = row(v) + dr;
        if (contains_index(c, r)) out.push_back(index(c, r));
      }
    return out;
  }

  const std::vector<Edge>& edges() const { return edges_; }
  /// Id of the lattice edge leaving v in direction d, or kNone.
  std::ptrdiff_t edge_id(Vertex v, int d) const { return edge_of_[v][static_cast<std::size_t>(d)]; }

  /// V_x = V_floor(x), concentric with matching centre convention.
  SubBox inner_box(double x) const {
    if (!(x >= 1.0 && x <= static_cast<double>(n_))) throw RangeError("inner_box: x outside [1, N]");
    const int m = static_cast<int>(std::floor(x));
    return {origin() - (m - 1) / 2, m};
  }
  /// V_{aN}: the centred sub-box whose free extent is a(N-1), so the side is
  /// floor(a(N-1)) + 1. Keeps the shape fixed as N grows.
  SubBox scaled_box(double a) const {
    if (!(a > 0.0 && a <= 1.0)) throw RangeError("scaled_box: a outside (0, 1]");
    return inner_box(std::floor(a * (n_ - 1) + 1e-9) + 1.0);
  }
  std::vector<Vertex> vertices_of(const SubBox& b) const {
    std::vector<Vertex> out;
    for (int r = b.offset; r < b.offset + b.side; ++r)
      for (int c = b.offset; c < b.offset + b.side; ++c) out.push_back(index(c, r));
    return out;
  }
  /// The vertices of the sub-box with a neighbour outside it.
  std::vector<Vertex> boundary_of(const SubBox& b) const {
    std::vector<Vertex> out;
    for (Vertex v : vertices_of(b))
      if (b.on_boundary(col(v), row(v))) out.push_back(v);
    return out;
  }
  std::vector<char> mask_of(const SubBox& b) const {
    std::vector<char> m(size(), 0);
    for (Vertex v : vertices_of(b)) m[v] = 1;
    return m;
  }
  bool in(const SubBox& b, Vertex v) const { return b.contains(col(v), row(v)); }

 private:
  int n_;
  std::vector<char> boundary_flag_;
  std::vector<Vertex> boundary_;
  std::vector<Vertex> interior_;
  std::vector<Edge> edges_;
  std::vector<std::array<std::ptrdiff_t, 4>> edge_of_;
};

/// A box together with a killed set containing its boundary. The random walk
/// is killed on entering a killed vertex; everything else is "free".
class Domain {
 public:
  explicit Domain(const Box& box) : Domain(box, boundary_mask(box)) {}

  Domain(const Box& box, std::vector<char> killed) : box_(box), killed_(std::move(killed)) {
    if (killed_.size() != box_.size()) throw RangeError("Domain: killed mask has wrong size");
    for (Vertex v : box_.boundary()) killed_[v] = 1;
    local_.assign(box_.size(), kNone);
    for (Vertex v = 0; v < box_.size(); ++v)
      if (!killed_[v]) {
        local_[v] = static_cast<std::ptrdiff_t>(free_.size());
        free_.push_back(v);
      }
  }

  const Box& box() const { return box_; }
  bool killed(Vertex v) const { return killed_[v] != 0; }
  const std::vector<char>& killed_mask() const { return killed_; }
  /// Free vertices in increasing (lexicographic) order.
  const std::vector<Vertex>& free_vertices() const { return free_; }
  std::size_t free_count() const { return free_.size(); }
  /// Position of v among the free vertices, or kNone if killed.
  std::ptrdiff_t local(Vertex v) const { return local_[v]; }

  /// Lattice edges with both endpoints free.
  std::vector<std::size_t> free_edges() const {
    std::vector<std::size_t> out;
    const auto& e = box_.edges();
    for (std::size_t i = 0; i < e.size(); ++i)
      if (!killed_[e[i].u] && !killed_[e[i].v]) out.push_back(i);
    return out;
  }

  static std::vector<char> boundary_mask(const Box& box) {
    std::vector<char> m(box.size(), 0);
    for (Vertex v : box.boundary()) m[v] = 1;
    return m;
  }

 private:
  Box box_;
  std::vector<char> killed_;
  std::vector<Vertex> free_;
  std::vector<std::ptrdiff_t> local_;
};

enum class EdgeFamilyKind { TwoEdge, SingleEdge };

/// One family of metric edges laid over the lattice edges.
struct EdgeFamily {
  double conductance = 1.0;
  double length = 0.5;
  int interior_points = 0;  // mesh points strictly inside each edge
  double spacing() const { return length / static_cast<double>(interior_points + 1); }
};

/// Metric-graph layout over a box. The two-edge variant places a long,
/// weak edge e(1) and a short, strong edge e(2) in parallel on every lattice
/// edge; the single-edge variant uses one edge of length 1/2.
struct MetricGraphSpec {
  Box base;
  EdgeFamilyKind kind = EdgeFamilyKind::TwoEdge;
  double mesh_density = 8.0;
  std::vector<EdgeFamily> families;

  std::size_t edge_count() const { return base.edges().size(); }
};

inline int mesh_points_for(double length, double m) {
  return static_cast<int>(std::ceil(length * m - 1e-9));
}

inline MetricGraphSpec build_metric_graph(const Box& box, EdgeFamilyKind kind, double m = 8.0) {
  if (!(m >= 2.0)) throw RangeError("build_metric_graph: mesh density below 2 points per unit length");
  MetricGraphSpec spec{box, kind, m, {}};
  if (kind == EdgeFamilyKind::TwoEdge) {
    spec.families.push_back({1.0 / 8.0, 4.0, mesh_points_for(4.0, m)});
    spec.families.push_back({7.0 / 8.0, 4.0 / 7.0, mesh_points_for(4.0 / 7.0, m)});
  } else {
    spec.families.push_back({1.0, 0.5, mesh_points_for(0.5, m)});
  }
  return spec;
}

}  // namespace gfflab
