#include <gtest/gtest.h>

#include <deque>

#include "gfflab/gfield.hpp"
#include "gfflab/levelset.hpp"

using namespace gfflab;

namespace {

// Bellman-Ford style relaxation over open vertices, no queue.
std::vector<int> relax_distances(const Box& box, const std::vector<char>& open, const std::vector<Vertex>& src) {
  const int inf = 1 << 29;
  std::vector<int> d(box.size(), inf);
  for (Vertex s : src)
    if (open[s]) d[s] = 0;
  for (bool changed = true; changed;) {
    changed = false;
    for (Vertex v = 0; v < box.size(); ++v) {
      if (!open[v] || d[v] == inf) continue;
      for (int k = 0; k < 4; ++k) {
        const auto w = box.neighbor(v, k);
        if (w == kNone || !open[static_cast<Vertex>(w)]) continue;
        if (d[v] + 1 < d[static_cast<Vertex>(w)]) {
          d[static_cast<Vertex>(w)] = d[v] + 1;
          changed = true;
        }
      }
    }
  }
  return d;
}

// Can an open-or-closed lattice path avoid `blocked` and join the two rings?
bool path_avoiding(const Box& box, const SubBox& inner, const SubBox& outer, const std::vector<char>& blocked) {
  std::vector<char> seen(box.size(), 0);
  std::deque<Vertex> q;
  for (Vertex v : box.vertices_of(inner))
    if (!blocked[v]) {
      seen[v] = 1;
      q.push_back(v);
    }
  while (!q.empty()) {
    const Vertex v = q.front();
    q.pop_front();
    if (outer.on_boundary(box.col(v), box.row(v))) return true;
    for (int k = 0; k < 4; ++k) {
      const auto w = box.neighbor(v, k);
      if (w == kNone) continue;
      const auto wu = static_cast<Vertex>(w);
      if (seen[wu] || blocked[wu] || !box.in(outer, wu)) continue;
      seen[wu] = 1;
      q.push_back(wu);
    }
  }
  return false;
}

}  // namespace

TEST(LevelSet, ExtremesAndNesting) {
  const Box b(12);
  Rng rng(1);
  const auto f = sample_dgff(b, rng);
  const double mx = *std::max_element(f.values.begin(), f.values.end());
  const double mn = *std::min_element(f.values.begin(), f.values.end());
  EXPECT_EQ(level_set(b, f.values, mx).count(), b.size());
  const auto low = level_set(b, f.values, std::min(mn, 0.0) - 1e-9);
  EXPECT_EQ(low.count(), 0u);
  const auto zero = level_set(b, f.values, 0.0);
  for (Vertex v : b.boundary()) EXPECT_TRUE(zero.is_open(v));
  const auto a = level_set(b, f.values, -1), c = level_set(b, f.values, 0), d = level_set(b, f.values, 1);
  for (Vertex v = 0; v < b.size(); ++v) {
    if (a.is_open(v)) EXPECT_TRUE(c.is_open(v));
    if (c.is_open(v)) EXPECT_TRUE(d.is_open(v));
  }
}

TEST(ChemicalDistance, AllOpenIsL1) {
  const Box b(10);
  const std::vector<double> zeros(b.size(), 0.0);
  const auto ls = level_set(b, zeros, 0.0);
  const Vertex u = b.index(2, 3), v = b.index(8, 7);
  EXPECT_EQ(chemical_distance(ls, {u}, {v}), l1(b.coord(u), b.coord(v)));
}

TEST(ChemicalDistance, ClosedEndpointIsInfinite) {
  const Box b(6);
  std::vector<double> vals(b.size(), 0.0);
  const Vertex v = b.index(3, 3);
  vals[v] = 5.0;
  const auto ls = level_set(b, vals, 1.0);
  EXPECT_EQ(chemical_distance(ls, {b.index(1, 1)}, {v}), kInfiniteDistance);
}

TEST(ChemicalDistance, BfsMatchesRelaxationOracle) {
  const Box b(20);
  Rng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    const auto f = sample_dgff(b, rng);
    const auto ls = level_set(b, f.values, 0.1);
    const std::vector<Vertex> src{b.index(10, 10), b.index(4, 12)};
    const auto bfs = bfs_distances(b, ls.open, src);
    const auto ref = relax_distances(b, ls.open, src);
    for (Vertex v = 0; v < b.size(); ++v) EXPECT_EQ(bfs[v] < 0 ? (1 << 29) : bfs[v], ref[v]);
  }
}

TEST(Contour, AllOpenHasNoContour) {
  const Box b(32);
  const std::vector<double> vals(b.size(), -1.0);
  EXPECT_FALSE(minimal_closed_contour(b, vals, 0.0, 0.25, 0.75).found);
}

TEST(Contour, ClosedAnnulusGivesInnermostRing) {
  const Box b(32);
  const auto inner = b.scaled_box(0.25);
  std::vector<double> vals(b.size(), 10.0);
  for (Vertex v : b.vertices_of(inner)) vals[v] = -10.0;
  const auto c = minimal_closed_contour(b, vals, 0.0, 0.25, 0.75);
  ASSERT_TRUE(c.found);
  std::vector<Vertex> ring;
  for (Vertex v = 0; v < b.size(); ++v) {
    if (b.in(inner, v)) continue;
    bool touches = false;
    for (int k = 0; k < 4; ++k) {
      const auto w = b.neighbor(v, k);
      touches = touches || (w != kNone && b.in(inner, static_cast<Vertex>(w)));
    }
    if (touches) ring.push_back(v);
  }
  auto got = c.contour;
  std::sort(got.begin(), got.end());
  EXPECT_EQ(got, ring);
}

TEST(Contour, PropertiesAndDualityOnRandomFields) {
  const Box b(32);
  const SparseDgffSampler s{Domain(b)};
  const auto inner = b.scaled_box(0.25), outer = b.scaled_box(0.75);
  Rng rng(7);
  int found = 0;
  for (int rep = 0; rep < 10000; ++rep) {
    const auto f = s.sample(rng);
    const double lambda = 0.0;
    const auto c = minimal_closed_contour(b, f.values, lambda, 0.25, 0.75);
    const bool crossing = crosses(level_set(b, f.values, lambda), 0.25, 0.75);
    ASSERT_EQ(c.found, !crossing) << "replica " << rep;
    if (!c.found) continue;
    ++found;
    std::vector<char> mask(b.size(), 0);
    for (Vertex v : c.contour) {
      ASSERT_GT(f.values[v], lambda);
      mask[v] = 1;
    }
    ASSERT_FALSE(path_avoiding(b, inner, outer, mask));
    for (Vertex v : c.contour) ASSERT_TRUE(c.enclosed[v]);
  }
  EXPECT_GT(found, 0);
}

TEST(Contour, ThinAnnulusRejected) {
  const Box b(8);
  const std::vector<double> vals(b.size(), 0.0);
  EXPECT_THROW(minimal_closed_contour(b, vals, 0.0, 0.4, 0.5), RangeError);
  EXPECT_THROW(minimal_closed_contour(b, vals, 0.0, 0.6, 0.5), RangeError);
}
