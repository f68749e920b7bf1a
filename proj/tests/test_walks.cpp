#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gfflab/walks.hpp"

using namespace gfflab;

namespace {

std::vector<Point> segment(int len) {
  std::vector<Point> a;
  for (int i = 0; i <= len; ++i) a.push_back({i, 0});
  return a;
}

}  // namespace

TEST(HarmonicMeasure, N3CentreExitsUniformly) {
  const Box b(3);
  const auto rows = harmonic_measure_exact(b, b.boundary(), {b.vertex({0, 0})});
  ASSERT_EQ(rows.size(), 1u);
  for (std::size_t k = 0; k < rows[0].target.size(); ++k) {
    const Point p = b.coord(rows[0].target[k]);
    const bool corner = std::abs(p.x) == 1 && std::abs(p.y) == 1;
    EXPECT_NEAR(rows[0].mass[k], corner ? 0.0 : 0.25, 1e-12);
  }
}

TEST(HarmonicMeasure, StartInTargetIsDelta) {
  const Box b(7);
  const auto ring = b.boundary_of(b.inner_box(3));
  const auto rows = harmonic_measure_exact(b, ring, {ring[2]});
  EXPECT_NEAR(rows[0].mass_of({ring[2]}), 1.0, 1e-12);
}

TEST(HarmonicMeasure, SumsToOneAndAdditive) {
  const Box b(9);
  std::vector<Vertex> a = b.boundary_of(b.inner_box(3));
  for (Vertex v : b.boundary()) a.push_back(v);
  const Vertex start = b.boundary_of(b.inner_box(6))[0];
  const auto row = harmonic_measure_exact(b, a, {start})[0];
  double s = 0.0;
  for (double m : row.mass) s += m;
  EXPECT_NEAR(s, 1.0, 1e-10);
  const std::vector<Vertex> first(a.begin(), a.begin() + 5), rest(a.begin() + 5, a.end());
  EXPECT_NEAR(row.mass_of(first) + row.mass_of(rest), 1.0, 1e-10);
}

TEST(HarmonicMeasure, MonteCarloAgreesWithExact) {
  const Box b(9);
  std::vector<Vertex> a = b.boundary_of(b.inner_box(3));
  for (Vertex v : b.boundary()) a.push_back(v);
  const Vertex start = b.boundary_of(b.inner_box(6))[0];
  const auto exact = harmonic_measure_exact(b, a, {start})[0];
  Rng rng(1);
  const std::size_t walks = 40000;
  const auto mc = harmonic_measure_mc(b, start, a, rng, walks);
  ASSERT_EQ(mc.target, exact.target);
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double p = exact.mass[k];
    const double sd = std::sqrt(std::max(p * (1 - p), 1e-12) / walks);
    EXPECT_LT(std::abs(mc.mass[k] - p), 4.0 * sd + 1e-12) << k;
  }
}

TEST(HarmonicMeasure, SingleWalkIsDelta) {
  const Box b(5);
  Rng rng(2);
  const auto row = harmonic_measure_mc(b, b.vertex({0, 0}), b.boundary(), rng, 1);
  int nonzero = 0;
  for (double m : row.mass) nonzero += m > 0;
  EXPECT_EQ(nonzero, 1);
}

TEST(HarmonicMeasure, N3NeighbourFrequencies) {
  const Box b(3);
  Rng rng(3);
  const auto row = harmonic_measure_mc(b, b.vertex({0, 0}), b.boundary(), rng, 100000);
  for (std::size_t k = 0; k < row.target.size(); ++k) {
    const Point p = b.coord(row.target[k]);
    if (std::abs(p.x) + std::abs(p.y) == 1) {
      EXPECT_GE(row.mass[k], 0.24);
      EXPECT_LE(row.mass[k], 0.26);
    }
  }
}

TEST(PotentialKernel, NormalisationAndKnownValues) {
  const PotentialKernel pk(12);
  EXPECT_EQ(pk(0, 0), 0.0);
  EXPECT_NEAR(pk(1, 0), 1.0, 1e-9);
  EXPECT_NEAR(pk(1, 1), 4.0 / std::numbers::pi, 1e-6);
  EXPECT_NEAR(pk(2, 0), 4.0 - 8.0 / std::numbers::pi, 1e-6);
  EXPECT_NEAR(pk(3, -2), pk(2, 3), 1e-12);
}

TEST(PotentialKernel, HarmonicOffTheOrigin) {
  const PotentialKernel pk(10);
  for (int x = -8; x <= 8; ++x)
    for (int y = -8; y <= 8; ++y) {
      double s = 0.0;
      for (auto st : kSteps) s += 0.25 * pk(x + st.x, y + st.y);
      EXPECT_NEAR(s - pk(x, y), (x == 0 && y == 0) ? 1.0 : 0.0, 1e-9);
    }
}

TEST(PotentialKernel, FarFieldAsymptotics) {
  const PotentialKernel pk(40);
  EXPECT_NEAR(pk(30, 17), PotentialKernel::asymptotic({30, 17}), 1e-6);
}

TEST(HmInfinity, TrivialSets) {
  Rng rng(4);
  EXPECT_NEAR(hm_infinity({{0, 0}}, rng).mass[0], 1.0, 1e-15);
  const auto two = hm_infinity({{0, 0}, {1, 0}}, rng);
  EXPECT_NEAR(two.mass[0], 0.5, 0.02);
  EXPECT_NEAR(two.mass[1], 0.5, 0.02);
  EXPECT_THROW(hm_infinity({{0, 0}, {3, 0}}, rng), RangeError);
}

TEST(HmInfinity, SegmentEndpointsHeavier) {
  Rng rng(5);
  const auto a = segment(16);
  HmInfinityOptions opt;
  opt.walks = 100000;
  const auto est = hm_infinity(a, rng, opt);
  EXPECT_GT(est.mass_at({0, 0}), est.mass_at({8, 0}));
  EXPECT_GT(est.mass_at({16, 0}), est.mass_at({8, 0}));
}

TEST(HmInfinity, MonteCarloAgreesWithKernelSolve) {
  const std::vector<Point> a{{0, 0}, {1, 0}, {2, 0}, {2, 1}, {2, 2}};
  const PotentialKernel pk(8);
  const auto exact = hm_infinity_exact(a, pk);
  double s = 0.0;
  for (double m : exact) s += m;
  EXPECT_NEAR(s, 1.0, 1e-12);
  Rng rng(6);
  HmInfinityOptions opt;
  opt.walks = 100000;
  const auto est = hm_infinity(a, rng, opt);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(est.mass[k], exact[k], 0.01) << k;
}

TEST(Makarov, SquareBoundaryHasNoHeavyPoints) {
  std::vector<Point> ring;
  for (int i = -6; i <= 6; ++i) {
    ring.push_back({i, -6});
    ring.push_back({i, 6});
  }
  for (int i = -5; i <= 5; ++i) {
    ring.push_back({-6, i});
    ring.push_back({6, i});
  }
  Rng rng(7);
  const auto r = makarov_statistic(ring, 0.6, rng, 4000);
  EXPECT_GT(r.threshold, 1.0 / ring.size());
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_TRUE(r.heavy.empty());
}

TEST(Makarov, SegmentThresholdAndEndpoints) {
  Rng rng(8);
  const auto r = makarov_statistic(segment(8), 0.6, rng, 20000);
  EXPECT_EQ(r.diameter, 8);
  EXPECT_NEAR(r.threshold, std::exp(std::pow(std::log(8.0), 0.6)) / 8.0, 1e-12);
  EXPECT_NEAR(r.threshold, 0.590, 1e-3);
  // Endpoint mass is well below the threshold at this size, so nothing is heavy.
  EXPECT_LT(r.max_point_mass, r.threshold);
  EXPECT_EQ(r.statistic, 0.0);
}

TEST(Makarov, ValidatesInput) {
  Rng rng(9);
  EXPECT_THROW(makarov_statistic(segment(8), 0.5, rng), RangeError);
  EXPECT_THROW(makarov_statistic(segment(5), 0.6, rng), RangeError);
}

TEST(Geometry, DiameterAndConnectivity) {
  EXPECT_EQ(l1_diameter(segment(5)), 5);
  EXPECT_TRUE(nn_connected(segment(5)));
  EXPECT_FALSE(nn_connected({{0, 0}, {1, 1}}));
}

TEST(HarmonicProfile, IdentityAtBothEndpoints) {
  const PotentialKernel pk(40);
  for (int n : {9, 17, 33}) {
    const Box b(n);
    const Vertex v = b.vertex({0, 0}), vp = b.vertex({1, 0});
    for (double t : {0.25, 0.5, 0.9}) {
      const auto h = build_harmonic_profile(b, v, vp, t, 10.0, 100.0, pk);
      EXPECT_LT(h.residual_v, 1e-9);
      EXPECT_LT(h.residual_vp, 1e-9);
    }
  }
}

TEST(HarmonicProfile, MidpointSymmetryAndPositivity) {
  const PotentialKernel pk(20);
  const Box b(17);
  const Vertex v = b.vertex({0, 0}), vp = b.vertex({0, 1});
  const auto h = build_harmonic_profile(b, v, vp, 0.5, 10.0, 100.0, pk);
  EXPECT_NEAR(h.f[v], h.f[vp], 1e-12);
  for (double x : h.f) EXPECT_GT(x, 0.0);
  // w-value at t=1/2 by hand: g(0)=C1, g(e)=C pi/2 + C1, Delta g(0) = 2 pi C.
  const double c = 10.0, c1 = 100.0, ge = c * std::numbers::pi / 2 + c1;
  EXPECT_NEAR(h.f_w, 0.5 * c1 - 2.0 * 2.0 * std::numbers::pi * c + 0.5 * ge, 1e-9);
  EXPECT_EQ(h.min_f, std::min(h.f_w, *std::min_element(h.f.begin(), h.f.end())));
}

TEST(HarmonicProfile, BoundStableAcrossN) {
  const PotentialKernel pk(40);
  std::vector<double> bounds;
  for (int n : {9, 17, 33}) {
    const Box b(n);
    bounds.push_back(build_harmonic_profile(b, b.vertex({0, 0}), b.vertex({1, 0}), 0.5, 10.0, 100.0, pk).bound);
  }
  for (double x : bounds) EXPECT_LT(std::abs(x - bounds.back()) / bounds.back(), 0.05);
}

TEST(HarmonicProfile, RejectsBadGeometry) {
  const PotentialKernel pk(20);
  const Box b(17);
  EXPECT_THROW(build_harmonic_profile(b, b.vertex({0, 0}), b.vertex({2, 0}), 0.5, 1, 1, pk), RangeError);
  EXPECT_THROW(build_harmonic_profile(b, b.vertex({0, 0}), b.vertex({1, 0}), 1.0, 1, 1, pk), RangeError);
  EXPECT_THROW(build_harmonic_profile(Box(33), b.vertex({0, 0}), b.vertex({1, 0}), 0.5, 1, 1, pk), RangeError);
}

TEST(Escape, BoundaryValues) {
  const Box b(32);
  const auto p = escape_before_probs(b, 0.25);
  for (Vertex u : b.boundary_of(b.scaled_box(0.25))) EXPECT_EQ(p[u], 1.0);
  for (Vertex u : b.boundary()) EXPECT_EQ(p[u], 0.0);
}

TEST(Escape, RingMinimumStableAcrossN) {
  const double m64 = escape_before_min(Box(64), 0.25, 0.75), m128 = escape_before_min(Box(128), 0.25, 0.75);
  EXPECT_GT(m64, 0.0);
  EXPECT_LT(std::abs(m64 - m128) / m64, 0.10);
}

TEST(Escape, BeurlingFrequencyDecays) {
  Rng rng(10);
  const auto a = segment(40);
  const double near = escape_frequency(a, {20, 0}, 4, rng, 20000);
  const double far = escape_frequency(a, {20, 0}, 16, rng, 20000);
  EXPECT_GT(near, far);
  EXPECT_GT(far, 0.0);
}
