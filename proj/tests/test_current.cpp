#include <gtest/gtest.h>

#include <cmath>

#include "gfflab/current.hpp"

using namespace gfflab;
using namespace gfflab::stats;

namespace {

Domain two_vertex() {
  const Box b(4);
  std::vector<char> k(16, 0);
  k[b.index(1, 2)] = k[b.index(2, 2)] = 1;
  return Domain(b, k);
}

std::vector<double> empirical(const CurrentLaw& law, const std::vector<CurrentConfig>& xs) {
  std::vector<double> f(law.configs.size(), 0.0);
  double outside = 0.0;
  for (const auto& x : xs) {
    const auto it = std::find(law.configs.begin(), law.configs.end(), x);
    if (it == law.configs.end()) outside += 1.0;
    else f[static_cast<std::size_t>(it - law.configs.begin())] += 1.0;
  }
  for (double& v : f) v /= static_cast<double>(xs.size());
  EXPECT_EQ(outside, 0.0);
  return f;
}

}  // namespace

TEST(Current, SingleEdgeZeroProbability) {
  for (double beta : {0.1, 1.0, 3.0}) {
    const auto law = brute_force_current_law(single_edge(), {beta}, 60, 1e-12);
    EXPECT_NEAR(law.p({0}), 1.0 / std::cosh(beta), 1e-10);
    EXPECT_EQ(law.p({1}), 0.0);
  }
}

TEST(Current, ParityLawFixtures) {
  EXPECT_NEAR(parity_pmf(0, 1.0, false), 0.648054, 1e-6);
  EXPECT_NEAR(parity_pmf(1, 1.0, true), 0.850918, 1e-6);
  EXPECT_EQ(parity_pmf(1, 1.0, false), 0.0);
  double even = 0.0, odd = 0.0;
  for (int n = 0; n < 60; ++n) {
    even += parity_pmf(n, 2.5, false);
    odd += parity_pmf(n, 2.5, true);
  }
  EXPECT_NEAR(even, 1.0, 1e-12);
  EXPECT_NEAR(odd, 1.0, 1e-12);
}

TEST(Current, SourcelessValidator) {
  const auto g = triangle();
  EXPECT_TRUE(is_sourceless(g, {0, 0, 0}));
  EXPECT_TRUE(is_sourceless(g, {1, 1, 1}));
  EXPECT_TRUE(is_sourceless(g, {2, 0, 4}));
  EXPECT_FALSE(is_sourceless(g, {1, 0, 0}));
  EXPECT_FALSE(is_sourceless(g, {1, 2, 1}));
  EXPECT_EQ(parity_mask({1, 2, 3}), 0b101u);
}

TEST(Current, TriangleSymmetricMarginals) {
  const auto law = brute_force_current_law(triangle(), {1.0, 1.0, 1.0}, 30, 1e-10);
  double s = 0.0;
  for (double p : law.prob) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
  for (int k = 0; k < 4; ++k) {
    double m0 = 0, m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < law.configs.size(); ++i) {
      m0 += law.prob[i] * (law.configs[i][0] == k);
      m1 += law.prob[i] * (law.configs[i][1] == k);
      m2 += law.prob[i] * (law.configs[i][2] == k);
    }
    EXPECT_NEAR(m0, m1, 1e-12);
    EXPECT_NEAR(m1, m2, 1e-12);
  }
  const auto par = law.parity_marginal();
  EXPECT_EQ(par.size(), 2u);  // all even or all odd
}

TEST(Current, SmallBetaConcentratesOnZero) {
  double prev = 0.0;
  for (double beta : {2.0, 1.0, 0.5, 0.1, 0.01}) {
    const double p0 = brute_force_current_law(triangle(), {beta, beta, beta}, 40, 1e-10).p({0, 0, 0});
    EXPECT_GT(p0, prev);
    prev = p0;
  }
  EXPECT_NEAR(prev, 1.0, 1e-3);
}

TEST(Current, TruncationGuard) {
  EXPECT_THROW(brute_force_current_law(triangle(), {3.0, 3.0, 3.0}, 5, 1e-8), TailBoundError);
  EXPECT_THROW(brute_force_current_law(triangle(), {1.0}, 10), RangeError);
  EXPECT_NEAR(poisson_tail(1.0, 0), 1.0 - std::exp(-1.0), 1e-15);
}

TEST(Current, RejectionSamplerMatchesBruteForce) {
  const std::vector<double> beta{0.5, 1.0, 1.5};
  const auto law = brute_force_current_law(triangle(), beta, 40, 1e-10);
  Rng rng(1);
  const RejectionCurrentSampler s(triangle(), beta, rng);
  EXPECT_GT(s.acceptance, 0.0);
  std::vector<CurrentConfig> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(s.sample(rng));
  EXPECT_LT(total_variation(empirical(law, xs), law.prob), 0.02);
}

TEST(Current, ParityCompositionReproducesLaw) {
  const std::vector<double> beta{0.7, 1.2, 2.0};
  const auto law = brute_force_current_law(triangle(), beta, 40, 1e-10);
  const auto par = law.parity_marginal();
  Rng rng(2);
  std::vector<CurrentConfig> xs;
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform01(rng);
    double cum = 0.0;
    std::uint32_t mask = par.rbegin()->first;
    for (const auto& [m, p] : par) {
      cum += p;
      if (u < cum) {
        mask = m;
        break;
      }
    }
    xs.push_back(sample_parity_conditional(triangle(), mask, beta, rng));
  }
  EXPECT_LT(total_variation(empirical(law, xs), law.prob), 0.02);
}

TEST(Current, ParityErrors) {
  Rng rng(3);
  EXPECT_THROW(sample_parity_conditional(triangle(), 0b001u, {1, 1, 1}, rng), ParityError);
  EXPECT_THROW(sample_parity(0.0, true, rng), ParityError);
  EXPECT_EQ(sample_parity(0.0, false, rng), 0);
}

TEST(Current, JumpCountsBothDirections) {
  const Domain d = two_vertex();
  const Box& b = d.box();
  LoopSoupSample s;
  s.n = 4;
  s.trivial.assign(b.size(), 0.0);
  const Vertex x = b.index(1, 1), y = b.index(2, 1);
  s.loops.push_back({{x, y}, {0.1, 0.1}});
  s.loops.push_back({{x, y, x, y}, {0.1, 0.1, 0.1, 0.1}});
  EXPECT_EQ(jump_counts(d, s), CurrentConfig{6});
}

TEST(Current, SoupJumpsMatchCurrentOnTwoVertices) {
  const Domain d = two_vertex();
  Rng rng(4);
  const auto samples = collect_jump_samples(d, rng, 200000);
  const auto rep = loop_current_consistency(d, samples, 0.1, 2000);
  ASSERT_GE(rep.bins.size(), 3u);
  EXPECT_LT(rep.weighted_tv, 0.05);
}

TEST(Current, SingleVertexHasNoEdges) {
  const Box b(3);
  const Domain d(b);
  Rng rng(5);
  const auto samples = collect_jump_samples(d, rng, 100);
  for (const auto& js : samples) EXPECT_TRUE(js.jumps.empty());
  EXPECT_TRUE(loop_current_consistency(d, samples, 0.1).bins.empty());
}

TEST(Domination, GridInequalityHolds) {
  for (double lambda : {2.0, 3.0, 4.0}) {
    const auto g = domination_grid(lambda, 60.0, 200);
    EXPECT_LE(g.worst, 0.0);
    EXPECT_EQ(g.points, 201u * 201u);
  }
  EXPECT_THROW(domination_grid(1.5, 10.0, 10), RangeError);
}

TEST(Domination, CouplingNeverViolated) {
  Rng rng(6);
  for (double lambda : {2.0, 3.0}) {
    const auto mc = domination_mc(lambda, rng, 50000);
    EXPECT_EQ(mc.violations, 0u);
    EXPECT_LE(mc.in_o, mc.soup_open);
  }
}

TEST(Domination, LogSechStable) {
  EXPECT_NEAR(log_sech(0.0), 0.0, 1e-15);
  EXPECT_NEAR(log_sech(1.0), -std::log(std::cosh(1.0)), 1e-14);
  EXPECT_NEAR(log_sech(800.0), -800.0 + std::log(2.0), 1e-9);
}
