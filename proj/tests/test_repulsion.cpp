#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gfflab/explore.hpp"
#include "gfflab/repulsion.hpp"

using namespace gfflab;
using namespace gfflab::stats;

namespace {

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Mean of Normal(mu, sigma^2) conditioned above a.
double truncated_mean(double mu, double sigma, double a) {
  const double z = (a - mu) / sigma;
  return mu + sigma * phi(z) / (1.0 - normal_cdf(z));
}

std::vector<Rng> rngs(std::uint64_t seed, std::size_t n) {
  std::vector<Rng> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_rng(seed, {"test", i, 0}));
  return out;
}

HeatBath single_site(Constraint c) {
  const Box b(3);
  auto f = std::make_shared<const GaussianMarkovField>(lattice_field(Domain(b)));
  std::vector<Constraint> cons(b.size());
  cons[b.vertex({0, 0})] = c;
  return HeatBath(f, std::vector<double>(b.size(), 0.0), cons);
}

double chain_mean(const HeatBath& hb, Vertex v, std::uint64_t seed) {
  ChainOptions opt;
  opt.samples = 5000;
  opt.thin = 1;
  return run_chains(hb, [v](const std::vector<double>& x) { return x[v]; }, rngs(seed, opt.chains), opt).mean.mean;
}

}  // namespace

TEST(TruncatedNormal, MeansMatchClosedForm) {
  Rng rng(1);
  for (double a : {-1.0, 0.0, 0.4, 1.0, 3.0, 6.0}) {
    double s = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const double x = truncated_std_normal_above(a, rng);
      ASSERT_GT(x, a);
      s += x;
    }
    EXPECT_NEAR(s / n, truncated_mean(0, 1, a), 0.01) << a;
  }
}

TEST(TruncatedNormal, BelowIsMirrorOfAbove) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(truncated_normal(1.0, 2.0, {Constraint::Below, -0.5}, rng), -0.5);
  EXPECT_NEAR(truncated_normal_cdf(0.0, 0.0, 1.0, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(truncated_normal_cdf(1.0, 0.0, 1.0, 0.0), 2.0 * normal_cdf(1.0) - 1.0, 1e-14);
}

TEST(HeatBath, ConditionalMatchesPrecisionStructure) {
  const Box b(5);
  auto f = std::make_shared<const GaussianMarkovField>(lattice_field(Domain(b)));
  std::vector<double> x(b.size());
  for (Vertex v = 0; v < b.size(); ++v) x[v] = b.on_boundary(v) ? 0.0 : 0.1 * static_cast<double>(v % 7) - 0.3;
  HeatBath hb(f, x, std::vector<Constraint>(b.size()));
  Rng rng(3);
  hb.sweep(rng);
  const auto& s = hb.state();
  const Vertex c = b.vertex({0, 0});
  const auto [mu, sd] = hb.conditional(c);
  double avg = 0.0;
  for (int d = 0; d < 4; ++d) avg += 0.25 * s[static_cast<Vertex>(b.neighbor(c, d))];
  EXPECT_NEAR(mu, avg, 1e-12);
  EXPECT_NEAR(sd, 0.5, 1e-12);
}

TEST(HeatBath, RejectsPinnedViolation) {
  const Box b(5);
  std::vector<char> pinned(b.size(), 0);
  pinned[b.vertex({0, 0})] = 1;
  auto f = std::make_shared<const GaussianMarkovField>(lattice_field(Domain(b, pinned)));
  std::vector<Constraint> cons(b.size());
  cons[b.vertex({0, 0})] = {Constraint::Above, 1.0};
  EXPECT_THROW(HeatBath(f, std::vector<double>(b.size(), 0.0), cons), ConfigError);
}

TEST(HeatBath, HalfNormalSingleSite) {
  const auto hb = single_site({Constraint::Above, 0.0});
  EXPECT_NEAR(chain_mean(hb, Box(3).vertex({0, 0}), 4), std::sqrt(2.0 / std::numbers::pi) * 0.5, 0.01);
}

TEST(HeatBath, SingleSiteAboveOne) {
  const auto hb = single_site({Constraint::Above, 1.0});
  EXPECT_NEAR(chain_mean(hb, Box(3).vertex({0, 0}), 5), truncated_mean(0.0, 0.5, 1.0), 0.01);
}

TEST(HeatBath, UnconstrainedMatchesDgff) {
  const Box b(9);
  auto f = std::make_shared<const GaussianMarkovField>(lattice_field(Domain(b)));
  const HeatBath hb(f, std::vector<double>(b.size(), 0.0), std::vector<Constraint>(b.size()));
  ChainOptions opt;
  opt.samples = 1000;
  const auto r = run_chains(hb, [&b](const std::vector<double>& x) { return observable(b, x, 0.75); }, rngs(6, 4), opt);
  EXPECT_TRUE(r.converged);
  std::vector<double> chain, direct;
  for (const auto& t : r.traces) chain.insert(chain.end(), t.begin(), t.end());
  Rng rng(7);
  for (int i = 0; i < 4000; ++i) direct.push_back(observable(b, sample_dgff(b, rng).values, 0.75));
  EXPECT_GT(ks_two_sample(chain, direct).p_value, 1e-3);
}

TEST(Entropic, InstanceGeometry) {
  const auto in = entropic_instance(9, 1.0, 0.1);
  EXPECT_EQ(in.box.coord(in.v).x - in.box.coord(in.w).x, 1);
  EXPECT_TRUE(in.field->pinned(in.w));
  EXPECT_DOUBLE_EQ(in.values[in.w], 1.05);
  EXPECT_EQ(in.cons[in.v].kind, Constraint::Above);
  EXPECT_DOUBLE_EQ(in.cons[in.v].bound, 1.1);
  EXPECT_THROW(entropic_instance(8, 1.0, 0.1), SizeError);
  EXPECT_FALSE(entropic_instance(9, 1.0, 0.1, false).field->pinned(in.w));
}

TEST(Entropic, PinnedVertexGivesItsValue) {
  const Box b(7);
  const Vertex v = b.vertex({1, 0});
  std::vector<char> pinned(b.size(), 0);
  pinned[v] = 1;
  auto f = std::make_shared<const GaussianMarkovField>(lattice_field(Domain(b, pinned)));
  std::vector<double> x(b.size(), 0.0);
  x[v] = 1.0;
  std::vector<Constraint> cons(b.size());
  for (Vertex u : b.interior())
    if (u != v) cons[u] = {Constraint::Above, 1.1};
  const HeatBath hb(f, x, cons);
  ChainOptions opt;
  opt.samples = 50;
  const auto r = run_chains(hb, [v](const std::vector<double>& s) { return s[v]; }, rngs(8, 4), opt);
  EXPECT_EQ(r.mean.mean, 1.0);
}

TEST(Entropic, PinnedMeanBelowUnpinned) {
  ChainOptions opt;
  opt.samples = 500;
  const auto pinned = entropic_mean(entropic_instance(9, 1.0, 1.0 / 9), rngs(9, 4), opt);
  const auto free = entropic_mean(entropic_instance(9, 1.0, 1.0 / 9, false), rngs(10, 4), opt);
  EXPECT_GT(pinned.mean.mean, 1.0 + 1.0 / 9);
  EXPECT_LT(pinned.mean.mean, free.mean.mean);
}

TEST(BrascampLieb, PinnedIndicatorHasNoVariance) {
  const auto in = entropic_instance(9, 1.0, 0.1);
  std::vector<double> l(in.box.size(), 0.0);
  l[in.w] = 1.0;
  ChainOptions opt;
  opt.samples = 200;
  const auto bl = brascamp_lieb_check(in.sampler(), l, rngs(11, 4), opt);
  EXPECT_NEAR(bl.unconditional, 0.0, 1e-14);
  EXPECT_NEAR(bl.conditional.mean, 0.0, 1e-20);
  EXPECT_TRUE(bl.holds());
}

TEST(BrascampLieb, InactiveConstraintsGiveEqualVariance) {
  const Box b(7);
  auto f = std::make_shared<const GaussianMarkovField>(lattice_field(Domain(b)));
  std::vector<Constraint> cons(b.size());
  for (Vertex u : b.interior()) cons[u] = {Constraint::Above, -1e6};
  const HeatBath hb(f, std::vector<double>(b.size(), 0.0), cons);
  std::vector<double> l(b.size(), 0.0);
  l[b.vertex({0, 0})] = 1.0;
  l[b.vertex({1, 1})] = 0.5;
  ChainOptions opt;
  opt.samples = 4000;
  opt.thin = 2;
  const auto bl = brascamp_lieb_check(hb, l, rngs(12, 4), opt);
  EXPECT_NEAR(bl.conditional.mean, bl.unconditional, 4.0 * bl.conditional.se);
}

TEST(BrascampLieb, ConstrainedVarianceContracts) {
  const auto in = entropic_instance(9, 1.0, 1.0 / 9);
  std::vector<double> l(in.box.size(), 0.0);
  for (Vertex u : in.box.boundary_of(in.box.inner_box(5))) l[u] = 1.0 / 16.0;
  ChainOptions opt;
  opt.samples = 2000;
  const auto bl = brascamp_lieb_check(in.sampler(), l, rngs(13, 4), opt);
  EXPECT_TRUE(bl.holds());
  EXPECT_LT(bl.conditional.mean, bl.unconditional);
}

TEST(StochasticOrder, PairInequalities) {
  for (double q : {1.0, 10.0, 100.0}) {
    const SitePotential u{SitePotential::U, 0.3, q}, v{SitePotential::V, 0.3, q}, w{SitePotential::W, 0.3, q}, z{};
    EXPECT_LE(pair_inequality_worst(w, u, -3, 3, 120), 1e-12);
    EXPECT_LE(pair_inequality_worst(v, z, -3, 3, 120), 1e-12);
    EXPECT_LE(pair_inequality_worst(z, u, -3, 3, 120), 1e-12);
    EXPECT_GT(pair_inequality_worst(u, w, -3, 3, 120), 0.0);
  }
}

TEST(StochasticOrder, OneSidedPenaltyDominates) {
  Eigen::MatrixXd a(1, 1);
  a(0, 0) = 4.0;
  for (double q : {1.0, 10.0, 100.0}) {
    const auto r = stochastic_order_check(a, {{SitePotential::W, 0.0, q}}, {{SitePotential::U, 0.0, q}}, -4, 4, 4001);
    EXPECT_TRUE(r.dominated) << q;
  }
}

TEST(StochasticOrder, ThreeSiteChain) {
  Eigen::MatrixXd a{{4, -1, 0}, {-1, 4, -1}, {0, -1, 4}};
  const SitePotential w{SitePotential::W, 0.2, 10.0}, u{SitePotential::U, 0.2, 10.0};
  const auto r = stochastic_order_check(a, {w, w, w}, {u, u, u}, -3, 3, 121);
  EXPECT_TRUE(r.dominated);
  EXPECT_EQ(r.max_excess.size(), 3u);
}

TEST(StochasticOrder, IdenticalPotentialsIdenticalCdfs) {
  Eigen::MatrixXd a{{4, -1}, {-1, 4}};
  const SitePotential u{SitePotential::U, 0.5, 10.0};
  const auto r = stochastic_order_check(a, {u, u}, {u, u}, -3, 3, 301);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < r.grid.size(); ++j) EXPECT_NEAR(r.cdf1[i][j], r.cdf2[i][j], 1e-14);
  EXPECT_THROW(stochastic_order_check(Eigen::MatrixXd::Identity(4, 4), {u, u, u, u}, {u, u, u, u}, -1, 1, 11), SizeError);
}

// Softened U against the hard constraint. The soft wall has width of order
// q^{-1/4}, so the sup distance at q=100 is about 0.30 and only closes slowly.
TEST(StochasticOrder, SofteningApproachesHardConstraint) {
  Eigen::MatrixXd a(1, 1);
  a(0, 0) = 4.0;
  std::vector<double> sup;
  for (double q : {1.0, 10.0, 100.0, 1e4, 1e6}) {
    const auto r = stochastic_order_check(a, {SitePotential{}}, {{SitePotential::U, 0.0, q}}, -3, 4, 20001);
    double s = 0.0;
    for (std::size_t j = 0; j < r.grid.size(); ++j)
      s = std::max(s, std::abs(r.cdf2[0][j] - truncated_normal_cdf(r.grid[j], 0.0, 0.5, 0.0)));
    sup.push_back(s);
  }
  for (std::size_t k = 1; k < sup.size(); ++k) EXPECT_LT(sup[k], sup[k - 1]);
  EXPECT_NEAR(sup[2], 0.3001, 1e-3);
  EXPECT_LT(sup.back(), 0.05);
}
