#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "gfflab/errors.hpp"
#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/loopsoup.hpp"
#include "gfflab/rng.hpp"
#include "gfflab/stats.hpp"

namespace gfflab {

struct SmallGraph {
  int vertices = 0;
  std::vector<std::pair<int, int>> edges;
};

using CurrentConfig = std::vector<int>;

inline SmallGraph triangle() { return {3, {{0, 1}, {1, 2}, {2, 0}}}; }
inline SmallGraph single_edge() { return {2, {{0, 1}}}; }

/// The graph of free vertices and free edges of a domain, vertices numbered
/// like Domain::free_vertices() and edges like Domain::free_edges().
inline SmallGraph graph_of(const Domain& d) {
  SmallGraph g{static_cast<int>(d.free_count()), {}};
  for (std::size_t e : d.free_edges()) {
    const Edge& ed = d.box().edges()[e];
    g.edges.emplace_back(static_cast<int>(d.local(ed.u)), static_cast<int>(d.local(ed.v)));
  }
  return g;
}

inline std::vector<int> degree_sums(const SmallGraph& g, const CurrentConfig& n) {
  std::vector<int> s(static_cast<std::size_t>(g.vertices), 0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    s[static_cast<std::size_t>(g.edges[e].first)] += n[e];
    s[static_cast<std::size_t>(g.edges[e].second)] += n[e];
  }
  return s;
}

inline bool is_sourceless(const SmallGraph& g, const CurrentConfig& n) {
  for (int s : degree_sums(g, n))
    if (s % 2) return false;
  return true;
}

inline std::uint32_t parity_mask(const CurrentConfig& n) {
  std::uint32_t m = 0;
  for (std::size_t e = 0; e < n.size(); ++e)
    if (n[e] % 2) m |= 1u << e;
  return m;
}

/// P(Poisson(beta) > n).
inline double poisson_tail(double beta, int n) {
  if (beta <= 0.0) return 0.0;
  double term = std::exp(-beta), cdf = term;
  for (int k = 1; k <= n; ++k) {
    term *= beta / k;
    cdf += term;
  }
  return std::max(0.0, 1.0 - cdf);
}

struct CurrentLaw {
  std::vector<CurrentConfig> configs;
  std::vector<double> prob;
  double truncation_bound = 0.0;

  double p(const CurrentConfig& n) const {
    const auto it = std::find(configs.begin(), configs.end(), n);
    return it == configs.end() ? 0.0 : prob[static_cast<std::size_t>(it - configs.begin())];
  }
  std::map<std::uint32_t, double> parity_marginal() const {
    std::map<std::uint32_t, double> m;
    for (std::size_t i = 0; i < configs.size(); ++i) m[parity_mask(configs[i])] += prob[i];
    return m;
  }
};

/// Sourceless configurations with n_e <= n_max, weights prod beta^n / n!.
/// Unnormalised mass beyond the box is at most e^{sum beta} sum_e P(Pois > n_max)
/// and the normaliser is at least 1 (the zero current).
inline CurrentLaw brute_force_current_law(const SmallGraph& g, const std::vector<double>& beta, int n_max, double tol = 1e-8) {
  if (g.edges.size() > 6) throw SizeError("brute_force_current_law: at most 6 edges");
  if (beta.size() != g.edges.size()) throw RangeError("brute_force_current_law: one beta per edge");
  CurrentLaw law;
  double sum_beta = 0.0, tail = 0.0;
  for (double b : beta) {
    if (!(b >= 0.0)) throw RangeError("brute_force_current_law: beta must be nonnegative");
    sum_beta += b;
    tail += poisson_tail(b, n_max);
  }
  law.truncation_bound = std::exp(sum_beta) * tail;
  if (law.truncation_bound > tol) throw TailBoundError("brute_force_current_law: increase n_max");
  const std::size_t ne = g.edges.size();
  std::vector<std::vector<double>> w(ne, std::vector<double>(static_cast<std::size_t>(n_max + 1)));
  for (std::size_t e = 0; e < ne; ++e) {
    w[e][0] = 1.0;
    for (int k = 1; k <= n_max; ++k) w[e][static_cast<std::size_t>(k)] = w[e][static_cast<std::size_t>(k - 1)] * beta[e] / k;
  }
  CurrentConfig n(ne, 0);
  double z = 0.0;
  for (;;) {
    if (is_sourceless(g, n)) {
      double wt = 1.0;
      for (std::size_t e = 0; e < ne; ++e) wt *= w[e][static_cast<std::size_t>(n[e])];
      law.configs.push_back(n);
      law.prob.push_back(wt);
      z += wt;
    }
    std::size_t e = 0;
    while (e < ne && n[e] == n_max) n[e++] = 0;
    if (e == ne) break;
    ++n[e];
  }
  for (double& p : law.prob) p /= z;
  return law;
}

struct RejectionCurrentSampler {
  SmallGraph graph;
  std::vector<double> beta;
  double acceptance = 0.0;  // pilot estimate

  RejectionCurrentSampler(SmallGraph g, std::vector<double> b, Rng& pilot_rng, std::size_t pilot = 1000000)
      : graph(std::move(g)), beta(std::move(b)) {
    if (beta.size() != graph.edges.size()) throw RangeError("sample_current_rejection: one beta per edge");
    std::size_t acc = 0, tried = 0;
    while (tried < pilot && acc < 200) {
      ++tried;
      acc += is_sourceless(graph, draw(pilot_rng));
    }
    acceptance = static_cast<double>(acc) / static_cast<double>(tried);
    if (acc == 0 || acceptance < 1e-6) throw StarvationError("sample_current_rejection: acceptance below 1e-6");
  }

  CurrentConfig sample(Rng& rng, std::size_t* attempts = nullptr) const {
    std::size_t t = 0;
    for (;;) {
      ++t;
      auto n = draw(rng);
      if (is_sourceless(graph, n)) {
        if (attempts) *attempts = t;
        return n;
      }
    }
  }

 private:
  CurrentConfig draw(Rng& rng) const {
    CurrentConfig n(beta.size());
    for (std::size_t e = 0; e < beta.size(); ++e)
      n[e] = beta[e] > 0.0 ? std::poisson_distribution<int>(beta[e])(rng) : 0;
    return n;
  }
};

inline CurrentConfig sample_current_rejection(const SmallGraph& g, const std::vector<double>& beta, Rng& rng) {
  return RejectionCurrentSampler(g, beta, rng).sample(rng);
}

/// F1(n) = beta^n / (n! sinh beta) on odd n, F2(n) = beta^n / (n! cosh beta) on even n.
inline double parity_pmf(int n, double beta, bool odd) {
  if (n < 0 || (n % 2 == 1) != odd) return 0.0;
  const double log_norm = odd ? std::log(std::sinh(beta)) : std::log(std::cosh(beta));
  return std::exp(n * std::log(beta) - std::lgamma(n + 1.0) - log_norm);
}

inline int sample_parity(double beta, bool odd, Rng& rng) {
  if (beta <= 0.0) {
    if (odd) throw ParityError("sample_parity_conditional: odd count impossible at beta = 0");
    return 0;
  }
  const double u = uniform01(rng);
  int n = odd ? 1 : 0;
  double p = parity_pmf(n, beta, odd), cum = p;
  while (u > cum && p > 0.0) {
    p *= beta * beta / ((n + 1.0) * (n + 2.0));
    n += 2;
    cum += p;
  }
  return n;
}

inline CurrentConfig sample_parity_conditional(const SmallGraph& g, std::uint32_t odd_edges, const std::vector<double>& beta,
                                               Rng& rng) {
  std::vector<int> odd_deg(static_cast<std::size_t>(g.vertices), 0);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (odd_edges >> e & 1u) {
      ++odd_deg[static_cast<std::size_t>(g.edges[e].first)];
      ++odd_deg[static_cast<std::size_t>(g.edges[e].second)];
    }
  for (int c : odd_deg)
    if (c % 2) throw ParityError("sample_parity_conditional: parity pattern has a source");
  CurrentConfig n(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) n[e] = sample_parity(beta[e], (odd_edges >> e & 1u) != 0, rng);
  return n;
}

// ---------------------------------------------------------------------------
// Loop soup jump counts against random currents

/// Number of jumps of the soup across each free edge (both directions),
/// indexed like Domain::free_edges().
inline CurrentConfig jump_counts(const Domain& d, const LoopSoupSample& s) {
  const auto edges = d.free_edges();
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t k = 0; k < edges.size(); ++k) slot[edges[k]] = k;
  CurrentConfig n(edges.size(), 0);
  for (const auto& loop : s.loops)
    for (std::size_t i = 0; i < loop.skeleton.size(); ++i) {
      const auto e = edge_between(d.box(), loop.skeleton[i], loop.skeleton[(i + 1) % loop.skeleton.size()]);
      ++n[slot.at(static_cast<std::size_t>(e))];
    }
  return n;
}

struct ConsistencyBin {
  std::vector<int> key;         // bin index per free vertex
  std::vector<double> centre;   // occupation at the bin midpoint
  std::size_t count = 0;
  double tv = 0.0;
};

struct ConsistencyReport {
  double bin_width = 0.0;
  std::size_t samples = 0;
  std::size_t min_count = 0;
  std::vector<ConsistencyBin> bins;   // bins with at least min_count samples
  std::size_t undersampled = 0;       // bins skipped for having too few samples
  double max_tv = 0.0;
  double weighted_tv = 0.0;
};

struct JumpSample {
  std::vector<double> occupation;  // per free vertex
  CurrentConfig jumps;             // per free edge
};

inline std::vector<JumpSample> collect_jump_samples(const Domain& d, Rng& rng, std::size_t samples, double alpha = 0.5) {
  const LoopSoupSampler sampler(d, alpha);
  std::vector<JumpSample> out;
  out.reserve(samples);
  for (std::size_t r = 0; r < samples; ++r) {
    const auto s = sampler.sample(rng);
    const auto occ = occupation_field(s);
    JumpSample js;
    for (Vertex v : d.free_vertices()) js.occupation.push_back(occ[v]);
    js.jumps = jump_counts(d, s);
    out.push_back(std::move(js));
  }
  return out;
}

/// Bins loop-soup samples by occupation and compares the jump counts in
/// each bin to the random current with beta_e = 2 sqrt(l_x l_y) at the bin
/// midpoint.
inline ConsistencyReport loop_current_consistency(const Domain& d, const std::vector<JumpSample>& samples, double bin_width,
                                                  std::size_t min_count = 2000) {
  if (d.free_count() > 4) throw SizeError("loop_current_consistency: at most 4 free vertices");
  if (!(bin_width > 0.0)) throw RangeError("loop_current_consistency: bin width must be positive");
  ConsistencyReport rep;
  rep.bin_width = bin_width;
  rep.samples = samples.size();
  rep.min_count = min_count;
  const SmallGraph g = graph_of(d);
  if (g.edges.empty()) return rep;
  std::map<std::vector<int>, std::map<CurrentConfig, std::size_t>> hist;
  for (const auto& js : samples) {
    std::vector<int> key;
    for (double l : js.occupation) key.push_back(static_cast<int>(std::floor(l / bin_width)));
    ++hist[key][js.jumps];
  }
  double total = 0.0;
  for (const auto& [key, h] : hist) {
    std::size_t cnt = 0;
    for (const auto& kv : h) cnt += kv.second;
    if (cnt < min_count) {
      ++rep.undersampled;
      continue;
    }
    ConsistencyBin b;
    b.key = key;
    b.count = cnt;
    for (int k : key) b.centre.push_back((k + 0.5) * bin_width);
    std::vector<double> beta;
    double bsum = 0.0;
    for (const auto& [a, c] : g.edges) {
      beta.push_back(2.0 * std::sqrt(b.centre[static_cast<std::size_t>(a)] * b.centre[static_cast<std::size_t>(c)]));
      bsum += beta.back();
    }
    const int n_max = static_cast<int>(std::ceil(3.0 * bsum + 20.0));
    const auto law = brute_force_current_law(g, beta, n_max);
    double tv = 0.0, seen = 0.0;
    for (const auto& [cfg, c] : h) {
      const double p = law.p(cfg);
      tv += std::abs(static_cast<double>(c) / static_cast<double>(cnt) - p);
      seen += p;
    }
    tv += 1.0 - seen;
    b.tv = 0.5 * tv;
    rep.max_tv = std::max(rep.max_tv, b.tv);
    rep.weighted_tv += b.tv * static_cast<double>(cnt);
    total += static_cast<double>(cnt);
    rep.bins.push_back(std::move(b));
  }
  if (total > 0.0) rep.weighted_tv /= total;
  return rep;
}

// ---------------------------------------------------------------------------
// Domination of the level-set edges by the loop soup

/// log(1/cosh beta), stable for large beta.
inline double log_sech(double beta) { return -(beta + std::log1p(std::exp(-2.0 * beta)) - std::log(2.0)); }

struct DominationGrid {
  std::size_t points = 0;
  double worst = -INFINITY;  // max of log lhs - log rhs; must stay <= 0
  double worst_lx = 0.0, worst_ly = 0.0;
};

/// Checks 1/cosh(2 sqrt(lx ly)) <= exp(-(sqrt(2lx)-lambda)(sqrt(2ly)-lambda)/4)
/// on a grid of occupations above lambda^2/2, in log space.
inline DominationGrid domination_grid(double lambda, double l_max, int steps) {
  if (!(lambda >= 2.0)) throw RangeError("domination_grid: lambda must be at least 2");
  DominationGrid out;
  const double l0 = lambda * lambda / 2.0;
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; j <= steps; ++j) {
      const double lx = l0 + (l_max - l0) * i / steps, ly = l0 + (l_max - l0) * j / steps;
      const double lhs = log_sech(2.0 * std::sqrt(lx * ly));
      const double rhs = -0.25 * (std::sqrt(2.0 * lx) - lambda) * (std::sqrt(2.0 * ly) - lambda);
      ++out.points;
      if (lhs - rhs > out.worst) {
        out.worst = lhs - rhs;
        out.worst_lx = lx;
        out.worst_ly = ly;
      }
    }
  if (out.worst > 1e-12) throw PrecisionError("domination_grid: inequality violated");
  return out;
}

struct DominationMc {
  std::size_t replicas = 0;
  std::size_t in_o = 0;      // edge in O: bridge of length 4 stays beyond +-lambda
  std::size_t soup_open = 0; // edge open in the loop soup given l = eta^2 / 2
  std::size_t violations = 0;  // replicas with the edge in O but closed in the soup
  stats::Interval p_o, p_soup;
};

/// Two-vertex domain (N = 4, interior row 1). Both indicators are driven by
/// one uniform per replica, so the ordering must hold replica by replica.
inline DominationMc domination_mc(double lambda, Rng& rng, std::size_t replicas) {
  if (!(lambda >= 2.0)) throw RangeError("domination_mc: lambda must be at least 2");
  const Box box(4);
  std::vector<char> killed(box.size(), 0);
  killed[box.index(1, 2)] = killed[box.index(2, 2)] = 1;
  const Domain d(box, killed);
  const auto field = lattice_field(d);
  const Vertex x = box.index(1, 1), y = box.index(2, 1);
  const std::vector<double> zeros(box.size(), 0.0);
  const double len = 4.0;  // e(1)
  DominationMc out;
  out.replicas = replicas;
  std::vector<double> eta(box.size());
  for (std::size_t r = 0; r < replicas; ++r) {
    field.sample(zeros, rng, eta);
    const double a = eta[x], b = eta[y];
    double p_o = 0.0;
    if (a > 0 && b > 0) p_o = bridge_above_prob(a, b, lambda, len);
    else if (a < 0 && b < 0) p_o = bridge_above_prob(-a, -b, lambda, len);
    const double p_open = -std::expm1(log_sech(std::abs(a * b)));
    const double u = uniform01(rng);
    const bool o = u < p_o, open = u < p_open;
    out.in_o += o;
    out.soup_open += open;
    out.violations += o && !open;
  }
  out.p_o = stats::wilson(out.in_o, replicas);
  out.p_soup = stats::wilson(out.soup_open, replicas);
  return out;
}

}  // namespace gfflab
