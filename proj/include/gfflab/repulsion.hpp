#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "gfflab/errors.hpp"
#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/rng.hpp"
#include "gfflab/stats.hpp"

namespace gfflab {

/// Standard normal truncated to (a, inf). Plain rejection for a < 0.5,
/// otherwise Robert's translated-exponential proposal.
inline double truncated_std_normal_above(double a, Rng& rng) {
  std::normal_distribution<double> nd;
  if (a < 0.5) {
    for (;;) {
      const double z = nd(rng);
      if (z > a) return z;
    }
  }
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  std::exponential_distribution<double> ex(rate);
  for (;;) {
    const double z = a + ex(rng);
    if (uniform01(rng) <= std::exp(-0.5 * (z - rate) * (z - rate))) return z;
  }
}

struct Constraint {
  enum Kind { None, Above, Below } kind = None;
  double bound = 0.0;

  bool ok(double x) const { return kind == None || (kind == Above ? x > bound : x < bound); }
};

/// Normal(mu, sigma^2) restricted by a one-sided constraint.
inline double truncated_normal(double mu, double sigma, const Constraint& c, Rng& rng) {
  switch (c.kind) {
    case Constraint::Above:
      return mu + sigma * truncated_std_normal_above((c.bound - mu) / sigma, rng);
    case Constraint::Below:
      return mu - sigma * truncated_std_normal_above((mu - c.bound) / sigma, rng);
    default:
      return mu + sigma * std::normal_distribution<double>()(rng);
  }
}

/// Single-site heat-bath for a Gaussian Markov field with one-sided
/// constraints on some free nodes. Pinned nodes keep their values.
class HeatBath {
 public:
  HeatBath(std::shared_ptr<const GaussianMarkovField> field, std::vector<double> pinned_values, std::vector<Constraint> cons)
      : field_(std::move(field)), x_(std::move(pinned_values)), cons_(std::move(cons)) {
    const std::size_t n = field_->size();
    if (x_.size() != n || cons_.size() != n) throw RangeError("HeatBath: size mismatch");
    for (std::size_t i = 0; i < n; ++i)
      if (field_->pinned(i) && !cons_[i].ok(x_[i])) throw ConfigError("HeatBath: pinned value violates its constraint");
    reset(0.0);
  }

  /// Feasible starting state, pushed `spread` further into each constraint
  /// (dispersed starts for the split-chain diagnostic).
  void reset(double spread) {
    for (std::size_t i : field_->free_nodes()) {
      const auto& c = cons_[i];
      x_[i] = c.kind == Constraint::Above ? c.bound + 0.5 + spread : c.kind == Constraint::Below ? c.bound - 0.5 - spread : spread;
    }
  }

  /// Conditional law of a free node given the rest: Normal(sum c_j x_j / D, 1/D).
  std::pair<double, double> conditional(std::size_t i) const {
    double s = 0.0;
    for (const auto& l : field_->links(i)) s += l.c * x_[l.to];
    const double d = field_->degree(i);
    return {s / d, 1.0 / std::sqrt(d)};
  }

  void sweep(Rng& rng) {
    for (std::size_t i : field_->free_nodes()) {
      const auto [mu, sd] = conditional(i);
      x_[i] = truncated_normal(mu, sd, cons_[i], rng);
    }
  }

  const std::vector<double>& state() const { return x_; }
  const GaussianMarkovField& field() const { return *field_; }
  const std::vector<Constraint>& constraints() const { return cons_; }

 private:
  std::shared_ptr<const GaussianMarkovField> field_;
  std::vector<double> x_;
  std::vector<Constraint> cons_;
};

struct ChainOptions {
  std::size_t chains = 4;
  std::size_t burn_in = 200;      // minimum; extended until the diagnostic passes
  std::size_t max_burn_in = 20000;
  double spread = 1.0;            // start of chain c is offset by c * spread
  std::size_t samples = 1000;  // per chain, after thinning
  std::size_t thin = 10;
};

struct ChainResult {
  std::vector<std::vector<double>> traces;
  double rhat = 0.0;
  bool converged = false;
  std::size_t burn_in = 0;  // sweeps actually discarded
  stats::MeanSe mean;       // pooled batch means
};

/// Runs independent heat-bath chains from dispersed starts and records a
/// scalar statistic. Burn-in lasts at least opt.burn_in sweeps and is
/// extended in windows until the split-chain diagnostic on the latest
/// window drops below 1.05 (or max_burn_in is reached).
inline ChainResult run_chains(const HeatBath& proto, const std::function<double(const std::vector<double>&)>& stat,
                              std::vector<Rng> rngs, const ChainOptions& opt) {
  if (opt.chains < 1 || rngs.size() < opt.chains) throw RangeError("run_chains: one generator per chain");
  ChainResult res;
  std::vector<HeatBath> hb(opt.chains, proto);
  for (std::size_t c = 0; c < opt.chains; ++c) hb[c].reset(opt.spread * static_cast<double>(c));
  auto advance = [&](std::size_t sweeps, std::vector<std::vector<double>>* window) {
    for (std::size_t c = 0; c < opt.chains; ++c)
      for (std::size_t s = 0; s < sweeps; ++s) {
        hb[c].sweep(rngs[c]);
        if (window) (*window)[c].push_back(stat(hb[c].state()));
      }
  };
  advance(opt.burn_in, nullptr);
  res.burn_in = opt.burn_in;
  const std::size_t win = std::max<std::size_t>(50, opt.burn_in / 2);
  while (opt.chains >= 2 && res.burn_in < opt.max_burn_in) {
    std::vector<std::vector<double>> window(opt.chains);
    advance(win, &window);
    res.burn_in += win;
    if (stats::split_rhat(window) < 1.05) break;
  }
  res.traces.assign(opt.chains, {});
  for (std::size_t c = 0; c < opt.chains; ++c) {
    res.traces[c].reserve(opt.samples);
    for (std::size_t s = 0; s < opt.samples; ++s) {
      for (std::size_t t = 0; t < opt.thin; ++t) hb[c].sweep(rngs[c]);
      res.traces[c].push_back(stat(hb[c].state()));
    }
  }
  res.rhat = opt.chains >= 2 ? stats::split_rhat(res.traces) : 1.0;
  res.converged = res.rhat < 1.05;
  std::vector<double> pooled;
  for (const auto& t : res.traces) pooled.insert(pooled.end(), t.begin(), t.end());
  res.mean = stats::batch_means(pooled, std::min<std::size_t>(20 * opt.chains, pooled.size()));
  return res;
}

// ---------------------------------------------------------------------------
// Entropic repulsion instance

/// Box with zero boundary, a pinned point w at the centre with value
/// lambda + eps/2, and every other interior vertex constrained above
/// lambda + eps. v is the east neighbour of w. With pin_w = false the
/// centre is constrained like everything else (the repulsion control).
struct EntropicInstance {
  Box box;
  Vertex v = 0, w = 0;
  double lambda = 1.0, eps = 0.0;
  bool pinned = true;
  std::shared_ptr<const GaussianMarkovField> field;
  std::vector<double> values;
  std::vector<Constraint> cons;

  HeatBath sampler() const { return HeatBath(field, values, cons); }
};

inline EntropicInstance entropic_instance(int n, double lambda, double eps, bool pin_w = true) {
  if (n % 2 == 0) throw SizeError("entropic_instance: N must be odd");
  EntropicInstance in{Box(n), 0, 0, lambda, eps, pin_w, nullptr, {}, {}};
  in.lambda = lambda;
  in.eps = eps;
  in.pinned = pin_w;
  in.w = in.box.vertex({0, 0});
  in.v = in.box.vertex({1, 0});
  std::vector<char> pinned(in.box.size(), 0);
  for (Vertex b : in.box.boundary()) pinned[b] = 1;
  in.values.assign(in.box.size(), 0.0);
  in.cons.assign(in.box.size(), Constraint{});
  for (Vertex u : in.box.interior()) in.cons[u] = {Constraint::Above, lambda + eps};
  if (pin_w) {
    pinned[in.w] = 1;
    in.values[in.w] = lambda + eps / 2.0;
    in.cons[in.w] = {};
  }
  in.field = std::make_shared<const GaussianMarkovField>(lattice_field(Domain(in.box, pinned)));
  return in;
}

struct EntropicEstimate {
  int n = 0;
  stats::MeanSe mean;
  double rhat = 0.0;
  bool converged = false;
};

inline EntropicEstimate entropic_mean(const EntropicInstance& in, const std::vector<Rng>& rngs, const ChainOptions& opt) {
  const Vertex v = in.v;
  const auto r = run_chains(in.sampler(), [v](const std::vector<double>& x) { return x[v]; }, rngs, opt);
  return {in.box.side(), r.mean, r.rhat, r.converged};
}

struct BrascampLieb {
  stats::MeanSe conditional;  // Var(l.Z | constraints), batch-means SE
  double unconditional = 0.0; // exact Var(l.Z) given the pinned values
  double rhat = 0.0;
  // The small absolute slack absorbs rounding when l.Z is constant.
  bool holds(double z = 3.0) const { return conditional.mean <= unconditional + z * conditional.se + 1e-12 * (1.0 + unconditional); }
};

/// Compares the constrained variance of l.Z (MC) with the unconstrained one (exact).
inline BrascampLieb brascamp_lieb_check(const HeatBath& proto, const std::vector<double>& l, const std::vector<Rng>& rngs,
                                        const ChainOptions& opt) {
  const auto& f = proto.field();
  BrascampLieb out;
  out.unconditional = f.conditional_variance(l);
  const auto stat = [&l](const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += l[i] * x[i];
    return s;
  };
  const auto r = run_chains(proto, stat, rngs, opt);
  out.rhat = r.rhat;
  std::vector<double> pooled;
  for (const auto& t : r.traces) pooled.insert(pooled.end(), t.begin(), t.end());
  const double m = r.mean.mean;
  std::vector<double> sq;
  sq.reserve(pooled.size());
  for (double y : pooled) sq.push_back((y - m) * (y - m));
  out.conditional = stats::batch_means(sq, std::min<std::size_t>(20 * opt.chains, sq.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Softened one-sided potentials and the stochastic ordering step

struct SitePotential {
  enum Kind { Zero, U, V, W } kind = Zero;
  double centre = 0.0;
  double q = 1.0;

  double operator()(double t) const {
    const double s = t - centre, s4 = q * s * s * s * s;
    switch (kind) {
      case U:
        return s < 0.0 ? s4 : 0.0;
      case V:
        return s >= 0.0 ? s4 : 0.0;
      case W:
        return s4;
      default:
        return 0.0;
    }
  }
};

/// max over the grid of h2(t v t') + h1(t ^ t') - h2(t) - h1(t'); must be <= 0.
inline double pair_inequality_worst(const SitePotential& h1, const SitePotential& h2, double lo, double hi, int steps) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; j <= steps; ++j) {
      const double t = lo + (hi - lo) * i / steps, tp = lo + (hi - lo) * j / steps;
      worst = std::max(worst, (h2(std::max(t, tp)) - h2(t)) + (h1(std::min(t, tp)) - h1(tp)));
    }
  return worst;
}

struct OrderReport {
  std::vector<double> max_excess;  // per coordinate, max_t F2(t) - F1(t)
  bool dominated = true;
  std::vector<std::vector<double>> cdf1, cdf2;
  std::vector<double> grid;
};

/// Marginal CDFs of mu_k(dr) ~ exp(-1/2 r'Ar - sum_i h_k,i(r_i)) dr, k = 1, 2,
/// on a common tensor grid (up to 3 sites); checks that mu_2 dominates mu_1
/// coordinate-wise.
inline OrderReport stochastic_order_check(const Eigen::MatrixXd& a, const std::vector<SitePotential>& h1,
                                          const std::vector<SitePotential>& h2, double lo, double hi, int points,
                                          double tol = 1e-6) {
  const auto k = static_cast<int>(a.rows());
  if (k < 1 || k > 3 || a.cols() != k) throw SizeError("stochastic_order_check: 1 to 3 sites");
  if (static_cast<int>(h1.size()) != k || static_cast<int>(h2.size()) != k) throw RangeError("stochastic_order_check: one potential per site");
  OrderReport rep;
  rep.grid.resize(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) rep.grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
  std::size_t total = 1;
  for (int i = 0; i < k; ++i) total *= static_cast<std::size_t>(points);
  auto marginals = [&](const std::vector<SitePotential>& h) {
    std::vector<std::vector<double>> marg(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(points), 0.0));
    std::vector<double> logd(total);
    double mx = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd r(k);
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rem = idx;
      double pot = 0.0;
      for (int i = 0; i < k; ++i) {
        r[i] = rep.grid[rem % static_cast<std::size_t>(points)];
        rem /= static_cast<std::size_t>(points);
        pot += h[static_cast<std::size_t>(i)](r[i]);
      }
      logd[idx] = -0.5 * r.dot(a * r) - pot;
      mx = std::max(mx, logd[idx]);
    }
    double z = 0.0;
    for (std::size_t idx = 0; idx < total; ++idx) {
      const double p = std::exp(logd[idx] - mx);
      z += p;
      std::size_t rem = idx;
      for (int i = 0; i < k; ++i) {
        marg[static_cast<std::size_t>(i)][rem % static_cast<std::size_t>(points)] += p;
        rem /= static_cast<std::size_t>(points);
      }
    }
    for (auto& m : marg) {
      double c = 0.0;
      for (double& x : m) {
        c += x / z;
        x = c;
      }
    }
    return marg;
  };
  rep.cdf1 = marginals(h1);
  rep.cdf2 = marginals(h2);
  for (int i = 0; i < k; ++i) {
    double ex = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < points; ++j)
      ex = std::max(ex, rep.cdf2[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -
                            rep.cdf1[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    rep.max_excess.push_back(ex);
    if (ex > tol) rep.dominated = false;
  }
  return rep;
}

/// CDF of Normal(mu, sigma^2) conditioned to exceed a.
inline double truncated_normal_cdf(double t, double mu, double sigma, double a) {
  if (t <= a) return 0.0;
  const double fa = stats::normal_cdf((a - mu) / sigma);
  return (stats::normal_cdf((t - mu) / sigma) - fa) / (1.0 - fa);
}

}  // namespace gfflab
