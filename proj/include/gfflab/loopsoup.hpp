#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gfflab/errors.hpp"
#include "gfflab/gfield.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/levelset.hpp"
#include "gfflab/rng.hpp"

namespace gfflab {

/// Continuous-time loop: the jump chain skeleton (cyclic, starting at its
/// minimal vertex) and one holding time per skeleton visit.
struct Loop {
  std::vector<Vertex> skeleton;
  std::vector<double> holding;

  double duration() const {
    double s = 0.0;
    for (double h : holding) s += h;
    return s;
  }
};

struct LoopSoupSample {
  int n = 0;
  double alpha = 0.5;
  std::vector<Loop> loops;       // nontrivial loops
  std::vector<double> trivial;   // occupation from one-point loops, per box vertex
  std::uint64_t seed = 0;
};

inline constexpr double kHoldingRate = 4.0;

/// Exact sampler of the loop soup killed on a domain's killed set. Loops are
/// grouped by their minimal vertex x_j; those rooted at x_j live in D_j, the
/// domain with x_1..x_{j-1} removed, and visit x_j a logarithmically
/// distributed number k of times (P(k) proportional to F_j^k / k) where F_j
/// is the return probability to x_j in D_j. All F_j come from one sparse
/// LDL^T of I - P eliminated in reverse vertex order: the pivot of x_j is
/// 1 / G_{D_j}(x_j, x_j).
class LoopSoupSampler {
 public:
  LoopSoupSampler(const Domain& d, double alpha) : domain_(d), alpha_(alpha) {
    if (!(alpha > 0.0)) throw RangeError("loop soup: alpha must be positive");
    const auto n = static_cast<int>(d.free_count());
    if (n == 0) throw DomainEmptyError("loop soup: no free vertex");
    const SpMat q = detail::killed_walk_operator(d, 1.0, -0.25);
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> rev(n);
    for (int i = 0; i < n; ++i) rev.indices()[i] = n - 1 - i;
    SpMat qr;
    qr = q.twistedBy(rev);
    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::NaturalOrdering<int>> ldlt(qr);
    if (ldlt.info() != Eigen::Success) throw PrecisionError("loop soup: factorisation failed");
    const Eigen::VectorXd piv = ldlt.vectorD();
    ret_.assign(static_cast<std::size_t>(n), 0.0);
    for (int j = 0; j < n; ++j) ret_[static_cast<std::size_t>(j)] = std::clamp(1.0 - piv[n - 1 - j], 0.0, 1.0);
  }

  const Domain& domain() const { return domain_; }
  double alpha() const { return alpha_; }
  /// F_j, indexed like Domain::free_vertices().
  const std::vector<double>& return_probabilities() const { return ret_; }

  LoopSoupSample sample(Rng& rng) const {
    const Box& box = domain_.box();
    LoopSoupSample s;
    s.n = box.side();
    s.alpha = alpha_;
    s.trivial.assign(box.size(), 0.0);
    std::gamma_distribution<double> gam(alpha_, 1.0 / kHoldingRate);
    std::exponential_distribution<double> hold(kHoldingRate);
    const auto& fv = domain_.free_vertices();
    for (std::size_t j = 0; j < fv.size(); ++j) {
      s.trivial[fv[j]] = gam(rng);
      const double f = ret_[j];
      if (f <= 0.0) continue;
      const double mean = -alpha_ * std::log1p(-f);
      const auto count = std::poisson_distribution<long>(mean)(rng);
      for (long c = 0; c < count; ++c) {
        const int k = log_series(f, rng);
        Loop loop;
        for (int e = 0; e < k; ++e) excursion(fv[j], rng, loop.skeleton);
        loop.holding.resize(loop.skeleton.size());
        for (double& h : loop.holding) h = hold(rng);
        s.loops.push_back(std::move(loop));
      }
    }
    return s;
  }

 private:
  // P(k) = f^k / (k * -log(1-f)), by sequential inversion.
  static int log_series(double f, Rng& rng) {
    const double u = uniform01(rng);
    const double norm = -std::log1p(-f);
    double p = f / norm, cum = p;
    int k = 1;
    while (u > cum && k < 1000000) {
      p *= f * static_cast<double>(k) / static_cast<double>(k + 1);
      cum += p;
      ++k;
    }
    return k;
  }

  // Walk from x avoiding killed vertices and vertices below x until it
  // returns; failed attempts are discarded, which conditions on return.
  void excursion(Vertex x, Rng& rng, std::vector<Vertex>& out) const {
    const Box& box = domain_.box();
    std::uniform_int_distribution<int> dir(0, 3);
    std::vector<Vertex> path;
    for (;;) {
      path.assign(1, x);
      Vertex cur = x;
      bool ok = true;
      for (;;) {
        const auto w = box.neighbor(cur, dir(rng));
        if (w == kNone) {
          ok = false;
          break;
        }
        const auto wu = static_cast<Vertex>(w);
        if (wu == x) break;
        if (domain_.killed(wu) || wu < x) {
          ok = false;
          break;
        }
        path.push_back(wu);
        cur = wu;
      }
      if (ok) break;
    }
    out.insert(out.end(), path.begin(), path.end());
  }

  Domain domain_;
  double alpha_;
  std::vector<double> ret_;
};

inline LoopSoupSample sample_loop_soup(const Box& box, double alpha, Rng& rng) {
  return LoopSoupSampler(Domain(box), alpha).sample(rng);
}

/// Total time spent at each vertex, trivial loops included.
inline std::vector<double> occupation_field(const LoopSoupSample& s) {
  std::vector<double> l(s.trivial);
  for (const auto& loop : s.loops)
    for (std::size_t i = 0; i < loop.skeleton.size(); ++i) l[loop.skeleton[i]] += loop.holding[i];
  return l;
}

/// Lattice edge id joining two neighbouring vertices, kNone otherwise.
inline std::ptrdiff_t edge_between(const Box& box, Vertex u, Vertex w) {
  for (int d = 0; d < 4; ++d)
    if (box.neighbor(u, d) == static_cast<std::ptrdiff_t>(w)) return box.edge_id(u, d);
  return kNone;
}

/// Open-edge indicator per lattice edge: traversed by some nontrivial loop.
inline std::vector<char> induced_graph(const Box& box, const LoopSoupSample& s) {
  std::vector<char> open(box.edges().size(), 0);
  for (const auto& loop : s.loops) {
    const auto& sk = loop.skeleton;
    for (std::size_t i = 0; i < sk.size(); ++i) {
      const auto e = edge_between(box, sk[i], sk[(i + 1) % sk.size()]);
      if (e == kNone) throw Error("induced_graph: skeleton step is not a lattice edge");
      open[static_cast<std::size_t>(e)] = 1;
    }
  }
  return open;
}

/// BFS distances along open edges from a source set (-1 = unreachable).
inline std::vector<int> edge_bfs(const Box& box, const std::vector<char>& open_edges, const std::vector<Vertex>& sources) {
  std::vector<int> dist(box.size(), -1);
  std::deque<Vertex> q;
  for (Vertex s : sources)
    if (dist[s] < 0) {
      dist[s] = 0;
      q.push_back(s);
    }
  while (!q.empty()) {
    const Vertex v = q.front();
    q.pop_front();
    for (int d = 0; d < 4; ++d) {
      const auto e = box.edge_id(v, d);
      if (e == kNone || !open_edges[static_cast<std::size_t>(e)]) continue;
      const auto w = static_cast<Vertex>(box.neighbor(v, d));
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        q.push_back(w);
      }
    }
  }
  return dist;
}

inline int loop_chemical_distance(const Box& box, const std::vector<char>& open_edges, const std::vector<Vertex>& a,
                                  const std::vector<Vertex>& b) {
  const auto dist = edge_bfs(box, open_edges, a);
  int best = kInfiniteDistance;
  for (Vertex v : b)
    if (dist[v] >= 0) best = std::min(best, dist[v]);
  return best;
}

inline int loop_chemical_distance(const LoopSoupSample& s, const std::vector<Vertex>& a, const std::vector<Vertex>& b) {
  const Box box(s.n);
  return loop_chemical_distance(box, induced_graph(box, s), a, b);
}

struct SoupSummary {
  std::size_t loops = 0;
  double duration = 0.0;
  std::size_t open_edges = 0;
  std::size_t clusters = 0;  // components with at least one open edge
};

inline SoupSummary summarize(const Box& box, const LoopSoupSample& s) {
  SoupSummary out;
  out.loops = s.loops.size();
  for (const auto& l : s.loops) out.duration += l.duration();
  for (double t : s.trivial) out.duration += t;
  const auto open = induced_graph(box, s);
  std::vector<int> comp(box.size(), -1);
  for (Vertex v = 0; v < box.size(); ++v) {
    if (comp[v] >= 0) continue;
    bool has_edge = false;
    for (int d = 0; d < 4 && !has_edge; ++d) {
      const auto e = box.edge_id(v, d);
      has_edge = e != kNone && open[static_cast<std::size_t>(e)];
    }
    if (!has_edge) continue;
    const auto dist = edge_bfs(box, open, {v});
    for (Vertex w = 0; w < box.size(); ++w)
      if (dist[w] >= 0) comp[w] = static_cast<int>(out.clusters);
    ++out.clusters;
  }
  for (char o : open) out.open_edges += o != 0;
  return out;
}

/// One line per loop: skeleton vertices, then holding times.
inline void write_loop_dump(const LoopSoupSample& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("write_loop_dump: cannot open " + path);
  os << "# N=" << s.n << " alpha=" << s.alpha << " seed=" << s.seed << "\n";
  for (const auto& l : s.loops) {
    os << "skeleton";
    for (Vertex v : l.skeleton) os << ' ' << v;
    os << " ; holding";
    for (double h : l.holding) os << ' ' << h;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Brute-force oracle on tiny domains

struct LoopLaw {
  std::vector<std::size_t> edges;   // box edge ids, bit k of a pattern is edges[k]
  std::vector<double> class_mass;   // loop-measure mass of loops with edge set == mask
  std::vector<double> pattern;      // P(open edge set == mask)
  double tail_bound = 0.0;
  int max_length = 0;
};

namespace detail {

inline std::vector<std::size_t> tiny_domain_edges(const Domain& d) {
  if (d.free_count() > 4) throw SizeError("brute_force_loop_law: at most 4 free vertices");
  auto e = d.free_edges();
  if (e.size() > 16) throw SizeError("brute_force_loop_law: too many edges");
  return e;
}

}  // namespace detail

/// Spectral radius of the killed transition kernel.
inline double killed_spectral_radius(const Domain& d) {
  const Eigen::MatrixXd p = Eigen::MatrixXd(detail::killed_walk_operator(d, 0.0, 0.25));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Enumerates closed walks up to `max_length` jumps by dynamic programming
/// over (start, position, used edges) and groups their masses (1/n) 4^{-n}
/// by edge set. Patterns are then exact for independent Poisson classes.
inline LoopLaw brute_force_loop_law(const Domain& d, double alpha, int max_length, double tail_tol) {
  LoopLaw law;
  law.edges = detail::tiny_domain_edges(d);
  law.max_length = max_length;
  const std::size_t ne = law.edges.size(), masks = std::size_t{1} << ne;
  const double rho = d.free_count() == 0 ? 0.0 : killed_spectral_radius(d);
  if (rho >= 1.0) throw PrecisionError("brute_force_loop_law: kernel not substochastic");
  const double l1 = static_cast<double>(max_length + 1);
  law.tail_bound = static_cast<double>(d.free_count()) * std::pow(rho, l1) / (l1 * (1.0 - rho));
  if (law.tail_bound > tail_tol) throw TailBoundError("brute_force_loop_law: increase max_length");

  const Box& box = d.box();
  std::map<Vertex, std::size_t> pos;
  for (std::size_t i = 0; i < d.free_vertices().size(); ++i) pos[d.free_vertices()[i]] = i;
  const std::size_t nv = pos.size();
  struct Step {
    std::size_t to, bit;
  };
  std::vector<std::vector<Step>> adj(nv);
  for (std::size_t k = 0; k < ne; ++k) {
    const Edge& e = box.edges()[law.edges[k]];
    adj[pos[e.u]].push_back({pos[e.v], k});
    adj[pos[e.v]].push_back({pos[e.u], k});
  }
  law.class_mass.assign(masks, 0.0);
  for (std::size_t x = 0; x < nv; ++x) {
    // w[v * masks + m]: weight 4^{-n} of walks x -> v of length n using edge set m
    std::vector<double> w(nv * masks, 0.0), nxt(nv * masks);
    w[x * masks] = 1.0;
    for (int n = 1; n <= max_length; ++n) {
      std::fill(nxt.begin(), nxt.end(), 0.0);
      for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t m = 0; m < masks; ++m) {
          const double val = w[v * masks + m];
          if (val == 0.0) continue;
          for (const auto& s : adj[v]) nxt[s.to * masks + (m | (std::size_t{1} << s.bit))] += 0.25 * val;
        }
      w.swap(nxt);
      for (std::size_t m = 1; m < masks; ++m) law.class_mass[m] += w[x * masks + m] / static_cast<double>(n);
    }
  }
  law.pattern.assign(masks, 0.0);
  law.pattern[0] = 1.0;
  std::vector<double> next(masks);
  for (std::size_t s = 1; s < masks; ++s) {
    if (law.class_mass[s] <= 0.0) continue;
    const double present = -std::expm1(-alpha * law.class_mass[s]);
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t u = 0; u < masks; ++u) {
      next[u] += law.pattern[u] * (1.0 - present);
      next[u | s] += law.pattern[u] * present;
    }
    law.pattern.swap(next);
  }
  return law;
}

/// Independent route to the class masses: -log det(I - P_S) is the total
/// mass of loops using only edges of S; Moebius inversion isolates each class.
inline std::vector<double> loop_class_masses_logdet(const Domain& d) {
  const auto edges = detail::tiny_domain_edges(d);
  const std::size_t ne = edges.size(), masks = std::size_t{1} << ne;
  const auto nv = static_cast<Eigen::Index>(d.free_count());
  std::vector<double> total(masks, 0.0);
  for (std::size_t m = 0; m < masks; ++m) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(nv, nv);
    for (std::size_t k = 0; k < ne; ++k)
      if (m >> k & 1) {
        const Edge& e = d.box().edges()[edges[k]];
        a(d.local(e.u), d.local(e.v)) -= 0.25;
        a(d.local(e.v), d.local(e.u)) -= 0.25;
      }
    total[m] = -std::log(a.determinant());
  }
  std::vector<double> mass(masks, 0.0);
  for (std::size_t m = 0; m < masks; ++m)
    for (std::size_t sub = m;; sub = (sub - 1) & m) {
      const int sign = (std::popcount(m ^ sub) % 2) ? -1 : 1;
      mass[m] += sign * total[sub];
      if (sub == 0) break;
    }
  return mass;
}

/// Pattern index of a sampled soup in the brute-force edge ordering.
inline std::size_t pattern_mask(const LoopLaw& law, const std::vector<char>& open_edges) {
  std::size_t m = 0;
  for (std::size_t k = 0; k < law.edges.size(); ++k)
    if (open_edges[law.edges[k]]) m |= std::size_t{1} << k;
  return m;
}

}  // namespace gfflab
