#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gfflab/errors.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/rng.hpp"

namespace gfflab {

using SpMat = Eigen::SparseMatrix<double>;
using SparseLLT = Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>>;

namespace detail {

inline SpMat killed_walk_operator(const Domain& d, double diag, double off) {
  const Box& box = d.box();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(d.free_count() * 5);
  for (Vertex v : d.free_vertices()) {
    const int i = static_cast<int>(d.local(v));
    trip.emplace_back(i, i, diag);
    for (int k = 0; k < 4; ++k) {
      const auto w = box.neighbor(v, k);
      if (w == kNone || d.killed(static_cast<Vertex>(w))) continue;
      trip.emplace_back(i, static_cast<int>(d.local(static_cast<Vertex>(w))), off);
    }
  }
  const int n = static_cast<int>(d.free_count());
  SpMat m(n, n);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

inline void fill_normals(Rng& rng, Eigen::VectorXd& z) {
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = nd(rng);
}

}  // namespace detail

/// Dense Green's function of simple random walk killed on the killed set:
/// G = (I - P)^{-1} on the free vertices. Intended for small domains.
class GreenMatrix {
 public:
  explicit GreenMatrix(const Domain& d) : domain_(d) {
    if (d.free_count() == 0) throw DomainEmptyError("green_matrix: every vertex is killed");
    if (d.free_count() > 10000) throw SizeError("green_matrix: dense table limited to 10^4 free vertices");
    const Eigen::MatrixXd q = Eigen::MatrixXd(detail::killed_walk_operator(d, 1.0, -0.25));
    const auto n = static_cast<Eigen::Index>(d.free_count());
    g_ = q.llt().solve(Eigen::MatrixXd::Identity(n, n));
    g_ = 0.5 * (g_ + g_.transpose()).eval();
  }

  const Domain& domain() const { return domain_; }
  /// G(u,v) by box vertex; zero if either vertex is killed.
  double operator()(Vertex u, Vertex v) const {
    const auto a = domain_.local(u), b = domain_.local(v);
    if (a == kNone || b == kNone) return 0.0;
    return g_(a, b);
  }
  const Eigen::MatrixXd& matrix() const { return g_; }

 private:
  Domain domain_;
  Eigen::MatrixXd g_;
};

inline GreenMatrix green_matrix(const Box& box, const std::vector<char>& killed) {
  return GreenMatrix(Domain(box, killed));
}

/// Sparse-factorised Green operator for large domains; G is never formed.
class SparseGreen {
 public:
  explicit SparseGreen(const Domain& d) : domain_(d) {
    if (d.free_count() == 0) throw DomainEmptyError("SparseGreen: every vertex is killed");
    llt_->compute(detail::killed_walk_operator(d, 1.0, -0.25));
    if (llt_->info() != Eigen::Success) throw PrecisionError("SparseGreen: factorisation failed");
  }

  const Domain& domain() const { return domain_; }

  /// (G f)(v) for v in the box, f given per box vertex (killed entries ignored).
  std::vector<double> apply(std::span<const double> f) const {
    Eigen::VectorXd b(static_cast<Eigen::Index>(domain_.free_count()));
    for (Vertex v : domain_.free_vertices()) b[domain_.local(v)] = f[v];
    const Eigen::VectorXd x = llt_->solve(b);
    std::vector<double> out(domain_.box().size(), 0.0);
    for (Vertex v : domain_.free_vertices()) out[v] = x[domain_.local(v)];
    return out;
  }

  /// Sum of G(u,v) over u,v in the given vertex list (killed ones count 0).
  double pair_sum(const std::vector<Vertex>& set) const {
    std::vector<double> f(domain_.box().size(), 0.0);
    for (Vertex v : set) f[v] += 1.0;
    const auto g = apply(f);
    double s = 0.0;
    for (Vertex v : set) s += g[v];
    return s;
  }

  double entry(Vertex u, Vertex v) const {
    std::vector<double> f(domain_.box().size(), 0.0);
    f[v] = 1.0;
    return apply(f)[u];
  }

 private:
  Domain domain_;
  std::shared_ptr<SparseLLT> llt_ = std::make_shared<SparseLLT>();  // shared read-only after construction
};

struct WeightedEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double c = 1.0;
};

/// Gaussian field with density proportional to exp(-1/2 sum_e c_e (x_a - x_b)^2)
/// given the values on a pinned node set. The precision on the free nodes is
/// factorised once; sampling, conditional means and conditional variances
/// of linear functionals are then triangular solves.
class GaussianMarkovField {
 public:
  GaussianMarkovField(std::size_t n, const std::vector<WeightedEdge>& edges, std::vector<char> pinned)
      : n_(n), pinned_(std::move(pinned)), local_(n, kNone) {
    if (pinned_.size() != n) throw RangeError("GaussianMarkovField: pinned mask has wrong size");
    for (std::size_t i = 0; i < n; ++i)
      if (!pinned_[i]) {
        local_[i] = static_cast<std::ptrdiff_t>(free_.size());
        free_.push_back(i);
      }
    if (free_.empty()) throw DomainEmptyError("GaussianMarkovField: no free node");
    std::vector<Eigen::Triplet<double>> qff, qfs;
    diag_.assign(n, 0.0);
    adj_.assign(n, {});
    for (const auto& e : edges) {
      diag_[e.a] += e.c;
      diag_[e.b] += e.c;
      adj_[e.a].push_back({e.b, e.c});
      adj_[e.b].push_back({e.a, e.c});
      const auto la = local_[e.a], lb = local_[e.b];
      if (la != kNone && lb != kNone) {
        qff.emplace_back(la, lb, -e.c);
        qff.emplace_back(lb, la, -e.c);
      } else if (la != kNone) {
        qfs.emplace_back(la, static_cast<int>(e.b), -e.c);
      } else if (lb != kNone) {
        qfs.emplace_back(lb, static_cast<int>(e.a), -e.c);
      }
    }
    for (std::size_t i : free_) {
      if (diag_[i] <= 0.0) throw DomainEmptyError("GaussianMarkovField: isolated free node");
      qff.emplace_back(local_[i], local_[i], diag_[i]);
    }
    const auto nf = static_cast<int>(free_.size());
    q_ff_.resize(nf, nf);
    q_ff_.setFromTriplets(qff.begin(), qff.end());
    q_fs_.resize(nf, static_cast<int>(n));
    q_fs_.setFromTriplets(qfs.begin(), qfs.end());
    llt_->compute(q_ff_);
    if (llt_->info() != Eigen::Success) throw PrecisionError("GaussianMarkovField: precision not positive definite");
  }

  std::size_t size() const { return n_; }
  bool pinned(std::size_t i) const { return pinned_[i] != 0; }
  const std::vector<char>& pinned_mask() const { return pinned_; }
  const std::vector<std::size_t>& free_nodes() const { return free_; }
  /// Total conductance at node i (the diagonal of the precision).
  double degree(std::size_t i) const { return diag_[i]; }
  struct Link {
    std::size_t to;
    double c;
  };
  const std::vector<Link>& links(std::size_t i) const { return adj_[i]; }

  /// Conditional mean: pinned entries copied, free entries harmonic.
  std::vector<double> harmonic_extension(std::span<const double> values) const {
    std::vector<double> out(n_, 0.0);
    const Eigen::VectorXd mu = free_mean(values);
    for (std::size_t i = 0; i < n_; ++i) out[i] = pinned_[i] ? values[i] : mu[local_[i]];
    return out;
  }

  /// Exact draw given the pinned values (only pinned entries of `values` are read).
  void sample(std::span<const double> values, Rng& rng, std::span<double> out) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(free_.size()));
    detail::fill_normals(rng, z);
    const Eigen::VectorXd y = llt_->matrixU().solve(z);
    const Eigen::VectorXd x = llt_->permutationPinv() * y;
    const Eigen::VectorXd mu = free_mean(values);
    for (std::size_t i = 0; i < n_; ++i) out[i] = pinned_[i] ? values[i] : mu[local_[i]] + x[local_[i]];
  }

  std::vector<double> sample(std::span<const double> values, Rng& rng) const {
    std::vector<double> out(n_);
    sample(values, rng, out);
    return out;
  }

  /// Conditional variance of sum_i w_i x_i given the pinned values.
  double conditional_variance(std::span<const double> w) const {
    Eigen::VectorXd wf(static_cast<Eigen::Index>(free_.size()));
    for (std::size_t i : free_) wf[local_[i]] = w[i];
    return wf.dot(llt_->solve(wf));
  }

  /// Coefficients c with E[w.x | pinned] = sum over pinned i of c_i x_i.
  std::vector<double> pinned_weights(std::span<const double> w) const {
    Eigen::VectorXd wf(static_cast<Eigen::Index>(free_.size()));
    for (std::size_t i : free_) wf[local_[i]] = w[i];
    const Eigen::VectorXd y = llt_->solve(wf);
    const Eigen::VectorXd back = q_fs_.transpose() * y;
    std::vector<double> c(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      if (pinned_[i]) c[i] = w[i] - back[static_cast<Eigen::Index>(i)];
    return c;
  }

 private:
  Eigen::VectorXd free_mean(std::span<const double> values) const {
    Eigen::VectorXd xs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    bool any = false;
    for (std::size_t i = 0; i < n_; ++i)
      if (pinned_[i] && values[i] != 0.0) {
        xs[static_cast<Eigen::Index>(i)] = values[i];
        any = true;
      }
    if (!any) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(free_.size()));
    const Eigen::VectorXd rhs = -(q_fs_ * xs);
    return llt_->solve(rhs);
  }

  std::size_t n_;
  std::vector<char> pinned_;
  std::vector<std::ptrdiff_t> local_;
  std::vector<std::size_t> free_;
  std::vector<double> diag_;
  std::vector<std::vector<Link>> adj_;
  SpMat q_ff_, q_fs_;
  std::shared_ptr<SparseLLT> llt_ = std::make_shared<SparseLLT>();  // shared read-only after construction
};

/// Unit-conductance lattice field pinned on the killed set of a domain.
/// Its law with zero pinned values is the DGFF with covariance G/4.
inline GaussianMarkovField lattice_field(const Domain& d) {
  std::vector<WeightedEdge> edges;
  for (const auto& e : d.box().edges()) edges.push_back({e.u, e.v, 1.0});
  return GaussianMarkovField(d.box().size(), edges, d.killed_mask());
}

enum class SampleMethod { Dense, Sparse };

inline const char* to_string(SampleMethod m) { return m == SampleMethod::Dense ? "dense" : "sparse"; }

struct FieldSample {
  int n = 0;
  std::vector<double> values;  // row-major, one per box vertex
  std::uint64_t seed = 0;
  std::string method;

  double operator[](Vertex v) const { return values[v]; }
};

/// Dense oracle sampler: Cholesky factor of G/4, eta = L z.
class DenseDgffSampler {
 public:
  explicit DenseDgffSampler(const Domain& d) : domain_(d) {
    if (d.free_count() > 10000) throw SizeError("dense sampler limited to 10^4 interior vertices");
    GreenMatrix g(d);
    const Eigen::MatrixXd cov = 0.25 * g.matrix();
    l_ = cov.llt().matrixL();
  }

  FieldSample sample(Rng& rng) const {
    Eigen::VectorXd z(l_.rows());
    detail::fill_normals(rng, z);
    const Eigen::VectorXd x = l_.triangularView<Eigen::Lower>() * z;
    FieldSample f{domain_.box().side(), std::vector<double>(domain_.box().size(), 0.0), 0, "dense"};
    for (Vertex v : domain_.free_vertices()) f.values[v] = x[domain_.local(v)];
    return f;
  }

 private:
  Domain domain_;
  Eigen::MatrixXd l_;
};

/// Sparse sampler built on the factorised precision (the Dirichlet energy).
class SparseDgffSampler {
 public:
  explicit SparseDgffSampler(const Domain& d) : domain_(d), field_(lattice_field(d)), zeros_(d.box().size(), 0.0) {}

  FieldSample sample(Rng& rng) const {
    FieldSample f{domain_.box().side(), std::vector<double>(domain_.box().size()), 0, "sparse"};
    field_.sample(zeros_, rng, f.values);
    return f;
  }
  void sample_into(Rng& rng, std::span<double> out) const { field_.sample(zeros_, rng, out); }
  const GaussianMarkovField& field() const { return field_; }

 private:
  Domain domain_;
  GaussianMarkovField field_;
  std::vector<double> zeros_;
};

/// One-shot DGFF draw on V_N with zero boundary.
inline FieldSample sample_dgff(const Box& box, Rng& rng, SampleMethod method = SampleMethod::Sparse) {
  const Domain d(box);
  if (method == SampleMethod::Dense) {
    if (d.free_count() > 10000) throw SizeError("sample_dgff: dense method limited to 10^4 interior vertices");
    return DenseDgffSampler(d).sample(rng);
  }
  return SparseDgffSampler(d).sample(rng);
}

/// Markov-property resampling: values on S (and zero on the boundary) are
/// kept, the rest is the harmonic extension plus an independent DGFF killed
/// on S and the boundary.
class ConditionalDgffSampler {
 public:
  ConditionalDgffSampler(const Box& box, const std::vector<char>& pinned_mask)
      : box_(box), field_(lattice_field(Domain(box, pinned_mask))) {}

  FieldSample sample(std::span<const double> values, Rng& rng) const {
    std::vector<double> v(values.begin(), values.end());
    for (Vertex b : box_.boundary()) v[b] = 0.0;
    FieldSample f{box_.side(), std::vector<double>(box_.size()), 0, "conditional"};
    field_.sample(v, rng, f.values);
    return f;
  }
  const GaussianMarkovField& field() const { return field_; }

 private:
  Box box_;
  GaussianMarkovField field_;
};

inline FieldSample sample_conditional_dgff(const Box& box, const std::vector<Vertex>& s,
                                           std::span<const double> values, Rng& rng) {
  if (s.empty()) return sample_dgff(box, rng);
  std::vector<char> mask(box.size(), 0);
  for (Vertex v : s) mask[v] = 1;
  return ConditionalDgffSampler(box, mask).sample(values, rng);
}

// ---------------------------------------------------------------------------
// Metric graph

/// Field on the metric graph, stored at mesh points. mesh[f] holds, for
/// family f, edge-major blocks of interior_points values ordered from the
/// edge's first endpoint (Edge::u) to its second.
struct MetricFieldSample {
  std::shared_ptr<const MetricGraphSpec> spec;
  std::vector<double> vertex;
  std::vector<std::vector<double>> mesh;

  double at(std::size_t family, std::size_t edge, int k) const {
    const auto& fam = spec->families[family];
    return mesh[family][edge * static_cast<std::size_t>(fam.interior_points) + static_cast<std::size_t>(k)];
  }
};

/// Draws a rate-2 Brownian bridge (Var at time t of the free path is 2t)
/// from a to b over [0, length] at `points` equally spaced interior times.
inline void sample_bridge(double a, double b, double length, int points, Rng& rng, double* out) {
  std::normal_distribution<double> nd;
  const double h = length / static_cast<double>(points + 1);
  double y = a;
  for (int k = 0; k < points; ++k) {
    const double remaining = length - static_cast<double>(k) * h;
    const double mean = y + (b - y) * h / remaining;
    const double var = 2.0 * h * (remaining - h) / remaining;
    y = mean + std::sqrt(var) * nd(rng);
    out[k] = y;
  }
}

inline MetricFieldSample extend_to_metric(const FieldSample& field, std::shared_ptr<const MetricGraphSpec> spec, Rng& rng) {
  if (field.n != spec->base.side()) throw RangeError("extend_to_metric: field and spec boxes differ");
  MetricFieldSample m{spec, field.values, {}};
  const auto& edges = spec->base.edges();
  for (const auto& fam : spec->families) {
    std::vector<double> vals(edges.size() * static_cast<std::size_t>(fam.interior_points));
    for (std::size_t e = 0; e < edges.size(); ++e)
      sample_bridge(field.values[edges[e].u], field.values[edges[e].v], fam.length, fam.interior_points, rng,
                    vals.data() + e * static_cast<std::size_t>(fam.interior_points));
    m.mesh.push_back(std::move(vals));
  }
  return m;
}

/// Node layout of the refined graph: lattice vertices first, then the
/// interior mesh points of family 0, edge-major.
inline std::size_t metric_node(const MetricGraphSpec& spec, std::size_t edge, int k) {
  return spec.base.size() + edge * static_cast<std::size_t>(spec.families[0].interior_points) + static_cast<std::size_t>(k);
}

/// Joint Gaussian law of lattice values and family-0 mesh values: family 0
/// is subdivided into segments of conductance 1/(2 spacing), any other
/// family is integrated out into a direct edge of its conductance.
inline GaussianMarkovField metric_field(const MetricGraphSpec& spec, const std::vector<char>& extra_pinned = {}) {
  const auto& box = spec.base;
  const auto& f0 = spec.families[0];
  const std::size_t n = box.size() + box.edges().size() * static_cast<std::size_t>(f0.interior_points);
  std::vector<WeightedEdge> edges;
  const double c0 = 1.0 / (2.0 * f0.spacing());
  for (std::size_t e = 0; e < box.edges().size(); ++e) {
    std::size_t prev = box.edges()[e].u;
    for (int k = 0; k < f0.interior_points; ++k) {
      const std::size_t node = metric_node(spec, e, k);
      edges.push_back({prev, node, c0});
      prev = node;
    }
    edges.push_back({prev, box.edges()[e].v, c0});
    for (std::size_t f = 1; f < spec.families.size(); ++f)
      edges.push_back({box.edges()[e].u, box.edges()[e].v, spec.families[f].conductance});
  }
  std::vector<char> pinned(n, 0);
  for (Vertex b : box.boundary()) pinned[b] = 1;
  for (std::size_t i = 0; i < extra_pinned.size() && i < n; ++i)
    if (extra_pinned[i]) pinned[i] = 1;
  return GaussianMarkovField(n, edges, pinned);
}

/// Packs family-0 mesh values and lattice values into the node layout above.
inline std::vector<double> metric_nodes(const MetricFieldSample& m) {
  std::vector<double> x(m.vertex);
  x.insert(x.end(), m.mesh[0].begin(), m.mesh[0].end());
  return x;
}

/// Inverse of metric_nodes; families other than 0 are redrawn as bridges.
inline MetricFieldSample metric_from_nodes(std::shared_ptr<const MetricGraphSpec> spec, std::span<const double> x, Rng& rng) {
  const std::size_t nv = spec->base.size();
  MetricFieldSample m{spec, std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nv)), {}};
  m.mesh.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(nv), x.end());
  const auto& edges = spec->base.edges();
  for (std::size_t f = 1; f < spec->families.size(); ++f) {
    const auto& fam = spec->families[f];
    std::vector<double> vals(edges.size() * static_cast<std::size_t>(fam.interior_points));
    for (std::size_t e = 0; e < edges.size(); ++e)
      sample_bridge(m.vertex[edges[e].u], m.vertex[edges[e].v], fam.length, fam.interior_points, rng,
                    vals.data() + e * static_cast<std::size_t>(fam.interior_points));
    m.mesh.push_back(std::move(vals));
  }
  return m;
}

/// P(a rate-2 Brownian bridge from a to b over length L stays above lambda).
inline double bridge_above_prob(double a, double b, double lambda, double length) {
  if (!(length > 0.0)) throw RangeError("bridge_above_prob: length must be positive");
  if (!(a > lambda && b > lambda)) return 0.0;
  const double p = -std::expm1(-(a - lambda) * (b - lambda) / length);
  return std::clamp(p, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Snapshots

inline void write_field_csv(const FieldSample& f, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("write_field_csv: cannot open " + path);
  os << "# N=" << f.n << " seed=" << f.seed << " method=" << f.method << "\n";
  os.precision(17);
  for (int r = 0; r < f.n; ++r) {
    for (int c = 0; c < f.n; ++c) {
      if (c) os << ',';
      os << f.values[static_cast<std::size_t>(r * f.n + c)];
    }
    os << '\n';
  }
}

inline FieldSample read_field_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("read_field_csv: cannot open " + path);
  FieldSample f;
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string tok;
  while (hs >> tok) {
    if (tok.rfind("N=", 0) == 0) f.n = std::stoi(tok.substr(2));
    else if (tok.rfind("seed=", 0) == 0) f.seed = std::stoull(tok.substr(5));
    else if (tok.rfind("method=", 0) == 0) f.method = tok.substr(7);
  }
  if (f.n < 3) throw Error("read_field_csv: bad header");
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.values.push_back(std::stod(cell));
  }
  if (f.values.size() != static_cast<std::size_t>(f.n * f.n)) throw Error("read_field_csv: wrong value count");
  return f;
}

inline void write_field_binary(const FieldSample& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_field_binary: cannot open " + path);
  const char magic[4] = {'G', 'F', 'F', '1'};
  os.write(magic, 4);
  const std::int32_t n = f.n;
  const auto len = static_cast<std::uint32_t>(f.method.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(&f.seed), sizeof f.seed);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(f.method.data(), len);
  os.write(reinterpret_cast<const char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double)));
}

inline FieldSample read_field_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("read_field_binary: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::string(magic, 4) != "GFF1") throw Error("read_field_binary: bad magic");
  FieldSample f;
  std::int32_t n = 0;
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  is.read(reinterpret_cast<char*>(&f.seed), sizeof f.seed);
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  f.n = n;
  f.method.resize(len);
  is.read(f.method.data(), len);
  f.values.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  is.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double)));
  if (!is) throw Error("read_field_binary: truncated file");
  return f;
}

}  // namespace gfflab
