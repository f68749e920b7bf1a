#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "gfflab/errors.hpp"

namespace gfflab::stats {

struct Interval {
  double estimate = 0.0;
  double low = 0.0;
  double high = 0.0;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

/// Wilson score interval for k successes in n trials.
inline Interval wilson(std::size_t k, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / denom;
  return {p, std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe r;
  r.n = xs.size();
  if (xs.empty()) return r;
  // Welford, so long runs of large values stay accurate.
  double m = 0.0, s = 0.0;
  std::size_t k = 0;
  for (double x : xs) {
    ++k;
    const double d = x - m;
    m += d / static_cast<double>(k);
    s += d * (x - m);
  }
  r.mean = m;
  r.sd = k > 1 ? std::sqrt(s / static_cast<double>(k - 1)) : 0.0;
  r.se = r.sd / std::sqrt(static_cast<double>(k));
  return r;
}

inline Interval normal_interval(const MeanSe& m, double z = 1.959963984540054) {
  return {m.mean, m.mean - z * m.se, m.mean + z * m.se};
}

/// Sample covariance with the standard error of the product-moment estimator.
inline MeanSe covariance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() > 1, "covariance: size mismatch");
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  std::vector<double> prod(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) prod[i] = (a[i] - ma) * (b[i] - mb);
  MeanSe r = mean_se(prod);
  const double n = static_cast<double>(a.size());
  r.mean *= n / (n - 1);
  return r;
}

/// Asymptotic Kolmogorov survival function Q(t) = 2 sum (-1)^{k-1} exp(-2 k^2 t^2).
inline double kolmogorov_survival(double t) {
  if (t < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k < 200; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test (Stephens' small-sample correction).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), "ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d)};
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "linear_fit: need two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

/// Split-chain potential scale reduction factor. Each chain is cut in half
/// and the halves are treated as separate chains.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::span<const double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) continue;
    halves.emplace_back(c.data(), h);
    halves.emplace_back(c.data() + h, h);
  }
  require(halves.size() >= 2, "split_rhat: chains too short");
  std::size_t n = halves.front().size();
  for (auto& h : halves) n = std::min(n, h.size());
  const double m = static_cast<double>(halves.size());
  std::vector<double> means;
  double w = 0.0;
  for (auto& h : halves) {
    auto s = mean_se(h.first(n));
    means.push_back(s.mean);
    w += s.sd * s.sd;
  }
  w /= m;
  const auto bm = mean_se(means);
  const double b = static_cast<double>(n) * bm.sd * bm.sd;
  if (w <= 0.0) return b <= 0.0 ? 1.0 : INFINITY;
  const double nn = static_cast<double>(n);
  const double var_plus = (nn - 1) / nn * w + b / nn;
  return std::sqrt(var_plus / w);
}

/// Standard error of a mean from an autocorrelated series via batch means.
inline MeanSe batch_means(std::span<const double> xs, std::size_t batches = 20) {
  require(xs.size() >= 2 * batches, "batch_means: series too short");
  const std::size_t len = xs.size() / batches;
  std::vector<double> bm(batches);
  for (std::size_t b = 0; b < batches; ++b)
    bm[b] = std::accumulate(xs.begin() + b * len, xs.begin() + (b + 1) * len, 0.0) /
            static_cast<double>(len);
  MeanSe r = mean_se(bm);
  r.n = xs.size();
  return r;
}

}  // namespace gfflab::stats
