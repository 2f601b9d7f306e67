#pragma once

// Test statistics for the Monte-Carlo experiments.  All p-values are
// two-sided.

#include "loopsoup/random.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace loopsoup::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int dof = 0;  // chi-square only
};

inline double normal_two_sided_p(double z) {
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

/// z = (hits/n - p0) / sqrt(p0 (1 - p0) / n).
inline TestResult prop_ztest(long hits, long n, double p0) {
  if (n < 1) throw std::invalid_argument("prop_ztest needs n >= 1");
  const double phat = static_cast<double>(hits) / n;
  const double se = std::sqrt(p0 * (1.0 - p0) / n);
  TestResult r;
  if (se == 0.0) {
    r.statistic = phat == p0 ? 0.0 : std::copysign(INFINITY, phat - p0);
  } else {
    r.statistic = (phat - p0) / se;
  }
  r.p_value = normal_two_sided_p(r.statistic);
  return r;
}

/// Kolmogorov distribution tail Q(t) = 2 sum (-1)^{j-1} exp(-2 j^2 t^2).
inline double kolmogorov_q(double t) {
  if (t < 1e-3) return 1.0;
  if (t < 1.18) {
    // small t: use the theta-function form, which converges fast there
    const double y = std::exp(-M_PI * M_PI / (8.0 * t * t));
    double s = 0.0;
    for (int j = 1; j < 50; j += 2) s += std::pow(y, j * j);
    return std::clamp(1.0 - std::sqrt(2.0 * M_PI) / t * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * t * t);
    s += (j % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-17) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

/// Two-sample Kolmogorov-Smirnov with the asymptotic p-value for the
/// effective size n m / (n + m).
inline TestResult ks_two_sample(std::vector<double> xs, std::vector<double> ys) {
  if (xs.empty() || ys.empty())
    throw std::invalid_argument("ks_two_sample needs two nonempty samples");
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  const double n = xs.size(), m = ys.size();
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < xs.size() && j < ys.size()) {
    const double v = std::min(xs[i], ys[j]);
    while (i < xs.size() && xs[i] == v) ++i;
    while (j < ys.size() && ys[j] == v) ++j;
    d = std::max(d, std::abs(i / n - j / m));
  }
  TestResult r;
  r.statistic = d;
  const double ne = std::sqrt(n * m / (n + m));
  r.p_value = kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
  return r;
}

inline double chi_square_sf(double x, int dof) {
  if (dof <= 0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

/// Pearson goodness of fit.  Adjacent buckets are merged left to right
/// until each has expected count >= 5; a short tail is folded into the last
/// full bucket.
inline TestResult chi_square_gof(const std::vector<double>& observed,
                                 const std::vector<double>& expected) {
  if (observed.size() != expected.size() || observed.empty())
    throw std::invalid_argument("chi_square_gof: size mismatch");
  std::vector<double> o, e;
  double ob = 0.0, eb = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    ob += observed[k];
    eb += expected[k];
    if (eb >= 5.0) {
      o.push_back(ob);
      e.push_back(eb);
      ob = eb = 0.0;
    }
  }
  if (eb > 0.0 || ob > 0.0) {
    if (e.empty()) {
      o.push_back(ob);
      e.push_back(eb);
    } else {
      o.back() += ob;
      e.back() += eb;
    }
  }
  TestResult r;
  for (std::size_t k = 0; k < o.size(); ++k)
    if (e[k] > 0.0) r.statistic += (o[k] - e[k]) * (o[k] - e[k]) / e[k];
  r.dof = static_cast<int>(o.size()) - 1;
  r.p_value = chi_square_sf(r.statistic, r.dof);
  return r;
}

/// Two-sample chi-square homogeneity test on categorical data given as
/// counts per category.  Categories whose pooled expected count is below 5
/// in either sample are pooled into one.
template <class Key>
TestResult chi_square_homogeneity(const std::map<Key, long>& a,
                                  const std::map<Key, long>& b) {
  std::map<Key, std::pair<long, long>> joint;
  for (const auto& [k, c] : a) joint[k].first += c;
  for (const auto& [k, c] : b) joint[k].second += c;
  double na = 0, nb = 0;
  for (const auto& [k, c] : joint) {
    na += c.first;
    nb += c.second;
  }
  if (na == 0 || nb == 0)
    throw std::invalid_argument("chi_square_homogeneity: empty sample");
  const double n = na + nb;
  std::vector<std::pair<double, double>> cells;
  std::pair<double, double> pool{0, 0};
  for (const auto& [k, c] : joint) {
    const double tot = c.first + c.second;
    if (std::min(tot * na / n, tot * nb / n) < 5.0) {
      pool.first += c.first;
      pool.second += c.second;
    } else {
      cells.emplace_back(c.first, c.second);
    }
  }
  if (pool.first + pool.second > 0) cells.push_back(pool);
  TestResult r;
  for (const auto& [ca, cb] : cells) {
    const double tot = ca + cb;
    const double ea = tot * na / n, eb = tot * nb / n;
    r.statistic += (ca - ea) * (ca - ea) / ea + (cb - eb) * (cb - eb) / eb;
  }
  r.dof = static_cast<int>(cells.size()) - 1;
  r.p_value = chi_square_sf(r.statistic, r.dof);
  return r;
}

/// Chi-square test of independence on an r x c table of counts.  Rows or
/// columns with zero total are dropped.
inline TestResult chi_square_independence(const Eigen::MatrixXd& table) {
  std::vector<int> rows, cols;
  for (int i = 0; i < table.rows(); ++i)
    if (table.row(i).sum() > 0) rows.push_back(i);
  for (int j = 0; j < table.cols(); ++j)
    if (table.col(j).sum() > 0) cols.push_back(j);
  const double n = table.sum();
  TestResult r;
  for (int i : rows)
    for (int j : cols) {
      const double e = table.row(i).sum() * table.col(j).sum() / n;
      r.statistic += (table(i, j) - e) * (table(i, j) - e) / e;
    }
  r.dof = (static_cast<int>(rows.size()) - 1) * (static_cast<int>(cols.size()) - 1);
  r.p_value = chi_square_sf(r.statistic, r.dof);
  return r;
}

/// Energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'| between the rows of x and y.
inline double energy_distance(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  auto mean_dist = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      bool same) {
    double s = 0.0;
    long c = 0;
    for (int i = 0; i < a.rows(); ++i)
      for (int j = same ? i + 1 : 0; j < b.rows(); ++j) {
        s += (a.row(i) - b.row(j)).norm();
        ++c;
      }
    return c ? s / c : 0.0;
  };
  return 2.0 * mean_dist(x, y, false) - mean_dist(x, x, true) -
         mean_dist(y, y, true);
}

/// Permutation test on the energy distance.
inline TestResult energy_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                              int permutations, Rng& rng) {
  const int n = static_cast<int>(x.rows()), m = static_cast<int>(y.rows());
  Eigen::MatrixXd all(n + m, x.cols());
  all << x, y;
  // Pairwise distances once; each permutation only re-labels.
  Eigen::MatrixXd dist(n + m, n + m);
  for (int i = 0; i < n + m; ++i)
    for (int j = i; j < n + m; ++j)
      dist(i, j) = dist(j, i) = (all.row(i) - all.row(j)).norm();
  auto stat = [&](const std::vector<int>& idx) {
    double xy = 0, xx = 0, yy = 0;
    for (int a = 0; a < n + m; ++a)
      for (int b = a + 1; b < n + m; ++b) {
        const double v = dist(idx[a], idx[b]);
        const bool ia = a < n, ib = b < n;
        if (ia && ib) xx += v;
        else if (!ia && !ib) yy += v;
        else xy += v;
      }
    return 2.0 * xy / (double(n) * m) - xx / (0.5 * n * (n - 1.0)) -
           yy / (0.5 * m * (m - 1.0));
  };
  std::vector<int> idx(n + m);
  std::iota(idx.begin(), idx.end(), 0);
  TestResult r;
  r.statistic = stat(idx);
  int exceed = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng);
    if (stat(idx) >= r.statistic) ++exceed;
  }
  r.p_value = (exceed + 1.0) / (permutations + 1.0);
  return r;
}

inline double bonferroni(double level, int tests) {
  return tests > 0 ? level / tests : level;
}

}  // namespace loopsoup::stats
