#pragma once

// Poisson point processes of boundary-to-boundary excursions, with and
// without the constraint that every arc is hit by an even number of
// cross-arc excursions.
//
// Excursion masses: for arcs i != j, |mu_ij| = sum_{a in i, b in j} K(a,b)
// counts each excursion once (one orientation).  Same-arc excursions carry
// half of the ordered sum, sum_{a,b in i} K(a,b) / 2, for the same reason.

#include "loopsoup/lattice.hpp"
#include "loopsoup/paths.hpp"
#include "loopsoup/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace loopsoup {

enum class Restriction : std::uint8_t { all_pairs, cross_arc_only, single_pair };

struct PairSelection {
  Restriction kind = Restriction::all_pairs;
  int i = 0;  // used by single_pair
  int j = 0;
};

class ExcursionSampler {
 public:
  ExcursionSampler(std::shared_ptr<const LatticeAnalysis> lattice, double beta,
                   double local_time_unit = 1.0)
      : lat_(std::move(lattice)), beta_(beta), unit_(local_time_unit) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
    const DomainGraph& d = lat_->domain;
    n_ = d.arc_count();
    endpoints_.assign(n_ * n_, {});
    mass_ = Eigen::MatrixXd::Zero(n_, n_);
    for (int i = 1; i <= n_; ++i)
      for (int j = i; j <= n_; ++j) {
        Endpoints& ep = endpoints_[(i - 1) * n_ + (j - 1)];
        double acc = 0.0;
        for (VertexId a : d.arc(i))
          for (VertexId b : d.arc(j)) {
            const double w = lat_->kernel(d.ordinal(a), d.ordinal(b));
            if (w <= 0.0) continue;
            ep.pairs.emplace_back(a, b);
            ep.cdf.push_back(acc += w);
          }
        const double m = i == j ? 0.5 * acc : acc;
        mass_(i - 1, j - 1) = mass_(j - 1, i - 1) = m;
      }
  }

  const LatticeAnalysis& lattice() const { return *lat_; }
  std::shared_ptr<const LatticeAnalysis> lattice_ptr() const { return lat_; }
  double beta() const { return beta_; }
  int arc_count() const { return n_; }

  /// Mass of excursions with arc pair {i, j} (1-based).
  double pair_mass(int i, int j) const { return mass_(i - 1, j - 1); }
  /// Poisson means beta * pair_mass, symmetric n x n.
  Eigen::MatrixXd pair_means() const { return beta_ * mass_; }

  bool allowed(const PairSelection& sel, int i, int j) const {
    switch (sel.kind) {
      case Restriction::all_pairs: return true;
      case Restriction::cross_arc_only: return i != j;
      case Restriction::single_pair:
        return std::min(i, j) == std::min(sel.i, sel.j) &&
               std::max(i, j) == std::max(sel.i, sel.j);
    }
    return false;
  }

  /// Independent Poisson counts for every allowed pair, then paths.
  ExcursionEnsemble sample(Rng& rng, const PairSelection& sel = {}) const {
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(n_, n_);
    for (int i = 1; i <= n_; ++i)
      for (int j = i; j <= n_; ++j) {
        if (!allowed(sel, i, j)) continue;
        const int c = static_cast<int>(poisson(rng, beta_ * pair_mass(i, j)));
        counts(i - 1, j - 1) = counts(j - 1, i - 1) = c;
      }
    return sample_paths(counts, rng);
  }

  /// Paths for a given symmetric count matrix.
  ExcursionEnsemble sample_paths(const Eigen::MatrixXi& counts, Rng& rng) const {
    ExcursionEnsemble ens = empty_excursions(n_, beta_);
    for (int i = 1; i <= n_; ++i)
      for (int j = i; j <= n_; ++j)
        for (int c = 0; c < counts(i - 1, j - 1); ++c)
          add_excursion(ens, sample_excursion(i, j, rng));
    return ens;
  }

  /// One excursion from the normalised measure on pair {i, j}: endpoints
  /// (a,b) with probability proportional to K(a,b), then a walk from a
  /// conditioned to leave the interior at b.
  Excursion sample_excursion(int i, int j, Rng& rng) const {
    if (i > j) std::swap(i, j);
    const Endpoints& ep = endpoints_[(i - 1) * n_ + (j - 1)];
    if (ep.cdf.empty())
      throw std::logic_error("excursion requested for a zero-mass arc pair");
    const double u = uniform01(rng) * ep.cdf.back();
    const std::size_t k = std::min<std::size_t>(
        std::upper_bound(ep.cdf.begin(), ep.cdf.end(), u) - ep.cdf.begin(),
        ep.cdf.size() - 1);
    const auto [a, b] = ep.pairs[k];

    const DomainGraph& d = lat_->domain;
    const int bcol = d.ordinal(b);
    auto weight = [&](VertexId w) {
      if (d.is_interior(w)) return lat_->exit(d.ordinal(w), bcol);
      return w == b ? 1.0 : 0.0;
    };
    Excursion ex;
    ex.arc_i = i;
    ex.arc_j = j;
    ex.path.push_back(a);
    VertexId cur = a;
    std::vector<std::pair<VertexId, double>> cand;
    do {
      cand.clear();
      double acc = 0.0;
      for (VertexId w : d.neighbors(cur)) {
        // From the boundary start the walk must enter the interior.
        if (cur == a && !d.is_interior(w)) continue;
        const double p = weight(w);
        if (p > 0.0) cand.emplace_back(w, acc += p);
      }
      const double v = uniform01(rng) * acc;
      auto it = std::find_if(cand.begin(), cand.end(),
                             [v](const auto& c) { return v < c.second; });
      if (it == cand.end()) --it;
      cur = it->first;
      ex.path.push_back(cur);
      if (d.is_interior(cur))
        ex.holding.push_back(exponential(rng, d.degree(cur) / unit_));
    } while (d.is_interior(cur));
    return ex;
  }

  /// Exact E[occupation(x)] of the PPP on the selected pairs.
  ScalarField expected_occupation(const PairSelection& sel = {}) const {
    const DomainGraph& d = lat_->domain;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d.interior_count());
    for (int i = 1; i <= n_; ++i) {
      const Eigen::VectorXd hi = lat_->arc_harmonic(i);
      for (int j = i; j <= n_; ++j) {
        if (!allowed(sel, i, j)) continue;
        const Eigen::VectorXd hj = lat_->arc_harmonic(j);
        mean += (i == j ? 0.5 : 1.0) * beta_ * unit_ * hi.cwiseProduct(hj);
      }
    }
    return from_interior(d, mean);
  }

 private:
  struct Endpoints {
    std::vector<std::pair<VertexId, VertexId>> pairs;
    std::vector<double> cdf;
  };
  std::shared_ptr<const LatticeAnalysis> lat_;
  double beta_;
  double unit_;
  int n_ = 0;
  Eigen::MatrixXd mass_;
  std::vector<Endpoints> endpoints_;
};

inline ExcursionEnsemble sample_excursion_ppp(const DomainGraph& domain,
                                              double beta, Rng& rng,
                                              const PairSelection& sel = {}) {
  ExcursionSampler s(std::make_shared<const LatticeAnalysis>(domain), beta);
  return s.sample(rng, sel);
}

/// T(k) = sum over excursions and interior visits of k(x) * holding time.
inline double occupation_functional(const ExcursionEnsemble& ens,
                                    const ScalarField& k) {
  double s = 0.0;
  for (const auto& e : ens.excursions)
    for (std::size_t i = 0; i < e.holding.size(); ++i)
      s += k[e.path[i + 1]] * e.holding[i];
  return s;
}

struct CrossingCounts {
  Eigen::MatrixXi pair;     // N_ij for i != j, zero diagonal
  Eigen::VectorXi per_arc;  // N_i = sum_{j != i} N_ij
  bool parity_satisfied = true;
};

inline CrossingCounts crossing_counts(const ExcursionEnsemble& ens) {
  CrossingCounts c;
  c.pair = ens.counts;
  c.pair.diagonal().setZero();
  c.per_arc = c.pair.rowwise().sum();
  for (int i = 0; i < c.per_arc.size(); ++i)
    if (c.per_arc[i] % 2 != 0) c.parity_satisfied = false;
  return c;
}

inline bool parity_event(const Eigen::MatrixXi& counts) {
  const int n = static_cast<int>(counts.rows());
  for (int i = 0; i < n; ++i) {
    int s = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) s += counts(i, j);
    if (s % 2 != 0) return false;
  }
  return true;
}

enum class ParityMethod : std::uint8_t { rejection, exact_counts };

/// Law of the cross-arc count matrix (N_ij)_{i<j}, independent
/// Poisson(lambda_ij), conditioned on every N_i being even.
///
/// exact_counts samples pair by pair: for pair p the parity of N_p is drawn
/// from its conditional law given the parities already fixed, using
///   F_p(s) = P[remaining pairs p..P-1 flip exactly the arcs in s]
///          = e_p F_{p+1}(s) + o_p F_{p+1}(s xor mask_p),
/// e_p, o_p the even/odd probabilities of Poisson(lambda_p), and then N_p
/// from the Poisson law restricted to that parity.
class ParityCountSampler {
 public:
  static constexpr int kMaxExactArcs = 20;

  explicit ParityCountSampler(Eigen::MatrixXd lambda) : lambda_(std::move(lambda)) {
    n_ = static_cast<int>(lambda_.rows());
    if (n_ < 2) throw std::invalid_argument("parity conditioning needs >= 2 arcs");
    for (int i = 0; i < n_; ++i)
      for (int j = i + 1; j < n_; ++j) {
        const double l = lambda_(i, j);
        if (l < 0.0) throw std::invalid_argument("negative Poisson mean");
        pairs_.push_back({i, j, l, 0.5 * (1.0 + std::exp(-2.0 * l)),
                          -0.5 * std::expm1(-2.0 * l)});
      }
    exact_available_ = n_ <= kMaxExactArcs;
    const std::size_t states = std::size_t{1} << std::min(n_, 30);
    tabulated_ = exact_available_ &&
                 (pairs_.size() + 1) * states <= (std::size_t{1} << 25);
    if (tabulated_) build_table();
  }

  int arc_count() const { return n_; }
  bool exact_available() const { return exact_available_; }

  /// P[every N_i even], by the pairwise recursion (or the spin sum when the
  /// table is not built).
  double probability_even() const {
    if (tabulated_) return table_[0][0];
    return spin_sum_probability(0, 0);
  }

  Eigen::MatrixXi sample(Rng& rng, ParityMethod method,
                         bool* fell_back = nullptr) const {
    if (fell_back) *fell_back = false;
    if (method == ParityMethod::exact_counts && !exact_available_) {
      if (fell_back) *fell_back = true;
      method = ParityMethod::rejection;
    }
    return method == ParityMethod::rejection ? sample_rejection(rng)
                                             : sample_exact(rng);
  }

  Eigen::MatrixXi sample_rejection(Rng& rng, long* attempts = nullptr) const {
    Eigen::MatrixXi c = Eigen::MatrixXi::Zero(n_, n_);
    long tries = 0;
    do {
      ++tries;
      for (const Pair& p : pairs_)
        c(p.i, p.j) = c(p.j, p.i) = static_cast<int>(poisson(rng, p.lambda));
    } while (!parity_event(c));
    if (attempts) *attempts = tries;
    return c;
  }

  Eigen::MatrixXi sample_exact(Rng& rng) const {
    Eigen::MatrixXi c = Eigen::MatrixXi::Zero(n_, n_);
    std::uint32_t need = 0;  // arcs whose remaining count must be odd
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const Pair& pr = pairs_[p];
      const std::uint32_t mask = (1u << pr.i) | (1u << pr.j);
      double f_even, f_odd;
      if (tabulated_) {
        f_even = table_[p + 1][need];
        f_odd = table_[p + 1][need ^ mask];
      } else {
        f_even = spin_sum_probability(p + 1, need);
        f_odd = spin_sum_probability(p + 1, need ^ mask);
      }
      const double w_even = pr.even * f_even, w_odd = pr.odd * f_odd;
      const bool odd = uniform01(rng) * (w_even + w_odd) >= w_even;
      const int k = sample_poisson_parity(rng, pr.lambda, odd);
      c(pr.i, pr.j) = c(pr.j, pr.i) = k;
      if (odd) need ^= mask;
    }
    return c;
  }

  /// Exact conditional pmf of a full count matrix.
  double conditional_pmf(const Eigen::MatrixXi& counts) const {
    if (!parity_event(counts)) return 0.0;
    double logp = 0.0;
    for (const Pair& p : pairs_) {
      const int k = counts(p.i, p.j);
      if (p.lambda == 0.0) {
        if (k != 0) return 0.0;
        continue;
      }
      logp += -p.lambda + k * std::log(p.lambda) - std::lgamma(k + 1.0);
    }
    return std::exp(logp) / probability_even();
  }

 private:
  struct Pair {
    int i, j;
    double lambda, even, odd;
  };

  void build_table() {
    const std::size_t states = std::size_t{1} << n_;
    table_.assign(pairs_.size() + 1, std::vector<double>(states, 0.0));
    table_.back()[0] = 1.0;
    for (std::size_t p = pairs_.size(); p-- > 0;) {
      const Pair& pr = pairs_[p];
      const std::uint32_t mask = (1u << pr.i) | (1u << pr.j);
      for (std::size_t s = 0; s < states; ++s)
        table_[p][s] =
            pr.even * table_[p + 1][s] + pr.odd * table_[p + 1][s ^ mask];
    }
  }

  /// 2^{-n} sum_a chi_s(a) prod_{q >= first} E[(a_i a_j)^{N_q}].
  double spin_sum_probability(std::size_t first, std::uint32_t s) const {
    const std::size_t states = std::size_t{1} << n_;
    double total = 0.0;
    for (std::size_t a = 0; a < states; ++a) {
      double prod = 1.0;
      for (std::size_t q = first; q < pairs_.size(); ++q) {
        const bool disagree = ((a >> pairs_[q].i) ^ (a >> pairs_[q].j)) & 1u;
        if (disagree) prod *= std::exp(-2.0 * pairs_[q].lambda);
      }
      const bool negative = __builtin_popcountll(a & s) & 1;
      total += negative ? -prod : prod;
    }
    return std::max(0.0, total / static_cast<double>(states));
  }

  static int sample_poisson_parity(Rng& rng, double lambda, bool odd) {
    if (lambda == 0.0) {
      if (odd) throw std::logic_error("odd count requested for zero mean");
      return 0;
    }
    // Inversion over k = parity, parity+2, ... in log space.
    const double z = odd ? -0.5 * std::expm1(-2.0 * lambda)
                         : 0.5 * (1.0 + std::exp(-2.0 * lambda));
    const double u = uniform01(rng) * z;
    double acc = 0.0;
    const double log_l = std::log(lambda);
    int k = odd ? 1 : 0;
    for (;; k += 2) {
      acc += std::exp(-lambda + k * log_l - std::lgamma(k + 1.0));
      if (u < acc) return k;
      if (k > 10 * lambda + 200) return k;  // numerical tail
    }
  }

  Eigen::MatrixXd lambda_;
  int n_ = 0;
  std::vector<Pair> pairs_;
  bool exact_available_ = false;
  bool tabulated_ = false;
  std::vector<std::vector<double>> table_;
};

struct ParityConditionedResult {
  ExcursionEnsemble ensemble;
  bool fell_back_to_rejection = false;
};

/// Cross-arc PPP conditioned on every N_i being even.
inline ParityConditionedResult sample_parity_conditioned(
    const ExcursionSampler& sampler, const ParityCountSampler& counts,
    ParityMethod method, Rng& rng) {
  ParityConditionedResult r;
  const Eigen::MatrixXi c = counts.sample(rng, method, &r.fell_back_to_rejection);
  r.ensemble = sampler.sample_paths(c, rng);
  return r;
}

inline Eigen::MatrixXd cross_means(const ExcursionSampler& sampler) {
  Eigen::MatrixXd m = sampler.pair_means();
  m.diagonal().setZero();
  return m;
}

}  // namespace loopsoup
