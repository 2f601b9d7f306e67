#pragma once

// Markovian loop soup on a finite graph: exact sampling (up to a reported
// skeleton-length truncation), occupation fields, the rewiring chain and
// cutting loops into excursions away from a vertex set.
//
// Loop measure: a rooted skeleton (x_0, ..., x_{k-1}) of length k >= 2 has
// weight prod P(x_i, x_{i+1}) / k, P = D^{-1} A the jump chain killed on the
// boundary; each visit at x holds an Exp(deg x) time.  One-point loops at x
// contribute a Gamma(alpha, rate deg x) local time.  With these conventions
// E[occupation(x)] = alpha * G(x,x) for every alpha.

#include "loopsoup/lattice.hpp"
#include "loopsoup/paths.hpp"
#include "loopsoup/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <tuple>

namespace loopsoup {

struct TruncationReport {
  int k_max = 0;
  double spectral_radius = 0.0;
  double skeleton_mass = 0.0;  // sum_{2 <= k <= k_max} tr(P^k) / k
  double tail_bound = 0.0;     // alpha * bound on the dropped mass
  bool warning = false;        // tail bound above the requested tolerance
};

class LoopSoupSampler {
 public:
  LoopSoupSampler(std::shared_ptr<const LatticeAnalysis> lattice, double alpha,
                  int k_max, double local_time_unit = 1.0,
                  double tail_tolerance = 1e-9)
      : lat_(std::move(lattice)),
        alpha_(alpha),
        k_max_(k_max),
        unit_(local_time_unit) {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
    if (k_max < 2) throw std::invalid_argument("K_max must be >= 2");
    const DomainGraph& d = lat_->domain;
    const int n = d.interior_count();

    // S = D^{-1/2} A D^{-1/2} is symmetric and similar to P.
    inv_sqrt_deg_.resize(n);
    for (int i = 0; i < n; ++i)
      inv_sqrt_deg_[i] = 1.0 / std::sqrt(double(d.degree(d.interior_vertex(i))));
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (VertexId w : d.neighbors(d.interior_vertex(i)))
        if (d.is_interior(w)) {
          const int j = d.ordinal(w);
          s(i, j) = inv_sqrt_deg_[i] * inv_sqrt_deg_[j];
        }
    if (n > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
      u_ = es.eigenvectors();
      lambda_ = es.eigenvalues();
    }
    rho_ = n > 0 ? lambda_.cwiseAbs().maxCoeff() : 0.0;

    powers_.assign(k_max_ + 1, Eigen::VectorXd::Ones(n));
    for (int k = 1; k <= k_max_; ++k)
      powers_[k] = powers_[k - 1].cwiseProduct(lambda_);

    // Length law and per-length root law.
    length_cdf_.assign(k_max_ + 1, 0.0);
    root_cdf_.assign(k_max_ + 1, {});
    double mass = 0.0;
    const Eigen::MatrixXd u2 = u_.cwiseProduct(u_);
    for (int k = 2; k <= k_max_; ++k) {
      Eigen::VectorXd diag = u2 * powers_[k];  // P^k(x,x)
      diag = diag.cwiseMax(0.0);
      const double tr = diag.sum();
      mass += tr / k;
      length_cdf_[k] = mass;
      std::vector<double> cdf(n);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) cdf[i] = (acc += diag[i]);
      root_cdf_[k] = std::move(cdf);
    }
    report_.k_max = k_max_;
    report_.spectral_radius = rho_;
    report_.skeleton_mass = mass;
    report_.tail_bound = tail_bound(alpha_, k_max_, rho_, n);
    report_.warning = report_.tail_bound > tail_tolerance;

    distance_ = all_pairs_distance();
  }

  /// alpha * sum_{k > k_max} tr(P^k)/k  <=  alpha * n rho^{k+1} / ((k+1)(1-rho)).
  static double tail_bound(double alpha, int k_max, double rho, int n) {
    if (rho <= 0.0) return 0.0;
    if (rho >= 1.0) return std::numeric_limits<double>::infinity();
    return alpha * n * std::pow(rho, k_max + 1) / ((k_max + 1) * (1.0 - rho));
  }

  /// Smallest K_max whose tail bound is below `tolerance`.
  static int k_max_for(const LatticeAnalysis& lat, double alpha,
                       double tolerance) {
    const DomainGraph& d = lat.domain;
    const int n = d.interior_count();
    if (n == 0) return 2;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (VertexId w : d.neighbors(d.interior_vertex(i)))
        if (d.is_interior(w)) {
          const int j = d.ordinal(w);
          s(i, j) = 1.0 / std::sqrt(double(d.degree(d.interior_vertex(i))) *
                                    d.degree(w));
        }
    const double rho =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s, Eigen::EigenvaluesOnly)
            .eigenvalues()
            .cwiseAbs()
            .maxCoeff();
    int k = 2;
    while (tail_bound(alpha, k, rho, n) > tolerance && k < 100000) ++k;
    return k;
  }

  const TruncationReport& truncation() const { return report_; }
  double alpha() const { return alpha_; }
  const LatticeAnalysis& lattice() const { return *lat_; }

  /// P^r(z, x) for interior ordinals; exact zeros enforced by graph
  /// distance and bipartite parity.
  double transition_power(int r, int z, int x) const {
    if (!reachable(r, z, x)) return 0.0;
    const double v = u_.row(z).cwiseProduct(powers_[r].transpose()).dot(u_.row(x));
    return std::max(0.0, v * inv_sqrt_deg_[z] / inv_sqrt_deg_[x]);
  }

  LoopEnsemble sample(Rng& rng) const {
    const DomainGraph& d = lat_->domain;
    LoopEnsemble ens;
    ens.alpha = alpha_;
    const long count = poisson(rng, alpha_ * report_.skeleton_mass);
    for (long c = 0; c < count; ++c) ens.loops.push_back(sample_loop(rng));
    for (VertexId v : d.interior_vertices()) {
      const double t = std::gamma_distribution<double>(
          alpha_, unit_ / d.degree(v))(rng);
      if (t > 0.0) ens.loops.push_back({{v}, {t}});
    }
    return ens;
  }

 private:
  bool reachable(int r, int z, int x) const {
    const int dist = distance_[z][x];
    if (dist < 0 || dist > r) return false;
    return !bipartite_ || ((r - dist) % 2 == 0);
  }

  DiscreteLoop sample_loop(Rng& rng) const {
    const DomainGraph& d = lat_->domain;
    const double total = length_cdf_.back();
    const double ul = uniform01(rng) * total;
    int k = static_cast<int>(
        std::upper_bound(length_cdf_.begin() + 2, length_cdf_.end(), ul) -
        length_cdf_.begin());
    k = std::min(k, k_max_);
    const auto& rc = root_cdf_[k];
    const double ur = uniform01(rng) * rc.back();
    const int root = std::min<int>(
        static_cast<int>(std::upper_bound(rc.begin(), rc.end(), ur) - rc.begin()),
        static_cast<int>(rc.size()) - 1);

    // Doob-conditioned bridge from root back to root in k steps.
    std::vector<int> seq;
    seq.reserve(k);
    seq.push_back(root);
    int cur = root;
    std::vector<std::pair<int, double>> cand;
    for (int step = 1; step < k; ++step) {
      const int remaining = k - step;  // steps after this one
      cand.clear();
      double acc = 0.0;
      for (VertexId w : d.neighbors(d.interior_vertex(cur))) {
        if (!d.is_interior(w)) continue;
        const int z = d.ordinal(w);
        const double p = transition_power(remaining, z, root);
        if (p > 0.0) cand.emplace_back(z, acc += p);
      }
      if (cand.empty())
        throw std::logic_error("loop bridge ran into an unreachable state");
      const double u = uniform01(rng) * acc;
      auto it = std::find_if(cand.begin(), cand.end(),
                             [u](const auto& c) { return u < c.second; });
      if (it == cand.end()) --it;
      cur = it->first;
      seq.push_back(cur);
    }

    // Forget the root.
    const int shift = std::uniform_int_distribution<int>(0, k - 1)(rng);
    std::rotate(seq.begin(), seq.begin() + shift, seq.end());
    DiscreteLoop loop;
    loop.vertices.reserve(k);
    loop.holding.reserve(k);
    for (int z : seq) {
      const VertexId v = d.interior_vertex(z);
      loop.vertices.push_back(v);
      loop.holding.push_back(exponential(rng, d.degree(v) / unit_));
    }
    return loop;
  }

  std::vector<std::vector<int>> all_pairs_distance() {
    const DomainGraph& d = lat_->domain;
    const int n = d.interior_count();
    std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
    std::vector<int> color(n, -1);
    bipartite_ = true;
    for (int s = 0; s < n; ++s) {
      std::deque<int> q{s};
      dist[s][s] = 0;
      if (color[s] < 0) color[s] = 0;
      while (!q.empty()) {
        const int a = q.front();
        q.pop_front();
        for (VertexId w : d.neighbors(d.interior_vertex(a))) {
          if (!d.is_interior(w)) continue;
          const int b = d.ordinal(w);
          if (color[b] < 0) color[b] = 1 - color[a];
          else if (color[b] == color[a]) bipartite_ = false;
          if (dist[s][b] < 0) {
            dist[s][b] = dist[s][a] + 1;
            q.push_back(b);
          }
        }
      }
    }
    return dist;
  }

  std::shared_ptr<const LatticeAnalysis> lat_;
  double alpha_;
  int k_max_;
  double unit_;
  Eigen::VectorXd inv_sqrt_deg_;
  Eigen::MatrixXd u_;
  Eigen::VectorXd lambda_;
  double rho_ = 0.0;
  std::vector<Eigen::VectorXd> powers_;
  std::vector<double> length_cdf_;
  std::vector<std::vector<double>> root_cdf_;
  std::vector<std::vector<int>> distance_;
  bool bipartite_ = true;
  TruncationReport report_;
};

inline LoopEnsemble sample_loopsoup(const DomainGraph& domain, double alpha,
                                    int k_max, Rng& rng) {
  LoopSoupSampler s(std::make_shared<const LatticeAnalysis>(domain), alpha,
                    k_max);
  return s.sample(rng);
}

/// Total holding time per vertex over all loops.  The holding times at a
/// vertex are summed in increasing order, so the result does not depend on
/// how they are grouped into loops.
inline ScalarField occupation_field(const DomainGraph& d,
                                    const LoopEnsemble& ens) {
  std::vector<std::vector<double>> times(d.vertex_count());
  for (const auto& l : ens.loops)
    for (std::size_t i = 0; i < l.vertices.size(); ++i)
      times[l.vertices[i]].push_back(l.holding[i]);
  ScalarField f = ScalarField::zeros(d, Support::interior);
  for (VertexId v = 0; v < d.vertex_count(); ++v) {
    std::sort(times[v].begin(), times[v].end());
    for (double t : times[v]) f.values[v] += t;
  }
  return f;
}

inline void add_occupation(ScalarField& f, const ExcursionEnsemble& ens) {
  for (const auto& e : ens.excursions)
    for (std::size_t i = 0; i < e.holding.size(); ++i)
      f.values[e.path[i + 1]] += e.holding[i];
}

/// Directed jumps (from, to) of all nontrivial loops, sorted.
inline std::vector<std::pair<VertexId, VertexId>> edge_traversals(
    const LoopEnsemble& ens) {
  std::vector<std::pair<VertexId, VertexId>> out;
  for (const auto& l : ens.loops) {
    if (l.trivial()) continue;
    const std::size_t k = l.vertices.size();
    for (std::size_t i = 0; i < k; ++i)
      out.emplace_back(l.vertices[i], l.vertices[(i + 1) % k]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct RewireResult {
  LoopEnsemble ensemble;
  bool identity = false;           // no vertex had two passages
  VertexId vertex = -1;            // where the re-pairing happened
  std::size_t loops_before = 0;    // loops through `vertex` before
  std::size_t loops_after = 0;     // and after
};

/// One step of the rewiring chain: pick uniformly a vertex with at least two
/// passages of nontrivial loops and re-pair its (incoming, outgoing) passage
/// halves by a uniform permutation.  Holding times at the vertex travel with
/// the outgoing half.
inline RewireResult rewire_step(const LoopEnsemble& ens, Rng& rng) {
  std::map<VertexId, std::vector<std::pair<std::size_t, std::size_t>>> passages;
  for (std::size_t li = 0; li < ens.loops.size(); ++li) {
    const auto& l = ens.loops[li];
    if (l.trivial()) continue;
    for (std::size_t p = 0; p < l.vertices.size(); ++p)
      passages[l.vertices[p]].emplace_back(li, p);
  }
  std::vector<VertexId> candidates;
  for (const auto& [v, list] : passages)
    if (list.size() >= 2) candidates.push_back(v);

  RewireResult res;
  if (candidates.empty()) {
    res.ensemble = ens;
    res.identity = true;
    return res;
  }
  const VertexId v = candidates[std::uniform_int_distribution<std::size_t>(
      0, candidates.size() - 1)(rng)];
  const auto& occ = passages[v];

  // Segment o starts at occurrence o (visit of v) and runs up to, but not
  // including, the next visit of v on the same loop.
  std::vector<DiscreteLoop> segments;
  std::set<std::size_t> involved;
  for (const auto& [li, p] : occ) {
    involved.insert(li);
    const auto& l = ens.loops[li];
    const std::size_t k = l.vertices.size();
    DiscreteLoop seg;
    std::size_t q = p;
    do {
      seg.vertices.push_back(l.vertices[q]);
      seg.holding.push_back(l.holding[q]);
      q = (q + 1) % k;
    } while (l.vertices[q] != v);
    segments.push_back(std::move(seg));
  }

  std::vector<std::size_t> perm(segments.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  LoopEnsemble out;
  out.alpha = ens.alpha;
  out.seed = ens.seed;
  for (std::size_t li = 0; li < ens.loops.size(); ++li)
    if (!involved.count(li)) out.loops.push_back(ens.loops[li]);
  std::vector<bool> used(segments.size(), false);
  std::size_t made = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (used[s]) continue;
    DiscreteLoop merged;
    std::size_t cur = s;
    while (!used[cur]) {
      used[cur] = true;
      const auto& seg = segments[cur];
      merged.vertices.insert(merged.vertices.end(), seg.vertices.begin(),
                             seg.vertices.end());
      merged.holding.insert(merged.holding.end(), seg.holding.begin(),
                            seg.holding.end());
      cur = perm[cur];
    }
    out.loops.push_back(std::move(merged));
    ++made;
  }
  res.ensemble = std::move(out);
  res.vertex = v;
  res.loops_before = involved.size();
  res.loops_after = made;
  return res;
}

/// Piece of a loop between two consecutive visits of the marked set.
/// `path` includes both endpoints; `holding` has one entry per vertex except
/// the last one, whose holding time belongs to the next piece.
struct LoopPiece {
  std::vector<VertexId> path;
  std::vector<double> holding;
  std::size_t loop = 0;   // index in the original ensemble
  std::size_t order = 0;  // position of this piece along its loop
};

struct LoopDecomposition {
  std::vector<std::pair<std::size_t, DiscreteLoop>> untouched;
  std::vector<LoopPiece> pieces;
  /// For cut loops: index of the first marked visit in the original vertex
  /// sequence, needed to reproduce the original rotation.
  std::map<std::size_t, std::size_t> offsets;
  std::size_t loop_count = 0;
  double alpha = 0.5;
  std::uint64_t seed = 0;
};

inline LoopDecomposition decompose_boundary_loops(const LoopEnsemble& ens,
                                                  const std::set<VertexId>& marked) {
  LoopDecomposition dec;
  dec.loop_count = ens.loops.size();
  dec.alpha = ens.alpha;
  dec.seed = ens.seed;
  for (std::size_t li = 0; li < ens.loops.size(); ++li) {
    const auto& l = ens.loops[li];
    const std::size_t k = l.vertices.size();
    std::vector<std::size_t> hits;
    for (std::size_t p = 0; p < k; ++p)
      if (marked.count(l.vertices[p])) hits.push_back(p);
    if (hits.empty()) {
      dec.untouched.emplace_back(li, l);
      continue;
    }
    dec.offsets[li] = hits.front();
    for (std::size_t h = 0; h < hits.size(); ++h) {
      LoopPiece piece;
      piece.loop = li;
      piece.order = h;
      const std::size_t start = hits[h];
      const std::size_t stop = h + 1 < hits.size() ? hits[h + 1] : hits[0] + k;
      for (std::size_t q = start; q < stop; ++q) {
        piece.path.push_back(l.vertices[q % k]);
        piece.holding.push_back(l.holding[q % k]);
      }
      piece.path.push_back(l.vertices[stop % k]);
      dec.pieces.push_back(std::move(piece));
    }
  }
  return dec;
}

inline LoopEnsemble reassemble(const LoopDecomposition& dec) {
  std::vector<DiscreteLoop> loops(dec.loop_count);
  for (const auto& [li, l] : dec.untouched) loops[li] = l;
  std::vector<const LoopPiece*> sorted;
  for (const auto& p : dec.pieces) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) {
    return std::tie(a->loop, a->order) < std::tie(b->loop, b->order);
  });
  for (const LoopPiece* p : sorted) {
    auto& l = loops[p->loop];
    l.vertices.insert(l.vertices.end(), p->path.begin(), p->path.end() - 1);
    l.holding.insert(l.holding.end(), p->holding.begin(), p->holding.end());
  }
  for (const auto& [li, offset] : dec.offsets) {
    auto& l = loops[li];
    const std::size_t k = l.vertices.size();
    const std::size_t back = (k - offset % k) % k;
    std::rotate(l.vertices.begin(), l.vertices.begin() + back, l.vertices.end());
    std::rotate(l.holding.begin(), l.holding.begin() + back, l.holding.end());
  }
  LoopEnsemble out;
  out.loops = std::move(loops);
  out.alpha = dec.alpha;
  out.seed = dec.seed;
  return out;
}

}  // namespace loopsoup
