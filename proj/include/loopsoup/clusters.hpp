#pragma once

// Clusters of loops and excursions under vertex sharing.

#include "loopsoup/lattice.hpp"
#include "loopsoup/paths.hpp"
#include "loopsoup/random.hpp"

#include <boost/pending/disjoint_sets.hpp>

#include <cmath>
#include <vector>

namespace loopsoup {

/// cluster[v] is the cluster id of vertex v, or -1 if no loop or excursion
/// visits v.  Ids are canonical: clusters are numbered in order of their
/// smallest vertex id, so equal partitions compare equal.
struct ClusterPartition {
  std::vector<int> cluster;
  int count = 0;

  bool same(VertexId a, VertexId b) const {
    return cluster[a] >= 0 && cluster[a] == cluster[b];
  }
  friend bool operator==(const ClusterPartition&,
                         const ClusterPartition&) = default;
};

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(int n)
      : rank_(n, 0), parent_(n), visited_(n, false), sets_(rank_.data(), parent_.data()) {
    for (int v = 0; v < n; ++v) sets_.make_set(v);
  }
  void visit(int v) { visited_[v] = true; }
  void join(int a, int b) {
    visited_[a] = visited_[b] = true;
    sets_.union_set(a, b);
  }
  bool connected(int a, int b) { return sets_.find_set(a) == sets_.find_set(b); }

  ClusterPartition partition() {
    const int n = static_cast<int>(parent_.size());
    ClusterPartition p;
    p.cluster.assign(n, -1);
    std::vector<int> id_of_root(n, -1);
    for (int v = 0; v < n; ++v) {
      if (!visited_[v]) continue;
      const int root = sets_.find_set(v);
      if (id_of_root[root] < 0) id_of_root[root] = p.count++;
      p.cluster[v] = id_of_root[root];
    }
    return p;
  }

 private:
  std::vector<int> rank_;
  std::vector<int> parent_;
  std::vector<bool> visited_;
  boost::disjoint_sets<int*, int*> sets_;
};

inline void absorb(UnionFind& uf, const LoopEnsemble& loops) {
  for (const auto& l : loops.loops) {
    uf.visit(l.vertices.front());
    for (std::size_t i = 1; i < l.vertices.size(); ++i)
      uf.join(l.vertices[i - 1], l.vertices[i]);
  }
}

inline void absorb(UnionFind& uf, const ExcursionEnsemble& exc) {
  for (const auto& e : exc.excursions)
    for (std::size_t i = 1; i < e.path.size(); ++i)
      uf.join(e.path[i - 1], e.path[i]);
}

}  // namespace detail

/// Transitive closure of vertex sharing among loops and excursions.
/// Excursion endpoints (boundary vertices) take part.
inline ClusterPartition clusters(const DomainGraph& d, const LoopEnsemble& loops,
                                 const ExcursionEnsemble& excursions) {
  detail::UnionFind uf(d.vertex_count());
  detail::absorb(uf, loops);
  detail::absorb(uf, excursions);
  return uf.partition();
}

inline ClusterPartition clusters(const DomainGraph& d, const LoopEnsemble& loops) {
  return clusters(d, loops, empty_excursions(d.arc_count()));
}

/// Clusters of the cable-graph configuration whose vertex trace is the
/// given loops and excursions.  Every edge {x,y} that no loop or excursion
/// jumps across is additionally opened, independently, with probability
/// 1 - exp(-2 sqrt(L_x L_y)), where L is the vertex occupation.  Boundary
/// vertices use `boundary_occupation` (1/2 of the squared boundary value).
inline ClusterPartition cable_clusters(const DomainGraph& d,
                                       const LoopEnsemble& loops,
                                       const ExcursionEnsemble& excursions,
                                       const ScalarField& occupation,
                                       const ScalarField& boundary_occupation,
                                       Rng& rng) {
  detail::UnionFind uf(d.vertex_count());
  detail::absorb(uf, loops);
  detail::absorb(uf, excursions);

  std::vector<char> crossed(d.edges().size(), 0);
  std::vector<std::vector<std::pair<VertexId, std::size_t>>> incident(
      d.vertex_count());
  for (std::size_t e = 0; e < d.edges().size(); ++e) {
    incident[d.edges()[e].a].emplace_back(d.edges()[e].b, e);
    incident[d.edges()[e].b].emplace_back(d.edges()[e].a, e);
  }
  auto mark_fast = [&](VertexId a, VertexId b) {
    for (const auto& [w, e] : incident[a])
      if (w == b) {
        crossed[e] = 1;
        return;
      }
    throw std::invalid_argument("path jumps along a non-edge");
  };
  for (const auto& l : loops.loops) {
    if (l.trivial()) continue;
    const std::size_t k = l.vertices.size();
    for (std::size_t i = 0; i < k; ++i)
      mark_fast(l.vertices[i], l.vertices[(i + 1) % k]);
  }
  for (const auto& e : excursions.excursions)
    for (std::size_t i = 1; i < e.path.size(); ++i)
      mark_fast(e.path[i - 1], e.path[i]);

  auto occ = [&](VertexId v) {
    return d.is_interior(v) ? occupation[v] : boundary_occupation[v];
  };
  for (std::size_t e = 0; e < d.edges().size(); ++e) {
    if (crossed[e]) continue;
    const Edge& ed = d.edges()[e];
    const double la = occ(ed.a), lb = occ(ed.b);
    if (la <= 0.0 || lb <= 0.0) continue;
    const double p_open = -std::expm1(-2.0 * std::sqrt(la * lb));
    if (uniform01(rng) < p_open) uf.join(ed.a, ed.b);
  }
  return uf.partition();
}

/// True when some vertex of arc i and some vertex of arc j share a cluster.
inline bool arcs_connected(const DomainGraph& d, const ClusterPartition& p,
                           int i, int j) {
  std::vector<char> seen(p.count, 0);
  for (VertexId a : d.arc(i))
    if (p.cluster[a] >= 0) seen[p.cluster[a]] = 1;
  for (VertexId b : d.arc(j))
    if (p.cluster[b] >= 0 && seen[p.cluster[b]]) return true;
  return false;
}

}  // namespace loopsoup
