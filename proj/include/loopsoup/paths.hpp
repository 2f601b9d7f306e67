#pragma once

// Loops and excursions with local times, and their line-based text format.

#include "loopsoup/lattice.hpp"

#include <cstdint>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace loopsoup {

/// Cyclic sequence of interior vertices with one holding time per visit.
/// A single vertex is a trivial (one-point) loop.
struct DiscreteLoop {
  std::vector<VertexId> vertices;
  std::vector<double> holding;

  std::size_t length() const { return vertices.size(); }
  bool trivial() const { return vertices.size() == 1; }
  friend bool operator==(const DiscreteLoop&, const DiscreteLoop&) = default;
};

struct LoopEnsemble {
  std::vector<DiscreteLoop> loops;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  friend bool operator==(const LoopEnsemble&, const LoopEnsemble&) = default;
};

/// Boundary-to-boundary path a, x_1, ..., x_m, b with one holding time per
/// interior visit.  (arc_i, arc_j) is the unordered arc pair, arc_i <= arc_j.
struct Excursion {
  std::vector<VertexId> path;
  std::vector<double> holding;
  int arc_i = kUnlabeled;
  int arc_j = kUnlabeled;
  friend bool operator==(const Excursion&, const Excursion&) = default;
};

struct ExcursionEnsemble {
  std::vector<Excursion> excursions;
  /// counts(i-1, j-1) = number of excursions with arc pair {i, j};
  /// symmetric, same-arc excursions on the diagonal.
  Eigen::MatrixXi counts;
  double beta = 0.25;
  std::uint64_t seed = 0;

  int arc_count() const { return static_cast<int>(counts.rows()); }
  friend bool operator==(const ExcursionEnsemble& a,
                         const ExcursionEnsemble& b) {
    return a.excursions == b.excursions && a.counts == b.counts &&
           a.beta == b.beta && a.seed == b.seed;
  }
};

inline ExcursionEnsemble empty_excursions(int arc_count, double beta = 0.25) {
  ExcursionEnsemble e;
  e.counts = Eigen::MatrixXi::Zero(arc_count, arc_count);
  e.beta = beta;
  return e;
}

inline void add_excursion(ExcursionEnsemble& ens, Excursion ex) {
  const int i = ex.arc_i - 1, j = ex.arc_j - 1;
  ens.counts(i, j) += 1;
  if (i != j) ens.counts(j, i) += 1;
  ens.excursions.push_back(std::move(ex));
}

// ---------------------------------------------------------------------------
// Text format.  One object per line, values printed with 17 significant
// digits so that a write/read cycle is exact:
//
//   loop <v0> <v1> ... | <t0> <t1> ...
//   exc <i> <j> | <a> <x1> ... <b> | <t1> ...

namespace detail {
template <class T>
void write_list(std::ostream& os, const std::vector<T>& xs) {
  for (const auto& x : xs) os << ' ' << x;
}

template <class T>
std::vector<T> read_list(std::istringstream& is) {
  std::vector<T> out;
  std::string tok;
  while (is >> tok && tok != "|") {
    std::istringstream t(tok);
    T x;
    if (!(t >> x)) throw std::runtime_error("malformed number '" + tok + "'");
    out.push_back(x);
  }
  return out;
}
}  // namespace detail

inline void write_loops(std::ostream& os, const LoopEnsemble& ens) {
  os << std::setprecision(17);
  os << "# loopsoup loops v1\n";
  os << "alpha " << ens.alpha << "\nseed " << ens.seed << '\n';
  for (const auto& l : ens.loops) {
    os << "loop";
    detail::write_list(os, l.vertices);
    os << " |";
    detail::write_list(os, l.holding);
    os << '\n';
  }
}

inline LoopEnsemble read_loops(std::istream& is) {
  LoopEnsemble ens;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    try {
      if (key == "alpha") {
        ls >> ens.alpha;
      } else if (key == "seed") {
        ls >> ens.seed;
      } else if (key == "loop") {
        DiscreteLoop l;
        l.vertices = detail::read_list<VertexId>(ls);
        l.holding = detail::read_list<double>(ls);
        if (l.vertices.empty() || l.vertices.size() != l.holding.size())
          throw std::runtime_error("vertex and holding-time counts differ");
        ens.loops.push_back(std::move(l));
      } else {
        throw std::runtime_error("unknown record '" + key + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return ens;
}

inline void write_excursions(std::ostream& os, const ExcursionEnsemble& ens) {
  os << std::setprecision(17);
  os << "# loopsoup excursions v1\n";
  os << "beta " << ens.beta << "\nseed " << ens.seed << "\narcs "
     << ens.arc_count() << '\n';
  for (const auto& e : ens.excursions) {
    os << "exc " << e.arc_i << ' ' << e.arc_j << " |";
    detail::write_list(os, e.path);
    os << " |";
    detail::write_list(os, e.holding);
    os << '\n';
  }
}

inline ExcursionEnsemble read_excursions(std::istream& is) {
  ExcursionEnsemble ens = empty_excursions(0);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    try {
      if (key == "beta") {
        ls >> ens.beta;
      } else if (key == "seed") {
        ls >> ens.seed;
      } else if (key == "arcs") {
        int n = 0;
        ls >> n;
        ens.counts = Eigen::MatrixXi::Zero(n, n);
      } else if (key == "exc") {
        Excursion e;
        std::string bar;
        ls >> e.arc_i >> e.arc_j >> bar;
        if (bar != "|") throw std::runtime_error("expected '|'");
        e.path = detail::read_list<VertexId>(ls);
        e.holding = detail::read_list<double>(ls);
        if (e.path.size() < 2 || e.holding.size() + 2 != e.path.size())
          throw std::runtime_error("path and holding-time counts disagree");
        if (e.arc_i < 1 || e.arc_j < e.arc_i || e.arc_j > ens.arc_count())
          throw std::runtime_error("arc pair out of range");
        add_excursion(ens, std::move(e));
      } else {
        throw std::runtime_error("unknown record '" + key + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return ens;
}

}  // namespace loopsoup
