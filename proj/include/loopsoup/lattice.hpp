#pragma once

// Finite graph domains with an absorbing boundary, and the linear algebra on
// them: Green operators, harmonic extensions, boundary-excursion kernels and
// the Dirichlet form.
//
// Conventions used throughout the library:
//   * unit conductance on every edge,
//   * Laplacian  (Lap f)(x) = sum_{y ~ x} (f(y) - f(x)),
//   * Dirichlet (zero) boundary, boundary vertices are absorbing,
//   * precision of the free field  Q = -Lap restricted to the interior.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace loopsoup {

using VertexId = int;

enum class VertexKind : std::uint8_t { interior, boundary };

/// Arc label of a boundary vertex that belongs to no arc (and of every
/// interior vertex).
inline constexpr int kUnlabeled = 0;

struct Edge {
  VertexId a;
  VertexId b;
  friend bool operator==(const Edge&, const Edge&) = default;
};

class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Finite graph with interior and boundary vertices.  Immutable after
/// construction.
class DomainGraph {
 public:
  DomainGraph(std::vector<VertexKind> kinds, std::vector<Edge> edges,
              std::vector<int> arc_labels,
              std::vector<std::pair<int, int>> coords = {})
      : kinds_(std::move(kinds)),
        edges_(std::move(edges)),
        arc_labels_(std::move(arc_labels)),
        coords_(std::move(coords)) {
    const int n = static_cast<int>(kinds_.size());
    if (arc_labels_.empty()) arc_labels_.assign(n, kUnlabeled);
    if (static_cast<int>(arc_labels_.size()) != n)
      throw DomainError("arc label vector size does not match vertex count");
    if (!coords_.empty() && static_cast<int>(coords_.size()) != n)
      throw DomainError("coordinate vector size does not match vertex count");

    ordinal_.assign(n, -1);
    for (VertexId v = 0; v < n; ++v) {
      if (kinds_[v] == VertexKind::interior) {
        ordinal_[v] = static_cast<int>(interior_.size());
        interior_.push_back(v);
      } else {
        ordinal_[v] = static_cast<int>(boundary_.size());
        boundary_.push_back(v);
      }
    }

    std::vector<std::vector<VertexId>> adj(n);
    for (const Edge& e : edges_) {
      if (e.a < 0 || e.b < 0 || e.a >= n || e.b >= n)
        throw DomainError("edge refers to an unknown vertex");
      if (e.a == e.b) throw DomainError("self-loop edges are not allowed");
      if (!is_interior(e.a) && !is_interior(e.b))
        throw DomainError("edge joins two boundary vertices " +
                          std::to_string(e.a) + " and " + std::to_string(e.b));
      if (std::find(adj[e.a].begin(), adj[e.a].end(), e.b) != adj[e.a].end())
        throw DomainError("duplicate edge " + std::to_string(e.a) + "-" +
                          std::to_string(e.b));
      adj[e.a].push_back(e.b);
      adj[e.b].push_back(e.a);
    }
    offsets_.assign(n + 1, 0);
    for (VertexId v = 0; v < n; ++v)
      offsets_[v + 1] = offsets_[v] + static_cast<int>(adj[v].size());
    neighbors_.reserve(offsets_[n]);
    for (auto& list : adj) {
      std::sort(list.begin(), list.end());
      neighbors_.insert(neighbors_.end(), list.begin(), list.end());
    }

    for (VertexId v : interior_)
      if (degree(v) == 0)
        throw DomainError("interior vertex " + std::to_string(v) +
                          " has no neighbours");

    int max_arc = 0;
    for (VertexId v = 0; v < n; ++v) {
      const int label = arc_labels_[v];
      if (label < 0) throw DomainError("negative arc label");
      if (label != kUnlabeled && is_interior(v))
        throw DomainError("interior vertex " + std::to_string(v) +
                          " carries an arc label");
      max_arc = std::max(max_arc, label);
    }
    arcs_.assign(max_arc, {});
    for (VertexId v : boundary_)
      if (arc_labels_[v] != kUnlabeled) arcs_[arc_labels_[v] - 1].push_back(v);
    for (int i = 0; i < max_arc; ++i)
      if (arcs_[i].empty())
        throw DomainError("arc labels are not contiguous: arc " +
                          std::to_string(i + 1) + " is empty");
  }

  int vertex_count() const { return static_cast<int>(kinds_.size()); }
  int interior_count() const { return static_cast<int>(interior_.size()); }
  int boundary_count() const { return static_cast<int>(boundary_.size()); }

  bool is_interior(VertexId v) const {
    return kinds_[v] == VertexKind::interior;
  }
  VertexKind kind(VertexId v) const { return kinds_[v]; }

  /// Position of v among interior (resp. boundary) vertices.
  int ordinal(VertexId v) const { return ordinal_[v]; }
  VertexId interior_vertex(int i) const { return interior_[i]; }
  VertexId boundary_vertex(int i) const { return boundary_[i]; }
  const std::vector<VertexId>& interior_vertices() const { return interior_; }
  const std::vector<VertexId>& boundary_vertices() const { return boundary_; }

  std::span<const VertexId> neighbors(VertexId v) const {
    return {neighbors_.data() + offsets_[v],
            static_cast<std::size_t>(offsets_[v + 1] - offsets_[v])};
  }
  int degree(VertexId v) const { return offsets_[v + 1] - offsets_[v]; }
  const std::vector<Edge>& edges() const { return edges_; }

  int arc_of(VertexId v) const { return arc_labels_[v]; }
  int arc_count() const { return static_cast<int>(arcs_.size()); }
  /// Vertices of arc `i` (1-based).
  const std::vector<VertexId>& arc(int i) const { return arcs_.at(i - 1); }

  bool has_coords() const { return !coords_.empty(); }
  std::pair<int, int> coords(VertexId v) const { return coords_.at(v); }

  /// Same graph, different arc labelling.
  DomainGraph relabeled(std::vector<int> arc_labels) const {
    return DomainGraph(kinds_, edges_, std::move(arc_labels), coords_);
  }

 private:
  std::vector<VertexKind> kinds_;
  std::vector<Edge> edges_;
  std::vector<int> arc_labels_;
  std::vector<std::pair<int, int>> coords_;
  std::vector<int> ordinal_;
  std::vector<VertexId> interior_;
  std::vector<VertexId> boundary_;
  std::vector<int> offsets_;
  std::vector<VertexId> neighbors_;
  std::vector<std::vector<VertexId>> arcs_;
};

enum class Support : std::uint8_t { interior, all };

/// Real value per vertex, indexed by vertex id.  With Support::interior the
/// boundary entries are zero and carry no meaning.
struct ScalarField {
  Support support = Support::all;
  Eigen::VectorXd values;

  static ScalarField zeros(const DomainGraph& d, Support s = Support::all) {
    return {s, Eigen::VectorXd::Zero(d.vertex_count())};
  }
  static ScalarField constant(const DomainGraph& d, double c,
                              Support s = Support::all) {
    ScalarField f = zeros(d, s);
    for (VertexId v = 0; v < d.vertex_count(); ++v)
      if (s == Support::all || d.is_interior(v)) f.values[v] = c;
    return f;
  }
  double operator[](VertexId v) const { return values[v]; }
  double& operator[](VertexId v) { return values[v]; }
};

/// Interior values of `f` as a dense vector in interior-ordinal order.
inline Eigen::VectorXd interior_part(const DomainGraph& d,
                                     const ScalarField& f) {
  Eigen::VectorXd out(d.interior_count());
  for (int i = 0; i < d.interior_count(); ++i)
    out[i] = f.values[d.interior_vertex(i)];
  return out;
}

inline Eigen::VectorXd boundary_part(const DomainGraph& d,
                                     const ScalarField& f) {
  Eigen::VectorXd out(d.boundary_count());
  for (int i = 0; i < d.boundary_count(); ++i)
    out[i] = f.values[d.boundary_vertex(i)];
  return out;
}

inline ScalarField from_interior(const DomainGraph& d,
                                 const Eigen::VectorXd& interior) {
  ScalarField f = ScalarField::zeros(d, Support::interior);
  for (int i = 0; i < d.interior_count(); ++i)
    f.values[d.interior_vertex(i)] = interior[i];
  return f;
}

/// Indicator of arc `i` on the boundary.
inline ScalarField arc_indicator(const DomainGraph& d, int arc) {
  ScalarField f = ScalarField::zeros(d);
  for (VertexId v : d.arc(arc)) f.values[v] = 1.0;
  return f;
}

/// Precision operator (-Lap + K) on the interior, K = diag(killing).
inline Eigen::MatrixXd precision_matrix(const DomainGraph& d,
                                        const Eigen::VectorXd& killing) {
  const int n = d.interior_count();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const VertexId v = d.interior_vertex(i);
    q(i, i) = d.degree(v) + (killing.size() ? killing[i] : 0.0);
    for (VertexId w : d.neighbors(v))
      if (d.is_interior(w)) q(i, d.ordinal(w)) -= 1.0;
  }
  return q;
}

/// Interior-by-boundary adjacency.
inline Eigen::MatrixXd boundary_coupling(const DomainGraph& d) {
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(d.interior_count(),
                                            d.boundary_count());
  for (int i = 0; i < d.interior_count(); ++i)
    for (VertexId w : d.neighbors(d.interior_vertex(i)))
      if (!d.is_interior(w)) b(i, d.ordinal(w)) += 1.0;
  return b;
}

struct GreenOperator {
  Eigen::MatrixXd matrix;  // interior ordinals
  ScalarField killing;

  double operator()(const DomainGraph& d, VertexId x, VertexId y) const {
    return matrix(d.ordinal(x), d.ordinal(y));
  }
};

namespace detail {
inline Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& q) {
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "precision operator is singular: some interior component does not "
        "reach the boundary");
  return llt;
}
}  // namespace detail

/// ((-Lap) + K)^{-1} on the interior.
inline GreenOperator green(const DomainGraph& d, const ScalarField& killing) {
  const Eigen::VectorXd k = interior_part(d, killing);
  if ((k.array() < 0.0).any())
    throw std::invalid_argument("killing rate must be non-negative");
  const auto llt = detail::factor(precision_matrix(d, k));
  const int n = d.interior_count();
  Eigen::MatrixXd g = llt.solve(Eigen::MatrixXd::Identity(n, n));
  // symmetric to the last bit
  g = (0.5 * (g + g.transpose())).eval();
  return {std::move(g), killing};
}

inline GreenOperator green(const DomainGraph& d) {
  return green(d, ScalarField::zeros(d, Support::interior));
}

/// Harmonic function on the interior with the given boundary values.
inline ScalarField harmonic_extension(const DomainGraph& d,
                                      const ScalarField& boundary_values) {
  const Eigen::VectorXd g = boundary_part(d, boundary_values);
  const Eigen::VectorXd rhs = boundary_coupling(d) * g;
  const auto llt =
      detail::factor(precision_matrix(d, Eigen::VectorXd::Zero(d.interior_count())));
  const Eigen::VectorXd u = llt.solve(rhs);
  ScalarField out = ScalarField::zeros(d);
  for (VertexId v : d.boundary_vertices()) out.values[v] = boundary_values[v];
  for (int i = 0; i < d.interior_count(); ++i)
    out.values[d.interior_vertex(i)] = u[i];
  return out;
}

/// K(a,b) = sum over interior x ~ a of P_x[walk exits at b], indexed by
/// boundary ordinals.  The entering step carries weight one.
struct ExcursionKernel {
  Eigen::MatrixXd matrix;

  double operator()(const DomainGraph& d, VertexId a, VertexId b) const {
    return matrix(d.ordinal(a), d.ordinal(b));
  }
};

inline ExcursionKernel excursion_kernel(const DomainGraph& d) {
  const Eigen::MatrixXd b = boundary_coupling(d);
  const auto llt =
      detail::factor(precision_matrix(d, Eigen::VectorXd::Zero(d.interior_count())));
  return {b.transpose() * llt.solve(b)};
}

/// |mu_{i,j}|: kernel mass from arc i to arc j (one orientation).
inline double arc_mass(const DomainGraph& d, const ExcursionKernel& k, int i,
                       int j) {
  double s = 0.0;
  for (VertexId a : d.arc(i))
    for (VertexId b : d.arc(j)) s += k(d, a, b);
  return s;
}

/// Sum over edges {x,y} of (f(x)-f(y))(g(x)-g(y)).
inline double dirichlet_form(const DomainGraph& d, const ScalarField& f,
                             const ScalarField& g) {
  double s = 0.0;
  for (const Edge& e : d.edges())
    s += (f[e.a] - f[e.b]) * (g[e.a] - g[e.b]);
  return s;
}

/// Everything the samplers and evaluators reuse for one domain.  Immutable.
struct LatticeAnalysis {
  explicit LatticeAnalysis(DomainGraph domain_in)
      : domain(std::move(domain_in)),
        coupling(boundary_coupling(domain)),
        precision(detail::factor(precision_matrix(
            domain, Eigen::VectorXd::Zero(domain.interior_count())))) {
    const int n = domain.interior_count();
    green = precision.solve(Eigen::MatrixXd::Identity(n, n));
    green = (0.5 * (green + green.transpose())).eval();
    exit = green * coupling;
    kernel = coupling.transpose() * exit;
  }

  DomainGraph domain;
  Eigen::MatrixXd coupling;            // interior x boundary adjacency
  Eigen::LLT<Eigen::MatrixXd> precision;
  Eigen::MatrixXd green;               // G
  Eigen::MatrixXd exit;                // H = G B: P_x[exit at b]
  Eigen::MatrixXd kernel;              // K = B^T G B

  ExcursionKernel excursion_kernel() const { return {kernel}; }

  double arc_mass(int i, int j) const {
    return loopsoup::arc_mass(domain, excursion_kernel(), i, j);
  }

  /// Interior values of the harmonic extension of the indicator of arc i.
  Eigen::VectorXd arc_harmonic(int i) const {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(domain.interior_count());
    for (VertexId v : domain.arc(i)) h += exit.col(domain.ordinal(v));
    return h;
  }
};

enum class Side : std::uint8_t { left, right, bottom, top };

inline const char* side_name(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::bottom: return "bottom";
    case Side::top: return "top";
  }
  return "?";
}

/// Boundary segment [begin, end) along one side of a rectangle, labelled
/// with arc index `arc`.  end < 0 means "to the end of the side".
struct ArcSegment {
  Side side;
  int begin = 0;
  int end = -1;
  int arc = 1;
  friend bool operator==(const ArcSegment&, const ArcSegment&) = default;
};

/// nx-by-ny interior grid surrounded by a ring of boundary vertices, one per
/// interior cell on the rim (ring corners are omitted).
///
/// Interior cell (i,j) has id j*nx + i.  Boundary vertices follow: the left
/// side (j = 0..ny-1), right side, bottom side (i = 0..nx-1), top side.
inline DomainGraph build_rect_domain(int nx, int ny,
                                     const std::vector<ArcSegment>& arcs = {}) {
  if (nx < 1 || ny < 1) throw DomainError("grid dimensions must be >= 1");
  const int n_int = nx * ny;
  const int n_all = n_int + 2 * nx + 2 * ny;
  std::vector<VertexKind> kinds(n_all, VertexKind::boundary);
  std::fill(kinds.begin(), kinds.begin() + n_int, VertexKind::interior);
  std::vector<std::pair<int, int>> coords(n_all);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) coords[j * nx + i] = {i, j};

  auto side_len = [&](Side s) {
    return (s == Side::left || s == Side::right) ? ny : nx;
  };
  auto side_start = [&](Side s) {
    switch (s) {
      case Side::left: return n_int;
      case Side::right: return n_int + ny;
      case Side::bottom: return n_int + 2 * ny;
      case Side::top: return n_int + 2 * ny + nx;
    }
    return 0;
  };

  std::vector<Edge> edges;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int v = j * nx + i;
      if (i + 1 < nx) edges.push_back({v, v + 1});
      if (j + 1 < ny) edges.push_back({v, v + nx});
    }
  for (int j = 0; j < ny; ++j) {
    const int l = side_start(Side::left) + j, r = side_start(Side::right) + j;
    coords[l] = {-1, j};
    coords[r] = {nx, j};
    edges.push_back({l, j * nx});
    edges.push_back({r, j * nx + nx - 1});
  }
  for (int i = 0; i < nx; ++i) {
    const int b = side_start(Side::bottom) + i, t = side_start(Side::top) + i;
    coords[b] = {i, -1};
    coords[t] = {i, ny};
    edges.push_back({b, i});
    edges.push_back({t, (ny - 1) * nx + i});
  }

  std::vector<int> labels(n_all, kUnlabeled);
  for (const ArcSegment& seg : arcs) {
    const int len = side_len(seg.side);
    const int end = seg.end < 0 ? len : seg.end;
    if (seg.arc < 1) throw DomainError("arc index must be >= 1");
    if (seg.begin < 0 || end > len || seg.begin >= end) {
      std::ostringstream msg;
      msg << "arc segment " << side_name(seg.side) << "[" << seg.begin << ","
          << end << ") is outside the side of length " << len;
      throw DomainError(msg.str());
    }
    for (int t = seg.begin; t < end; ++t) {
      const int v = side_start(seg.side) + t;
      if (labels[v] != kUnlabeled) {
        std::ostringstream msg;
        msg << "overlapping arc segments on side " << side_name(seg.side)
            << " at position " << t << " (arcs " << labels[v] << " and "
            << seg.arc << ")";
        throw DomainError(msg.str());
      }
      labels[v] = seg.arc;
    }
  }
  return DomainGraph(std::move(kinds), std::move(edges), std::move(labels),
                     std::move(coords));
}

/// Boundary ring of a rectangle split into `n` contiguous arcs of (nearly)
/// equal length, walking left, top, right, bottom.
inline std::vector<ArcSegment> split_ring(int nx, int ny, int n) {
  struct Slot { Side side; int pos; };
  std::vector<Slot> ring;
  for (int j = 0; j < ny; ++j) ring.push_back({Side::left, j});
  for (int i = 0; i < nx; ++i) ring.push_back({Side::top, i});
  for (int j = ny - 1; j >= 0; --j) ring.push_back({Side::right, j});
  for (int i = nx - 1; i >= 0; --i) ring.push_back({Side::bottom, i});
  const int total = static_cast<int>(ring.size());
  if (n < 1 || n > total) throw DomainError("cannot split ring into that many arcs");
  std::vector<ArcSegment> out;
  for (int k = 0; k < total; ++k) {
    const int arc = 1 + static_cast<int>((static_cast<long>(k) * n) / total);
    out.push_back({ring[k].side, ring[k].pos, ring[k].pos + 1, arc});
  }
  return out;
}

/// Green matrix as CSV with vertex ids as header.
inline void write_csv(std::ostream& os, const DomainGraph& d,
                      const GreenOperator& g) {
  os.precision(17);
  os << "vertex";
  for (VertexId v : d.interior_vertices()) os << ',' << v;
  os << '\n';
  for (int i = 0; i < d.interior_count(); ++i) {
    os << d.interior_vertex(i);
    for (int j = 0; j < d.interior_count(); ++j) os << ',' << g.matrix(i, j);
    os << '\n';
  }
}

}  // namespace loopsoup
