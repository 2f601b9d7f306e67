#include "loopsoup/lattice.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace loopsoup;

namespace {

// Jacobi sweeps for the discrete Dirichlet problem; slow but independent of
// the Cholesky path in the library.
Eigen::VectorXd jacobi_harmonic(const DomainGraph& d, const ScalarField& bc) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(d.vertex_count());
  for (VertexId v : d.boundary_vertices()) f[v] = bc[v];
  for (int it = 0; it < 20000; ++it) {
    Eigen::VectorXd g = f;
    for (VertexId v : d.interior_vertices()) {
      double s = 0;
      for (VertexId w : d.neighbors(v)) s += f[w];
      g[v] = s / d.degree(v);
    }
    if ((g - f).cwiseAbs().maxCoeff() < 1e-15) return g;
    f = g;
  }
  return f;
}

// P_x[walk exits at boundary vertex b] by value iteration.
Eigen::MatrixXd exit_probabilities(const DomainGraph& d) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d.interior_count(), d.boundary_count());
  for (int it = 0; it < 20000; ++it) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(h.rows(), h.cols());
    for (VertexId v : d.interior_vertices()) {
      for (VertexId w : d.neighbors(v)) {
        if (d.is_interior(w))
          g.row(d.ordinal(v)) += h.row(d.ordinal(w));
        else
          g(d.ordinal(v), d.ordinal(w)) += 1.0;
      }
      g.row(d.ordinal(v)) /= d.degree(v);
    }
    const double delta = (g - h).cwiseAbs().maxCoeff();
    h = g;
    if (delta < 1e-15) break;
  }
  return h;
}

DomainGraph north_south() {
  return build_rect_domain(1, 1, {{Side::top, 0, -1, 1}, {Side::bottom, 0, -1, 2}});
}

}  // namespace

TEST(Lattice, SmallestGrid) {
  const DomainGraph d = build_rect_domain(1, 1);
  EXPECT_EQ(d.interior_count(), 1);
  EXPECT_EQ(d.boundary_count(), 4);
  EXPECT_EQ(d.edges().size(), 4u);
  EXPECT_EQ(d.degree(0), 4);
  EXPECT_EQ(d.arc_count(), 0);
}

TEST(Lattice, TwoByOneWithSideArcs) {
  const DomainGraph d =
      build_rect_domain(2, 1, {{Side::left, 0, -1, 1}, {Side::right, 0, -1, 2}});
  EXPECT_EQ(d.interior_count(), 2);
  EXPECT_EQ(d.boundary_count(), 6);
  ASSERT_EQ(d.arc_count(), 2);
  EXPECT_EQ(d.arc(1).size(), 1u);
  EXPECT_EQ(d.arc(2).size(), 1u);
  EXPECT_EQ(d.neighbors(d.arc(1)[0])[0], 0);
  EXPECT_EQ(d.neighbors(d.arc(2)[0])[0], 1);
}

TEST(Lattice, ThreeByThreeRing) {
  const DomainGraph d = build_rect_domain(3, 3);
  EXPECT_EQ(d.interior_count(), 9);
  EXPECT_EQ(d.boundary_count(), 12);
  // every ring cell touches exactly one interior cell
  for (VertexId b : d.boundary_vertices()) EXPECT_EQ(d.degree(b), 1);
  // 12 interior edges + 12 boundary edges
  EXPECT_EQ(d.edges().size(), 24u);
}

TEST(Lattice, IdLayout) {
  const DomainGraph d = build_rect_domain(3, 2);
  EXPECT_EQ(d.coords(4), (std::pair<int, int>{1, 1}));
  EXPECT_EQ(d.coords(6), (std::pair<int, int>{-1, 0}));  // first left
  EXPECT_EQ(d.coords(8), (std::pair<int, int>{3, 0}));   // first right
  EXPECT_EQ(d.coords(10), (std::pair<int, int>{0, -1}));  // first bottom
  EXPECT_EQ(d.coords(13), (std::pair<int, int>{0, 2}));   // first top
}

TEST(Lattice, RejectsBadDomains) {
  EXPECT_THROW(build_rect_domain(0, 2), DomainError);
  EXPECT_THROW(build_rect_domain(2, 2, {{Side::left, 0, -1, 1}, {Side::left, 1, 2, 2}}),
               DomainError);
  EXPECT_THROW(build_rect_domain(2, 2, {{Side::top, 1, 5, 1}}), DomainError);
  EXPECT_THROW(build_rect_domain(2, 2, {{Side::top, 0, -1, 2}}), DomainError);
  // boundary-boundary edge
  EXPECT_THROW(DomainGraph({VertexKind::boundary, VertexKind::boundary}, {{0, 1}}, {}),
               DomainError);
  // isolated interior vertex
  EXPECT_THROW(DomainGraph({VertexKind::interior, VertexKind::boundary}, {}, {}),
               DomainError);
}

TEST(Lattice, GreenOneVertex) {
  const DomainGraph d = build_rect_domain(1, 1);
  EXPECT_DOUBLE_EQ(green(d).matrix(0, 0), 0.25);
  for (double c : {0.5, 1.0, 7.0})
    EXPECT_NEAR(green(d, ScalarField::constant(d, c, Support::interior)).matrix(0, 0),
                1.0 / (4.0 + c), 1e-15);
}

TEST(Lattice, GreenSymmetricAndInverse) {
  const DomainGraph d = build_rect_domain(4, 3);
  ScalarField k = ScalarField::zeros(d, Support::interior);
  for (VertexId v : d.interior_vertices()) k[v] = 0.1 * v;
  const GreenOperator g = green(d, k);
  EXPECT_EQ(g.matrix, g.matrix.transpose());
  // test-side Laplacian from the edge list
  const int n = d.interior_count();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (const Edge& e : d.edges()) {
    if (d.is_interior(e.a)) q(d.ordinal(e.a), d.ordinal(e.a)) += 1;
    if (d.is_interior(e.b)) q(d.ordinal(e.b), d.ordinal(e.b)) += 1;
    if (d.is_interior(e.a) && d.is_interior(e.b)) {
      q(d.ordinal(e.a), d.ordinal(e.b)) -= 1;
      q(d.ordinal(e.b), d.ordinal(e.a)) -= 1;
    }
  }
  for (int i = 0; i < n; ++i) q(i, i) += k[d.interior_vertex(i)];
  EXPECT_LT((q * g.matrix - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Lattice, HarmonicExtensionExamples) {
  const DomainGraph one = build_rect_domain(1, 1);
  ScalarField bc = ScalarField::zeros(one);
  bc[one.boundary_vertex(0)] = 3.0;
  EXPECT_DOUBLE_EQ(harmonic_extension(one, bc)[0], 0.75);

  const DomainGraph d = build_rect_domain(3, 4);
  const ScalarField c = harmonic_extension(d, ScalarField::constant(d, 2.5));
  for (VertexId v = 0; v < d.vertex_count(); ++v) EXPECT_NEAR(c[v], 2.5, 1e-13);

  // 2x1 grid with 1 on the left boundary vertex: h0 = (1 + h1)/4, h1 = h0/4
  const DomainGraph two = build_rect_domain(2, 1, {{Side::left, 0, -1, 1}});
  const ScalarField h = harmonic_extension(two, arc_indicator(two, 1));
  EXPECT_NEAR(h[0], 4.0 / 15.0, 1e-15);
  EXPECT_NEAR(h[1], 1.0 / 15.0, 1e-15);
}

TEST(Lattice, HarmonicExtensionMatchesJacobi) {
  const DomainGraph d = build_rect_domain(4, 3);
  ScalarField bc = ScalarField::zeros(d);
  for (VertexId v : d.boundary_vertices()) bc[v] = std::sin(1.7 * v);
  const ScalarField h = harmonic_extension(d, bc);
  const Eigen::VectorXd ref = jacobi_harmonic(d, bc);
  for (VertexId v = 0; v < d.vertex_count(); ++v) EXPECT_NEAR(h[v], ref[v], 1e-12);
}

TEST(Lattice, KernelOneVertex) {
  const DomainGraph d = north_south();
  const ExcursionKernel k = excursion_kernel(d);
  EXPECT_DOUBLE_EQ(k(d, d.arc(1)[0], d.arc(2)[0]), 0.25);
  EXPECT_DOUBLE_EQ(arc_mass(d, k, 1, 2), 0.25);
}

TEST(Lattice, KernelRowSumsAndWalkOracle) {
  const DomainGraph d = build_rect_domain(3, 2);
  const LatticeAnalysis lat(d);
  // each boundary vertex has one interior neighbour; the walk from there exits a.s.
  for (int a = 0; a < d.boundary_count(); ++a)
    EXPECT_NEAR(lat.kernel.row(a).sum(), 1.0, 1e-13);
  const Eigen::MatrixXd h = exit_probabilities(d);
  for (int a = 0; a < d.boundary_count(); ++a)
    for (int b = 0; b < d.boundary_count(); ++b) {
      const VertexId x = d.neighbors(d.boundary_vertex(a))[0];
      EXPECT_NEAR(lat.kernel(a, b), h(d.ordinal(x), b), 1e-12);
    }
  EXPECT_LT((lat.kernel - lat.kernel.transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Lattice, DirichletFormBasics) {
  const DomainGraph d = build_rect_domain(3, 3);
  const ScalarField c = ScalarField::constant(d, 4.0);
  EXPECT_EQ(dirichlet_form(d, c, c), 0.0);
  ScalarField f = ScalarField::zeros(d), g = f, h = f;
  for (VertexId v = 0; v < d.vertex_count(); ++v) {
    f[v] = v % 3;
    g[v] = (v * v) % 5;
    h[v] = 1.0 / (1 + v);
  }
  ScalarField mix = f;
  mix.values = 2.0 * f.values - 3.0 * h.values;
  EXPECT_NEAR(dirichlet_form(d, mix, g),
              2.0 * dirichlet_form(d, f, g) - 3.0 * dirichlet_form(d, h, g), 1e-12);
}

TEST(Lattice, PairingIdentityOneVertex) {
  const DomainGraph d = north_south();
  const ScalarField h1 = harmonic_extension(d, arc_indicator(d, 1));
  const ScalarField h2 = harmonic_extension(d, arc_indicator(d, 2));
  // edges: (x,n): (1/4-1)(1/4-0); (x,s): (1/4-0)(1/4-1); (x,e),(x,w): (1/4)(1/4)
  const double expected = 2 * (-0.75 * 0.25) + 2 * 0.0625;
  EXPECT_DOUBLE_EQ(dirichlet_form(d, h1, h2), expected);
  EXPECT_DOUBLE_EQ(std::abs(expected), LatticeAnalysis(d).arc_mass(1, 2));
}

TEST(Lattice, PairingIdentityTwoByTwo) {
  const DomainGraph d = build_rect_domain(
      2, 2, {{Side::left, 0, -1, 1}, {Side::top, 0, -1, 2}, {Side::right, 0, 1, 3}});
  const LatticeAnalysis lat(d);
  const Eigen::MatrixXd h = exit_probabilities(d);
  for (int i = 1; i <= 3; ++i)
    for (int j = i + 1; j <= 3; ++j) {
      double brute = 0;  // sum over a in arc i of P_{x(a)}[exit in arc j]
      for (VertexId a : d.arc(i))
        for (VertexId b : d.arc(j))
          brute += h(d.ordinal(d.neighbors(a)[0]), d.ordinal(b));
      const double form = dirichlet_form(d, harmonic_extension(d, arc_indicator(d, i)),
                                         harmonic_extension(d, arc_indicator(d, j)));
      EXPECT_NEAR(lat.arc_mass(i, j), brute, 1e-12);
      EXPECT_NEAR(-form, lat.arc_mass(i, j), 1e-12);
    }
}

TEST(Lattice, SplitRing) {
  const auto segs = split_ring(3, 2, 4);
  const DomainGraph d = build_rect_domain(3, 2, segs);
  ASSERT_EQ(d.arc_count(), 4);
  std::size_t total = 0;
  for (int i = 1; i <= 4; ++i) {
    EXPECT_GE(d.arc(i).size(), 2u);
    total += d.arc(i).size();
  }
  EXPECT_EQ(total, 10u);
  EXPECT_THROW(split_ring(1, 1, 5), DomainError);
}

TEST(Lattice, GreenCsv) {
  const DomainGraph d = build_rect_domain(2, 1);
  std::ostringstream os;
  write_csv(os, d, green(d));
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "vertex,0,1");
  EXPECT_EQ(row.substr(0, 2), "0,");
  // G = [[4,1],[1,4]] / 15
  EXPECT_NEAR(std::stod(row.substr(2)), 4.0 / 15.0, 1e-15);
}
