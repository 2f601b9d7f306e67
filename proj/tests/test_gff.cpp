#include "loopsoup/gff.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace loopsoup;

namespace {

// E[f(X)] for X ~ N(0, var), composite Simpson on +-12 sd.
template <class F>
double gauss_expect(double var, F f) {
  const double sd = std::sqrt(var), a = -12 * sd, b = 12 * sd;
  const int n = 20000;
  const double h = (b - a) / n;
  double s = 0;
  for (int i = 0; i <= n; ++i) {
    const double x = a + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    s += w * f(x) * std::exp(-x * x / (2 * var));
  }
  return s * h / 3 / std::sqrt(2 * M_PI * var);
}

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= xs.size();
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= xs.size() - 1;
  return m;
}

}  // namespace

TEST(Gff, CenteredMeanIsZero) {
  const DomainGraph d = build_rect_domain(2, 2);
  GffSampler s(std::make_shared<const LatticeAnalysis>(d));
  Rng rng = make_stream(11, 0);
  const int n = 100000;
  std::vector<double> xs(n);
  for (int r = 0; r < n; ++r) xs[r] = s.sample(ScalarField::zeros(d), rng).field[0];
  const Moments m = moments(xs);
  EXPECT_LT(std::abs(m.mean) / std::sqrt(m.var / n), 4.0);
}

TEST(Gff, OneVertexVariance) {
  const DomainGraph d = build_rect_domain(1, 1);
  GffSampler s(std::make_shared<const LatticeAnalysis>(d));
  Rng rng = make_stream(12, 0);
  const int n = 100000;
  std::vector<double> xs(n);
  for (int r = 0; r < n; ++r) xs[r] = s.sample_centered(rng)[0];
  const Moments m = moments(xs);
  // Var of the sample variance of a Gaussian is 2 sigma^4 / (n - 1)
  EXPECT_LT(std::abs(m.var - 0.25) / std::sqrt(2 * 0.0625 / (n - 1)), 4.0);
}

TEST(Gff, CovarianceMatchesGreen) {
  const DomainGraph d = build_rect_domain(2, 2);
  auto lat = std::make_shared<const LatticeAnalysis>(d);
  GffSampler s(lat);
  Rng rng = make_stream(13, 0);
  const int n = 200000;
  double c01 = 0, c03 = 0;
  for (int r = 0; r < n; ++r) {
    const Eigen::VectorXd h = s.sample_centered(rng);
    c01 += h[0] * h[1];
    c03 += h[0] * h[3];
  }
  c01 /= n;
  c03 /= n;
  const Eigen::MatrixXd& g = lat->green;
  // Var(h0 h1) = G00 G11 + G01^2
  EXPECT_LT(std::abs(c01 - g(0, 1)) /
                std::sqrt((g(0, 0) * g(1, 1) + g(0, 1) * g(0, 1)) / n),
            4.0);
  EXPECT_LT(std::abs(c03 - g(0, 3)) /
                std::sqrt((g(0, 0) * g(3, 3) + g(0, 3) * g(0, 3)) / n),
            4.0);
}

TEST(Gff, BoundaryConditionIsAShift) {
  const DomainGraph d = build_rect_domain(3, 2);
  GffSampler s(std::make_shared<const LatticeAnalysis>(d));
  const ScalarField bc = ScalarField::constant(d, 1.5);
  Rng a = make_stream(14, 0), b = make_stream(14, 0);
  const GffSample shifted = s.sample(bc, a);
  const GffSample centered = s.sample(ScalarField::zeros(d), b);
  for (VertexId v : d.interior_vertices())
    EXPECT_NEAR(shifted.field[v], 1.5 + centered.field[v], 1e-14);
  for (VertexId v : d.boundary_vertices()) EXPECT_EQ(shifted.field[v], 1.5);
}

TEST(Gff, RenormalizedSquareAlgebra) {
  const DomainGraph d = build_rect_domain(3, 3);
  auto lat = std::make_shared<const LatticeAnalysis>(d);
  GffSampler s(lat);
  Rng rng = make_stream(15, 0);
  for (int r = 0; r < 20; ++r) {
    const GffSample g = s.sample(ScalarField::zeros(d), rng);
    ScalarField phi = ScalarField::zeros(d);
    for (VertexId v = 0; v < d.vertex_count(); ++v) phi[v] = uniform01(rng) * 3 - 1;
    const ScalarField lhs = renormalized_square(g, phi);
    const ScalarField h2 = renormalized_square(g, ScalarField::zeros(d));
    for (VertexId v : d.interior_vertices())
      EXPECT_NEAR(lhs[v], h2[v] + 2 * g.field[v] * phi[v] + phi[v] * phi[v], 1e-12);
  }
}

TEST(Gff, RenormalizedSquareMeans) {
  const DomainGraph d = build_rect_domain(1, 1);
  GffSampler s(std::make_shared<const LatticeAnalysis>(d));
  Rng rng = make_stream(16, 0);
  const int n = 100000;
  ScalarField two = ScalarField::zeros(d);
  two[0] = 2.0;
  std::vector<double> a(n), b(n);
  for (int r = 0; r < n; ++r) {
    const GffSample g = s.sample(ScalarField::zeros(d), rng);
    a[r] = renormalized_square(g, ScalarField::zeros(d))[0];
    b[r] = renormalized_square(g, two)[0];
  }
  const Moments ma = moments(a), mb = moments(b);
  EXPECT_LT(std::abs(ma.mean) / std::sqrt(ma.var / n), 4.0);
  EXPECT_LT(std::abs(mb.mean - 4.0) / std::sqrt(mb.var / n), 4.0);
}

TEST(Gff, LaplaceCenteredClosedForms) {
  const DomainGraph d = build_rect_domain(2, 3);
  EXPECT_NEAR(laplace_centered_square(d, ScalarField::zeros(d, Support::interior)), 1.0,
              1e-15);
  const DomainGraph one = build_rect_domain(1, 1);
  for (double c : {0.3, 1.0, 5.0}) {
    const double closed = std::pow(1 + c / 4, -0.5) * std::exp(c / 8);
    EXPECT_NEAR(
        laplace_centered_square(one, ScalarField::constant(one, c, Support::interior)),
        closed, 1e-14);
    const double quad = gauss_expect(0.25, [&](double x) {
      return std::exp(-0.5 * c * (x * x - 0.25));
    });
    EXPECT_NEAR(closed, quad, 1e-10);
  }
  EXPECT_THROW(laplace_centered_square(one, ScalarField::constant(one, -1.0)),
               std::invalid_argument);
}

TEST(Gff, LaplaceCenteredMonteCarlo) {
  const DomainGraph d = build_rect_domain(2, 2);
  auto lat = std::make_shared<const LatticeAnalysis>(d);
  GffSampler s(lat);
  ScalarField k = ScalarField::zeros(d, Support::interior);
  k[0] = 0.4;
  k[1] = 1.0;
  k[3] = 0.2;
  Rng rng = make_stream(17, 0);
  const int n = 1000000;
  std::vector<double> xs(n);
  for (int r = 0; r < n; ++r) {
    const ScalarField sq = renormalized_square(s.sample(ScalarField::zeros(d), rng),
                                               ScalarField::zeros(d));
    double t = 0;
    for (VertexId v : d.interior_vertices()) t += k[v] * sq[v];
    xs[r] = std::exp(-0.5 * t);
  }
  const Moments m = moments(xs);
  EXPECT_LT(std::abs(m.mean - laplace_centered_square(*lat, k)) / std::sqrt(m.var / n),
            4.0);
}

TEST(Gff, LaplaceShiftedReductions) {
  const DomainGraph d = build_rect_domain(3, 2);
  const LatticeAnalysis lat(d);
  ScalarField k = ScalarField::zeros(d, Support::interior), phi = ScalarField::zeros(d);
  for (VertexId v : d.interior_vertices()) {
    k[v] = 0.3 + 0.1 * v;
    phi[v] = std::cos(v);
  }
  EXPECT_NEAR(laplace_shifted_square(lat, k, ScalarField::zeros(d)),
              laplace_centered_square(lat, k), 1e-15);
  EXPECT_NEAR(laplace_shifted_square(lat, ScalarField::zeros(d, Support::interior), phi),
              1.0, 1e-15);
}

TEST(Gff, LaplaceShiftedQuadrature) {
  const DomainGraph one = build_rect_domain(1, 1);
  const ScalarField k = ScalarField::constant(one, 1.0, Support::interior);
  ScalarField phi = ScalarField::zeros(one);
  phi[0] = 1.0;
  const double quad = gauss_expect(0.25, [](double x) {
    return std::exp(-0.5 * ((x + 1) * (x + 1) - 0.25));
  });
  EXPECT_NEAR(laplace_shifted_square(one, k, phi), quad, 1e-12);
}
