#include "loopsoup/excursions.hpp"
#include "loopsoup/loopsoup.hpp"
#include "loopsoup/paths.hpp"
#include "loopsoup/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

using namespace loopsoup;

namespace {

std::shared_ptr<const LatticeAnalysis> analyse(const DomainGraph& d) {
  return std::make_shared<const LatticeAnalysis>(d);
}

DomainGraph north_south() {
  return build_rect_domain(1, 1, {{Side::top, 0, -1, 1}, {Side::bottom, 0, -1, 2}});
}

double poisson_pmf(double l, int k) {
  return std::exp(-l + k * std::log(l) - std::lgamma(k + 1.0));
}

}  // namespace

TEST(Excursions, TinyBetaIsEmpty) {
  const DomainGraph d = build_rect_domain(3, 3, split_ring(3, 3, 3));
  ExcursionSampler s(analyse(d), 1e-9);
  Rng rng = make_stream(1, 0);
  int nonempty = 0;
  for (int r = 0; r < 10000; ++r) nonempty += !s.sample(rng).excursions.empty();
  EXPECT_LE(nonempty, 1);
}

TEST(Excursions, OneVertexNorthSouthCount) {
  const DomainGraph d = north_south();
  ExcursionSampler s(analyse(d), 0.25);
  EXPECT_DOUBLE_EQ(s.pair_mass(1, 2), 0.25);
  Rng rng = make_stream(2, 0);
  const int runs = 200000;
  double sum = 0;
  for (int r = 0; r < runs; ++r)
    sum += s.sample(rng, {Restriction::single_pair, 1, 2}).counts(0, 1);
  const double lambda = 1.0 / 16.0;
  EXPECT_LT(std::abs(sum / runs - lambda) / std::sqrt(lambda / runs), 4.0);
}

TEST(Excursions, SameArcMassIsHalfTheOrderedSum) {
  const DomainGraph d = build_rect_domain(2, 2, {{Side::left, 0, -1, 1}});
  const LatticeAnalysis lat(d);
  ExcursionSampler s(analyse(d), 1.0);
  double ordered = 0;
  for (VertexId a : d.arc(1))
    for (VertexId b : d.arc(1)) ordered += lat.kernel(d.ordinal(a), d.ordinal(b));
  EXPECT_NEAR(s.pair_mass(1, 1), 0.5 * ordered, 1e-15);
}

TEST(Excursions, PathsAreWellFormed) {
  const DomainGraph d = build_rect_domain(3, 2, split_ring(3, 2, 3));
  ExcursionSampler s(analyse(d), 2.0);
  Rng rng = make_stream(3, 0);
  for (int r = 0; r < 500; ++r) {
    const ExcursionEnsemble e = s.sample(rng);
    for (const auto& ex : e.excursions) {
      ASSERT_GE(ex.path.size(), 3u);
      ASSERT_EQ(ex.holding.size() + 2, ex.path.size());
      EXPECT_FALSE(d.is_interior(ex.path.front()));
      EXPECT_FALSE(d.is_interior(ex.path.back()));
      const int ai = d.arc_of(ex.path.front()), aj = d.arc_of(ex.path.back());
      EXPECT_EQ(std::min(ai, aj), ex.arc_i);
      EXPECT_EQ(std::max(ai, aj), ex.arc_j);
      for (std::size_t i = 1; i + 1 < ex.path.size(); ++i)
        EXPECT_TRUE(d.is_interior(ex.path[i]));
      for (std::size_t i = 0; i + 1 < ex.path.size(); ++i) {
        const auto nb = d.neighbors(ex.path[i]);
        EXPECT_NE(std::find(nb.begin(), nb.end(), ex.path[i + 1]), nb.end());
      }
    }
    int total = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) total += e.counts(i, j);
    EXPECT_EQ(static_cast<std::size_t>(total), e.excursions.size());
  }
}

TEST(Excursions, EndpointLawFollowsKernel) {
  const DomainGraph d =
      build_rect_domain(2, 2, {{Side::left, 0, -1, 1}, {Side::top, 0, -1, 2}});
  auto lat = analyse(d);
  ExcursionSampler s(lat, 1.0);
  Rng rng = make_stream(4, 0);
  std::map<std::pair<VertexId, VertexId>, double> seen;
  const int runs = 40000;
  for (int r = 0; r < runs; ++r) {
    const Excursion e = s.sample_excursion(1, 2, rng);
    seen[{e.path.front(), e.path.back()}] += 1;
  }
  std::vector<double> o, ex;
  for (VertexId a : d.arc(1))
    for (VertexId b : d.arc(2)) {
      o.push_back(seen[{a, b}]);
      ex.push_back(runs * lat->kernel(d.ordinal(a), d.ordinal(b)) / lat->arc_mass(1, 2));
    }
  EXPECT_GT(stats::chi_square_gof(o, ex).p_value, 0.001);
}

// E[occupation(x)] = beta * sum over pairs f_ij * sum_{a,b} E[visits of x
// before exit at b | enter at a] * (1 / deg x); visits from y are
// G(y,x) deg(x), exit from x at b is H(x,b).  G and H are recomputed here
// with a dense inverse.
TEST(Excursions, ExpectedOccupationPathSum) {
  const DomainGraph d = build_rect_domain(3, 2, split_ring(3, 2, 3));
  const int n = d.interior_count();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (VertexId v : d.interior_vertices()) {
    q(d.ordinal(v), d.ordinal(v)) = d.degree(v);
    for (VertexId w : d.neighbors(v))
      if (d.is_interior(w)) q(d.ordinal(v), d.ordinal(w)) = -1;
  }
  const Eigen::MatrixXd g = q.inverse();
  const double beta = 0.8;
  ExcursionSampler s(analyse(d), beta);
  const ScalarField lib = s.expected_occupation();
  for (VertexId x : d.interior_vertices()) {
    double total = 0;
    for (int i = 1; i <= 3; ++i)
      for (int j = i; j <= 3; ++j) {
        double m = 0;
        for (VertexId a : d.arc(i))
          for (VertexId b : d.arc(j)) {
            const int y = d.ordinal(d.neighbors(a)[0]);
            const int xb = d.ordinal(d.neighbors(b)[0]);
            // H(x,b) = G(x, neighbour of b) * 1 since b has one neighbour
            m += g(y, d.ordinal(x)) * d.degree(x) * g(d.ordinal(x), xb) / d.degree(x);
          }
        total += (i == j ? 0.5 : 1.0) * beta * m;
      }
    EXPECT_NEAR(lib[x], total, 1e-12);
  }

  // and the sampler agrees with it
  Rng rng = make_stream(5, 0);
  const int runs = 40000;
  std::vector<double> xs(runs);
  const VertexId x0 = d.interior_vertex(2);
  for (int r = 0; r < runs; ++r) {
    ScalarField occ = ScalarField::zeros(d, Support::interior);
    add_occupation(occ, s.sample(rng));
    xs[r] = occ[x0];
  }
  double m = 0, v = 0;
  for (double x : xs) m += x;
  m /= runs;
  for (double x : xs) v += (x - m) * (x - m);
  v /= runs - 1;
  EXPECT_LT(std::abs(m - lib[x0]) / std::sqrt(v / runs), 4.0);
}

TEST(Excursions, OccupationFunctionalBasics) {
  const DomainGraph d = north_south();
  const ExcursionEnsemble empty = empty_excursions(2);
  EXPECT_EQ(occupation_functional(empty, ScalarField::constant(d, 2.0)), 0.0);
  ExcursionSampler s(analyse(d), 5.0);
  Rng rng = make_stream(6, 0);
  EXPECT_EQ(occupation_functional(s.sample(rng), ScalarField::zeros(d)), 0.0);
}

TEST(Excursions, LaplaceFunctionalOneVertex) {
  // holding at x is Exp(4): E[exp(-c l)] = 4 / (4 + c)
  const DomainGraph d = north_south();
  const double beta = 3.0, c = 2.0;
  ExcursionSampler s(analyse(d), beta);
  const double exact = std::exp(-beta * 0.25 * (1 - 4 / (4 + c)));
  const ScalarField k = ScalarField::constant(d, c, Support::interior);
  Rng rng = make_stream(7, 0);
  const int runs = 200000;
  double m = 0, m2 = 0;
  for (int r = 0; r < runs; ++r) {
    const double x =
        std::exp(-occupation_functional(s.sample(rng, {Restriction::single_pair, 1, 2}), k));
    m += x;
    m2 += x * x;
  }
  m /= runs;
  const double se = std::sqrt((m2 / runs - m * m) / runs);
  EXPECT_LT(std::abs(m - exact) / se, 4.0);
}

TEST(Excursions, CrossingCountsExamples) {
  const DomainGraph d = north_south();
  ExcursionEnsemble e = empty_excursions(2);
  CrossingCounts c = crossing_counts(e);
  EXPECT_TRUE(c.parity_satisfied);
  EXPECT_EQ(c.per_arc.sum(), 0);
  Excursion ex{{d.arc(1)[0], 0, d.arc(2)[0]}, {0.3}, 1, 2};
  add_excursion(e, ex);
  c = crossing_counts(e);
  EXPECT_EQ(c.per_arc[0], 1);
  EXPECT_EQ(c.per_arc[1], 1);
  EXPECT_FALSE(c.parity_satisfied);
  add_excursion(e, ex);
  c = crossing_counts(e);
  EXPECT_TRUE(c.parity_satisfied);
  EXPECT_TRUE(parity_event(e.counts));
}

TEST(Parity, TwoArcsProbabilityAndAcceptance) {
  const double lambda = 0.7;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 2);
  l(0, 1) = l(1, 0) = lambda;
  ParityCountSampler p(l);
  EXPECT_NEAR(p.probability_even(), 0.5 * (1 + std::exp(-2 * lambda)), 1e-15);
  Rng rng = make_stream(8, 0);
  long attempts = 0, accepted = 0;
  for (int r = 0; r < 100000; ++r) {
    long a = 0;
    p.sample_rejection(rng, &a);
    attempts += a;
    ++accepted;
  }
  const double rate = double(accepted) / attempts, pe = p.probability_even();
  EXPECT_LT(std::abs(rate - pe) / std::sqrt(pe * (1 - pe) / attempts), 4.0);
}

TEST(Parity, TwoArcsConditionedPmf) {
  const double lambda = 1.3;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 2);
  l(0, 1) = l(1, 0) = lambda;
  ParityCountSampler p(l);
  const double norm = 2.0 / (1 + std::exp(-2 * lambda));
  for (int k = 0; k <= 3; ++k) {
    Eigen::MatrixXi c = Eigen::MatrixXi::Zero(2, 2);
    c(0, 1) = c(1, 0) = 2 * k;
    EXPECT_NEAR(p.conditional_pmf(c), poisson_pmf(lambda, 2 * k) * norm, 1e-14);
    c(0, 1) = c(1, 0) = 2 * k + 1;
    EXPECT_EQ(p.conditional_pmf(c), 0.0);
  }
  Rng rng = make_stream(9, 0);
  const int runs = 200000;
  std::vector<double> o(4, 0), e(4, 0);
  for (int r = 0; r < runs; ++r) {
    const Eigen::MatrixXi c = p.sample(rng, ParityMethod::exact_counts);
    ASSERT_EQ(c(0, 1) % 2, 0);
    o[std::min(c(0, 1) / 2, 3)] += 1;
  }
  double rest = 1;
  for (int k = 0; k < 3; ++k) {
    e[k] = runs * poisson_pmf(lambda, 2 * k) * norm;
    rest -= e[k] / runs;
  }
  e[3] = runs * rest;
  EXPECT_GT(stats::chi_square_gof(o, e).p_value, 0.001);
}

TEST(Parity, ThreeArcsExactMatchesRejection) {
  Eigen::MatrixXd l(3, 3);
  l << 0, 0.4, 0.9, 0.4, 0, 0.6, 0.9, 0.6, 0;
  ParityCountSampler p(l);
  // pmf sums to one over a box that holds essentially all mass
  double total = 0;
  for (int a = 0; a < 14; ++a)
    for (int b = 0; b < 14; ++b)
      for (int c = 0; c < 14; ++c) {
        Eigen::MatrixXi m = Eigen::MatrixXi::Zero(3, 3);
        m(0, 1) = m(1, 0) = a;
        m(0, 2) = m(2, 0) = b;
        m(1, 2) = m(2, 1) = c;
        total += p.conditional_pmf(m);
      }
  EXPECT_NEAR(total, 1.0, 1e-10);

  Rng r1 = make_stream(10, 0), r2 = make_stream(10, 1);
  std::map<int, long> ex, rej;
  for (int r = 0; r < 200000; ++r) {
    const Eigen::MatrixXi a = p.sample(r1, ParityMethod::exact_counts);
    const Eigen::MatrixXi b = p.sample(r2, ParityMethod::rejection);
    ASSERT_TRUE(parity_event(a));
    ASSERT_TRUE(parity_event(b));
    ++ex[std::min(a(0, 1), 5)];
    ++rej[std::min(b(0, 1), 5)];
  }
  EXPECT_GT(stats::chi_square_homogeneity(ex, rej).p_value, 0.001);
}

TEST(Parity, ConditionedEnsemblesSatisfyParity) {
  const DomainGraph d = build_rect_domain(3, 3, split_ring(3, 3, 4));
  ExcursionSampler s(analyse(d), 1.5);
  ParityCountSampler p(cross_means(s));
  Rng rng = make_stream(11, 0);
  for (int r = 0; r < 2000; ++r)
    for (ParityMethod m : {ParityMethod::exact_counts, ParityMethod::rejection}) {
      const ParityConditionedResult res = sample_parity_conditioned(s, p, m, rng);
      EXPECT_TRUE(crossing_counts(res.ensemble).parity_satisfied);
    }
}

TEST(Parity, RejectsBadInput) {
  EXPECT_THROW(ParityCountSampler(Eigen::MatrixXd::Zero(1, 1)), std::invalid_argument);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 2);
  l(0, 1) = l(1, 0) = -1;
  EXPECT_THROW(ParityCountSampler{l}, std::invalid_argument);
}

TEST(Excursions, TextRoundTrip) {
  const DomainGraph d = build_rect_domain(3, 2, split_ring(3, 2, 3));
  ExcursionSampler s(analyse(d), 1.0);
  Rng rng = make_stream(12, 0);
  ExcursionEnsemble e = s.sample(rng);
  e.seed = 5;
  std::stringstream ss;
  write_excursions(ss, e);
  EXPECT_EQ(read_excursions(ss), e);
}
