#include "loopsoup/clusters.hpp"
#include "loopsoup/loopsoup.hpp"
#include "loopsoup/paths.hpp"
#include "loopsoup/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace loopsoup;

namespace {

// b - x - y - b
DomainGraph path_graph() {
  return DomainGraph({VertexKind::boundary, VertexKind::interior, VertexKind::interior,
                      VertexKind::boundary},
                     {{0, 1}, {1, 2}, {2, 3}}, {});
}

std::shared_ptr<const LatticeAnalysis> analyse(const DomainGraph& d) {
  return std::make_shared<const LatticeAnalysis>(d);
}

// Jump matrix on interior ordinals, built directly from the neighbour lists.
Eigen::MatrixXd jump_matrix(const DomainGraph& d) {
  const int n = d.interior_count();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (VertexId v : d.interior_vertices())
    for (VertexId w : d.neighbors(v))
      if (d.is_interior(w)) p(d.ordinal(v), d.ordinal(w)) = 1.0 / d.degree(v);
  return p;
}

DiscreteLoop loop(std::vector<VertexId> vs, std::vector<double> ts) {
  return {std::move(vs), std::move(ts)};
}

}  // namespace

TEST(LoopSoup, OneVertexHasOnlyTrivialLoops) {
  const DomainGraph d = build_rect_domain(1, 1);
  LoopSoupSampler s(analyse(d), 0.5, 10);
  EXPECT_EQ(s.truncation().skeleton_mass, 0.0);
  Rng rng = make_stream(1, 0);
  for (int r = 0; r < 1000; ++r) {
    const LoopEnsemble e = s.sample(rng);
    for (const auto& l : e.loops) EXPECT_TRUE(l.trivial());
  }
}

TEST(LoopSoup, PathGraphSkeletonMass) {
  const DomainGraph d = path_graph();
  auto lat = analyse(d);
  const int k_max = LoopSoupSampler::k_max_for(*lat, 0.5, 1e-12);
  LoopSoupSampler s(lat, 0.5, k_max);
  // -log det(I - P) with P = [[0, 1/2], [1/2, 0]]
  EXPECT_NEAR(s.truncation().skeleton_mass, std::log(4.0 / 3.0), 1e-11);
  EXPECT_NEAR(s.truncation().spectral_radius, 0.5, 1e-14);
  EXPECT_LE(s.truncation().tail_bound, 1e-12);
  EXPECT_FALSE(s.truncation().warning);

  Rng rng = make_stream(2, 0);
  const int runs = 100000;
  const double mean = 0.5 * std::log(4.0 / 3.0);
  std::vector<double> observed(6, 0.0), expected(6, 0.0);
  for (int r = 0; r < runs; ++r) {
    const LoopEnsemble e = s.sample(rng);
    int c = 0;
    for (const auto& l : e.loops)
      if (!l.trivial()) {
        ++c;
        EXPECT_EQ(l.length() % 2, 0u);
      }
    observed[std::min(c, 5)] += 1;
  }
  double tail = 1.0;
  for (int c = 0; c < 5; ++c) {
    expected[c] = runs * std::exp(-mean) * std::pow(mean, c) / std::tgamma(c + 1.0);
    tail -= expected[c] / runs;
  }
  expected[5] = runs * tail;
  EXPECT_GT(stats::chi_square_gof(observed, expected).p_value, 0.001);
}

TEST(LoopSoup, LengthLawMatchesTraces) {
  const DomainGraph d = build_rect_domain(2, 2);
  auto lat = analyse(d);
  const double alpha = 0.7;
  const int k_max = 12;
  LoopSoupSampler s(lat, alpha, k_max);
  const Eigen::MatrixXd p = jump_matrix(d);
  Eigen::MatrixXd pk = p;
  std::vector<double> expected(k_max + 1, 0.0);
  double mass = 0;
  for (int k = 2; k <= k_max; ++k) {
    pk = pk * p;
    expected[k] = alpha * pk.trace() / k;
    mass += pk.trace() / k;
  }
  EXPECT_NEAR(s.truncation().skeleton_mass, mass, 1e-12);
  EXPECT_NEAR(s.truncation().tail_bound,
              alpha * 4 * std::pow(0.5, k_max + 1) / ((k_max + 1) * 0.5), 1e-15);

  Rng rng = make_stream(3, 0);
  const int runs = 50000;
  std::vector<double> observed(k_max + 1, 0.0);
  for (int r = 0; r < runs; ++r)
    for (const auto& l : s.sample(rng).loops)
      if (!l.trivial()) observed[l.length()] += 1;
  std::vector<double> o, e;
  for (int k = 2; k <= k_max; ++k) {
    if (k % 2) {  // bipartite grid: no odd loops
      EXPECT_EQ(observed[k], 0.0);
      continue;
    }
    o.push_back(observed[k]);
    e.push_back(runs * expected[k]);
  }
  // counts per length are independent Poisson; compare totals by chi-square
  double stat = 0;
  for (std::size_t i = 0; i < o.size(); ++i) stat += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
  EXPECT_GT(stats::chi_square_sf(stat, static_cast<int>(o.size())), 0.001);
}

TEST(LoopSoup, LoopsAreClosedNearestNeighbourWalks) {
  const DomainGraph d = build_rect_domain(3, 3);
  LoopSoupSampler s(analyse(d), 1.0, 30);
  Rng rng = make_stream(4, 0);
  for (int r = 0; r < 200; ++r)
    for (const auto& l : s.sample(rng).loops) {
      ASSERT_EQ(l.vertices.size(), l.holding.size());
      for (std::size_t i = 0; i < l.length(); ++i) {
        EXPECT_TRUE(d.is_interior(l.vertices[i]));
        EXPECT_GT(l.holding[i], 0.0);
        if (l.length() > 1) {
          const VertexId a = l.vertices[i], b = l.vertices[(i + 1) % l.length()];
          const auto nb = d.neighbors(a);
          EXPECT_NE(std::find(nb.begin(), nb.end(), b), nb.end());
        }
      }
    }
}

TEST(LoopSoup, OccupationMoments) {
  // E = alpha G(x,x), Var = alpha G(x,x)^2 with unit local time
  for (double alpha : {0.5, 0.25}) {
    const DomainGraph d = build_rect_domain(2, 2);
    auto lat = analyse(d);
    LoopSoupSampler s(lat, alpha, LoopSoupSampler::k_max_for(*lat, alpha, 1e-10));
    Rng rng = make_stream(5, static_cast<std::uint64_t>(alpha * 100));
    const int runs = 100000;
    std::vector<double> xs(runs);
    for (int r = 0; r < runs; ++r) xs[r] = occupation_field(d, s.sample(rng))[0];
    double m = 0, v = 0, m4 = 0;
    for (double x : xs) m += x;
    m /= runs;
    for (double x : xs) {
      v += (x - m) * (x - m);
      m4 += std::pow(x - m, 4);
    }
    v /= runs - 1;
    m4 /= runs;
    const double g = lat->green(0, 0);
    EXPECT_LT(std::abs(m - alpha * g) / std::sqrt(v / runs), 5.0) << alpha;
    EXPECT_LT(std::abs(v - alpha * g * g) / std::sqrt((m4 - v * v) / runs), 5.0) << alpha;
  }
}

TEST(LoopSoup, OccupationFieldDefinition) {
  const DomainGraph d = build_rect_domain(2, 2);
  LoopEnsemble e;
  const ScalarField empty = occupation_field(d, e);
  EXPECT_EQ(empty.values.cwiseAbs().sum(), 0.0);
  e.loops.push_back(loop({0, 1, 0, 2}, {0.5, 1.0, 0.25, 2.0}));
  const ScalarField f = occupation_field(d, e);
  EXPECT_DOUBLE_EQ(f[0], 0.75);
  EXPECT_DOUBLE_EQ(f[1], 1.0);
  EXPECT_DOUBLE_EQ(f[2], 2.0);
  EXPECT_DOUBLE_EQ(f[3], 0.0);
}

TEST(LoopSoup, EdgeTraversals) {
  LoopEnsemble e;
  e.loops.push_back(loop({0, 1}, {1, 1}));
  e.loops.push_back(loop({3}, {1}));
  const auto t = edge_traversals(e);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0], (std::pair<VertexId, VertexId>{0, 1}));
  EXPECT_EQ(t[1], (std::pair<VertexId, VertexId>{1, 0}));
}

TEST(Clusters, Examples) {
  const DomainGraph d = build_rect_domain(3, 1);
  LoopEnsemble two;
  two.loops.push_back(loop({0}, {1}));
  two.loops.push_back(loop({2}, {1}));
  const ClusterPartition p = clusters(d, two);
  EXPECT_FALSE(p.same(0, 2));
  EXPECT_FALSE(p.same(0, 1));

  LoopEnsemble chain;
  chain.loops.push_back(loop({0, 1}, {1, 1}));
  chain.loops.push_back(loop({1, 2}, {1, 1}));
  const ClusterPartition q = clusters(d, chain);
  EXPECT_TRUE(q.same(0, 2));
}

TEST(Clusters, OrderInvariant) {
  const DomainGraph d = build_rect_domain(4, 4);
  LoopSoupSampler s(analyse(d), 0.5, 40);
  Rng rng = make_stream(6, 0);
  for (int r = 0; r < 50; ++r) {
    const LoopEnsemble e = s.sample(rng);
    LoopEnsemble shuffled = e;
    std::shuffle(shuffled.loops.begin(), shuffled.loops.end(), rng);
    const ClusterPartition a = clusters(d, e), b = clusters(d, shuffled);
    for (VertexId x = 0; x < d.vertex_count(); ++x)
      for (VertexId y = 0; y < d.vertex_count(); ++y)
        ASSERT_EQ(a.same(x, y), b.same(x, y));
  }
}

TEST(Clusters, ExcursionsJoinArcs) {
  const DomainGraph d =
      build_rect_domain(2, 1, {{Side::left, 0, -1, 1}, {Side::right, 0, -1, 2}});
  ExcursionEnsemble ex = empty_excursions(2);
  Excursion e;
  e.path = {d.arc(1)[0], 0, 1, d.arc(2)[0]};
  e.holding = {0.1, 0.2};
  e.arc_i = 1;
  e.arc_j = 2;
  add_excursion(ex, e);
  const ClusterPartition p = clusters(d, LoopEnsemble{}, ex);
  EXPECT_TRUE(arcs_connected(d, p, 1, 2));
  EXPECT_FALSE(arcs_connected(d, clusters(d, LoopEnsemble{}), 1, 2));
}

TEST(Rewire, TwoLoopsMergeOrStay) {
  const DomainGraph d = build_rect_domain(3, 1);
  LoopEnsemble e;
  e.loops.push_back(loop({0, 1}, {0.1, 0.2}));
  e.loops.push_back(loop({1, 2}, {0.3, 0.4}));
  bool merged_seen = false, kept_seen = false;
  for (int s = 0; s < 64; ++s) {
    Rng rng = make_stream(7, s);
    const RewireResult r = rewire_step(e, rng);
    EXPECT_EQ(r.vertex, 1);
    EXPECT_EQ(r.loops_before, 2u);
    if (r.loops_after == 1) {
      merged_seen = true;
      ASSERT_EQ(r.ensemble.loops.size(), 1u);
      EXPECT_EQ(r.ensemble.loops[0].length(), 4u);
    } else {
      kept_seen = true;
    }
    const ScalarField a = occupation_field(d, e), b = occupation_field(d, r.ensemble);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(edge_traversals(e), edge_traversals(r.ensemble));
  }
  EXPECT_TRUE(merged_seen);
  EXPECT_TRUE(kept_seen);
}

TEST(Rewire, NoRepeatedVertexIsIdentity) {
  LoopEnsemble e;
  e.loops.push_back(loop({0, 1}, {0.1, 0.2}));
  Rng rng = make_stream(8, 0);
  const RewireResult r = rewire_step(e, rng);
  EXPECT_TRUE(r.identity);
  EXPECT_EQ(r.ensemble.loops.size(), 1u);
}

TEST(Rewire, ConservesEverythingOnRandomSoups) {
  const DomainGraph d = build_rect_domain(3, 3);
  LoopSoupSampler s(analyse(d), 1.0, 40);
  Rng rng = make_stream(9, 0);
  LoopEnsemble e = s.sample(rng);
  const ScalarField occ = occupation_field(d, e);
  const auto edges = edge_traversals(e);
  const ClusterPartition cl = clusters(d, e);
  for (int step = 0; step < 2000; ++step) {
    e = rewire_step(e, rng).ensemble;
    ASSERT_EQ(occupation_field(d, e).values, occ.values);
    ASSERT_EQ(edge_traversals(e), edges);
    const ClusterPartition now = clusters(d, e);
    ASSERT_EQ(now.cluster, cl.cluster);
  }
}

TEST(Decompose, Examples) {
  LoopEnsemble e;
  e.loops.push_back(loop({0, 1, 2, 1}, {1, 2, 3, 4}));
  e.loops.push_back(loop({5, 6}, {5, 6}));
  const LoopDecomposition once = decompose_boundary_loops(e, {2});
  EXPECT_EQ(once.pieces.size(), 1u);
  EXPECT_EQ(once.untouched.size(), 1u);
  EXPECT_EQ(once.pieces[0].path.front(), 2);
  EXPECT_EQ(once.pieces[0].path.back(), 2);
  const LoopEnsemble back = reassemble(once);
  ASSERT_EQ(back.loops.size(), 2u);
  EXPECT_EQ(back.loops[0].vertices, e.loops[0].vertices);
  EXPECT_EQ(back.loops[0].holding, e.loops[0].holding);
  EXPECT_EQ(back.loops[1].vertices, e.loops[1].vertices);
}

TEST(Decompose, RoundTripRandom) {
  const DomainGraph d = build_rect_domain(4, 3);
  LoopSoupSampler s(analyse(d), 1.0, 40);
  Rng rng = make_stream(10, 0);
  for (int r = 0; r < 50; ++r) {
    const LoopEnsemble e = s.sample(rng);
    std::set<VertexId> marked;
    for (VertexId v : d.interior_vertices())
      if (uniform01(rng) < 0.3) marked.insert(v);
    const LoopEnsemble back = reassemble(decompose_boundary_loops(e, marked));
    ASSERT_EQ(back.loops.size(), e.loops.size());
    for (std::size_t i = 0; i < e.loops.size(); ++i) {
      ASSERT_EQ(back.loops[i].vertices, e.loops[i].vertices);
      ASSERT_EQ(back.loops[i].holding, e.loops[i].holding);
    }
  }
}

TEST(Paths, TextRoundTrip) {
  const DomainGraph d = build_rect_domain(3, 2, {{Side::left, 0, -1, 1},
                                                 {Side::right, 0, -1, 2}});
  LoopSoupSampler s(analyse(d), 0.5, 20);
  Rng rng = make_stream(11, 0);
  LoopEnsemble e = s.sample(rng);
  e.seed = 99;
  std::stringstream ss;
  write_loops(ss, e);
  const LoopEnsemble back = read_loops(ss);
  ASSERT_EQ(back.loops.size(), e.loops.size());
  EXPECT_EQ(back.alpha, e.alpha);
  EXPECT_EQ(back.seed, 99u);
  for (std::size_t i = 0; i < e.loops.size(); ++i) {
    EXPECT_EQ(back.loops[i].vertices, e.loops[i].vertices);
    EXPECT_EQ(back.loops[i].holding, e.loops[i].holding);
  }
}

TEST(Paths, MalformedInputReportsLine) {
  std::istringstream is("loops 1\nloop 0 1 | x\n");
  try {
    read_loops(is);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
  }
}
