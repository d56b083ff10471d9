#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "llvrp/error.hpp"
#include "llvrp/oracles.hpp"
#include "llvrp/rng.hpp"

using namespace llvrp;

namespace {

Instance square() {
  Instance inst;
  inst.coords = {{0, 0}, {1, 1}, {1, 0}, {0, 1}};
  return inst;
}

double brute_force_tsp(const Instance& inst) {
  std::vector<std::uint32_t> perm(inst.num_nodes());
  std::iota(perm.begin(), perm.end(), 0u);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, tour_cost(perm, inst));
  } while (std::next_permutation(perm.begin() + 1, perm.end()));
  return best;
}

// Every customer order with every choice of route breaks.
double brute_force_cvrp(const Instance& inst) {
  const std::size_t n = inst.size();
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 1u);
  double best = std::numeric_limits<double>::infinity();
  do {
    for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
      std::vector<std::uint32_t> nodes;
      for (std::size_t i = 0; i < n; ++i) {
        nodes.push_back(perm[i]);
        if (i + 1 < n && (cuts >> i & 1u)) nodes.push_back(0);
      }
      if (feasibility_violation(nodes, inst).empty()) best = std::min(best, tour_cost(nodes, inst));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::uint32_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(p[i - 1], p[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  return p;
}

}  // namespace

TEST(HeldKarp, UnitSquare) {
  const OracleResult r = held_karp(square());
  EXPECT_NEAR(r.cost, 4.0, 1e-12);
  EXPECT_TRUE(r.exact);
  EXPECT_EQ(canonical_cycle(r.tour.nodes), (std::vector<std::uint32_t>{0, 2, 1, 3}));
}

TEST(HeldKarp, TriangleIsPerimeter) {
  Instance inst;
  inst.coords = {{0, 0}, {0.3, 0}, {0, 0.4}};
  EXPECT_NEAR(held_karp(inst).cost, 1.2, 1e-12);
}

TEST(HeldKarp, MatchesBruteForceOnNine) {
  for (MetricKind m : kAllMetrics) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const Instance inst = generate_instance(ProblemKind::TSP, 9, m, 300 + s);
      const OracleResult r = held_karp(inst);
      EXPECT_NEAR(r.cost, brute_force_tsp(inst), 1e-12) << to_string(m);
      EXPECT_NEAR(r.cost, tour_cost(r.tour.nodes, inst), 1e-12);
    }
  }
}

TEST(HeldKarp, BeatsRandomPermutations) {
  Rng rng(8);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Instance inst = generate_instance(ProblemKind::TSP, 10, kAllMetrics[s], 400 + s);
    const double opt = held_karp(inst).cost;
    for (int k = 0; k < 1000; ++k) EXPECT_LE(opt, tour_cost(random_permutation(10, rng), inst) + 1e-12);
  }
}

TEST(HeldKarp, SizeLimit) {
  EXPECT_NO_THROW(held_karp(generate_instance(ProblemKind::TSP, 15, MetricKind::Euclidean, 1)));
  EXPECT_THROW(held_karp(generate_instance(ProblemKind::TSP, 16, MetricKind::Euclidean, 1)), SizeError);
}

TEST(Heuristics, NearestNeighbourNeverBeatsExact) {
  for (std::uint64_t s = 0; s < 40; ++s) {
    const MetricKind m = kAllMetrics[s % 5];
    const Instance inst = generate_instance(ProblemKind::TSP, 4 + s % 9, m, 500 + s);
    const Tour nn = nearest_neighbor(inst);
    EXPECT_EQ(nn.nodes[0], 0u);
    EXPECT_EQ(feasibility_violation(nn.nodes, inst), "");
    EXPECT_GE(nn.cost, held_karp(inst).cost - 1e-12);
  }
}

TEST(Heuristics, NearestNeighbourByHand) {
  Instance inst;
  inst.coords = {{0, 0}, {0.9, 0}, {0.1, 0}, {0.5, 0}};
  EXPECT_EQ(nearest_neighbor(inst).nodes, (std::vector<std::uint32_t>{0, 2, 3, 1}));
}

TEST(Heuristics, TwoOptIsMonotone) {
  Rng rng(2);
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Instance inst = generate_instance(ProblemKind::TSP, 20, kAllMetrics[s % 5], 600 + s);
    const Tour start = make_tour(random_permutation(20, rng), inst);
    const Tour better = two_opt(start, inst);
    EXPECT_LE(better.cost, start.cost + 1e-12);
    EXPECT_EQ(feasibility_violation(better.nodes, inst), "");
    EXPECT_NEAR(better.cost, tour_cost(better.nodes, inst), 1e-12);
    // A local optimum stays put.
    EXPECT_NEAR(two_opt(better, inst).cost, better.cost, 1e-12);
  }
  const Instance small = generate_instance(ProblemKind::TSP, 8, MetricKind::Euclidean, 7);
  const OracleResult opt = held_karp(small);
  EXPECT_NEAR(two_opt(opt.tour, small).cost, opt.cost, 1e-12);
}

TEST(Heuristics, CvrpHeuristicsAreFeasible) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Instance inst = generate_instance(ProblemKind::CVRP, 10 + 4 * s, kAllMetrics[s % 5], 700 + s);
    for (const Tour& t : {nearest_neighbor(inst), sweep(inst)}) {
      EXPECT_EQ(feasibility_violation(t.nodes, inst), "");
      const Tour improved = two_opt(t, inst);
      EXPECT_EQ(feasibility_violation(improved.nodes, inst), "");
      EXPECT_LE(improved.cost, t.cost + 1e-12);
    }
  }
}

TEST(CvrpExact, OneCustomer) {
  Instance inst;
  inst.kind = ProblemKind::CVRP;
  inst.coords = {{0.5, 0.5}, {0.8, 0.9}};
  inst.demands = {0, 4};
  inst.capacity = 30;
  const OracleResult r = cvrp_exact_tiny(inst);
  EXPECT_NEAR(r.cost, 2.0 * 0.5, 1e-12);
  EXPECT_EQ(r.tour.nodes, (std::vector<std::uint32_t>{1}));
}

TEST(CvrpExact, TwoCustomersCaseSplit) {
  Instance inst;
  inst.kind = ProblemKind::CVRP;
  inst.coords = {{0.0, 0.0}, {0.3, 0.4}, {0.6, 0.8}};
  inst.demands = {0, 5, 5};
  inst.capacity = 10;
  // Collinear: one route 0→1→2→0 costs 2, two routes cost 1 + 2.
  EXPECT_NEAR(cvrp_exact_tiny(inst).cost, 2.0, 1e-12);
  inst.capacity = 9;
  EXPECT_NEAR(cvrp_exact_tiny(inst).cost, 3.0, 1e-12);
  inst.coords = {{0.5, 0.5}, {0.1, 0.5}, {0.9, 0.5}};
  inst.capacity = 10;
  // Opposite sides: one route 0.4 + 0.8 + 0.4 equals two routes 0.8 + 0.8.
  EXPECT_NEAR(cvrp_exact_tiny(inst).cost, 1.6, 1e-12);
}

TEST(CvrpExact, MatchesGiantTourEnumeration) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const MetricKind m = kAllMetrics[s % 5];
    Instance inst = generate_instance(ProblemKind::CVRP, 3 + s % 4, m, 800 + s);
    inst.capacity = 12;  // force several routes
    const OracleResult r = cvrp_exact_tiny(inst);
    EXPECT_TRUE(r.exact);
    EXPECT_EQ(feasibility_violation(r.tour.nodes, inst), "");
    EXPECT_NEAR(r.cost, brute_force_cvrp(inst), 1e-12) << s;
  }
}

TEST(CvrpExact, SizeLimit) {
  EXPECT_NO_THROW(cvrp_exact_tiny(generate_instance(ProblemKind::CVRP, 8, MetricKind::Euclidean, 1)));
  EXPECT_THROW(cvrp_exact_tiny(generate_instance(ProblemKind::CVRP, 9, MetricKind::Euclidean, 1)), SizeError);
}

TEST(Gap, KnownObjectivePairs) {
  EXPECT_EQ(gap(3.0, 3.0), 0.0);
  EXPECT_NEAR(100.0 * gap(7.801, 7.708), 1.21, 5e-3);
  EXPECT_NEAR(100.0 * gap(15.905, 15.538), 2.36, 5e-3);
  for (double lambda : {1e-3, 0.5, 7.0, 1e4}) {
    EXPECT_NEAR(gap(lambda * 7.801, lambda * 7.708), gap(7.801, 7.708), 1e-12);
  }
  EXPECT_THROW(gap(1.0, 0.0), DegenerateError);
  EXPECT_THROW(gap(1.0, -2.0), DegenerateError);
}

TEST(ReferenceSolve, ExactWhenSmall) {
  const Instance tsp = generate_instance(ProblemKind::TSP, 12, MetricKind::Manhattan, 3);
  const OracleResult a = reference_solve(tsp);
  EXPECT_TRUE(a.exact);
  EXPECT_NEAR(a.cost, held_karp(tsp).cost, 1e-12);
  const Instance big = generate_instance(ProblemKind::TSP, 30, MetricKind::Manhattan, 3);
  const OracleResult b = reference_solve(big);
  EXPECT_FALSE(b.exact);
  EXPECT_EQ(feasibility_violation(b.tour.nodes, big), "");
  EXPECT_LE(b.cost, two_opt(nearest_neighbor(big), big).cost + 1e-12);
  const Instance cvrp = generate_instance(ProblemKind::CVRP, 15, MetricKind::Euclidean, 3);
  const OracleResult c = reference_solve(cvrp);
  EXPECT_FALSE(c.exact);
  EXPECT_EQ(feasibility_violation(c.tour.nodes, cvrp), "");
}

TEST(CanonicalCycle, RotationAndOrientation) {
  EXPECT_EQ(canonical_cycle({2, 0, 3, 1}), (std::vector<std::uint32_t>{0, 2, 1, 3}));
  EXPECT_EQ(canonical_cycle({0, 1, 3, 2}), (std::vector<std::uint32_t>{0, 1, 3, 2}));
  EXPECT_EQ(canonical_cycle({3, 1, 0, 2}), (std::vector<std::uint32_t>{0, 1, 3, 2}));
}

TEST(OracleCache, RoundTripAndMetricKeys) {
  OracleCache cache;
  const Instance e = generate_instance(ProblemKind::TSP, 8, MetricKind::Euclidean, 21);
  const Instance m = with_metric(e, MetricKind::Manhattan);
  EXPECT_EQ(cache.find(e), nullptr);
  const double ce = cache.solve(e).cost;
  const double cm = cache.solve(m).cost;
  EXPECT_EQ(cache.size(), 2u);
  EXPECT_NE(ce, cm);
  EXPECT_FALSE(cache.has_heuristic());
  cache.solve(generate_instance(ProblemKind::TSP, 20, MetricKind::Euclidean, 22));
  EXPECT_TRUE(cache.has_heuristic());
  const OracleCache back = OracleCache::from_json(cache.to_json());
  EXPECT_EQ(back.size(), 3u);
  ASSERT_NE(back.find(m), nullptr);
  EXPECT_EQ(back.find(m)->cost, cm);
  EXPECT_EQ(back.find(e)->cost, ce);
  EXPECT_TRUE(back.find(e)->exact);
  EXPECT_EQ(back.to_json(), cache.to_json());
}
