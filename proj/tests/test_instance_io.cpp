#include <gtest/gtest.h>

#include <zlib.h>

#include <cmath>
#include <filesystem>

#include "llvrp/benchmark_io.hpp"
#include "llvrp/error.hpp"
#include "llvrp/instance_json.hpp"

using namespace llvrp;

namespace {

const std::filesystem::path kFixtures = LLVRP_FIXTURES;

// TSPLIB nint, summed straight from the coordinates.
double rounded_cycle(const std::vector<Point>& pts, const std::vector<std::uint32_t>& order) {
  double total = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Point a = pts[order[i]], b = pts[order[(i + 1) % order.size()]];
    total += std::floor(std::hypot(a.x - b.x, a.y - b.y) + 0.5);
  }
  return total;
}

std::string line_of(const std::string& what) {
  try {
    parse_benchmark(what);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Tsplib, TinyFixture) {
  const BenchmarkInstance b = load_benchmark(kFixtures / "tiny3.tsp");
  EXPECT_EQ(b.name, "tiny3");
  EXPECT_EQ(b.instance.kind, ProblemKind::TSP);
  EXPECT_EQ(b.instance.num_nodes(), 3u);
  EXPECT_EQ(b.instance.coords[2], (Point{0, 4}));
  EXPECT_EQ(b.instance.rounding, CostRounding::Nearest);
  EXPECT_EQ(tour_cost({0, 1, 2}, b.instance), 12.0);
}

TEST(Tsplib, Eil51OptimalTour) {
  const BenchmarkInstance b = load_benchmark(kFixtures / "eil51.tsp");
  ASSERT_EQ(b.instance.num_nodes(), 51u);
  const auto tour = parse_tour(read_text_file(kFixtures / "eil51.opt.tour"));
  ASSERT_EQ(tour.size(), 51u);
  EXPECT_EQ(feasibility_violation(tour, b.instance), "");
  const double cost = tour_cost(tour, b.instance);
  EXPECT_EQ(cost, rounded_cycle(b.instance.coords, tour));
  EXPECT_EQ(cost, 426.0);
}

TEST(Tsplib, RoundTripIsFixedPoint) {
  for (const char* f : {"tiny3.tsp", "eil51.tsp"}) {
    const BenchmarkInstance a = load_benchmark(kFixtures / f);
    const std::string text = to_tsplib(a);
    const BenchmarkInstance b = parse_tsplib(text);
    EXPECT_EQ(b.instance, a.instance);
    EXPECT_EQ(to_tsplib(b), text);
  }
}

TEST(Cvrplib, TinyFixture) {
  const BenchmarkInstance b = load_benchmark(kFixtures / "tiny2.vrp");
  const Instance& inst = b.instance;
  EXPECT_EQ(inst.kind, ProblemKind::CVRP);
  EXPECT_EQ(inst.capacity, 30);
  EXPECT_EQ(inst.size(), 2u);
  EXPECT_EQ(inst.coords[0], (Point{50, 50}));
  EXPECT_EQ(inst.demands, (std::vector<int>{0, 12, 25}));
  EXPECT_TRUE(b.warnings.empty());
  const Instance back = instance_from_json(instance_to_json(inst));
  EXPECT_EQ(back, inst);
  EXPECT_EQ(instance_to_json(back), instance_to_json(inst));
}

TEST(Cvrplib, SetXHeaderLayout) {
  const BenchmarkInstance b = load_benchmark(kFixtures / "X-n101-k25.vrp");
  EXPECT_EQ(b.name, "X-n101-k25");
  EXPECT_EQ(b.instance.num_nodes(), 101u);
  EXPECT_EQ(b.instance.size(), 100u);
  EXPECT_EQ(b.instance.capacity, 206);
  EXPECT_EQ(b.instance.coords[0], (Point{365, 689}));
  EXPECT_EQ(b.instance.demands[0], 0);
  const BenchmarkInstance again = parse_cvrplib(to_cvrplib(b));
  EXPECT_EQ(again.instance, b.instance);
}

TEST(Cvrplib, DepotDemandIsNormalised) {
  const std::string text =
      "NAME : d\nTYPE : CVRP\nDIMENSION : 2\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : 10\n"
      "NODE_COORD_SECTION\n1 0 0\n2 3 4\nDEMAND_SECTION\n1 5\n2 3\nDEPOT_SECTION\n1\n-1\nEOF\n";
  const BenchmarkInstance b = parse_cvrplib(text);
  EXPECT_EQ(b.instance.demands[0], 0);
  ASSERT_EQ(b.warnings.size(), 1u);
  EXPECT_EQ(tour_cost({1}, b.instance), 10.0);
}

TEST(Cvrplib, MissingSectionsAreErrors) {
  const std::string no_demand =
      "NAME : d\nTYPE : CVRP\nDIMENSION : 2\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : 10\n"
      "NODE_COORD_SECTION\n1 0 0\n2 3 4\nDEPOT_SECTION\n1\n-1\nEOF\n";
  EXPECT_THROW(parse_cvrplib(no_demand), ParseError);
  const std::string no_capacity =
      "NAME : d\nTYPE : CVRP\nDIMENSION : 2\nEDGE_WEIGHT_TYPE : EUC_2D\n"
      "NODE_COORD_SECTION\n1 0 0\n2 3 4\nDEMAND_SECTION\n1 0\n2 3\nDEPOT_SECTION\n1\n-1\nEOF\n";
  EXPECT_THROW(parse_cvrplib(no_capacity), ParseError);
}

TEST(Benchmark, UnsupportedFeaturesAreExplicit) {
  EXPECT_THROW(parse_benchmark("NAME: a\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: GEO\nNODE_COORD_SECTION\n"
                               "1 0 0\n2 1 1\n3 2 2\nEOF\n"),
               UnsupportedFeature);
  EXPECT_THROW(parse_benchmark("NAME: a\nTYPE: ATSP\nDIMENSION: 3\nEOF\n"), UnsupportedFeature);
  EXPECT_THROW(parse_benchmark("NAME: a\nTYPE: TSP\nDIMENSION: 2\nEDGE_WEIGHT_TYPE: EUC_2D\n"
                               "NODE_COORD_SECTION\n1 0 0\n2 1 1\nDISPLAY_DATA_SECTION\n1 0 0\nEOF\n"),
               UnsupportedFeature);
}

TEST(Benchmark, ParseErrorsCarryLineNumbers) {
  const std::string bad_coord =
      "NAME: a\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 x 1\n3 2 2\nEOF\n";
  EXPECT_NE(line_of(bad_coord).find("line 7:"), std::string::npos) << line_of(bad_coord);
  EXPECT_THROW(parse_benchmark("NAME: a\nTYPE: TSP\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0 0\nEOF\n"),
               ParseError);
  const std::string short_section =
      "NAME: a\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 1\nEOF\n";
  EXPECT_THROW(parse_benchmark(short_section), ParseError);
}

TEST(Benchmark, GzipInputIsInflated) {
  const auto path = std::filesystem::temp_directory_path() / "llvrp_tiny3.tsp.gz";
  const std::string text = read_text_file(kFixtures / "tiny3.tsp");
  gzFile gz = gzopen(path.c_str(), "wb");
  ASSERT_NE(gz, nullptr);
  ASSERT_EQ(gzwrite(gz, text.data(), static_cast<unsigned>(text.size())), static_cast<int>(text.size()));
  gzclose(gz);
  EXPECT_EQ(read_text_file(path), text);
  EXPECT_EQ(load_benchmark(path).instance, load_benchmark(kFixtures / "tiny3.tsp").instance);
  std::filesystem::remove(path);
}

TEST(Benchmark, TourFile) {
  EXPECT_EQ(parse_tour("NAME: t\nTYPE: TOUR\nDIMENSION: 3\nTOUR_SECTION\n3\n1\n2\n-1\nEOF\n"),
            (std::vector<std::uint32_t>{2, 0, 1}));
  EXPECT_THROW(parse_tour("TOUR_SECTION\n1\n0\n-1\n"), ParseError);
}

TEST(Benchmark, NormalizedCopyKeepsShape) {
  const BenchmarkInstance b = load_benchmark(kFixtures / "eil51.tsp");
  const Instance n = normalized_copy(b.instance);
  EXPECT_EQ(n.rounding, CostRounding::None);
  EXPECT_NO_THROW(validate(n, true));
  double lo_x = 1.0, hi_x = 0.0, lo_y = 1.0, hi_y = 0.0;
  for (const Point& p : n.coords) {
    lo_x = std::min(lo_x, p.x), hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y), hi_y = std::max(hi_y, p.y);
  }
  EXPECT_EQ(std::min(lo_x, lo_y), 0.0);
  EXPECT_EQ(std::max(hi_x - lo_x, hi_y - lo_y), 1.0);
  // One common factor: distance ratios survive.
  const auto& a = b.instance.coords;
  const double r_orig = std::hypot(a[0].x - a[1].x, a[0].y - a[1].y) / std::hypot(a[2].x - a[3].x, a[2].y - a[3].y);
  const double r_norm = n.weight(0, 1) / n.weight(2, 3);
  EXPECT_NEAR(r_orig, r_norm, 1e-12);
}

TEST(InstanceJson, SyntheticRoundTripIsBitExact) {
  for (ProblemKind kind : {ProblemKind::TSP, ProblemKind::CVRP}) {
    const Instance inst = generate_instance(kind, 20, MetricKind::ChebyshevMin, 31);
    const std::string text = instance_to_json(inst);
    const Instance back = instance_from_json(text);
    EXPECT_EQ(back, inst);
    EXPECT_EQ(instance_to_json(back), text);
  }
}

TEST(Results, FormatAndRoundTrip) {
  std::vector<ResultRecord> rows = {
      {"eil51", "model", "euclidean", 429.0, 3.0 / 426.0, 0.25, true},
      {"tsp20_0001", "model", "manhattan", 4.123456789, 0.0123456789012345, 1.0 / 3.0, false},
      {"mean", "model", "manhattan", 0.0, 0.02, 0.0, false},
  };
  const std::string csv = write_results(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "instance,method,metric,objective,gap,seconds");
  EXPECT_NE(csv.find("eil51,model,euclidean,429,"), std::string::npos);
  EXPECT_NE(csv.find("tsp20_0001,model,manhattan,4.123,"), std::string::npos);
  const auto back = read_results(csv);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].instance, rows[i].instance);
    EXPECT_EQ(back[i].method, rows[i].method);
    EXPECT_EQ(back[i].metric, rows[i].metric);
    EXPECT_EQ(back[i].gap, rows[i].gap);
    EXPECT_EQ(back[i].seconds, rows[i].seconds);
  }
  EXPECT_EQ(back[0].objective, 429.0);
  EXPECT_EQ(back[1].objective, 4.123);
  EXPECT_EQ(write_results(back), csv);
  EXPECT_EQ(write_results({}), "instance,method,metric,objective,gap,seconds\n");
}
