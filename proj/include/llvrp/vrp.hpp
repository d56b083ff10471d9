#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace llvrp {

enum class ProblemKind { TSP, CVRP };

enum class MetricKind { Euclidean, Manhattan, Chebyshev, ChebyshevMin, ChebyshevMean };

inline constexpr MetricKind kAllMetrics[] = {MetricKind::Euclidean, MetricKind::Manhattan,
                                             MetricKind::Chebyshev, MetricKind::ChebyshevMin,
                                             MetricKind::ChebyshevMean};

// Benchmark files report integer objectives; synthetic instances never round.
enum class CostRounding { None, Nearest };

std::string_view to_string(ProblemKind kind);
std::string_view to_string(MetricKind metric);
std::string_view to_string(CostRounding rounding);
ProblemKind parse_problem_kind(std::string_view s);
MetricKind parse_metric(std::string_view s);
CostRounding parse_rounding(std::string_view s);

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

// Edge weight under a metric.
//
// Warning: ChebyshevMin, min(|dx|, |dy|), is only a pseudo-metric. It is zero
// for distinct points sharing one coordinate and violates the triangle
// inequality; it exists to probe generalisation to unseen objectives.
double distance(MetricKind metric, Point a, Point b);

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), w_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return w_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return w_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> w_;
};

// One TSP or CVRP problem. For CVRP node 0 is the depot and nodes 1..n are
// customers; for TSP all n nodes are cities.
struct Instance {
  ProblemKind kind = ProblemKind::TSP;
  std::vector<Point> coords;
  std::vector<int> demands;  // CVRP only, demands[0] == 0
  int capacity = 0;          // CVRP only
  MetricKind metric = MetricKind::Euclidean;
  std::uint64_t seed = 0;
  CostRounding rounding = CostRounding::None;

  std::size_t num_nodes() const { return coords.size(); }
  // Problem size n: cities for TSP, customers for CVRP.
  std::size_t size() const { return kind == ProblemKind::CVRP ? coords.size() - 1 : coords.size(); }

  double weight(std::size_t i, std::size_t j) const;
  DistanceMatrix matrix() const;

  bool operator==(const Instance&) const = default;
};

// Throws ContractError when an invariant does not hold. Benchmark instances
// are exempt from the unit-square check.
void validate(const Instance& inst, bool require_unit_square = true);

// Vehicle capacity by customer count: 30 up to n=20, interpolated to 35 at
// n=40 and to 40 at n=50, then 30 + n/5 (rounded to nearest).
int capacity_for_size(std::size_t n);

// Deterministic in seed. Coordinates uniform on [0,1)², demands uniform on
// {1..9}.
Instance generate_instance(ProblemKind kind, std::size_t n, MetricKind metric,
                           std::uint64_t seed);

Instance with_metric(Instance inst, MetricKind metric);

// FNV-1a over geometry, demands and capacity; the metric is excluded so one
// instance keys several metric contexts.
std::uint64_t geometry_hash(const Instance& inst);

// TSP: a permutation of all nodes, implicitly closed. CVRP: customer visits
// with depot (0) entries separating routes; the tour implicitly starts and
// ends at the depot.
struct Tour {
  std::vector<std::uint32_t> nodes;
  double cost = 0.0;
};

// Empty when feasible, otherwise a description of the first violation.
std::string feasibility_violation(const std::vector<std::uint32_t>& nodes, const Instance& inst);

// Throws InfeasibleError naming the violated constraint.
void check_feasible(const std::vector<std::uint32_t>& nodes, const Instance& inst);

double tour_cost(const std::vector<std::uint32_t>& nodes, const Instance& inst);
Tour make_tour(std::vector<std::uint32_t> nodes, const Instance& inst);

// Split a CVRP tour into its routes (depot entries removed).
std::vector<std::vector<std::uint32_t>> split_routes(const std::vector<std::uint32_t>& nodes);

// Construction MDP state for one rollout.
struct RolloutState {
  std::vector<std::uint32_t> partial;
  std::vector<std::uint8_t> visited;
  int remaining = 0;
  std::uint32_t current = 0;
  std::uint32_t start = 0;
  std::size_t served = 0;

  bool complete(const Instance& inst) const;
};

// State before any selection: TSP has no current node; CVRP sits at the depot.
RolloutState initial_state(const Instance& inst);

// State after the forced first move to `first` (a city for TSP, a customer for
// CVRP).
RolloutState start_state(const Instance& inst, std::uint32_t first);

std::vector<std::uint8_t> valid_actions(const RolloutState& state, const Instance& inst);

RolloutState step(RolloutState state, std::uint32_t action, const Instance& inst);
// In-place variant of step used by batched rollouts.
void advance(RolloutState& state, std::uint32_t action, const Instance& inst);

}  // namespace llvrp
