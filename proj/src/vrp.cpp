#include "llvrp/vrp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "llvrp/error.hpp"
#include "llvrp/rng.hpp"

namespace llvrp {

std::string_view to_string(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::TSP: return "tsp";
    case ProblemKind::CVRP: return "cvrp";
  }
  return "?";
}

std::string_view to_string(MetricKind metric) {
  switch (metric) {
    case MetricKind::Euclidean: return "euclidean";
    case MetricKind::Manhattan: return "manhattan";
    case MetricKind::Chebyshev: return "chebyshev";
    case MetricKind::ChebyshevMin: return "chebyshev_min";
    case MetricKind::ChebyshevMean: return "chebyshev_mean";
  }
  return "?";
}

std::string_view to_string(CostRounding rounding) {
  return rounding == CostRounding::Nearest ? "nearest" : "none";
}

ProblemKind parse_problem_kind(std::string_view s) {
  if (s == "tsp" || s == "TSP") return ProblemKind::TSP;
  if (s == "cvrp" || s == "CVRP") return ProblemKind::CVRP;
  throw ConfigError(fmt::format("unknown problem kind '{}'", s));
}

MetricKind parse_metric(std::string_view s) {
  for (MetricKind m : kAllMetrics) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError(fmt::format("unknown metric '{}'", s));
}

CostRounding parse_rounding(std::string_view s) {
  if (s == "none") return CostRounding::None;
  if (s == "nearest") return CostRounding::Nearest;
  throw ConfigError(fmt::format("unknown rounding mode '{}'", s));
}

double distance(MetricKind metric, Point a, Point b) {
  const double dx = std::abs(a.x - b.x);
  const double dy = std::abs(a.y - b.y);
  switch (metric) {
    case MetricKind::Euclidean: return std::sqrt(dx * dx + dy * dy);
    case MetricKind::Manhattan: return dx + dy;
    case MetricKind::Chebyshev: return std::max(dx, dy);
    case MetricKind::ChebyshevMin: return std::min(dx, dy);
    case MetricKind::ChebyshevMean: return 0.5 * (dx + dy);
  }
  return 0.0;
}

double Instance::weight(std::size_t i, std::size_t j) const {
  const double d = distance(metric, coords[i], coords[j]);
  return rounding == CostRounding::Nearest ? std::floor(d + 0.5) : d;
}

DistanceMatrix Instance::matrix() const {
  const std::size_t n = num_nodes();
  DistanceMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = weight(i, j);
  }
  return m;
}

void validate(const Instance& inst, bool require_unit_square) {
  if (inst.kind == ProblemKind::TSP && inst.coords.size() < 2) {
    throw ContractError(fmt::format("TSP instance needs at least 2 nodes, got {}", inst.coords.size()));
  }
  if (inst.kind == ProblemKind::CVRP && inst.coords.size() < 2) {
    throw ContractError("CVRP instance needs a depot and at least one customer");
  }
  if (require_unit_square) {
    for (std::size_t i = 0; i < inst.coords.size(); ++i) {
      const Point p = inst.coords[i];
      if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
        throw ContractError(fmt::format("node {} ({}, {}) outside the unit square", i, p.x, p.y));
      }
    }
  }
  if (inst.kind == ProblemKind::CVRP) {
    if (inst.demands.size() != inst.coords.size()) {
      throw ContractError(fmt::format("{} demands for {} nodes", inst.demands.size(),
                                      inst.coords.size()));
    }
    if (inst.demands[0] != 0) throw ContractError("depot demand must be 0");
    for (std::size_t i = 1; i < inst.demands.size(); ++i) {
      if (inst.demands[i] < 1 || inst.demands[i] > inst.capacity) {
        throw ContractError(fmt::format("customer {} demand {} outside [1, Q={}]", i,
                                        inst.demands[i], inst.capacity));
      }
    }
  } else if (!inst.demands.empty() || inst.capacity != 0) {
    throw ContractError("TSP instance carries demands or capacity");
  }
}

int capacity_for_size(std::size_t n) {
  const double x = static_cast<double>(n);
  if (n <= 20) return 30;
  if (n < 40) return static_cast<int>(std::lround(30.0 + (x - 20.0) * 5.0 / 20.0));
  if (n < 50) return static_cast<int>(std::lround(35.0 + (x - 40.0) * 5.0 / 10.0));
  return static_cast<int>(std::lround(30.0 + x / 5.0));
}

Instance generate_instance(ProblemKind kind, std::size_t n, MetricKind metric,
                           std::uint64_t seed) {
  if (kind == ProblemKind::TSP && n < 2) {
    throw SizeError(fmt::format("unsupported TSP size n={} (< 2)", n));
  }
  if (kind == ProblemKind::CVRP && n < 1) {
    throw SizeError("unsupported CVRP size n=0 (needs at least one customer)");
  }
  Instance inst;
  inst.kind = kind;
  inst.metric = metric;
  inst.seed = seed;
  Rng rng(seed);
  const std::size_t nodes = kind == ProblemKind::CVRP ? n + 1 : n;
  inst.coords.resize(nodes);
  for (auto& p : inst.coords) {
    p.x = rng.uniform();
    p.y = rng.uniform();
  }
  if (kind == ProblemKind::CVRP) {
    inst.capacity = capacity_for_size(n);
    inst.demands.assign(nodes, 0);
    for (std::size_t i = 1; i < nodes; ++i) inst.demands[i] = static_cast<int>(rng.uniform_int(1, 9));
  }
  return inst;
}

Instance with_metric(Instance inst, MetricKind metric) {
  inst.metric = metric;
  return inst;
}

std::uint64_t geometry_hash(const Instance& inst) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  mix(static_cast<std::uint64_t>(inst.kind));
  mix(inst.coords.size());
  for (const Point& p : inst.coords) {
    mix(std::bit_cast<std::uint64_t>(p.x));
    mix(std::bit_cast<std::uint64_t>(p.y));
  }
  for (int d : inst.demands) mix(static_cast<std::uint64_t>(d));
  mix(static_cast<std::uint64_t>(inst.capacity));
  mix(static_cast<std::uint64_t>(inst.rounding));
  return h;
}

std::vector<std::vector<std::uint32_t>> split_routes(const std::vector<std::uint32_t>& nodes) {
  std::vector<std::vector<std::uint32_t>> routes;
  std::vector<std::uint32_t> cur;
  for (std::uint32_t v : nodes) {
    if (v == 0) {
      if (!cur.empty()) routes.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(v);
    }
  }
  if (!cur.empty()) routes.push_back(std::move(cur));
  return routes;
}

std::string feasibility_violation(const std::vector<std::uint32_t>& nodes, const Instance& inst) {
  const std::size_t n = inst.num_nodes();
  std::vector<int> seen(n, 0);
  for (std::uint32_t v : nodes) {
    if (v >= n) return fmt::format("node {} out of range (instance has {} nodes)", v, n);
  }
  if (inst.kind == ProblemKind::TSP) {
    if (nodes.size() != n) return fmt::format("tour visits {} nodes, expected {}", nodes.size(), n);
    for (std::uint32_t v : nodes) {
      if (seen[v]++) return fmt::format("node {} visited more than once", v);
    }
    return {};
  }
  for (std::uint32_t v : nodes) {
    if (v != 0 && seen[v]++) return fmt::format("customer {} visited more than once", v);
  }
  for (std::size_t v = 1; v < n; ++v) {
    if (!seen[v]) return fmt::format("customer {} not visited", v);
  }
  const auto routes = split_routes(nodes);
  for (std::size_t r = 0; r < routes.size(); ++r) {
    int load = 0;
    for (std::uint32_t v : routes[r]) load += inst.demands[v];
    if (load > inst.capacity) {
      return fmt::format("route {} load {} exceeds capacity {}", r, load, inst.capacity);
    }
  }
  return {};
}

void check_feasible(const std::vector<std::uint32_t>& nodes, const Instance& inst) {
  auto why = feasibility_violation(nodes, inst);
  if (!why.empty()) throw InfeasibleError("infeasible tour: " + why);
}

double tour_cost(const std::vector<std::uint32_t>& nodes, const Instance& inst) {
  check_feasible(nodes, inst);
  double cost = 0.0;
  if (inst.kind == ProblemKind::TSP) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      cost += inst.weight(nodes[i], nodes[(i + 1) % nodes.size()]);
    }
    return cost;
  }
  std::uint32_t prev = 0;
  for (std::uint32_t v : nodes) {
    cost += inst.weight(prev, v);
    prev = v;
  }
  return cost + inst.weight(prev, 0);
}

Tour make_tour(std::vector<std::uint32_t> nodes, const Instance& inst) {
  Tour t;
  t.cost = tour_cost(nodes, inst);
  t.nodes = std::move(nodes);
  return t;
}

bool RolloutState::complete(const Instance& inst) const {
  if (inst.kind == ProblemKind::TSP) return partial.size() == inst.num_nodes();
  return served == inst.size() && current == 0 && !partial.empty();
}

RolloutState initial_state(const Instance& inst) {
  RolloutState s;
  s.visited.assign(inst.num_nodes(), 0);
  s.remaining = inst.capacity;
  s.current = 0;
  s.start = 0;
  return s;
}

RolloutState start_state(const Instance& inst, std::uint32_t first) {
  if (inst.kind == ProblemKind::CVRP && first == 0) {
    throw ContractError("CVRP rollouts start at a customer, not the depot");
  }
  RolloutState s = step(initial_state(inst), first, inst);
  s.start = first;
  return s;
}

std::vector<std::uint8_t> valid_actions(const RolloutState& state, const Instance& inst) {
  const std::size_t n = inst.num_nodes();
  std::vector<std::uint8_t> mask(n, 0);
  if (inst.kind == ProblemKind::TSP) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = state.visited[i] ? 0 : 1;
      any = any || mask[i];
    }
    if (!any) {
      throw ContractError(fmt::format(
          "TSP state has no valid action (partial length {}, n {})", state.partial.size(), n));
    }
    return mask;
  }
  bool serviceable = false;
  for (std::size_t i = 1; i < n; ++i) {
    if (!state.visited[i] && inst.demands[i] <= state.remaining) {
      mask[i] = 1;
      serviceable = true;
    }
  }
  mask[0] = (state.current == 0 && serviceable) ? 0 : 1;
  return mask;
}

void advance(RolloutState& state, std::uint32_t action, const Instance& inst) {
  if (action >= inst.num_nodes()) {
    throw ContractError(fmt::format("action {} out of range ({} nodes)", action, inst.num_nodes()));
  }
  const auto mask = valid_actions(state, inst);
  if (!mask[action]) {
    std::string partial;
    for (auto v : state.partial) partial += fmt::format("{} ", v);
    throw ContractError(fmt::format(
        "invalid action {} (current {}, remaining {}, served {}, partial [{}])", action,
        state.current, state.remaining, state.served, partial));
  }
  if (inst.kind == ProblemKind::TSP) {
    state.visited[action] = 1;
    state.partial.push_back(action);
    state.current = action;
    ++state.served;
    return;
  }
  if (action == 0) {
    // Padding step of a finished rollout: stays at the depot.
    if (state.current == 0 && state.served == inst.size()) return;
    state.remaining = inst.capacity;
  } else {
    state.visited[action] = 1;
    state.remaining -= inst.demands[action];
    ++state.served;
  }
  state.partial.push_back(action);
  state.current = action;
}

RolloutState step(RolloutState state, std::uint32_t action, const Instance& inst) {
  advance(state, action, inst);
  return state;
}

}  // namespace llvrp
