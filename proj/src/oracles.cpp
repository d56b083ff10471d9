#include "llvrp/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "llvrp/error.hpp"

namespace llvrp {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kImprovementEps = 1e-10;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Shortest closed cycle through `nodes`, which starts at nodes[0]. Returns the
// visiting order beginning with nodes[0].
std::vector<std::uint32_t> shortest_cycle(const DistanceMatrix& w, const std::vector<std::uint32_t>& nodes) {
  const std::size_t m = nodes.size() - 1;
  if (m <= 2) return nodes;
  const std::size_t full = (std::size_t{1} << m) - 1;
  std::vector<double> dp((full + 1) * m, kInf);
  std::vector<std::uint8_t> parent((full + 1) * m, 0);
  const std::uint32_t origin = nodes[0];
  for (std::size_t j = 0; j < m; ++j) dp[(std::size_t{1} << j) * m + j] = w(origin, nodes[j + 1]);
  for (std::size_t mask = 1; mask <= full; ++mask) {
    for (std::size_t j = 0; j < m; ++j) {
      const double base = dp[mask * m + j];
      if (!(mask >> j & 1) || base == kInf) continue;
      for (std::size_t k = 0; k < m; ++k) {
        if (mask >> k & 1) continue;
        const std::size_t next = mask | (std::size_t{1} << k);
        const double cand = base + w(nodes[j + 1], nodes[k + 1]);
        if (cand < dp[next * m + k]) {
          dp[next * m + k] = cand;
          parent[next * m + k] = static_cast<std::uint8_t>(j);
        }
      }
    }
  }
  std::size_t last = 0;
  double best = kInf;
  for (std::size_t j = 0; j < m; ++j) {
    const double c = dp[full * m + j] + w(nodes[j + 1], origin);
    if (c < best) {
      best = c;
      last = j;
    }
  }
  std::vector<std::uint32_t> order(m + 1);
  order[0] = origin;
  std::size_t mask = full;
  for (std::size_t pos = m; pos >= 1; --pos) {
    order[pos] = nodes[last + 1];
    const std::size_t prev = parent[mask * m + last];
    mask &= ~(std::size_t{1} << last);
    last = prev;
  }
  return order;
}

// 2-opt on a closed cycle; position 0 never moves.
void improve_cycle(std::vector<std::uint32_t>& c, const DistanceMatrix& w) {
  const std::size_t m = c.size();
  if (m < 4) return;
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 0; i + 2 < m; ++i) {
      for (std::size_t j = i + 2; j < m; ++j) {
        if (i == 0 && j == m - 1) continue;
        const std::uint32_t a = c[i], b = c[i + 1], x = c[j], y = c[(j + 1) % m];
        const double delta = w(a, x) + w(b, y) - w(a, b) - w(x, y);
        if (delta < -kImprovementEps) {
          std::reverse(c.begin() + static_cast<std::ptrdiff_t>(i + 1), c.begin() + static_cast<std::ptrdiff_t>(j + 1));
          improved = true;
        }
      }
    }
  }
}

std::vector<std::uint32_t> join_routes(std::vector<std::vector<std::uint32_t>> routes) {
  for (auto& r : routes) {
    std::vector<std::uint32_t> cyc{0};
    cyc.insert(cyc.end(), r.begin(), r.end());
    cyc = canonical_cycle(std::move(cyc));
    r.assign(cyc.begin() + 1, cyc.end());
  }
  std::sort(routes.begin(), routes.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::vector<std::uint32_t> nodes;
  for (std::size_t r = 0; r < routes.size(); ++r) {
    if (r > 0) nodes.push_back(0);
    nodes.insert(nodes.end(), routes[r].begin(), routes[r].end());
  }
  return nodes;
}

void require_kind(const Instance& inst, ProblemKind kind, const char* what) {
  if (inst.kind != kind) throw ContractError(fmt::format("{} requires a {} instance", what, to_string(kind)));
}

}  // namespace

std::vector<std::uint32_t> canonical_cycle(std::vector<std::uint32_t> nodes) {
  if (nodes.size() < 3) return nodes;
  auto zero = std::find(nodes.begin(), nodes.end(), 0u);
  if (zero != nodes.end()) std::rotate(nodes.begin(), zero, nodes.end());
  if (nodes.back() < nodes[1]) std::reverse(nodes.begin() + 1, nodes.end());
  return nodes;
}

OracleResult held_karp(const Instance& inst) {
  require_kind(inst, ProblemKind::TSP, "held_karp");
  const std::size_t n = inst.num_nodes();
  if (n > kHeldKarpMaxNodes) {
    throw SizeError(fmt::format("held_karp supports at most {} nodes, got {}", kHeldKarpMaxNodes, n));
  }
  const auto t0 = Clock::now();
  std::vector<std::uint32_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<std::uint32_t>(i);
  OracleResult r;
  r.tour = make_tour(canonical_cycle(shortest_cycle(inst.matrix(), all)), inst);
  r.cost = r.tour.cost;
  r.exact = true;
  r.method = "held_karp";
  r.seconds = seconds_since(t0);
  return r;
}

Tour nearest_neighbor(const Instance& inst) {
  const DistanceMatrix w = inst.matrix();
  const std::size_t n = inst.num_nodes();
  std::vector<std::uint8_t> visited(n, 0);
  std::vector<std::uint32_t> nodes;
  if (inst.kind == ProblemKind::TSP) {
    std::uint32_t cur = 0;
    visited[0] = 1;
    nodes.push_back(0);
    for (std::size_t step = 1; step < n; ++step) {
      std::uint32_t best = 0;
      double bd = kInf;
      for (std::uint32_t j = 0; j < n; ++j) {
        if (!visited[j] && w(cur, j) < bd) {
          bd = w(cur, j);
          best = j;
        }
      }
      visited[best] = 1;
      nodes.push_back(best);
      cur = best;
    }
    return make_tour(std::move(nodes), inst);
  }
  std::uint32_t cur = 0;
  int remaining = inst.capacity;
  std::size_t served = 0;
  while (served < inst.size()) {
    std::uint32_t best = 0;
    double bd = kInf;
    for (std::uint32_t j = 1; j < n; ++j) {
      if (!visited[j] && inst.demands[j] <= remaining && w(cur, j) < bd) {
        bd = w(cur, j);
        best = j;
      }
    }
    if (best == 0) {
      if (cur == 0) throw InfeasibleError("customer demand exceeds vehicle capacity");
      nodes.push_back(0);
      cur = 0;
      remaining = inst.capacity;
      continue;
    }
    visited[best] = 1;
    remaining -= inst.demands[best];
    nodes.push_back(best);
    cur = best;
    ++served;
  }
  return make_tour(std::move(nodes), inst);
}

Tour two_opt(Tour tour, const Instance& inst) {
  const DistanceMatrix w = inst.matrix();
  const double before = tour_cost(tour.nodes, inst);
  std::vector<std::uint32_t> nodes;
  if (inst.kind == ProblemKind::TSP) {
    nodes = tour.nodes;
    improve_cycle(nodes, w);
  } else {
    std::vector<std::vector<std::uint32_t>> routes;
    for (auto& r : split_routes(tour.nodes)) {
      std::vector<std::uint32_t> cyc{0};
      cyc.insert(cyc.end(), r.begin(), r.end());
      improve_cycle(cyc, w);
      routes.emplace_back(cyc.begin() + 1, cyc.end());
    }
    std::vector<std::uint32_t> joined;
    for (std::size_t r = 0; r < routes.size(); ++r) {
      if (r > 0) joined.push_back(0);
      joined.insert(joined.end(), routes[r].begin(), routes[r].end());
    }
    nodes = std::move(joined);
  }
  Tour out = make_tour(std::move(nodes), inst);
  if (out.cost > before) {
    tour.cost = before;
    return tour;
  }
  return out;
}

Tour sweep(const Instance& inst) {
  require_kind(inst, ProblemKind::CVRP, "sweep");
  const Point depot = inst.coords[0];
  std::vector<std::pair<double, std::uint32_t>> order;
  for (std::uint32_t i = 1; i < inst.num_nodes(); ++i) {
    order.emplace_back(std::atan2(inst.coords[i].y - depot.y, inst.coords[i].x - depot.x), i);
  }
  std::sort(order.begin(), order.end());
  std::vector<std::uint32_t> nodes;
  int load = 0;
  for (auto [angle, c] : order) {
    (void)angle;
    if (load + inst.demands[c] > inst.capacity) {
      nodes.push_back(0);
      load = 0;
    }
    load += inst.demands[c];
    nodes.push_back(c);
  }
  return make_tour(std::move(nodes), inst);
}

OracleResult cvrp_exact_tiny(const Instance& inst) {
  require_kind(inst, ProblemKind::CVRP, "cvrp_exact_tiny");
  const std::size_t c = inst.size();
  if (c > kCvrpExactMaxCustomers) {
    throw SizeError(fmt::format("cvrp_exact_tiny supports at most {} customers, got {}",
                                kCvrpExactMaxCustomers, c));
  }
  const auto t0 = Clock::now();
  const DistanceMatrix w = inst.matrix();
  const std::size_t full = (std::size_t{1} << c) - 1;

  std::vector<double> route_cost(full + 1, kInf);
  std::vector<std::vector<std::uint32_t>> route_order(full + 1);
  for (std::size_t s = 1; s <= full; ++s) {
    int load = 0;
    std::vector<std::uint32_t> nodes{0};
    for (std::size_t i = 0; i < c; ++i) {
      if (s >> i & 1) {
        load += inst.demands[i + 1];
        nodes.push_back(static_cast<std::uint32_t>(i + 1));
      }
    }
    if (load > inst.capacity) continue;
    auto cyc = shortest_cycle(w, nodes);
    double cost = 0.0;
    for (std::size_t k = 0; k < cyc.size(); ++k) cost += w(cyc[k], cyc[(k + 1) % cyc.size()]);
    route_cost[s] = cost;
    route_order[s].assign(cyc.begin() + 1, cyc.end());
  }

  std::vector<double> best(full + 1, kInf);
  std::vector<std::size_t> choice(full + 1, 0);
  best[0] = 0.0;
  for (std::size_t s = 1; s <= full; ++s) {
    const std::size_t low = s & (~s + 1);
    const std::size_t rest = s ^ low;
    // Enumerate subsets t of `rest`; the route is t | low.
    for (std::size_t t = rest;; t = (t - 1) & rest) {
      const std::size_t route = t | low;
      if (route_cost[route] < kInf && best[s ^ route] < kInf) {
        const double cand = route_cost[route] + best[s ^ route];
        if (cand < best[s]) {
          best[s] = cand;
          choice[s] = route;
        }
      }
      if (t == 0) break;
    }
  }
  if (best[full] == kInf) throw InfeasibleError("no capacity-feasible partition exists");

  std::vector<std::vector<std::uint32_t>> routes;
  for (std::size_t s = full; s != 0; s ^= choice[s]) routes.push_back(route_order[choice[s]]);

  OracleResult r;
  r.tour = make_tour(join_routes(std::move(routes)), inst);
  r.cost = r.tour.cost;
  r.exact = true;
  r.method = "cvrp_exact_tiny";
  r.seconds = seconds_since(t0);
  return r;
}

double gap(double model_cost, double oracle_cost) {
  if (!(oracle_cost > 0.0)) {
    throw DegenerateError(fmt::format("reference cost {} is not positive", oracle_cost));
  }
  return (model_cost - oracle_cost) / oracle_cost;
}

OracleResult reference_solve(const Instance& inst) {
  if (inst.kind == ProblemKind::TSP && inst.num_nodes() <= kHeldKarpMaxNodes) return held_karp(inst);
  if (inst.kind == ProblemKind::CVRP && inst.size() <= kCvrpExactMaxCustomers) return cvrp_exact_tiny(inst);
  const auto t0 = Clock::now();
  OracleResult r;
  r.tour = two_opt(nearest_neighbor(inst), inst);
  r.method = "nn_2opt";
  if (inst.kind == ProblemKind::CVRP) {
    Tour s = two_opt(sweep(inst), inst);
    if (s.cost < r.tour.cost) {
      r.tour = std::move(s);
      r.method = "sweep_2opt";
    }
  }
  r.cost = r.tour.cost;
  r.exact = false;
  r.seconds = seconds_since(t0);
  return r;
}

const OracleCache::Entry* OracleCache::find(const Instance& inst) const {
  auto it = entries_.find({geometry_hash(inst), std::string(to_string(inst.metric))});
  return it == entries_.end() ? nullptr : &it->second;
}

const OracleCache::Entry& OracleCache::solve(const Instance& inst) {
  const auto key = std::make_pair(geometry_hash(inst), std::string(to_string(inst.metric)));
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  OracleResult r = reference_solve(inst);
  return entries_.emplace(key, Entry{r.cost, r.exact, r.method}).first->second;
}

void OracleCache::insert(const Instance& inst, Entry entry) {
  entries_[{geometry_hash(inst), std::string(to_string(inst.metric))}] = std::move(entry);
}

bool OracleCache::has_heuristic() const {
  return std::any_of(entries_.begin(), entries_.end(), [](const auto& kv) { return !kv.second.exact; });
}

std::string OracleCache::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [key, e] : entries_) {
    arr.push_back({{"hash", fmt::format("{:016x}", key.first)},
                   {"metric", key.second},
                   {"cost", e.cost},
                   {"exact", e.exact},
                   {"method", e.method}});
  }
  return nlohmann::json{{"entries", arr}}.dump(1);
}

OracleCache OracleCache::from_json(const std::string& text) {
  OracleCache cache;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& e : j.at("entries")) {
      const std::uint64_t hash = std::stoull(e.at("hash").get<std::string>(), nullptr, 16);
      cache.entries_[{hash, e.at("metric").get<std::string>()}] =
          Entry{e.at("cost").get<double>(), e.at("exact").get<bool>(), e.at("method").get<std::string>()};
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(fmt::format("oracle cache: {}", ex.what()));
  }
  return cache;
}

void OracleCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << to_json() << '\n';
}

OracleCache OracleCache::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot read {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace llvrp
