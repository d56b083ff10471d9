#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "llvrp/vrp.hpp"

namespace llvrp {

struct OracleResult {
  Tour tour;
  double cost = 0.0;
  bool exact = false;
  double seconds = 0.0;
  std::string method;
};

inline constexpr std::size_t kHeldKarpMaxNodes = 15;
inline constexpr std::size_t kCvrpExactMaxCustomers = 8;

// Exact TSP by dynamic programming over subsets. Works for every metric since
// it reads only the distance matrix. Throws SizeError above 15 nodes.
OracleResult held_karp(const Instance& inst);

// TSP: greedy tour from node 0. CVRP: nearest feasible customer, returning to
// the depot when nothing fits. Ties go to the lowest node index.
Tour nearest_neighbor(const Instance& inst);

// First-improvement 2-opt to a local optimum; CVRP routes are improved one by
// one with the depot fixed. Never increases cost.
Tour two_opt(Tour tour, const Instance& inst);

// CVRP sweep: customers ordered by polar angle around the depot, cut into
// routes when the next demand does not fit.
Tour sweep(const Instance& inst);

// Exact CVRP: every capacity-feasible customer subset is routed by Held-Karp,
// then the cheapest set partition is found by subset DP. Throws SizeError
// above 8 customers.
OracleResult cvrp_exact_tiny(const Instance& inst);

// Relative gap (model - oracle) / oracle. Throws DegenerateError when the
// oracle cost is not positive.
double gap(double model_cost, double oracle_cost);

// Best available reference: exact when the size permits, otherwise the
// heuristics above.
OracleResult reference_solve(const Instance& inst);

// TSP tour rotated to start at node 0 and oriented so the second node has the
// smaller index of node 0's two neighbours.
std::vector<std::uint32_t> canonical_cycle(std::vector<std::uint32_t> nodes);

// Reference costs keyed by (geometry hash, metric), persisted as JSON so fixed
// validation sets are solved once.
class OracleCache {
 public:
  struct Entry {
    double cost = 0.0;
    bool exact = false;
    std::string method;
  };

  const Entry* find(const Instance& inst) const;
  // Cached entry, or a fresh reference solve that is then stored.
  const Entry& solve(const Instance& inst);
  void insert(const Instance& inst, Entry entry);
  std::size_t size() const { return entries_.size(); }
  // True when any stored cost came from a heuristic.
  bool has_heuristic() const;

  std::string to_json() const;
  static OracleCache from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static OracleCache load(const std::filesystem::path& path);

 private:
  std::map<std::pair<std::uint64_t, std::string>, Entry> entries_;
};

}  // namespace llvrp
