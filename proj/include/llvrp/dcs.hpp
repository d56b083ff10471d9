#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace llvrp {

// Validation gaps per observed context: g (latest) and g_prev (one epoch
// earlier). The first observation of a context sets both.
struct MetricStats {
  std::vector<double> g;
  std::vector<double> g_prev;

  std::size_t size() const { return g.size(); }
  void observe(std::size_t context, double gap);
};

// Mean relative excess of model costs over oracle costs. Throws ContractError
// on length mismatch and DegenerateError when an oracle cost is not positive.
double hardness(std::span<const double> model_costs, std::span<const double> oracle_costs);

// p_i ∝ exp(g_i/η) + exp(g_i − g_prev_i), evaluated in log space so large
// gaps cannot overflow. Throws ConfigError for η ≤ 0.
std::vector<double> metric_probs(const MetricStats& stats, double eta);

// Multinomial draw of `total` items; deterministic in seed.
std::vector<std::size_t> sample_plan(std::span<const double> probs, std::size_t total, std::uint64_t seed);

struct ScheduleTraceRow {
  std::size_t epoch = 0;
  std::size_t context = 0;
  std::string metric;
  double g = 0.0;
  double g_prev = 0.0;
  double p = 0.0;
  std::size_t count = 0;
};

std::string trace_csv_header();
std::string trace_csv_row(const ScheduleTraceRow& row);
std::vector<ScheduleTraceRow> read_trace_csv(const std::filesystem::path& path);

}  // namespace llvrp
