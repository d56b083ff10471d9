#include "llvrp/dcs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "llvrp/error.hpp"
#include "llvrp/rng.hpp"

namespace llvrp {

void MetricStats::observe(std::size_t context, double gap) {
  if (context > g.size()) {
    throw ContractError(fmt::format("context {} observed before context {}", context, g.size()));
  }
  if (context == g.size()) {
    g.push_back(gap);
    g_prev.push_back(gap);
    return;
  }
  g_prev[context] = g[context];
  g[context] = gap;
}

double hardness(std::span<const double> model_costs, std::span<const double> oracle_costs) {
  if (model_costs.size() != oracle_costs.size() || model_costs.empty()) {
    throw ContractError(fmt::format("hardness needs equal non-empty cost lists, got {} and {}",
                                    model_costs.size(), oracle_costs.size()));
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < model_costs.size(); ++k) {
    if (!(oracle_costs[k] > 0.0)) {
      throw DegenerateError(fmt::format("oracle cost {} of validation instance {} is not positive",
                                        oracle_costs[k], k));
    }
    sum += (model_costs[k] - oracle_costs[k]) / oracle_costs[k];
  }
  return sum / static_cast<double>(model_costs.size());
}

std::vector<double> metric_probs(const MetricStats& stats, double eta) {
  if (!(eta > 0.0)) throw ConfigError(fmt::format("temperature must be positive, got {}", eta));
  if (stats.size() == 0) throw ContractError("metric_probs needs at least one observed context");
  std::vector<double> logw(stats.size());
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const double a = stats.g[i] / eta;
    const double b = stats.g[i] - stats.g_prev[i];
    const double hi = std::max(a, b);
    logw[i] = hi + std::log1p(std::exp(std::min(a, b) - hi));
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  std::vector<double> p(logw.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logw[i] - top);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<std::size_t> sample_plan(std::span<const double> probs, std::size_t total, std::uint64_t seed) {
  if (probs.empty()) throw ContractError("sample_plan needs a non-empty distribution");
  std::vector<std::size_t> counts(probs.size(), 0);
  Rng rng(seed);
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last = i;
  }
  for (std::size_t t = 0; t < total; ++t) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = last;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc && probs[i] > 0.0) {
        pick = i;
        break;
      }
    }
    ++counts[pick];
  }
  return counts;
}

std::string trace_csv_header() { return "epoch,context,metric,g,g_prev,p,count"; }

std::string trace_csv_row(const ScheduleTraceRow& r) {
  return fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{}", r.epoch, r.context, r.metric, r.g, r.g_prev,
                     r.p, r.count);
}

std::vector<ScheduleTraceRow> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot read {}", path.string()));
  std::vector<ScheduleTraceRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != trace_csv_header()) throw ParseError(fmt::format("{}:1: unexpected header", path.string()));
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) {
      throw ParseError(fmt::format("{}:{}: expected 7 fields, got {}", path.string(), lineno, f.size()));
    }
    try {
      ScheduleTraceRow r;
      r.epoch = std::stoull(f[0]);
      r.context = std::stoull(f[1]);
      r.metric = f[2];
      r.g = std::stod(f[3]);
      r.g_prev = std::stod(f[4]);
      r.p = std::stod(f[5]);
      r.count = std::stoull(f[6]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError(fmt::format("{}:{}: malformed number", path.string(), lineno));
    }
  }
  return rows;
}

}  // namespace llvrp
