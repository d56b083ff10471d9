// Command-line entry point: generate, train, eval, gradcheck, schedule.
//
// Exit codes: 0 success, 1 training or evaluation abort, 2 bad flags or
// configuration, 3 incompatible checkpoint.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/core.h>
#include <json.hpp>

#include "llvrp/alloc.hpp"
#include "llvrp/benchmark_io.hpp"
#include "llvrp/checkpoint.hpp"
#include "llvrp/dcs.hpp"
#include "llvrp/error.hpp"
#include "llvrp/gradcheck.hpp"
#include "llvrp/instance_json.hpp"
#include "llvrp/oracles.hpp"
#include "llvrp/policy.hpp"
#include "llvrp/rng.hpp"
#include "llvrp/trainer.hpp"

#ifndef LLVRP_GIT_DESCRIBE
#define LLVRP_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using llvrp::Instance;

namespace {

constexpr int kExitAbort = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr)));
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw llvrp::Error(fmt::format("cannot write {}", path.string()));
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw llvrp::ConfigError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string kind = "tsp";
  std::size_t n = 20;
  std::string metric = "euclidean";
  std::size_t count = 1;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  const auto kind = llvrp::parse_problem_kind(a.kind);
  const auto metric = llvrp::parse_metric(a.metric);
  if (a.n < (kind == llvrp::ProblemKind::TSP ? 2u : 1u)) {
    throw llvrp::ConfigError(fmt::format("n={} is too small for {}", a.n, a.kind));
  }
  fs::create_directories(a.out);
  const llvrp::Rng root(a.seed);
  for (std::size_t k = 0; k < a.count; ++k) {
    const Instance inst = llvrp::generate_instance(kind, a.n, metric, root.split({k}).key());
    llvrp::save_instance(inst, fs::path(a.out) / fmt::format("instance_{:04}.json", k));
  }
  nlohmann::ordered_json m;
  m["command"] = "generate";
  m["git_describe"] = LLVRP_GIT_DESCRIBE;
  m["kind"] = llvrp::to_string(kind);
  m["n"] = a.n;
  m["metric"] = llvrp::to_string(metric);
  m["count"] = a.count;
  m["seed"] = a.seed;
  if (kind == llvrp::ProblemKind::CVRP) m["capacity"] = llvrp::capacity_for_size(a.n);
  m["created_at"] = utc_now();
  write_file(fs::path(a.out) / "manifest.json", m.dump(2) + "\n");
  fmt::print("wrote {} instances to {}\n", a.count, a.out);
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

nlohmann::ordered_json deviation_flags(const llvrp::LifelongTrainer& trainer) {
  const auto& cfg = trainer.config();
  nlohmann::ordered_json flags = nlohmann::ordered_json::array();
  std::map<std::string, std::size_t> methods;
  for (std::size_t k = 0; k < cfg.contexts.size(); ++k) {
    for (const Instance& inst : llvrp::validation_set(cfg, k)) {
      if (const auto* e = trainer.oracle_cache().find(inst)) ++methods[e->method];
    }
  }
  for (const auto& [method, count] : methods) {
    const bool exact = method == "held_karp" || method == "cvrp_exact_tiny";
    flags.push_back({{"flag", "oracle_substitution"},
                     {"method", method},
                     {"exact", exact},
                     {"instances", count},
                     {"note", exact ? "internal exact solver stands in for LKH3"
                                    : "heuristic reference stands in for LKH3; gaps are relative to a non-optimal cost"}});
  }
  flags.push_back({{"flag", "rounding_mode"}, {"value", "none"},
                   {"note", "synthetic instances use exact 64-bit distances"}});
  flags.push_back({{"flag", "benchmark_normalization"}, {"value", "min-max, common scale"}});
  if (cfg.kind == llvrp::ProblemKind::TSP) {
    flags.push_back({{"flag", "decoder_first_node_query"}, {"value", true}});
  }
  return flags;
}

int cmd_train(const TrainArgs& a) {
  llvrp::TrainConfig cfg = llvrp::TrainConfig::from_json(read_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  const fs::path out(a.out);
  fs::create_directories(out / "validation");
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();

  llvrp::LifelongTrainer trainer(cfg);
  write_file(out / "config.json", cfg.to_json() + "\n");
  {
    nlohmann::ordered_json m;
    m["command"] = "train";
    m["git_describe"] = LLVRP_GIT_DESCRIBE;
    m["config"] = nlohmann::ordered_json::parse(cfg.to_json());
    m["seeds"] = {{"seed", cfg.seed}, {"validation_seed", cfg.validation_seed}};
    m["threads"] = llvrp::thread_lanes();
    m["deviations"] = deviation_flags(trainer);
    m["started_at"] = started;
    write_file(out / "manifest.json", m.dump(2) + "\n");
  }
  for (std::size_t k = 0; k < cfg.contexts.size(); ++k) {
    std::string lines;
    for (const Instance& inst : llvrp::validation_set(cfg, k)) lines += llvrp::instance_to_json(inst) + "\n";
    write_file(out / "validation" / fmt::format("ctx{}.jsonl", k), lines);
  }
  trainer.oracle_cache().save(out / "oracle_cache.json");

  std::ofstream history(out / "history.csv");
  history << llvrp::history_csv_header(cfg) << "\n";
  trainer.on_epoch = [&](const llvrp::EpochStats& s) {
    history << llvrp::history_csv_row(cfg, s) << "\n" << std::flush;
    std::string gaps;
    for (double g : s.val_gap) gaps += fmt::format(" {:.4f}", g);
    fmt::print("ctx {} epoch {:3} L={:+.5f} Lr={:.5f} gaps{} ({:.1f}s)\n", s.context, s.epoch, s.loss_l,
               s.loss_lr, gaps, s.seconds);
    std::fflush(stdout);
  };

  while (!trainer.finished()) {
    const std::size_t c = trainer.next_context();
    trainer.train_next_context();
    trainer.checkpoint().save(out / fmt::format("context{}.ckpt", c));
  }

  if (cfg.replay == llvrp::ReplayMode::Dcs) {
    std::string trace = llvrp::trace_csv_header() + "\n";
    for (const auto& row : trainer.schedule_trace()) trace += llvrp::trace_csv_row(row) + "\n";
    write_file(out / "schedule_trace.csv", trace);
  }
  nlohmann::ordered_json done;
  done["started_at"] = started;
  done["finished_at"] = utc_now();
  done["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  done["contexts_done"] = trainer.next_context();
  write_file(out / "completion.json", done.dump(2) + "\n");
  return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> instances;
  std::string oracle = "auto";
  std::size_t starts = 0;
  std::string out;
  std::string method = "llvrp_greedy";
};

struct EvalItem {
  std::string name;
  Instance original;  // cost evaluation
  Instance network;   // fed to the policy
  std::optional<double> best_known;
  bool benchmark = false;
};

bool is_benchmark_path(const fs::path& p) {
  std::string name = p.filename().string();
  if (name.size() > 3 && name.ends_with(".gz")) name.resize(name.size() - 3);
  return name.ends_with(".tsp") || name.ends_with(".vrp");
}

void collect_items(const fs::path& path, std::vector<EvalItem>& items) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      const fs::path& p = e.path();
      if (p.filename() == "manifest.json") continue;
      if (p.extension() == ".json" || p.extension() == ".jsonl" || is_benchmark_path(p)) files.push_back(p);
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) collect_items(f, items);
    return;
  }
  if (!fs::exists(path)) throw llvrp::ConfigError(fmt::format("no such instance path: {}", path.string()));
  if (is_benchmark_path(path)) {
    llvrp::BenchmarkInstance b = llvrp::load_benchmark(path);
    for (const auto& w : b.warnings) fmt::print(stderr, "warning: {}: {}\n", path.filename().string(), w);
    items.push_back({b.name.empty() ? path.stem().string() : b.name, b.instance,
                     llvrp::normalized_copy(b.instance), b.best_known, true});
    return;
  }
  if (path.extension() == ".jsonl") {
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t k = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Instance inst = llvrp::instance_from_json(line);
      items.push_back({fmt::format("{}:{}", path.stem().string(), k++), inst, inst, std::nullopt, false});
    }
    return;
  }
  Instance inst = llvrp::load_instance(path);
  items.push_back({path.stem().string(), inst, inst, std::nullopt, false});
}

int cmd_eval(const EvalArgs& a) {
  const llvrp::Checkpoint ck = llvrp::Checkpoint::load(a.checkpoint);
  const llvrp::PolicyParams params = llvrp::PolicyParams::read(ck);

  std::vector<EvalItem> items;
  for (const auto& p : a.instances) collect_items(p, items);
  if (items.empty()) throw llvrp::ConfigError("no instances to evaluate");
  for (const auto& it : items) {
    if (it.network.kind != params.kind()) {
      throw llvrp::ConfigError(fmt::format("{} is {} but the checkpoint is {}", it.name,
                                           llvrp::to_string(it.network.kind), llvrp::to_string(params.kind())));
    }
    if (it.network.num_nodes() > params.config().n_max) {
      throw llvrp::ConfigError(fmt::format("{} has {} nodes, the checkpoint supports {}", it.name,
                                           it.network.num_nodes(), params.config().n_max));
    }
  }

  const bool use_oracle = a.oracle != "none";
  llvrp::OracleCache cache;
  if (use_oracle && a.oracle != "auto") cache = llvrp::OracleCache::load(a.oracle);

  // Greedy decoding in groups of equal node count, preserving input order.
  std::vector<double> model_cost(items.size());
  std::vector<double> model_seconds(items.size());
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].network.num_nodes()].push_back(i);
  for (const auto& [nodes, idx] : groups) {
    std::vector<Instance> batch;
    for (std::size_t i : idx) batch.push_back(items[i].network);
    const std::size_t n = batch.front().size();
    const std::size_t starts = a.starts == 0 ? std::min<std::size_t>(n, 50) : std::min(a.starts, n);
    const auto t0 = std::chrono::steady_clock::now();
    const auto tours = llvrp::greedy_solve(batch, params, starts);
    const double per = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
                       static_cast<double>(batch.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const EvalItem& it = items[idx[k]];
      model_cost[idx[k]] = it.benchmark ? llvrp::tour_cost(tours[k].nodes, it.original) : tours[k].cost;
      model_seconds[idx[k]] = per;
    }
  }

  std::vector<llvrp::ResultRecord> rows;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_metric;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const EvalItem& it = items[i];
    const std::string metric(llvrp::to_string(it.original.metric));
    const bool integer = it.original.rounding == llvrp::CostRounding::Nearest;
    llvrp::ResultRecord model{it.name, a.method, metric, model_cost[i], 0.0, model_seconds[i], integer};
    if (use_oracle) {
      double ref = 0.0;
      std::string method;
      double seconds = 0.0;
      if (const auto* e = cache.find(it.original)) {
        ref = e->cost;
        method = e->method;
      } else if (a.oracle != "auto") {
        throw llvrp::ConfigError(fmt::format("oracle file has no entry for {}", it.name));
      } else if (it.best_known) {
        ref = *it.best_known;
        method = "best_known";
      } else {
        const llvrp::OracleResult r = llvrp::reference_solve(it.original);
        ref = r.cost;
        method = r.method;
        seconds = r.seconds;
      }
      model.gap = llvrp::gap(model.objective, ref);
      rows.push_back(model);
      rows.push_back({it.name, method, metric, ref, 0.0, seconds, integer});
      by_metric[metric].first.push_back(model.objective);
      by_metric[metric].second.push_back(ref);
    } else {
      rows.push_back(model);
    }
  }
  for (const auto& [metric, costs] : by_metric) {
    const double g = llvrp::hardness(costs.first, costs.second);
    double mean = 0.0;
    for (double c : costs.first) mean += c;
    mean /= static_cast<double>(costs.first.size());
    rows.push_back({"mean", a.method, metric, mean, g, 0.0, false});
    fmt::print("{}: {} instances, mean gap {:.17g}\n", metric, costs.first.size(), g);
  }
  const std::string csv = llvrp::write_results(rows);
  if (a.out.empty()) {
    fmt::print("{}", csv);
  } else {
    write_file(a.out, csv);
  }
  return 0;
}

// --------------------------------------------------------------- gradcheck

int cmd_gradcheck(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = llvrp::gradcheck_suite(seed);
  bool ok = true;
  fmt::print("{:<28} {:>12} {:>12} {:>9}\n", "case", "max_rel", "max_abs_tiny", "seconds");
  for (const auto& c : cases) {
    fmt::print("{:<28} {:>12.3e} {:>12.3e} {:>9.3f}{}\n", c.name, c.max_rel_error, c.max_abs_error_small,
               c.seconds, c.passed() ? "" : "  FAIL");
    ok = ok && c.passed();
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fmt::print("{} cases, {:.2f}s, tolerance {:g} relative ({:g} absolute below |g| < {:g}): {}\n", cases.size(),
             total, llvrp::kGradTolerance, llvrp::kSmallGradAbsTolerance, llvrp::kPolicyRelativeFloor,
             ok ? "ok" : "FAILED");
  return ok ? 0 : kExitAbort;
}

// ---------------------------------------------------------------- schedule

int cmd_schedule(const std::string& trace_path, double eta) {
  const auto rows = llvrp::read_trace_csv(trace_path);
  std::map<std::size_t, std::vector<llvrp::ScheduleTraceRow>> epochs;
  for (const auto& r : rows) epochs[r.epoch].push_back(r);
  fmt::print("epoch,context,metric,g,g_prev,p_trace,p\n");
  for (const auto& [epoch, group] : epochs) {
    llvrp::MetricStats stats;
    for (const auto& r : group) {
      stats.g.push_back(r.g);
      stats.g_prev.push_back(r.g_prev);
    }
    const auto p = llvrp::metric_probs(stats, eta);
    for (std::size_t k = 0; k < group.size(); ++k) {
      const auto& r = group[k];
      fmt::print("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", epoch, r.context, r.metric, r.g, r.g_prev, r.p, p[k]);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  llvrp::tune_allocator();
  CLI::App app{"Lifelong-learning neural solver for TSP and CVRP"};
  app.require_subcommand(1);
  app.set_version_flag("--version", LLVRP_GIT_DESCRIBE);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write random instances as JSON");
  g->add_option("--kind", gen.kind, "tsp or cvrp")->check(CLI::IsMember({"tsp", "cvrp"}, CLI::ignore_case));
  g->add_option("--n", gen.n, "Cities (TSP) or customers (CVRP)")->required();
  g->add_option("--metric", gen.metric, "euclidean, manhattan, chebyshev, chebyshev_min, chebyshev_mean");
  g->add_option("--count", gen.count, "Number of instances");
  g->add_option("--seed", gen.seed);
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train over the configured context sequence");
  t->add_option("--config", tr.config, "JSON training config")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--seed", tr.seed, "Override the config seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Greedy multi-start evaluation with gaps");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--instances", ev.instances, "Directories, .json, .jsonl or TSPLIB/CVRPLIB files")->required();
  e->add_option("--oracle", ev.oracle, "auto, none, or an oracle cache file");
  e->add_option("--starts", ev.starts, "Multi-start count (0: min(n, 50))");
  e->add_option("--method", ev.method, "Method label in the results");
  e->add_option("--out", ev.out, "Results CSV (stdout when omitted)");

  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--seed", gc_seed);

  std::string trace;
  double eta = 0.1;
  auto* s = app.add_subcommand("schedule", "Recompute scheduler probabilities from a trace");
  s->add_option("--trace", trace)->required()->check(CLI::ExistingFile);
  s->add_option("--eta", eta);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*gc) return cmd_gradcheck(gc_seed);
    if (*s) return cmd_schedule(trace, eta);
  } catch (const llvrp::CheckpointError& err) {
    fmt::print(stderr, "checkpoint error: {}\n", err.what());
    return kExitCheckpoint;
  } catch (const llvrp::ConfigError& err) {
    fmt::print(stderr, "config error: {}\n", err.what());
    return kExitConfig;
  } catch (const llvrp::ParseError& err) {
    fmt::print(stderr, "parse error: {}\n", err.what());
    return kExitConfig;
  } catch (const std::exception& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kExitAbort;
  }
  return 0;
}
