#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llvrp/adam.hpp"
#include "llvrp/dcs.hpp"
#include "llvrp/oracles.hpp"
#include "llvrp/policy.hpp"

namespace llvrp {

// Shared baseline: the mean of the N rewards, summed with compensation.
double shared_baseline(std::span<const double> rewards);
// R_j − b for every rollout.
std::vector<double> advantages(std::span<const double> rewards);

// REINFORCE with a shared baseline per instance, averaged over the batch:
//   L = −(1/(B·N)) Σ_b Σ_j (R_bj − b_b) · log p(τ_bj),  R = −cost.
// The baseline is a constant. Throws NumericError on a non-finite log-prob.
// `batch_total` overrides B when a batch is split across lanes.
ad::Var reinforce_loss(const BatchRollout& rollout, std::size_t batch_total = 0);

// Σ_layers ‖I_K ⊙ (W_K − W̃_K)‖₁ + ‖I_B ⊙ (B − B̃)‖₁ over the bound live
// parameters. An empty snapshot gives a constant zero. Throws CheckpointError
// when the snapshot does not match the parameter shapes.
ad::Var reg_loss(ad::Tape& tape, const BoundParams& bound, const ContextSnapshot& snapshot);

// J = L + α·L_r.
ad::Var total_loss(ad::Var l, ad::Var lr, double alpha);

// Fixed replay budget: ⌈fraction · per_epoch⌉ instances for every earlier
// context, none for context 0.
std::vector<std::size_t> replay_plan(std::size_t context, std::size_t per_epoch, double fraction);

struct ContextSpec {
  MetricKind metric = MetricKind::Euclidean;
  std::size_t n = 10;
};

enum class ReplayMode { Off, Fixed, Dcs };
std::string_view to_string(ReplayMode mode);
ReplayMode parse_replay_mode(std::string_view s);

struct TrainConfig {
  ProblemKind kind = ProblemKind::TSP;
  std::vector<ContextSpec> contexts;
  std::size_t epochs = 30;
  std::size_t batches = 100;      // I, batches per epoch
  std::size_t batch_size = 64;
  std::size_t starts = 0;         // N; 0 picks min(n, 50) per context
  double alpha = 1.0;
  ReplayMode replay = ReplayMode::Fixed;
  double replay_fraction = 0.2;
  double eta = 0.1;
  AdamConfig adam;
  ModelConfig model;
  std::uint64_t seed = 1;
  std::size_t validation_size = 256;
  std::uint64_t validation_seed = 20231;

  std::size_t starts_for(std::size_t n) const;
  // Throws ConfigError.
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct EpochStats {
  std::size_t epoch = 0;    // 0-based within the context
  std::size_t context = 0;
  double loss_l = 0.0;      // mean over batches
  double loss_lr = 0.0;
  double first_lr = 0.0;         // L_r of the first batch
  std::vector<double> val_gap;   // one entry per configured context
  std::vector<double> val_cost;  // mean greedy cost per configured context
  std::vector<std::size_t> batch_counts;  // training batches drawn per context
  double seconds = 0.0;
};

// Fixed validation instances of one context. Geometry depends only on the
// validation seed and size, so metric contexts share coordinates and demands.
std::vector<Instance> validation_set(const TrainConfig& config, std::size_t context);

// Context-sequential training. A trainer can be copied between contexts to
// branch runs that share a prefix.
class LifelongTrainer {
 public:
  explicit LifelongTrainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  // Replaces the configuration for contexts not yet trained. The context list
  // and model shape must stay the same.
  void reconfigure(TrainConfig config);

  std::size_t next_context() const { return next_context_; }
  bool finished() const { return next_context_ == config_.contexts.size(); }

  // Trains every epoch of the next context, then takes its snapshot.
  void train_next_context();
  void train_all();

  // One training epoch of `context`; exposed for tests and fine stepping.
  EpochStats train_epoch(std::size_t context, std::size_t epoch);

  // Greedy validation gap on every configured context.
  std::vector<double> validate(std::vector<double>* mean_costs = nullptr);

  const PolicyParams& params() const { return params_; }
  PolicyParams& params() { return params_; }
  const Adam& optimizer() const { return adam_; }
  const std::vector<ContextSnapshot>& snapshots() const { return snapshots_; }
  const std::vector<EpochStats>& history() const { return history_; }
  const MetricStats& metric_stats() const { return stats_; }
  const std::vector<ScheduleTraceRow>& schedule_trace() const { return trace_; }
  const OracleCache& oracle_cache() const { return oracle_; }
  OracleCache& oracle_cache() { return oracle_; }

  // Called after every epoch.
  std::function<void(const EpochStats&)> on_epoch;

  // Per-context counts of the batches the next epoch would draw.
  std::vector<std::pair<std::size_t, std::size_t>> epoch_batches(std::size_t context, std::size_t epoch) const;

  // Parameters, optimiser moments and the latest snapshot.
  Checkpoint checkpoint() const;

 private:
  struct StepResult {
    double loss_l = 0.0;
    double loss_lr = 0.0;
    std::vector<ad::Tensor> grads;
  };
  StepResult train_step(std::span<const Instance> batch, std::size_t starts, std::uint64_t seed);
  // Instances per context for one epoch; `probs` receives the scheduler
  // distribution in DCS mode.
  std::vector<std::size_t> plan_counts(std::size_t context, std::size_t epoch,
                                       std::vector<double>* probs = nullptr) const;

  TrainConfig config_;
  PolicyParams params_;
  Adam adam_;
  std::vector<ContextSnapshot> snapshots_;
  ImportanceTracker importance_;
  std::vector<std::vector<Instance>> validation_;
  std::vector<std::vector<double>> oracle_costs_;
  OracleCache oracle_;
  MetricStats stats_;
  std::vector<EpochStats> history_;
  std::vector<ScheduleTraceRow> trace_;
  std::size_t next_context_ = 0;
  std::size_t lanes_ = 1;
};

// Lane count from LLVRP_THREADS (default 1).
std::size_t thread_lanes();

std::string history_csv_header(const TrainConfig& config);
std::string history_csv_row(const TrainConfig& config, const EpochStats& stats);

}  // namespace llvrp
