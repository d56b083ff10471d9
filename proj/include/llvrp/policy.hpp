#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llvrp/autodiff.hpp"
#include "llvrp/checkpoint.hpp"
#include "llvrp/params.hpp"
#include "llvrp/vrp.hpp"

namespace llvrp {

struct ModelConfig {
  std::size_t d = 64;           // embedding width
  std::size_t heads = 4;
  std::size_t layers = 3;
  std::size_t n_max = 100;      // largest node count (CVRP counts the depot)
  std::size_t ff_hidden = 128;  // feed-forward width
  double logit_clip = 10.0;

  std::size_t head_dim() const { return d / heads; }
  // Throws ConfigError.
  void validate() const;
};

// All learnable tensors of the encoder and decoder.
//
// Every encoder layer owns W_Q, W_K, W_V, W_O (d×d) and an attention bias
// B of shape [n_max, heads·n_max]. Head i reads the contiguous column block
// B[:, i·n_max : (i+1)·n_max] and an instance with n nodes uses its top-left
// n×n corner, so gradients reach only that slice.
class PolicyParams {
 public:
  struct LayerSlots {
    std::size_t w_q, w_k, w_v, w_o, b_o, bias;
    std::size_t ln1_gain, ln1_bias, ff1_w, ff1_b, ff2_w, ff2_b, ln2_gain, ln2_bias;
  };
  struct DecoderSlots {
    std::size_t embed_w, embed_b;
    std::size_t q_graph, q_first, q_current, q_capacity;  // q_first TSP only, q_capacity CVRP only
    std::size_t w_k, w_v, w_o, b_o;
  };
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  // Projections uniform(±1/√fan_in), attention bias zero, layer-norm gain 1.
  PolicyParams(const ModelConfig& config, ProblemKind kind, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ProblemKind kind() const { return kind_; }
  std::size_t feature_dim() const { return kind_ == ProblemKind::TSP ? 2 : 4; }

  ParameterSet& tensors() { return tensors_; }
  const ParameterSet& tensors() const { return tensors_; }
  const LayerSlots& layer(std::size_t l) const { return layers_[l]; }
  const DecoderSlots& decoder() const { return decoder_; }

  // Writes config scalars under "config/" and every tensor under its name.
  void write(Checkpoint& ck) const;
  // Throws CheckpointError when names or shapes disagree.
  static PolicyParams read(const Checkpoint& ck);

 private:
  PolicyParams(const ModelConfig& config, ProblemKind kind);
  void build(std::uint64_t seed);

  ModelConfig config_;
  ProblemKind kind_;
  ParameterSet tensors_;
  std::vector<LayerSlots> layers_;
  DecoderSlots decoder_{};
};

// Parameters placed on a tape, one Var per tensor in ParameterSet order.
struct BoundParams {
  const PolicyParams* params = nullptr;
  std::vector<ad::Var> vars;

  ad::Var operator[](std::size_t slot) const { return vars[slot]; }
};

BoundParams bind(ad::Tape& tape, const PolicyParams& params, bool trainable);
std::vector<ad::Tensor> collect_grads(const ad::Tape& tape, const BoundParams& bound);

// Network input: TSP (x, y); CVRP (x, y, demand/Q, is_depot).
ad::Tensor node_features(std::span<const Instance> batch);

// Per-layer attention probabilities [heads, n, n] of the first batch element.
struct EncoderTrace {
  std::vector<ad::Tensor> attention;
};

// [B, nodes, d] embeddings. All instances must share kind and node count.
ad::Var encode_batch(ad::Tape& tape, const BoundParams& bound, std::span<const Instance> batch,
                     EncoderTrace* trace = nullptr);

// Forward-only embeddings [nodes, d] of one instance.
ad::Tensor encode(const Instance& inst, const PolicyParams& params);

// Instance-level decoder tensors computed once from the embeddings.
struct DecoderCache {
  ad::Var embeddings;  // [B, nodes, d]
  ad::Var glimpse_k;   // [B·h, nodes, d/h]
  ad::Var glimpse_v;
  ad::Var q_graph;     // [B, 1, d]
  ad::Var q_first;     // [B, nodes, d] (TSP)
  ad::Var q_current;   // [B, nodes, d]
  std::size_t batch = 0;
  std::size_t nodes = 0;
};

DecoderCache prepare_decoder(ad::Tape& tape, const BoundParams& bound, ad::Var embeddings);

// Probabilities [B, R, nodes] for R rollouts per instance. `first`, `current`
// and `remaining` (capacity fraction, CVRP) hold B·R entries; `mask` holds
// B·R·nodes flags.
ad::Var decoder_probs(ad::Tape& tape, const BoundParams& bound, const DecoderCache& cache,
                      std::size_t rollouts, std::span<const std::uint32_t> first,
                      std::span<const std::uint32_t> current, std::span<const double> remaining,
                      const ad::Mask& mask);

// Action distribution for one rollout state given precomputed embeddings
// [nodes, d]. Masked entries are exactly zero.
std::vector<double> decode_step(const PolicyParams& params, const ad::Tensor& embeddings,
                                const RolloutState& state, const Instance& inst);

enum class DecodeMode { Greedy, Sample };

struct RolloutOptions {
  std::size_t starts = 1;
  DecodeMode mode = DecodeMode::Greedy;
  std::uint64_t seed = 0;
  // Global index of batch[0]; sampling streams are keyed by global instance
  // index so splitting a batch across lanes does not change the draws.
  std::size_t batch_offset = 0;
  // Optional teacher forcing: one full node sequence per rollout (B·starts),
  // beginning with the start node. Used to score given tours.
  const std::vector<std::vector<std::uint32_t>>* forced = nullptr;
};

struct BatchRollout {
  std::size_t batch = 0;
  std::size_t starts = 0;
  std::vector<Tour> tours;  // B·starts, grouped by instance
  ad::Var log_prob;         // [B, starts]; sums log p over non-forced steps
  std::vector<std::vector<double>> step_log_probs;

  const Tour& tour(std::size_t b, std::size_t j) const { return tours[b * starts + j]; }
};

// POMO multi-start construction: rollout j of an instance starts at node j
// (TSP) or customer j+1 (CVRP). The first move is forced and carries no
// probability; ties in greedy mode go to the lowest node index.
BatchRollout rollout_batch(ad::Tape& tape, const BoundParams& bound, std::span<const Instance> batch,
                           const RolloutOptions& options);

struct MultiStartResult {
  std::vector<Tour> tours;
  std::vector<double> log_probs;
  std::vector<std::vector<double>> step_log_probs;
};

MultiStartResult rollout_multistart(const Instance& inst, const PolicyParams& params,
                                    std::size_t starts, DecodeMode mode, std::uint64_t seed);

// Best-of-N greedy multi-start tour per instance (forward only).
std::vector<Tour> greedy_solve(std::span<const Instance> batch, const PolicyParams& params,
                               std::size_t starts);

// Mean elementwise |gradient| of W_K and B per layer over accumulated steps.
class ImportanceTracker {
 public:
  explicit ImportanceTracker(const PolicyParams& params);

  void add(const std::vector<ad::Tensor>& grads);
  void reset();
  std::size_t count() const { return count_; }
  std::vector<ad::Tensor> key_importance() const;
  std::vector<ad::Tensor> bias_importance() const;

 private:
  std::vector<std::size_t> key_slots_;
  std::vector<std::size_t> bias_slots_;
  std::vector<ad::Tensor> key_sum_;
  std::vector<ad::Tensor> bias_sum_;
  std::size_t count_ = 0;
};

// Frozen W_K and B of every layer at the end of a context, with importances.
struct ContextSnapshot {
  std::vector<ad::Tensor> keys;
  std::vector<ad::Tensor> biases;
  std::vector<ad::Tensor> key_importance;
  std::vector<ad::Tensor> bias_importance;

  void write(Checkpoint& ck, const std::string& prefix = "snapshot/") const;
  static ContextSnapshot read(const Checkpoint& ck, const std::string& prefix = "snapshot/");
};

ContextSnapshot snapshot_context(const PolicyParams& params, const ImportanceTracker& importance);

}  // namespace llvrp
