#include "llvrp/policy.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "llvrp/error.hpp"
#include "llvrp/rng.hpp"

namespace llvrp {

namespace {

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng rng) {
  ad::Tensor t(shape);
  for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

void require_uniform_batch(std::span<const Instance> batch) {
  if (batch.empty()) throw ContractError("empty instance batch");
  for (const Instance& inst : batch) {
    if (inst.kind != batch[0].kind || inst.num_nodes() != batch[0].num_nodes()) {
      throw ContractError("instances in a batch must share problem kind and node count");
    }
  }
}

constexpr std::size_t kEvalChunk = 32;

}  // namespace

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError(fmt::format("embedding width {} must be a positive multiple of heads {}", d, heads));
  }
  if (layers == 0) throw ConfigError("encoder needs at least one layer");
  if (n_max < 2) throw ConfigError("n_max must be at least 2");
  if (ff_hidden == 0) throw ConfigError("ff_hidden must be positive");
  if (!(logit_clip > 0.0)) throw ConfigError("logit_clip must be positive");
}

PolicyParams::PolicyParams(const ModelConfig& config, ProblemKind kind)
    : config_(config), kind_(kind) {
  config_.validate();
}

PolicyParams::PolicyParams(const ModelConfig& config, ProblemKind kind, std::uint64_t seed)
    : PolicyParams(config, kind) {
  build(seed);
}

void PolicyParams::build(std::uint64_t seed) {
  const Rng root(seed);
  const std::size_t d = config_.d, h = config_.heads, nmax = config_.n_max, ff = config_.ff_hidden;
  auto add_uniform = [&](std::string name, ad::Shape shape, std::size_t fan_in) {
    const std::size_t slot = tensors_.size();
    return tensors_.add(std::move(name),
                        uniform_tensor(shape, 1.0 / std::sqrt(static_cast<double>(fan_in)),
                                       root.split({slot})));
  };
  auto add_const = [&](std::string name, ad::Shape shape, double v) {
    return tensors_.add(std::move(name), ad::Tensor(shape, v));
  };

  const std::size_t f = feature_dim();
  decoder_.embed_w = add_uniform("encoder/embed/W", {f, d}, f);
  decoder_.embed_b = add_uniform("encoder/embed/b", {d}, f);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = fmt::format("encoder/layer{}/", l);
    LayerSlots s{};
    s.w_q = add_uniform(p + "W_Q", {d, d}, d);
    s.w_k = add_uniform(p + "W_K", {d, d}, d);
    s.w_v = add_uniform(p + "W_V", {d, d}, d);
    s.w_o = add_uniform(p + "W_O", {d, d}, d);
    s.b_o = add_uniform(p + "b_O", {d}, d);
    s.bias = add_const(p + "B", {nmax, h * nmax}, 0.0);
    s.ln1_gain = add_const(p + "ln1/gain", {d}, 1.0);
    s.ln1_bias = add_const(p + "ln1/bias", {d}, 0.0);
    s.ff1_w = add_uniform(p + "ff1/W", {d, ff}, d);
    s.ff1_b = add_uniform(p + "ff1/b", {ff}, d);
    s.ff2_w = add_uniform(p + "ff2/W", {ff, d}, ff);
    s.ff2_b = add_uniform(p + "ff2/b", {d}, ff);
    s.ln2_gain = add_const(p + "ln2/gain", {d}, 1.0);
    s.ln2_bias = add_const(p + "ln2/bias", {d}, 0.0);
    layers_.push_back(s);
  }
  decoder_.q_graph = add_uniform("decoder/W_q_graph", {d, d}, d);
  decoder_.q_first = kind_ == ProblemKind::TSP ? add_uniform("decoder/W_q_first", {d, d}, d) : kNone;
  decoder_.q_current = add_uniform("decoder/W_q_current", {d, d}, d);
  decoder_.q_capacity =
      kind_ == ProblemKind::CVRP ? add_uniform("decoder/w_q_capacity", {1, d}, 1) : kNone;
  decoder_.w_k = add_uniform("decoder/W_K", {d, d}, d);
  decoder_.w_v = add_uniform("decoder/W_V", {d, d}, d);
  decoder_.w_o = add_uniform("decoder/W_O", {d, d}, d);
  decoder_.b_o = add_uniform("decoder/b_O", {d}, d);
}

void PolicyParams::write(Checkpoint& ck) const {
  ck.put("config/d", ad::Tensor::scalar(static_cast<double>(config_.d)));
  ck.put("config/heads", ad::Tensor::scalar(static_cast<double>(config_.heads)));
  ck.put("config/layers", ad::Tensor::scalar(static_cast<double>(config_.layers)));
  ck.put("config/n_max", ad::Tensor::scalar(static_cast<double>(config_.n_max)));
  ck.put("config/ff_hidden", ad::Tensor::scalar(static_cast<double>(config_.ff_hidden)));
  ck.put("config/logit_clip", ad::Tensor::scalar(config_.logit_clip));
  ck.put("config/kind", ad::Tensor::scalar(kind_ == ProblemKind::TSP ? 0.0 : 1.0));
  for (std::size_t i = 0; i < tensors_.size(); ++i) ck.put(tensors_.name(i), tensors_[i]);
}

PolicyParams PolicyParams::read(const Checkpoint& ck) {
  auto count = [&](const char* name) {
    return static_cast<std::size_t>(ck.get(name).item());
  };
  ModelConfig cfg;
  cfg.d = count("config/d");
  cfg.heads = count("config/heads");
  cfg.layers = count("config/layers");
  cfg.n_max = count("config/n_max");
  cfg.ff_hidden = count("config/ff_hidden");
  cfg.logit_clip = ck.get("config/logit_clip").item();
  const ProblemKind kind = ck.get("config/kind").item() == 0.0 ? ProblemKind::TSP : ProblemKind::CVRP;
  PolicyParams p(cfg, kind);
  p.build(0);
  for (std::size_t i = 0; i < p.tensors_.size(); ++i) {
    const ad::Tensor& t = ck.get(p.tensors_.name(i));
    if (!(t.shape() == p.tensors_[i].shape())) {
      throw CheckpointError(fmt::format("tensor '{}' has shape {}, expected {}", p.tensors_.name(i),
                                        t.shape().str(), p.tensors_[i].shape().str()));
    }
    p.tensors_[i] = t;
  }
  return p;
}

BoundParams bind(ad::Tape& tape, const PolicyParams& params, bool trainable) {
  BoundParams b;
  b.params = &params;
  const ParameterSet& ps = params.tensors();
  b.vars.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    b.vars.push_back(trainable ? tape.variable(ps[i]) : tape.constant(ps[i]));
  }
  return b;
}

std::vector<ad::Tensor> collect_grads(const ad::Tape& tape, const BoundParams& bound) {
  std::vector<ad::Tensor> grads;
  grads.reserve(bound.vars.size());
  for (const ad::Var& v : bound.vars) grads.push_back(tape.grad(v));
  return grads;
}

ad::Tensor node_features(std::span<const Instance> batch) {
  require_uniform_batch(batch);
  const bool cvrp = batch[0].kind == ProblemKind::CVRP;
  const std::size_t n = batch[0].num_nodes(), f = cvrp ? 4 : 2;
  ad::Tensor x(ad::Shape{batch.size(), n, f});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Instance& inst = batch[b];
    for (std::size_t i = 0; i < n; ++i) {
      x.at(b, i, 0) = inst.coords[i].x;
      x.at(b, i, 1) = inst.coords[i].y;
      if (cvrp) {
        x.at(b, i, 2) = static_cast<double>(inst.demands[i]) / static_cast<double>(inst.capacity);
        x.at(b, i, 3) = i == 0 ? 1.0 : 0.0;
      }
    }
  }
  return x;
}

ad::Var encode_batch(ad::Tape& tape, const BoundParams& bound, std::span<const Instance> batch,
                     EncoderTrace* trace) {
  require_uniform_batch(batch);
  const PolicyParams& p = *bound.params;
  const ModelConfig& cfg = p.config();
  if (batch[0].kind != p.kind()) throw ContractError("policy and instance problem kinds differ");
  const std::size_t n = batch[0].num_nodes();
  if (n > cfg.n_max) {
    throw SizeError(fmt::format("instance has {} nodes but the model supports at most {}", n, cfg.n_max));
  }
  const std::size_t h = cfg.heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  const auto& dec = p.decoder();

  ad::Var x = tape.constant(node_features(batch));
  ad::Var hid = ad::add_bias(ad::linear(x, bound[dec.embed_w]), bound[dec.embed_b]);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& s = p.layer(l);
    ad::Var q = ad::split_heads(ad::linear(hid, bound[s.w_q]), h);
    ad::Var k = ad::split_heads(ad::linear(hid, bound[s.w_k]), h);
    ad::Var v = ad::split_heads(ad::linear(hid, bound[s.w_v]), h);
    ad::Var scores = ad::scale(ad::add_head_bias(ad::matmul_nt(q, k), bound[s.bias], h), score_scale);
    ad::Var attn = ad::masked_softmax(scores);
    if (trace) {
      const ad::Tensor& a = attn.value();
      std::vector<double> first(a.data(), a.data() + h * n * n);
      trace->attention.emplace_back(ad::Shape{h, n, n}, std::move(first));
    }
    ad::Var mixed = ad::merge_heads(ad::matmul(attn, v), h);
    ad::Var out = ad::add_bias(ad::linear(mixed, bound[s.w_o]), bound[s.b_o]);
    ad::Var h1 = ad::layer_norm(ad::add(hid, out), bound[s.ln1_gain], bound[s.ln1_bias]);
    ad::Var ff = ad::relu(ad::add_bias(ad::linear(h1, bound[s.ff1_w]), bound[s.ff1_b]));
    ff = ad::add_bias(ad::linear(ff, bound[s.ff2_w]), bound[s.ff2_b]);
    hid = ad::layer_norm(ad::add(h1, ff), bound[s.ln2_gain], bound[s.ln2_bias]);
  }
  return hid;
}

ad::Tensor encode(const Instance& inst, const PolicyParams& params) {
  ad::Tape tape;
  BoundParams bound = bind(tape, params, false);
  ad::Var h = encode_batch(tape, bound, std::span<const Instance>(&inst, 1));
  return h.value().reshaped(ad::Shape{inst.num_nodes(), params.config().d});
}

DecoderCache prepare_decoder(ad::Tape& tape, const BoundParams& bound, ad::Var embeddings) {
  (void)tape;
  const PolicyParams& p = *bound.params;
  const auto& dec = p.decoder();
  const std::size_t h = p.config().heads;
  DecoderCache c;
  c.embeddings = embeddings;
  c.batch = embeddings.shape()[0];
  c.nodes = embeddings.shape()[1];
  c.glimpse_k = ad::split_heads(ad::linear(embeddings, bound[dec.w_k]), h);
  c.glimpse_v = ad::split_heads(ad::linear(embeddings, bound[dec.w_v]), h);
  c.q_graph = ad::linear(ad::mean_rows(embeddings), bound[dec.q_graph]);
  if (dec.q_first != PolicyParams::kNone) c.q_first = ad::linear(embeddings, bound[dec.q_first]);
  c.q_current = ad::linear(embeddings, bound[dec.q_current]);
  return c;
}

ad::Var decoder_probs(ad::Tape& tape, const BoundParams& bound, const DecoderCache& cache,
                      std::size_t rollouts, std::span<const std::uint32_t> first,
                      std::span<const std::uint32_t> current, std::span<const double> remaining,
                      const ad::Mask& mask) {
  const PolicyParams& p = *bound.params;
  const ModelConfig& cfg = p.config();
  const auto& dec = p.decoder();
  const std::size_t b = cache.batch, n = cache.nodes, h = cfg.heads, r = rollouts;
  if (current.size() != b * r || mask.size() != b * r * n) {
    throw DimensionError(fmt::format("decoder_probs: {} states / {} mask flags for batch {}x{}x{}",
                                     current.size(), mask.size(), b, r, n));
  }

  ad::Var q = ad::gather_rows(cache.q_current, current);
  if (dec.q_first != PolicyParams::kNone) q = ad::add(q, ad::gather_rows(cache.q_first, first));
  q = ad::add_rows(q, cache.q_graph);
  if (dec.q_capacity != PolicyParams::kNone) {
    ad::Tensor cap(ad::Shape{b, r, 1}, std::vector<double>(remaining.begin(), remaining.end()));
    q = ad::add(q, ad::linear(tape.constant(std::move(cap)), bound[dec.q_capacity]));
  }

  ad::Mask head_mask(b * h * r * n);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t hi = 0; hi < h; ++hi) {
      std::copy_n(mask.begin() + static_cast<std::ptrdiff_t>(bi * r * n), r * n,
                  head_mask.begin() + static_cast<std::ptrdiff_t>((bi * h + hi) * r * n));
    }
  }
  const double glimpse_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  ad::Var scores = ad::scale(ad::matmul_nt(ad::split_heads(q, h), cache.glimpse_k), glimpse_scale);
  ad::Var attn = ad::masked_softmax(scores, head_mask);
  ad::Var glimpse = ad::merge_heads(ad::matmul(attn, cache.glimpse_v), h);
  glimpse = ad::add_bias(ad::linear(glimpse, bound[dec.w_o]), bound[dec.b_o]);

  const double logit_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  ad::Var logits = ad::scale(ad::matmul_nt(glimpse, cache.embeddings), logit_scale);
  logits = ad::scale(ad::tanh(logits), cfg.logit_clip);
  return ad::masked_softmax(logits, mask);
}

std::vector<double> decode_step(const PolicyParams& params, const ad::Tensor& embeddings,
                                const RolloutState& state, const Instance& inst) {
  if (state.partial.empty()) {
    throw ContractError("decode_step needs a started rollout (the first move is forced)");
  }
  const std::size_t n = inst.num_nodes();
  ad::Tape tape;
  BoundParams bound = bind(tape, params, false);
  ad::Var h = tape.constant(embeddings.reshaped(ad::Shape{1, n, params.config().d}));
  DecoderCache cache = prepare_decoder(tape, bound, h);
  const std::uint32_t first = state.start;
  const std::uint32_t cur = state.current;
  const double rem = inst.kind == ProblemKind::CVRP
                         ? static_cast<double>(state.remaining) / static_cast<double>(inst.capacity)
                         : 0.0;
  ad::Mask mask = valid_actions(state, inst);
  ad::Var probs = decoder_probs(tape, bound, cache, 1, std::span(&first, 1), std::span(&cur, 1),
                                std::span(&rem, 1), mask);
  return probs.value().vector();
}

BatchRollout rollout_batch(ad::Tape& tape, const BoundParams& bound, std::span<const Instance> batch,
                           const RolloutOptions& options) {
  require_uniform_batch(batch);
  const Instance& proto = batch[0];
  const std::size_t bsz = batch.size(), nodes = proto.num_nodes(), starts = options.starts;
  if (starts == 0 || starts > proto.size()) {
    throw ContractError(fmt::format("{} start nodes requested for problem size {}", starts, proto.size()));
  }
  const std::size_t total = bsz * starts;
  if (options.forced && options.forced->size() != total) {
    throw ContractError(fmt::format("{} forced sequences for {} rollouts", options.forced->size(), total));
  }
  const bool cvrp = proto.kind == ProblemKind::CVRP;

  ad::Var emb = encode_batch(tape, bound, batch);
  DecoderCache cache = prepare_decoder(tape, bound, emb);

  std::vector<RolloutState> states;
  states.reserve(total);
  std::vector<Rng> rngs;
  const Rng root(options.seed);
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t j = 0; j < starts; ++j) {
      const std::size_t k = b * starts + j;
      std::uint32_t start = static_cast<std::uint32_t>(cvrp ? j + 1 : j);
      if (options.forced) {
        if ((*options.forced)[k].empty()) throw ContractError("empty forced sequence");
        start = (*options.forced)[k][0];
      }
      states.push_back(start_state(batch[b], start));
      rngs.push_back(root.split({options.batch_offset + b, j}));
    }
  }

  BatchRollout out;
  out.batch = bsz;
  out.starts = starts;
  out.step_log_probs.assign(total, {});
  out.log_prob = tape.constant(ad::Tensor(ad::Shape{bsz, starts}, 0.0));

  std::vector<std::uint32_t> first(total), current(total), actions(total);
  std::vector<double> remaining(total, 0.0);
  ad::Mask mask(total * nodes);
  for (std::size_t t = 1;; ++t) {
    bool pending = false;
    for (std::size_t k = 0; k < total; ++k) pending = pending || !states[k].complete(batch[k / starts]);
    if (!pending) break;

    for (std::size_t k = 0; k < total; ++k) {
      const Instance& inst = batch[k / starts];
      const RolloutState& s = states[k];
      first[k] = s.start;
      current[k] = s.current;
      if (cvrp) remaining[k] = static_cast<double>(s.remaining) / static_cast<double>(inst.capacity);
      const auto m = valid_actions(s, inst);
      std::copy(m.begin(), m.end(), mask.begin() + static_cast<std::ptrdiff_t>(k * nodes));
    }
    ad::Var probs = decoder_probs(tape, bound, cache, starts, first, current, remaining, mask);
    const double* pv = probs.value().data();

    for (std::size_t k = 0; k < total; ++k) {
      const double* row = pv + k * nodes;
      const std::uint8_t* allowed = mask.data() + k * nodes;
      std::uint32_t a = 0;
      if (options.forced) {
        const auto& seq = (*options.forced)[k];
        a = t < seq.size() ? seq[t] : 0;
        if (a >= nodes || !allowed[a]) {
          throw ContractError(fmt::format("forced action {} at step {} is not valid", a, t));
        }
      } else if (options.mode == DecodeMode::Greedy) {
        double best = -1.0;
        for (std::size_t c = 0; c < nodes; ++c) {
          if (allowed[c] && row[c] > best) {
            best = row[c];
            a = static_cast<std::uint32_t>(c);
          }
        }
      } else {
        const double u = rngs[k].uniform();
        double acc = 0.0;
        bool chosen = false;
        std::uint32_t last = 0;
        for (std::size_t c = 0; c < nodes; ++c) {
          if (!allowed[c] || row[c] <= 0.0) continue;
          last = static_cast<std::uint32_t>(c);
          acc += row[c];
          if (u < acc) {
            a = last;
            chosen = true;
            break;
          }
        }
        if (!chosen) a = last;
      }
      actions[k] = a;
    }

    ad::Var lp = ad::log(ad::pick(probs, actions));
    out.log_prob = ad::add(out.log_prob, lp);
    for (std::size_t k = 0; k < total; ++k) {
      const Instance& inst = batch[k / starts];
      if (!states[k].complete(inst)) {
        out.step_log_probs[k].push_back(lp.value()[k]);
        advance(states[k], actions[k], inst);
      }
    }
  }

  out.tours.reserve(total);
  for (std::size_t k = 0; k < total; ++k) {
    out.tours.push_back(make_tour(std::move(states[k].partial), batch[k / starts]));
  }
  return out;
}

MultiStartResult rollout_multistart(const Instance& inst, const PolicyParams& params,
                                    std::size_t starts, DecodeMode mode, std::uint64_t seed) {
  ad::Tape tape;
  BoundParams bound = bind(tape, params, false);
  RolloutOptions opt;
  opt.starts = starts;
  opt.mode = mode;
  opt.seed = seed;
  BatchRollout r = rollout_batch(tape, bound, std::span<const Instance>(&inst, 1), opt);
  MultiStartResult out;
  out.tours = std::move(r.tours);
  out.log_probs = r.log_prob.value().vector();
  out.step_log_probs = std::move(r.step_log_probs);
  return out;
}

std::vector<Tour> greedy_solve(std::span<const Instance> batch, const PolicyParams& params,
                               std::size_t starts) {
  std::vector<Tour> best;
  best.reserve(batch.size());
  for (std::size_t lo = 0; lo < batch.size(); lo += kEvalChunk) {
    const auto chunk = batch.subspan(lo, std::min(kEvalChunk, batch.size() - lo));
    ad::Tape tape;
    BoundParams bound = bind(tape, params, false);
    RolloutOptions opt;
    opt.starts = starts;
    opt.mode = DecodeMode::Greedy;
    BatchRollout r = rollout_batch(tape, bound, chunk, opt);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < starts; ++j) {
        if (r.tour(b, j).cost < r.tour(b, arg).cost) arg = j;
      }
      best.push_back(r.tour(b, arg));
    }
  }
  return best;
}

ImportanceTracker::ImportanceTracker(const PolicyParams& params) {
  for (std::size_t l = 0; l < params.config().layers; ++l) {
    const auto& s = params.layer(l);
    key_slots_.push_back(s.w_k);
    bias_slots_.push_back(s.bias);
    key_sum_.emplace_back(params.tensors()[s.w_k].shape(), 0.0);
    bias_sum_.emplace_back(params.tensors()[s.bias].shape(), 0.0);
  }
}

void ImportanceTracker::add(const std::vector<ad::Tensor>& grads) {
  auto acc = [](ad::Tensor& dst, const ad::Tensor& g) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += std::abs(g[i]);
  };
  for (std::size_t l = 0; l < key_slots_.size(); ++l) {
    acc(key_sum_[l], grads[key_slots_[l]]);
    acc(bias_sum_[l], grads[bias_slots_[l]]);
  }
  ++count_;
}

void ImportanceTracker::reset() {
  for (auto& t : key_sum_) t.fill(0.0);
  for (auto& t : bias_sum_) t.fill(0.0);
  count_ = 0;
}

namespace {

std::vector<ad::Tensor> averaged(const std::vector<ad::Tensor>& sums, std::size_t count) {
  std::vector<ad::Tensor> out = sums;
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& t : out) {
    for (double& v : t.values()) v *= inv;
  }
  return out;
}

}  // namespace

std::vector<ad::Tensor> ImportanceTracker::key_importance() const { return averaged(key_sum_, count_); }
std::vector<ad::Tensor> ImportanceTracker::bias_importance() const { return averaged(bias_sum_, count_); }

ContextSnapshot snapshot_context(const PolicyParams& params, const ImportanceTracker& importance) {
  ContextSnapshot s;
  for (std::size_t l = 0; l < params.config().layers; ++l) {
    s.keys.push_back(params.tensors()[params.layer(l).w_k]);
    s.biases.push_back(params.tensors()[params.layer(l).bias]);
  }
  s.key_importance = importance.key_importance();
  s.bias_importance = importance.bias_importance();
  return s;
}

void ContextSnapshot::write(Checkpoint& ck, const std::string& prefix) const {
  for (std::size_t l = 0; l < keys.size(); ++l) {
    const std::string p = fmt::format("{}layer{}/", prefix, l);
    ck.put(p + "W_K", keys[l]);
    ck.put(p + "B", biases[l]);
    ck.put(p + "W_K_importance", key_importance[l]);
    ck.put(p + "B_importance", bias_importance[l]);
  }
}

ContextSnapshot ContextSnapshot::read(const Checkpoint& ck, const std::string& prefix) {
  ContextSnapshot s;
  for (std::size_t l = 0;; ++l) {
    const std::string p = fmt::format("{}layer{}/", prefix, l);
    if (!ck.contains(p + "W_K")) break;
    s.keys.push_back(ck.get(p + "W_K"));
    s.biases.push_back(ck.get(p + "B"));
    s.key_importance.push_back(ck.get(p + "W_K_importance"));
    s.bias_importance.push_back(ck.get(p + "B_importance"));
  }
  return s;
}

}  // namespace llvrp
