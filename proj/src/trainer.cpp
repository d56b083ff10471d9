#include "llvrp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "llvrp/error.hpp"
#include "llvrp/rng.hpp"

namespace llvrp {

namespace {

// Stream tags for the trainer's random draws.
enum : std::uint64_t { kInitTag = 1, kTrainTag = 2, kRolloutTag = 3, kDcsTag = 4, kValidationTag = 5 };

double neumaier_sum(std::span<const double> xs) {
  double sum = 0.0, comp = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

std::size_t nodes_for(ProblemKind kind, std::size_t n) { return kind == ProblemKind::CVRP ? n + 1 : n; }

}  // namespace

double shared_baseline(std::span<const double> rewards) {
  if (rewards.empty()) throw ContractError("shared baseline needs at least one reward");
  return neumaier_sum(rewards) / static_cast<double>(rewards.size());
}

std::vector<double> advantages(std::span<const double> rewards) {
  const double b = shared_baseline(rewards);
  std::vector<double> adv(rewards.size());
  for (std::size_t j = 0; j < rewards.size(); ++j) adv[j] = rewards[j] - b;
  return adv;
}

ad::Var reinforce_loss(const BatchRollout& rollout, std::size_t batch_total) {
  const std::size_t bsz = rollout.batch, n = rollout.starts;
  const std::size_t denom_b = batch_total == 0 ? bsz : batch_total;
  const ad::Tensor& lp = rollout.log_prob.value();
  if (!lp.all_finite()) {
    for (std::size_t k = 0; k < lp.size(); ++k) {
      if (!std::isfinite(lp[k])) {
        throw NumericError(fmt::format("non-finite log-prob {} for rollout {} (tour {})", lp[k], k,
                                       fmt::join(rollout.tours[k].nodes, " ")));
      }
    }
  }
  std::vector<double> weights(bsz * n);
  std::vector<double> rewards(n);
  const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(denom_b));
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t j = 0; j < n; ++j) rewards[j] = -rollout.tour(b, j).cost;
    const auto adv = advantages(rewards);
    for (std::size_t j = 0; j < n; ++j) weights[b * n + j] = -adv[j] * scale;
  }
  return ad::dot_const(rollout.log_prob, weights);
}

ad::Var reg_loss(ad::Tape& tape, const BoundParams& bound, const ContextSnapshot& snapshot) {
  const PolicyParams& p = *bound.params;
  if (snapshot.keys.empty()) return tape.constant(ad::Tensor::scalar(0.0));
  if (snapshot.keys.size() != p.config().layers || snapshot.biases.size() != p.config().layers ||
      snapshot.key_importance.size() != p.config().layers || snapshot.bias_importance.size() != p.config().layers) {
    throw CheckpointError(fmt::format("snapshot has {} layers, model has {}", snapshot.keys.size(),
                                      p.config().layers));
  }
  ad::Var total;
  for (std::size_t l = 0; l < p.config().layers; ++l) {
    const auto& s = p.layer(l);
    const ad::Var wk = bound[s.w_k];
    const ad::Var bias = bound[s.bias];
    auto check = [&](const ad::Tensor& t, const ad::Var& live, const char* what) {
      if (!(t.shape() == live.shape())) {
        throw CheckpointError(fmt::format("snapshot {} of layer {} has shape {}, live shape {}", what, l,
                                          t.shape().str(), live.shape().str()));
      }
    };
    check(snapshot.keys[l], wk, "W_K");
    check(snapshot.key_importance[l], wk, "W_K importance");
    check(snapshot.biases[l], bias, "B");
    check(snapshot.bias_importance[l], bias, "B importance");
    ad::Var term = ad::add(ad::weighted_l1(wk, snapshot.keys[l], snapshot.key_importance[l]),
                           ad::weighted_l1(bias, snapshot.biases[l], snapshot.bias_importance[l]));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

ad::Var total_loss(ad::Var l, ad::Var lr, double alpha) { return ad::add(l, ad::scale(lr, alpha)); }

std::vector<std::size_t> replay_plan(std::size_t context, std::size_t per_epoch, double fraction) {
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError(fmt::format("replay fraction {} outside [0,1]", fraction));
  const auto each = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(per_epoch)));
  return std::vector<std::size_t>(context, each);
}

std::string_view to_string(ReplayMode mode) {
  switch (mode) {
    case ReplayMode::Off: return "off";
    case ReplayMode::Fixed: return "fixed";
    case ReplayMode::Dcs: return "dcs";
  }
  return "?";
}

ReplayMode parse_replay_mode(std::string_view s) {
  if (s == "off") return ReplayMode::Off;
  if (s == "fixed") return ReplayMode::Fixed;
  if (s == "dcs") return ReplayMode::Dcs;
  throw ConfigError(fmt::format("unknown replay mode '{}' (expected fixed, dcs or off)", s));
}

std::size_t TrainConfig::starts_for(std::size_t n) const {
  return starts == 0 ? std::min<std::size_t>(n, 50) : std::min(starts, n);
}

void TrainConfig::validate() const {
  model.validate();
  if (contexts.empty()) throw ConfigError("at least one context is required");
  if (epochs == 0 || batches == 0 || batch_size == 0) throw ConfigError("epochs, batches and batch_size must be positive");
  if (!(alpha >= 0.0)) throw ConfigError(fmt::format("alpha must be non-negative, got {}", alpha));
  if (!(replay_fraction >= 0.0 && replay_fraction <= 1.0)) {
    throw ConfigError(fmt::format("replay_fraction {} outside [0,1]", replay_fraction));
  }
  if (!(eta > 0.0)) throw ConfigError(fmt::format("eta must be positive, got {}", eta));
  if (validation_size == 0) throw ConfigError("validation_size must be positive");
  for (const ContextSpec& c : contexts) {
    const std::size_t min_n = kind == ProblemKind::TSP ? 2 : 1;
    if (c.n < min_n) throw ConfigError(fmt::format("context size {} too small", c.n));
    if (nodes_for(kind, c.n) > model.n_max) {
      throw ConfigError(fmt::format("context size {} exceeds model n_max {}", c.n, model.n_max));
    }
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json ctx = nlohmann::ordered_json::array();
  for (const ContextSpec& c : contexts) ctx.push_back({{"metric", to_string(c.metric)}, {"n", c.n}});
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind);
  j["contexts"] = ctx;
  j["epochs"] = epochs;
  j["batches"] = batches;
  j["batch_size"] = batch_size;
  j["starts"] = starts;
  j["alpha"] = alpha;
  j["replay"] = to_string(replay);
  j["replay_fraction"] = replay_fraction;
  j["eta"] = eta;
  j["adam"] = {{"lr", adam.lr}, {"weight_decay", adam.weight_decay}, {"beta1", adam.beta1},
               {"beta2", adam.beta2}, {"eps", adam.eps}};
  j["model"] = {{"d", model.d}, {"heads", model.heads}, {"layers", model.layers}, {"n_max", model.n_max},
                {"ff_hidden", model.ff_hidden}, {"logit_clip", model.logit_clip}};
  j["seed"] = seed;
  j["validation_size"] = validation_size;
  j["validation_seed"] = validation_seed;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it) {
      static const char* known[] = {"kind", "contexts", "epochs", "batches", "batch_size", "starts", "alpha",
                                    "replay", "replay_fraction", "eta", "adam", "model", "seed",
                                    "validation_size", "validation_seed"};
      if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
          std::end(known)) {
        throw ConfigError(fmt::format("unknown config field '{}'", it.key()));
      }
    }
    if (j.contains("kind")) c.kind = parse_problem_kind(j["kind"].get<std::string>());
    for (const auto& e : j.at("contexts")) {
      ContextSpec s;
      s.metric = parse_metric(e.value("metric", std::string("euclidean")));
      s.n = e.value("n", std::size_t{10});
      c.contexts.push_back(s);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batches = j.value("batches", c.batches);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.starts = j.value("starts", c.starts);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("replay")) c.replay = parse_replay_mode(j["replay"].get<std::string>());
    c.replay_fraction = j.value("replay_fraction", c.replay_fraction);
    c.eta = j.value("eta", c.eta);
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      c.adam.lr = a.value("lr", c.adam.lr);
      c.adam.weight_decay = a.value("weight_decay", c.adam.weight_decay);
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.d = m.value("d", c.model.d);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.layers = m.value("layers", c.model.layers);
      c.model.n_max = m.value("n_max", c.model.n_max);
      c.model.ff_hidden = m.value("ff_hidden", c.model.ff_hidden);
      c.model.logit_clip = m.value("logit_clip", c.model.logit_clip);
    }
    c.seed = j.value("seed", c.seed);
    c.validation_size = j.value("validation_size", c.validation_size);
    c.validation_seed = j.value("validation_seed", c.validation_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }
  c.validate();
  return c;
}

std::vector<Instance> validation_set(const TrainConfig& config, std::size_t context) {
  const ContextSpec& spec = config.contexts.at(context);
  const Rng root = Rng(config.validation_seed).split({kValidationTag, spec.n});
  std::vector<Instance> out;
  out.reserve(config.validation_size);
  for (std::size_t k = 0; k < config.validation_size; ++k) {
    out.push_back(generate_instance(config.kind, spec.n, spec.metric, root.split({k}).key()));
  }
  return out;
}

std::size_t thread_lanes() {
  const char* env = std::getenv("LLVRP_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(fmt::format("LLVRP_THREADS must be a positive integer, got '{}'", env));
  return static_cast<std::size_t>(v);
}

LifelongTrainer::LifelongTrainer(TrainConfig config)
    : config_((config.validate(), std::move(config))),
      params_(config_.model, config_.kind, Rng(config_.seed).split({kInitTag}).key()),
      adam_(config_.adam),
      importance_(params_),
      lanes_(thread_lanes()) {
  for (std::size_t c = 0; c < config_.contexts.size(); ++c) {
    validation_.push_back(validation_set(config_, c));
    std::vector<double> costs;
    costs.reserve(validation_.back().size());
    for (const Instance& inst : validation_.back()) costs.push_back(oracle_.solve(inst).cost);
    oracle_costs_.push_back(std::move(costs));
  }
}

void LifelongTrainer::reconfigure(TrainConfig config) {
  config.validate();
  auto same_contexts = config.contexts.size() == config_.contexts.size() &&
                       std::equal(config.contexts.begin(), config.contexts.end(), config_.contexts.begin(),
                                  [](const ContextSpec& a, const ContextSpec& b) {
                                    return a.metric == b.metric && a.n == b.n;
                                  });
  const auto& m0 = config_.model;
  const auto& m1 = config.model;
  const bool same_model = m0.d == m1.d && m0.heads == m1.heads && m0.layers == m1.layers &&
                          m0.n_max == m1.n_max && m0.ff_hidden == m1.ff_hidden &&
                          m0.logit_clip == m1.logit_clip && config.kind == config_.kind;
  if (!same_contexts || !same_model || config.validation_size != config_.validation_size ||
      config.validation_seed != config_.validation_seed) {
    throw ConfigError("reconfigure may not change contexts, model shape or validation sets");
  }
  config_ = std::move(config);
}

std::vector<std::size_t> LifelongTrainer::plan_counts(std::size_t context, std::size_t epoch,
                                                      std::vector<double>* probs) const {
  const std::size_t per_epoch = config_.batches * config_.batch_size;
  std::vector<std::size_t> counts(context + 1, 0);
  counts[context] = per_epoch;
  if (config_.replay == ReplayMode::Off || context == 0) return counts;
  const auto fixed = replay_plan(context, per_epoch, config_.replay_fraction);
  if (config_.replay == ReplayMode::Fixed) {
    std::copy(fixed.begin(), fixed.end(), counts.begin());
    return counts;
  }
  MetricStats observed;
  for (std::size_t k = 0; k <= context && k < stats_.size(); ++k) {
    observed.g.push_back(stats_.g[k]);
    observed.g_prev.push_back(stats_.g_prev[k]);
  }
  if (observed.size() != context + 1) {
    throw ContractError(fmt::format("scheduler has {} observed contexts, need {}", observed.size(), context + 1));
  }
  const auto p = metric_probs(observed, config_.eta);
  std::size_t budget = 0;
  for (std::size_t c : fixed) budget += c;
  const auto drawn = sample_plan(p, budget, Rng(config_.seed).split({kDcsTag, context, epoch}).key());
  for (std::size_t k = 0; k <= context; ++k) counts[k] += drawn[k];
  if (probs) *probs = p;
  return counts;
}

std::vector<std::pair<std::size_t, std::size_t>> LifelongTrainer::epoch_batches(std::size_t context,
                                                                                 std::size_t epoch) const {
  const auto counts = plan_counts(context, epoch);
  struct Item {
    double key;
    std::size_t ctx;
    std::size_t size;
  };
  std::vector<Item> items;
  const std::size_t bs = config_.batch_size;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const std::size_t m = (counts[k] + bs - 1) / bs;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t size = std::min(bs, counts[k] - j * bs);
      items.push_back({(static_cast<double>(j) + 0.5) / static_cast<double>(m), k, size});
    }
  }
  // Spread each context's batches evenly over the epoch.
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return a.key != b.key ? a.key < b.key : a.ctx < b.ctx;
  });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(items.size());
  for (const Item& it : items) out.emplace_back(it.ctx, it.size);
  return out;
}

LifelongTrainer::StepResult LifelongTrainer::train_step(std::span<const Instance> batch, std::size_t starts,
                                                        std::uint64_t seed) {
  const std::size_t lanes = std::min(lanes_, batch.size());
  const ContextSnapshot* snap = snapshots_.empty() ? nullptr : &snapshots_.back();
  struct LaneOut {
    double loss_l = 0.0;
    double loss_lr = 0.0;
    std::vector<ad::Tensor> grads;
    std::exception_ptr error;
  };
  std::vector<LaneOut> out(lanes);
  auto run_lane = [&](std::size_t lane) {
    try {
      const std::size_t lo = batch.size() * lane / lanes;
      const std::size_t hi = batch.size() * (lane + 1) / lanes;
      ad::Tape tape;
      BoundParams bound = bind(tape, params_, true);
      RolloutOptions opt;
      opt.starts = starts;
      opt.mode = DecodeMode::Sample;
      opt.seed = seed;
      opt.batch_offset = lo;
      BatchRollout r = rollout_batch(tape, bound, batch.subspan(lo, hi - lo), opt);
      ad::Var l = reinforce_loss(r, batch.size());
      ad::Var j = l;
      if (lane == 0 && snap) {
        ad::Var lr = reg_loss(tape, bound, *snap);
        out[lane].loss_lr = lr.item();
        j = total_loss(l, lr, config_.alpha);
      }
      out[lane].loss_l = l.item();
      tape.backward(j);
      out[lane].grads = collect_grads(tape, bound);
    } catch (...) {
      out[lane].error = std::current_exception();
    }
  };
  std::vector<std::thread> workers;
  for (std::size_t lane = 1; lane < lanes; ++lane) workers.emplace_back(run_lane, lane);
  run_lane(0);
  for (auto& w : workers) w.join();
  for (const LaneOut& o : out) {
    if (o.error) std::rethrow_exception(o.error);
  }
  StepResult res;
  res.grads = std::move(out[0].grads);
  res.loss_l = out[0].loss_l;
  res.loss_lr = out[0].loss_lr;
  for (std::size_t lane = 1; lane < lanes; ++lane) {
    res.loss_l += out[lane].loss_l;
    for (std::size_t i = 0; i < res.grads.size(); ++i) {
      for (std::size_t k = 0; k < res.grads[i].size(); ++k) res.grads[i][k] += out[lane].grads[i][k];
    }
  }
  if (!std::isfinite(res.loss_l) || !std::isfinite(res.loss_lr)) {
    throw NumericError(fmt::format("non-finite loss (L={}, L_r={}) on a batch of {} instances", res.loss_l,
                                   res.loss_lr, batch.size()));
  }
  return res;
}

EpochStats LifelongTrainer::train_epoch(std::size_t context, std::size_t epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool final_epoch = epoch + 1 == config_.epochs;
  if (final_epoch) importance_.reset();

  std::vector<double> probs;
  const auto counts = plan_counts(context, epoch, &probs);
  if (config_.replay == ReplayMode::Dcs && context > 0) {
    for (std::size_t k = 0; k <= context; ++k) {
      trace_.push_back({history_.size(), k, std::string(to_string(config_.contexts[k].metric)), stats_.g[k],
                        stats_.g_prev[k], probs[k], counts[k] - (k == context ? config_.batches * config_.batch_size : 0)});
    }
  }
  const auto plan = epoch_batches(context, epoch);

  EpochStats st;
  st.epoch = epoch;
  st.context = context;
  st.batch_counts.assign(config_.contexts.size(), 0);
  const Rng root = Rng(config_.seed).split({kTrainTag, context, epoch});
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto [k, size] = plan[i];
    const ContextSpec& spec = config_.contexts[k];
    std::vector<Instance> batch;
    batch.reserve(size);
    const Rng br = root.split({i});
    for (std::size_t t = 0; t < size; ++t) {
      batch.push_back(generate_instance(config_.kind, spec.n, spec.metric, br.split({t}).key()));
    }
    const auto seed = Rng(config_.seed).split({kRolloutTag, context, epoch, i}).key();
    StepResult r = train_step(batch, config_.starts_for(spec.n), seed);
    adam_.step(params_.tensors(), r.grads);
    if (final_epoch) importance_.add(r.grads);
    if (i == 0) st.first_lr = r.loss_lr;
    st.loss_l += r.loss_l;
    st.loss_lr += r.loss_lr;
    ++st.batch_counts[k];
  }
  st.loss_l /= static_cast<double>(plan.size());
  st.loss_lr /= static_cast<double>(plan.size());

  st.val_gap = validate(&st.val_cost);
  for (std::size_t k = 0; k <= context; ++k) stats_.observe(k, st.val_gap[k]);
  st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  history_.push_back(st);
  if (on_epoch) on_epoch(st);
  return st;
}

std::vector<double> LifelongTrainer::validate(std::vector<double>* mean_costs) {
  std::vector<double> gaps;
  if (mean_costs) mean_costs->clear();
  for (std::size_t k = 0; k < validation_.size(); ++k) {
    const auto tours = greedy_solve(validation_[k], params_, config_.starts_for(config_.contexts[k].n));
    std::vector<double> costs;
    costs.reserve(tours.size());
    for (const Tour& t : tours) costs.push_back(t.cost);
    gaps.push_back(hardness(costs, oracle_costs_[k]));
    if (mean_costs) mean_costs->push_back(neumaier_sum(costs) / static_cast<double>(costs.size()));
  }
  return gaps;
}

void LifelongTrainer::train_next_context() {
  if (finished()) throw ContractError("all contexts are already trained");
  const std::size_t c = next_context_;
  if (config_.replay == ReplayMode::Dcs && stats_.size() == c) {
    const auto gaps = validate();
    for (std::size_t k = 0; k <= c; ++k) stats_.observe(k, gaps[k]);
  }
  for (std::size_t e = 0; e < config_.epochs; ++e) train_epoch(c, e);
  snapshots_.push_back(snapshot_context(params_, importance_));
  ++next_context_;
}

void LifelongTrainer::train_all() {
  while (!finished()) train_next_context();
}

Checkpoint LifelongTrainer::checkpoint() const {
  Checkpoint ck;
  params_.write(ck);
  const ParameterSet& ps = params_.tensors();
  ck.put("adam/steps", ad::Tensor::scalar(static_cast<double>(adam_.steps())));
  for (std::size_t i = 0; i < adam_.first_moments().size(); ++i) {
    ck.put("adam/m/" + ps.name(i), adam_.first_moments()[i]);
    ck.put("adam/v/" + ps.name(i), adam_.second_moments()[i]);
  }
  if (!snapshots_.empty()) snapshots_.back().write(ck);
  ck.put("trainer/contexts_done", ad::Tensor::scalar(static_cast<double>(next_context_)));
  return ck;
}

std::string history_csv_header(const TrainConfig& config) {
  std::string h = "epoch,context_id,metric,n,loss_L,loss_Lr,seconds";
  for (std::size_t k = 0; k < config.contexts.size(); ++k) {
    h += fmt::format(",val_gap_{}_{}_{}", k, to_string(config.contexts[k].metric), config.contexts[k].n);
  }
  return h;
}

std::string history_csv_row(const TrainConfig& config, const EpochStats& s) {
  std::string row = fmt::format("{},{},{},{},{:.17g},{:.17g},{:.3f}", s.epoch, s.context,
                                to_string(config.contexts[s.context].metric), config.contexts[s.context].n,
                                s.loss_l, s.loss_lr, s.seconds);
  for (double g : s.val_gap) row += fmt::format(",{:.17g}", g);
  return row;
}

}  // namespace llvrp
