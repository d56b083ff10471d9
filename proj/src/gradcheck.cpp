#include "llvrp/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "llvrp/policy.hpp"
#include "llvrp/rng.hpp"

namespace llvrp {

namespace {

double evaluate(const GradFn& f, const std::vector<ad::Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).item();
}

ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t(shape);
  for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Values bounded away from zero, for ops with a kink or a pole there.
ad::Tensor away_from_zero(ad::Shape shape, Rng& rng) {
  ad::Tensor t(shape);
  for (double& v : t.values()) {
    const double m = 0.1 + 0.9 * rng.uniform();
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (double& v : w) v = 2.0 * rng.uniform() - 1.0;
  return w;
}

// Scalar read-out with fixed random weights so every output entry matters.
ad::Var readout(ad::Var y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::dot_const(y, random_weights(y.value().size(), rng));
}

}  // namespace

GradCheckReport grad_check_report(const GradFn& f, std::vector<ad::Tensor>& inputs,
                                  const GradCheckOptions& options) {
  std::vector<ad::Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    ad::Var loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  Rng rng(options.seed);
  GradCheckReport rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t size = inputs[i].size();
    std::vector<std::size_t> coords;
    if (size <= options.samples_per_input) {
      for (std::size_t k = 0; k < size; ++k) coords.push_back(k);
    } else {
      for (std::size_t s = 0; s < options.samples_per_input; ++s) {
        coords.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(size) - 1)));
      }
    }
    for (std::size_t k : coords) {
      const double orig = inputs[i][k];
      inputs[i][k] = orig + options.step;
      const double up = evaluate(f, inputs);
      inputs[i][k] = orig - options.step;
      const double down = evaluate(f, inputs);
      inputs[i][k] = orig;
      const double fd = (up - down) / (2.0 * options.step);
      ++rep.checked;
      if (std::abs(fd) < options.relative_floor) {
        ++rep.small;
        rep.max_abs_error_small = std::max(rep.max_abs_error_small, std::abs(analytic[i][k] - fd));
        continue;
      }
      const double err = std::abs(analytic[i][k] - fd) / std::max(1e-8, std::abs(fd));
      rep.max_rel_error = std::max(rep.max_rel_error, err);
    }
  }
  return rep;
}

double grad_check(const GradFn& f, std::vector<ad::Tensor>& inputs, const GradCheckOptions& options) {
  GradCheckOptions all = options;
  all.relative_floor = 0.0;
  return grad_check_report(f, inputs, all).max_rel_error;
}

bool GradCheckCase::passed() const {
  return max_rel_error <= kGradTolerance && max_abs_error_small <= kSmallGradAbsTolerance;
}

std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckCase> out;
  Rng rng(seed);
  auto run = [&](std::string name, std::vector<ad::Tensor> inputs, const GradFn& f, double floor = 0.0) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckOptions opt;
    opt.seed = rng.next_u64();
    opt.relative_floor = floor;
    const GradCheckReport r = grad_check_report(f, inputs, opt);
    out.push_back({std::move(name), r.max_rel_error, r.max_abs_error_small, r.checked, r.small,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  };
  const std::uint64_t rs = rng.next_u64();
  using V = std::span<const ad::Var>;

  run("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::matmul(v[0], v[1]), rs); });
  run("matmul_batched", {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::matmul(v[0], v[1]), rs); });
  run("matmul_nt", {random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::matmul_nt(v[0], v[1]), rs); });
  run("linear", {random_tensor({2, 3, 4}, rng), random_tensor({4, 6}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::linear(v[0], v[1]), rs); });
  run("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::add(v[0], v[1]), rs); });
  run("sub", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::sub(v[0], v[1]), rs); });
  run("mul", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::mul(v[0], v[1]), rs); });
  run("scale", {random_tensor({3, 4}, rng)}, [rs](ad::Tape&, V v) { return readout(ad::scale(v[0], -1.7), rs); });
  run("add_bias", {random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::add_bias(v[0], v[1]), rs); });
  run("add_rows", {random_tensor({2, 3, 4}, rng), random_tensor({2, 1, 4}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::add_rows(v[0], v[1]), rs); });
  run("reshape", {random_tensor({2, 6}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::reshape(v[0], ad::Shape{3, 4}), rs); });
  run("relu", {away_from_zero({3, 5}, rng)}, [rs](ad::Tape&, V v) { return readout(ad::relu(v[0]), rs); });
  run("tanh", {random_tensor({3, 5}, rng, -2.0, 2.0)}, [rs](ad::Tape&, V v) { return readout(ad::tanh(v[0]), rs); });
  run("log", {random_tensor({3, 5}, rng, 0.2, 3.0)}, [rs](ad::Tape&, V v) { return readout(ad::log(v[0]), rs); });
  run("layer_norm", {random_tensor({4, 8}, rng, -2.0, 2.0), random_tensor({8}, rng), random_tensor({8}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::layer_norm(v[0], v[1], v[2]), rs); });
  run("masked_softmax", {random_tensor({2, 3, 5}, rng, -2.0, 2.0)}, [rs](ad::Tape&, V v) {
    ad::Mask mask(30, 1);
    for (std::size_t i = 0; i < 30; i += 4) mask[i] = 0;
    return readout(ad::masked_softmax(v[0], mask), rs);
  });
  run("gather_rows", {random_tensor({2, 4, 3}, rng)}, [rs](ad::Tape&, V v) {
    const std::uint32_t idx[] = {3, 0, 3, 1, 2, 2};
    return readout(ad::gather_rows(v[0], idx), rs);
  });
  run("pick", {random_tensor({2, 3, 4}, rng)}, [rs](ad::Tape&, V v) {
    const std::uint32_t idx[] = {0, 3, 1, 2, 2, 0};
    return readout(ad::pick(v[0], idx), rs);
  });
  run("split_heads", {random_tensor({2, 3, 6}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::split_heads(v[0], 3), rs); });
  run("merge_heads", {random_tensor({6, 3, 2}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::merge_heads(v[0], 3), rs); });
  run("add_head_bias", {random_tensor({4, 3, 3}, rng), random_tensor({5, 10}, rng)},
      [rs](ad::Tape&, V v) { return readout(ad::add_head_bias(v[0], v[1], 2), rs); });
  run("mean_rows", {random_tensor({2, 3, 4}, rng)}, [rs](ad::Tape&, V v) { return readout(ad::mean_rows(v[0]), rs); });
  run("sum", {random_tensor({3, 4}, rng)}, [](ad::Tape&, V v) { return ad::sum(ad::mul(v[0], v[0])); });
  run("mean", {random_tensor({3, 4}, rng)}, [](ad::Tape&, V v) { return ad::mean(ad::mul(v[0], v[0])); });
  run("dot_const", {random_tensor({3, 4}, rng)}, [rs](ad::Tape&, V v) { return readout(v[0], rs); });
  {
    Rng wr(rng.next_u64());
    const ad::Tensor ref = random_tensor({3, 4}, wr);
    const ad::Tensor w = random_tensor({3, 4}, wr, 0.1, 2.0);
    ad::Tensor x = ref;
    const ad::Tensor off = away_from_zero({3, 4}, wr);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += off[i];
    run("weighted_l1", {x}, [ref, w](ad::Tape&, V v) { return ad::weighted_l1(v[0], ref, w); });
  }
  run("softmax_cross_entropy", {random_tensor({4, 6}, rng, -2.0, 2.0)}, [](ad::Tape&, V v) {
    ad::Mask mask(6, 1);
    mask[5] = 0;
    const std::uint32_t target[] = {0, 2, 4, 1};
    return ad::scale(ad::sum(ad::log(ad::pick(ad::masked_softmax(v[0], mask), target))), -0.25);
  });

  ModelConfig cfg;
  cfg.d = 32;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.ff_hidden = 64;
  cfg.n_max = 5;
  {
    PolicyParams tsp(cfg, ProblemKind::TSP, rng.next_u64());
    // Non-zero attention bias so its gradient path is exercised.
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      for (double& b : tsp.tensors()[tsp.layer(l).bias].values()) b = 0.2 * (2.0 * rng.uniform() - 1.0);
    }
    const Instance inst = generate_instance(ProblemKind::TSP, 5, MetricKind::Euclidean, rng.next_u64());
    std::vector<ad::Tensor> inputs;
    for (std::size_t i = 0; i < tsp.tensors().size(); ++i) inputs.push_back(tsp.tensors()[i]);
    run("encoder_n4", inputs, [&tsp, inst, rs](ad::Tape& tape, V v) {
      BoundParams b{&tsp, std::vector<ad::Var>(v.begin(), v.end())};
      Instance small = inst;
      small.coords.resize(4);
      return readout(encode_batch(tape, b, std::span<const Instance>(&small, 1)), rs);
    }, kPolicyRelativeFloor);
    run("policy_logprob_tsp_n5", inputs, [&tsp, inst](ad::Tape& tape, V v) {
      BoundParams b{&tsp, std::vector<ad::Var>(v.begin(), v.end())};
      const std::vector<std::vector<std::uint32_t>> forced = {{0, 3, 1, 4, 2}, {1, 2, 0, 4, 3}};
      RolloutOptions opt;
      opt.starts = 2;
      opt.forced = &forced;
      return ad::sum(rollout_batch(tape, b, std::span<const Instance>(&inst, 1), opt).log_prob);
    }, kPolicyRelativeFloor);
  }
  {
    cfg.n_max = 6;
    PolicyParams cvrp(cfg, ProblemKind::CVRP, rng.next_u64());
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      for (double& b : cvrp.tensors()[cvrp.layer(l).bias].values()) b = 0.2 * (2.0 * rng.uniform() - 1.0);
    }
    Instance inst = generate_instance(ProblemKind::CVRP, 5, MetricKind::Euclidean, rng.next_u64());
    inst.capacity = 12;
    inst.demands = {0, 5, 4, 6, 3, 5};
    std::vector<ad::Tensor> inputs;
    for (std::size_t i = 0; i < cvrp.tensors().size(); ++i) inputs.push_back(cvrp.tensors()[i]);
    run("policy_logprob_cvrp_n5", inputs, [&cvrp, inst](ad::Tape& tape, V v) {
      BoundParams b{&cvrp, std::vector<ad::Var>(v.begin(), v.end())};
      const std::vector<std::vector<std::uint32_t>> forced = {{1, 2, 0, 3, 4, 0, 5, 0}};
      RolloutOptions opt;
      opt.starts = 1;
      opt.forced = &forced;
      return ad::sum(rollout_batch(tape, b, std::span<const Instance>(&inst, 1), opt).log_prob);
    }, kPolicyRelativeFloor);
  }
  return out;
}

}  // namespace llvrp
