#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "llvrp/adam.hpp"
#include "llvrp/autodiff.hpp"
#include "llvrp/checkpoint.hpp"
#include "llvrp/error.hpp"
#include "llvrp/gradcheck.hpp"
#include "llvrp/params.hpp"

namespace ad = llvrp::ad;
using ad::Shape;
using ad::Tensor;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = u(gen);
  return t;
}

// Central differences computed here, independent of grad_check.
std::vector<double> numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrix) {
  ad::Tape tape;
  auto eye = tape.constant(Tensor(Shape{2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(Tensor(Shape{2, 2}, {0.3, -2, 7, 4.5}));
  auto r = ad::matmul(eye, m);
  EXPECT_EQ(r.value().vector(), m.value().vector());
}

TEST(Matmul, HandProduct) {
  ad::Tape tape;
  auto a = tape.constant(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor(Shape{2, 1}, {1, 1}));
  auto r = ad::matmul(a, b);
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  EXPECT_EQ(r.value()[0], 3.0);
  EXPECT_EQ(r.value()[1], 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  ad::Tape tape;
  auto a = tape.constant(Tensor(Shape{2, 3}));
  auto b = tape.constant(Tensor(Shape{2, 3}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const llvrp::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(11);
  const Tensor a0 = random_tensor(Shape{3, 4}, gen);
  const Tensor b0 = random_tensor(Shape{4, 2}, gen);
  const Tensor w = random_tensor(Shape{3, 2}, gen);
  auto value = [&](const Tensor& a, const Tensor& b) {
    ad::Tape t;
    return ad::dot_const(ad::matmul(t.constant(a), t.constant(b)), w.values()).item();
  };
  ad::Tape tape;
  auto a = tape.variable(a0);
  auto b = tape.variable(b0);
  tape.backward(ad::dot_const(ad::matmul(a, b), w.values()));
  const auto ga = numeric_grad([&](const Tensor& x) { return value(x, b0); }, a0);
  const auto gb = numeric_grad([&](const Tensor& x) { return value(a0, x); }, b0);
  const Tensor da = tape.grad(a), db = tape.grad(b);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_LE(std::abs(da[i] - ga[i]) / std::abs(ga[i]), 1e-6);
  for (std::size_t i = 0; i < gb.size(); ++i) EXPECT_LE(std::abs(db[i] - gb[i]) / std::abs(gb[i]), 1e-6);
}

TEST(MaskedSoftmax, UniformWithoutMask) {
  ad::Tape tape;
  auto p = ad::masked_softmax(tape.constant(Tensor(Shape{3}, {0, 0, 0})));
  for (double v : p.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(MaskedSoftmax, MaskedEntryIsExactlyZero) {
  ad::Tape tape;
  auto p = ad::masked_softmax(tape.constant(Tensor(Shape{3}, {0, 0, 0})), {1, 1, 0});
  EXPECT_EQ(p.value()[2], 0.0);
  EXPECT_NEAR(p.value()[0], 0.5, 1e-15);
  EXPECT_NEAR(p.value()[1], 0.5, 1e-15);
}

TEST(MaskedSoftmax, DirectEvaluation) {
  ad::Tape tape;
  auto p = ad::masked_softmax(tape.constant(Tensor(Shape{3}, {1, 2, 3})));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.value()[i], std::exp(i + 1.0) / z, 1e-15);
}

TEST(MaskedSoftmax, FullyMaskedRowThrows) {
  ad::Tape tape;
  EXPECT_THROW(ad::masked_softmax(tape.constant(Tensor(Shape{2}, {0, 0})), {0, 0}), llvrp::InfeasibleError);
}

TEST(MaskedSoftmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 gen(5);
  std::bernoulli_distribution keep(0.7);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor logits = random_tensor(Shape{4, 7}, gen, -20, 20);
    ad::Mask mask(28);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 7; ++c) mask[r * 7 + c] = keep(gen);
      mask[r * 7 + (trial % 7)] = 1;
    }
    Tensor shifted = logits;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 7; ++c) shifted.at(r, c) += 3.25 * static_cast<double>(r + 1);
    }
    ad::Tape tape;
    const Tensor p = ad::masked_softmax(tape.constant(logits), mask).value();
    const Tensor q = ad::masked_softmax(tape.constant(shifted), mask).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        s += p.at(r, c);
        if (!mask[r * 7 + c]) {
          EXPECT_EQ(p.at(r, c), 0.0);
        }
        EXPECT_LE(std::abs(p.at(r, c) - q.at(r, c)), 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  ad::Tape tape;
  auto y = ad::layer_norm(tape.constant(Tensor(Shape{1, 4}, 2.5)), tape.constant(Tensor(Shape{4}, 1.0)),
                          tape.constant(Tensor(Shape{4}, 0.0)));
  for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, SymmetricPair) {
  ad::Tape tape;
  auto y = ad::layer_norm(tape.constant(Tensor(Shape{1, 2}, {1, -1})), tape.constant(Tensor(Shape{2}, 1.0)),
                          tape.constant(Tensor(Shape{2}, 0.0)));
  const double expect = 1.0 / std::sqrt(1.0 + ad::kLayerNormEps);
  EXPECT_NEAR(y.value()[0], expect, 1e-15);
  EXPECT_NEAR(y.value()[1], -expect, 1e-15);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(21);
  const Tensor x0 = random_tensor(Shape{4, 8}, gen);
  const Tensor g0 = random_tensor(Shape{8}, gen, 0.5, 1.5);
  const Tensor b0 = random_tensor(Shape{8}, gen);
  const Tensor w = random_tensor(Shape{4, 8}, gen);
  auto value = [&](const Tensor& x) {
    ad::Tape t;
    return ad::dot_const(ad::layer_norm(t.constant(x), t.constant(g0), t.constant(b0)), w.values()).item();
  };
  ad::Tape tape;
  auto x = tape.variable(x0);
  tape.backward(ad::dot_const(ad::layer_norm(x, tape.constant(g0), tape.constant(b0)), w.values()));
  const auto fd = numeric_grad(value, x0);
  const Tensor an = tape.grad(x);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    EXPECT_LE(std::abs(an[i] - fd[i]) / std::max(1e-8, std::abs(fd[i])), 1e-5) << i;
  }
}

TEST(Backward, SumGivesOnes) {
  ad::Tape tape;
  auto w = tape.variable(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  tape.backward(ad::sum(w));
  const Tensor g = tape.grad(w);
  for (double v : g.values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquareGivesTwiceW) {
  ad::Tape tape;
  auto w = tape.variable(Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  tape.backward(ad::sum(ad::mul(w, w)));
  EXPECT_EQ(tape.grad(w).vector(), (std::vector<double>{2, 4, 6, 8}));
}

TEST(Backward, NonScalarLossIsContractError) {
  ad::Tape tape;
  auto w = tape.variable(Tensor(Shape{2}, {1, 2}));
  EXPECT_THROW(tape.backward(ad::mul(w, w)), llvrp::ContractError);
}

TEST(Backward, RecordIsTopologicalAndDeterministic) {
  std::mt19937_64 gen(3);
  const Tensor a0 = random_tensor(Shape{2, 5, 4}, gen);
  const Tensor w0 = random_tensor(Shape{4, 4}, gen);
  std::vector<double> first;
  for (int rep = 0; rep < 2; ++rep) {
    ad::Tape tape;
    auto a = tape.variable(a0);
    auto w = tape.variable(w0);
    auto y = ad::layer_norm(ad::tanh(ad::linear(a, w)), tape.constant(Tensor(Shape{4}, 1.0)),
                            tape.constant(Tensor(Shape{4}, 0.0)));
    auto loss = ad::sum(ad::mul(y, y));
    for (const auto& e : tape.entries()) {
      for (auto in : e.inputs) EXPECT_LT(in, e.output);
    }
    tape.backward(loss);
    const auto g = tape.grad(w).vector();
    if (rep == 0) {
      first = g;
    } else {
      EXPECT_EQ(first, g);  // bitwise
    }
  }
}

TEST(Adam, ZeroGradientWithoutDecayIsNoOp) {
  llvrp::ParameterSet ps;
  ps.add("p", Tensor(Shape{3}, {1, -2, 3}));
  llvrp::Adam opt({.lr = 0.1, .weight_decay = 0.0});
  auto grads = ps.zeros_like();
  for (int i = 0; i < 5; ++i) opt.step(ps, grads);
  EXPECT_EQ(ps[0].vector(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  llvrp::ParameterSet ps;
  ps.add("p", Tensor::scalar(1.0));
  llvrp::Adam opt({.lr = 0.1, .weight_decay = 0.0});
  std::vector<Tensor> g{Tensor::scalar(1.0)};
  opt.step(ps, g);
  // m̂ = 1, v̂ = 1, so the step is lr/(1 + ε).
  EXPECT_NEAR(ps[0].item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  llvrp::ParameterSet ps;
  ps.add("p", Tensor::scalar(0.0));
  llvrp::Adam opt({.lr = 0.1, .weight_decay = 0.0});
  for (int i = 0; i < 100; ++i) {
    std::vector<Tensor> g{Tensor::scalar(2.0 * (ps[0].item() - 3.0))};
    opt.step(ps, g);
  }
  EXPECT_LE(std::abs(ps[0].item() - 3.0), 0.05);
}

TEST(Adam, DecoupledWeightDecay) {
  llvrp::ParameterSet ps;
  ps.add("p", Tensor::scalar(2.0));
  llvrp::Adam opt({.lr = 0.01, .weight_decay = 0.5});
  std::vector<Tensor> g{Tensor::scalar(0.0)};
  opt.step(ps, g);
  EXPECT_NEAR(ps[0].item(), 2.0 - 0.01 * 0.5 * 2.0, 1e-15);
}

TEST(Adam, NonFiniteGradientAborts) {
  llvrp::ParameterSet ps;
  ps.add("weights", Tensor::scalar(2.0));
  llvrp::Adam opt;
  std::vector<Tensor> g{Tensor::scalar(std::nan(""))};
  EXPECT_THROW(opt.step(ps, g), llvrp::NumericError);
}

TEST(Checkpoint, RoundTripsNamedTensors) {
  llvrp::Checkpoint ck;
  ck.put("a", Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6.125}));
  ck.put("scalar", Tensor::scalar(-0.1));
  ck.put("r3/ü", Tensor(Shape{1, 2, 2}, {1e-300, -0.0, 3, 4}));
  const std::string bytes = ck.serialize();
  EXPECT_EQ(bytes.substr(0, 6), "LLVRP1");
  const auto back = llvrp::Checkpoint::deserialize(bytes);
  ASSERT_EQ(back.entries().size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.entries()[i].first, ck.entries()[i].first);
    EXPECT_EQ(back.entries()[i].second.shape(), ck.entries()[i].second.shape());
    EXPECT_EQ(back.entries()[i].second.vector(), ck.entries()[i].second.vector());
  }
}

TEST(Checkpoint, RejectsForeignBytes) {
  EXPECT_THROW(llvrp::Checkpoint::deserialize("not a checkpoint"), llvrp::CheckpointError);
  llvrp::Checkpoint ck;
  ck.put("a", Tensor(Shape{4}, 1.0));
  std::string bytes = ck.serialize();
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(llvrp::Checkpoint::deserialize(bytes), llvrp::CheckpointError);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 gen(8);
  const Tensor w = random_tensor(Shape{10}, gen);
  std::vector<Tensor> inputs{random_tensor(Shape{10}, gen)};
  const double err = llvrp::grad_check(
      [&](ad::Tape&, std::span<const ad::Var> in) { return ad::dot_const(in[0], w.values()); }, inputs);
  EXPECT_LE(err, 1e-9);
}

TEST(GradCheck, SoftmaxCrossEntropyComposite) {
  std::mt19937_64 gen(9);
  std::vector<Tensor> inputs{random_tensor(Shape{3, 6}, gen, -2, 2)};
  const ad::Mask mask{1, 1, 0, 1, 1, 1};
  const std::vector<std::uint32_t> target{0, 3, 5};
  const double err = llvrp::grad_check(
      [&](ad::Tape&, std::span<const ad::Var> in) {
        auto p = ad::masked_softmax(in[0], mask);
        return ad::scale(ad::sum(ad::log(ad::pick(ad::reshape(p, Shape{3, 1, 6}), target))), -1.0);
      },
      inputs);
  EXPECT_LE(err, 1e-5);
}

TEST(GradCheck, SuiteWithinTolerance) {
  const auto cases = llvrp::gradcheck_suite(1);
  bool saw_tsp = false, saw_cvrp = false, saw_encoder = false;
  for (const auto& c : cases) {
    EXPECT_TRUE(c.passed()) << c.name << " rel " << c.max_rel_error << " abs " << c.max_abs_error_small;
    EXPECT_GT(c.checked, 0u) << c.name;
    saw_tsp |= c.name == "policy_logprob_tsp_n5";
    saw_cvrp |= c.name == "policy_logprob_cvrp_n5";
    saw_encoder |= c.name == "encoder_n4";
  }
  EXPECT_TRUE(saw_tsp && saw_cvrp && saw_encoder);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A deliberately broken backward rule must be reported.
  std::vector<Tensor> inputs{Tensor(Shape{3}, {0.5, -1.0, 2.0})};
  const double err = llvrp::grad_check(
      [&](ad::Tape& tape, std::span<const ad::Var> in) {
        const std::uint32_t xid = in[0].id();
        Tensor sq = in[0].value();
        for (double& v : sq.values()) v *= v;
        auto y = tape.record("bad_square", std::move(sq), {in[0]},
                             [xid](ad::Tape& t, std::uint32_t, const Tensor& go) {
                               const Tensor& x = t.value(xid);
                               Tensor& acc = t.grad_acc(xid);
                               for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += go[i] * x[i];  // missing ×2
                             });
        return ad::sum(y);
      },
      inputs);
  EXPECT_GT(err, 0.4);
}
