#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "llvrp/tensor.hpp"

namespace llvrp::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode computation record. Nodes are appended in evaluation order,
// which is a topological order by construction; backward() replays them in
// reverse. A tape is confined to one thread.
class Tape {
 public:
  // Receives the tape, the id of the node being replayed and its gradient.
  using BackwardFn = std::function<void(Tape&, std::uint32_t self, const Tensor& grad_out)>;

  struct Entry {
    const char* op;
    std::vector<std::uint32_t> inputs;
    std::uint32_t output;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Appends an op result. The backward closure is kept only when at least one
  // input requires a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients accumulate across
  // calls until zero_grad().
  void backward(Var loss);
  void zero_grad();

  // Gradient of the last backward pass; zeros when the node was unreached.
  Tensor grad(Var v) const;
  bool has_grad(Var v) const { return nodes_[v.id()].has_grad; }

  // Accumulator used by backward closures; lazily zero-initialised.
  Tensor& grad_acc(std::uint32_t id);

  std::size_t size() const { return nodes_.size(); }
  std::vector<Entry> entries() const;

 private:
  struct Node {
    const char* op = "leaf";
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
};

// Per-entry validity for masked_softmax. Either one flag per column (shared by
// every row) or one flag per element.
using Mask = std::vector<std::uint8_t>;

// [m,k]x[k,n] or batched [b,m,k]x[b,k,n].
Var matmul(Var a, Var b);
// a · bᵀ with a [b,m,k], b [b,n,k] (or rank 2).
Var matmul_nt(Var a, Var b);
// Treats every leading index of x [...,k] as a row and multiplies by W [k,n].
Var linear(Var x, Var w);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
// x [...,n] plus bias [n] on every row.
Var add_bias(Var x, Var bias);
// x [b,r,c] plus rows [b,1,c] broadcast over r.
Var add_rows(Var x, Var rows);
Var reshape(Var x, Shape shape);

Var relu(Var x);
Var tanh(Var x);
Var log(Var x);

inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);

// Softmax over the last axis with masked entries forced to exactly zero.
// Throws InfeasibleError when a row has no unmasked entry.
Var masked_softmax(Var logits, const Mask& mask = {});

// x [b,n,d], idx holds b*r row indices → [b,r,d].
Var gather_rows(Var x, std::span<const std::uint32_t> idx);
// x [b,r,c], idx holds b*r column indices → [b,r].
Var pick(Var x, std::span<const std::uint32_t> idx);

// [b,m,h*k] → [b*h,m,k] taking contiguous column blocks per head.
Var split_heads(Var x, std::size_t heads);
Var merge_heads(Var x, std::size_t heads);
// scores [b*h,n,n] + the top-left n×n slice of head block i of bias [N,h*N].
Var add_head_bias(Var scores, Var bias, std::size_t heads);

Var mean_rows(Var x);
Var sum(Var x);
Var mean(Var x);
// Σ weights_i · x_i with constant weights.
Var dot_const(Var x, std::span<const double> weights);
// Σ |w_i · (x_i − ref_i)| with constant ref and w; subgradient 0 at 0.
Var weighted_l1(Var x, const Tensor& ref, const Tensor& weights);

}  // namespace llvrp::ad
