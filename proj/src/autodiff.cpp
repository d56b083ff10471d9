#include "llvrp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>
#include <fmt/format.h>

#include "llvrp/error.hpp"

namespace llvrp::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data() + offset, static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MapMat as_mat(Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MapMat(t.data() + offset, static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (!(a == b)) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, a.str(), b.str()));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

// Batched matrix product geometry shared by matmul and matmul_nt.
struct BatchGeom {
  std::size_t batch, m, k, n;
};

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  if (!node.value.all_finite()) {
    throw NumericError(fmt::format("non-finite value produced by '{}' (node {}, shape {})",
                                   node.op, nodes_.size(), node.value.shape().str()));
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError(fmt::format("{}: input from another tape", op));
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor& Tape::grad_acc(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ContractError(
        fmt::format("backward: loss must be scalar, got shape {}", loss.shape().str()));
  }
  grad_acc(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, static_cast<std::uint32_t>(i), n.grad);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

std::vector<Tape::Entry> Tape::entries() const {
  std::vector<Entry> out;
  out.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    out.push_back({nodes_[i].op, nodes_[i].inputs, static_cast<std::uint32_t>(i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool ok = (sa.rank() == 2 && sb.rank() == 2 && sa[1] == sb[0]) ||
                  (sa.rank() == 3 && sb.rank() == 3 && sa[0] == sb[0] && sa[2] == sb[1]);
  if (!ok) {
    throw DimensionError(fmt::format("matmul: incompatible shapes {} and {}", sa.str(), sb.str()));
  }
  const BatchGeom g{sa.batch(), sa.rows(), sa.cols(), sb.cols()};
  Shape out_shape = sa.rank() == 2 ? Shape{g.m, g.n} : Shape{g.batch, g.m, g.n};
  Tensor out(out_shape);
  for (std::size_t i = 0; i < g.batch; ++i) {
    as_mat(out, i * g.m * g.n, g.m, g.n).noalias() =
        as_mat(a.value(), i * g.m * g.k, g.m, g.k) * as_mat(b.value(), i * g.k * g.n, g.k, g.n);
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("matmul", std::move(out), {a, b}, [ia, ib, g](Tape& t, std::uint32_t, const Tensor& go) {
    const bool da = t.requires_grad(ia), db = t.requires_grad(ib);
    for (std::size_t i = 0; i < g.batch; ++i) {
      auto gm = as_mat(go, i * g.m * g.n, g.m, g.n);
      if (da) {
        as_mat(t.grad_acc(ia), i * g.m * g.k, g.m, g.k).noalias() +=
            gm * as_mat(t.value(ib), i * g.k * g.n, g.k, g.n).transpose();
      }
      if (db) {
        as_mat(t.grad_acc(ib), i * g.k * g.n, g.k, g.n).noalias() +=
            as_mat(t.value(ia), i * g.m * g.k, g.m, g.k).transpose() * gm;
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool ok = (sa.rank() == 2 && sb.rank() == 2 && sa[1] == sb[1]) ||
                  (sa.rank() == 3 && sb.rank() == 3 && sa[0] == sb[0] && sa[2] == sb[2]);
  if (!ok) {
    throw DimensionError(
        fmt::format("matmul_nt: incompatible shapes {} and {}", sa.str(), sb.str()));
  }
  // a [m,k], b [n,k]
  const BatchGeom g{sa.batch(), sa.rows(), sa.cols(), sb.rows()};
  Shape out_shape = sa.rank() == 2 ? Shape{g.m, g.n} : Shape{g.batch, g.m, g.n};
  Tensor out(out_shape);
  for (std::size_t i = 0; i < g.batch; ++i) {
    as_mat(out, i * g.m * g.n, g.m, g.n).noalias() =
        as_mat(a.value(), i * g.m * g.k, g.m, g.k) *
        as_mat(b.value(), i * g.n * g.k, g.n, g.k).transpose();
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("matmul_nt", std::move(out), {a, b},
                          [ia, ib, g](Tape& t, std::uint32_t, const Tensor& go) {
    const bool da = t.requires_grad(ia), db = t.requires_grad(ib);
    for (std::size_t i = 0; i < g.batch; ++i) {
      auto gm = as_mat(go, i * g.m * g.n, g.m, g.n);
      if (da) {
        as_mat(t.grad_acc(ia), i * g.m * g.k, g.m, g.k).noalias() +=
            gm * as_mat(t.value(ib), i * g.n * g.k, g.n, g.k);
      }
      if (db) {
        as_mat(t.grad_acc(ib), i * g.n * g.k, g.n, g.k).noalias() +=
            gm.transpose() * as_mat(t.value(ia), i * g.m * g.k, g.m, g.k);
      }
    }
  });
}

Var linear(Var x, Var w) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sw.rank() != 2 || sx.rank() == 0 || sx.cols() != sw[0]) {
    throw DimensionError(fmt::format("linear: incompatible shapes {} and {}", sx.str(), sw.str()));
  }
  const std::size_t k = sw[0], n = sw[1], rows = sx.numel() / k;
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i + 1 < sx.rank(); ++i) dims.push_back(sx[i]);
  dims.push_back(n);
  Tensor out{Shape(std::span<const std::size_t>(dims))};
  as_mat(out, 0, rows, n).noalias() = as_mat(x.value(), 0, rows, k) * as_mat(w.value(), 0, k, n);
  const auto ix = x.id(), iw = w.id();
  return x.tape()->record("linear", std::move(out), {x, w},
                          [ix, iw, rows, k, n](Tape& t, std::uint32_t, const Tensor& go) {
    auto gm = as_mat(go, 0, rows, n);
    if (t.requires_grad(ix)) {
      as_mat(t.grad_acc(ix), 0, rows, k).noalias() += gm * as_mat(t.value(iw), 0, k, n).transpose();
    }
    if (t.requires_grad(iw)) {
      as_mat(t.grad_acc(iw), 0, k, n).noalias() += as_mat(t.value(ix), 0, rows, k).transpose() * gm;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor out = a.value();
  accumulate(out, b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t, const Tensor& go) {
    if (t.requires_grad(ia)) accumulate(t.grad_acc(ia), go);
    if (t.requires_grad(ib)) accumulate(t.grad_acc(ib), go);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.shape(), b.shape());
  Tensor out = a.value();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t, const Tensor& go) {
    if (t.requires_grad(ia)) accumulate(t.grad_acc(ia), go);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_acc(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, std::uint32_t, const Tensor& go) {
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_acc(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_acc(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Var x, double s) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= s;
  const auto ix = x.id();
  return x.tape()->record("scale", std::move(out), {x}, [ix, s](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * go[i];
  });
}

Var add_bias(Var x, Var bias) {
  const std::size_t n = x.shape().cols();
  if (bias.shape().rank() != 1 || bias.shape()[0] != n) {
    throw DimensionError(
        fmt::format("add_bias: bias {} does not match {}", bias.shape().str(), x.shape().str()));
  }
  Tensor out = x.value();
  const double* bv = bias.value().data();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) row[c] += bv[c];
  }
  const auto ix = x.id(), ib = bias.id();
  return x.tape()->record("add_bias", std::move(out), {x, bias},
                          [ix, ib, rows, n](Tape& t, std::uint32_t, const Tensor& go) {
    if (t.requires_grad(ix)) accumulate(t.grad_acc(ix), go);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_acc(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) gb[c] += go[r * n + c];
      }
    }
  });
}

Var add_rows(Var x, Var rows) {
  const Shape& sx = x.shape();
  const Shape& sr = rows.shape();
  if (sx.rank() != 3 || sr.rank() != 3 || sr[0] != sx[0] || sr[1] != 1 || sr[2] != sx[2]) {
    throw DimensionError(fmt::format("add_rows: {} cannot broadcast onto {}", sr.str(), sx.str()));
  }
  const std::size_t b = sx[0], r = sx[1], c = sx[2];
  Tensor out = x.value();
  const Tensor& rv = rows.value();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      for (std::size_t k = 0; k < c; ++k) out.at(i, j, k) += rv[i * c + k];
    }
  }
  const auto ix = x.id(), ir = rows.id();
  return x.tape()->record("add_rows", std::move(out), {x, rows},
                          [ix, ir, b, r, c](Tape& t, std::uint32_t, const Tensor& go) {
    if (t.requires_grad(ix)) accumulate(t.grad_acc(ix), go);
    if (t.requires_grad(ir)) {
      Tensor& gr = t.grad_acc(ir);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < r; ++j) {
          for (std::size_t k = 0; k < c; ++k) gr[i * c + k] += go.at(i, j, k);
        }
      }
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  const auto ix = x.id();
  return x.tape()->record("reshape", std::move(out), {x}, [ix](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const auto ix = x.id();
  return x.tape()->record("relu", std::move(out), {x}, [ix](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    const Tensor& xv = t.value(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::tanh(v);
  const auto ix = x.id();
  return x.tape()->record("tanh", std::move(out), {x},
                          [ix](Tape& t, std::uint32_t self, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

Var log(Var x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw NumericError(fmt::format("log of non-positive value {}", v));
  }
  Tensor out = x.value();
  for (double& v : out.values()) v = std::log(v);
  const auto ix = x.id();
  return x.tape()->record("log", std::move(out), {x}, [ix](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    const Tensor& xv = t.value(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] / xv[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const std::size_t d = x.shape().cols();
  if (d == 0 || gain.shape().rank() != 1 || gain.shape()[0] != d || !(bias.shape() == gain.shape())) {
    throw DimensionError(fmt::format("layer_norm: x {} gain {} bias {}", x.shape().str(),
                                     gain.shape().str(), bias.shape().str()));
  }
  const std::size_t rows = x.value().size() / d;
  Tensor out(x.shape());
  // Normalised activations and per-row inverse deviations for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.value().size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.value().data();
  const double* g = gain.value().data();
  const double* b = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * g[c] + b[c];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record("layer_norm", std::move(out), {x, gain, bias},
                          [ix, ig, ib, rows, d, xhat, inv](Tape& t, std::uint32_t, const Tensor& go) {
    const double* g = t.value(ig).data();
    if (t.requires_grad(ig) || t.requires_grad(ib)) {
      Tensor& gg = t.grad_acc(ig);
      Tensor& gb = t.grad_acc(ib);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          gg[c] += go[r * d + c] * (*xhat)[r * d + c];
          gb[c] += go[r * d + c];
        }
      }
    }
    if (!t.requires_grad(ix)) return;
    Tensor& gx = t.grad_acc(ix);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double dh = go[r * d + c] * g[c];
        m1 += dh;
        m2 += dh * (*xhat)[r * d + c];
      }
      m1 *= inv_d;
      m2 *= inv_d;
      for (std::size_t c = 0; c < d; ++c) {
        const double dh = go[r * d + c] * g[c];
        gx[r * d + c] += (*inv)[r] * (dh - m1 - (*xhat)[r * d + c] * m2);
      }
    }
  });
}

Var masked_softmax(Var logits, const Mask& mask) {
  const Tensor& xv = logits.value();
  const std::size_t n = xv.shape().cols();
  const std::size_t rows = xv.size() / n;
  if (!mask.empty() && mask.size() != n && mask.size() != xv.size()) {
    throw DimensionError(fmt::format("masked_softmax: mask of length {} for logits {}",
                                     mask.size(), xv.shape().str()));
  }
  const bool per_row = mask.size() == xv.size();
  auto allowed = [&](std::size_t r, std::size_t c) {
    if (mask.empty()) return true;
    return mask[per_row ? r * n + c : c] != 0;
  };
  Tensor out(xv.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (allowed(r, c)) mx = std::max(mx, row[c]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw InfeasibleError(fmt::format("masked_softmax: row {} of {} is fully masked", r,
                                        xv.shape().str()));
    }
    double z = 0.0;
    double* o = out.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      if (allowed(r, c)) {
        o[c] = std::exp(row[c] - mx);
        z += o[c];
      }
    }
    const double iz = 1.0 / z;
    for (std::size_t c = 0; c < n; ++c) o[c] *= iz;
  }
  const auto ix = logits.id();
  return logits.tape()->record("masked_softmax", std::move(out), {logits},
                               [ix, rows, n](Tape& t, std::uint32_t self, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    const Tensor& y = t.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += y[r * n + c] * go[r * n + c];
      for (std::size_t c = 0; c < n; ++c) {
        gx[r * n + c] += y[r * n + c] * (go[r * n + c] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and head layout

Var gather_rows(Var x, std::span<const std::uint32_t> idx) {
  const Shape& sx = x.shape();
  if (sx.rank() < 2) throw DimensionError(fmt::format("gather_rows: rank of {} < 2", sx.str()));
  const std::size_t b = sx.batch(), n = sx.rows(), d = sx.cols();
  if (idx.size() % b != 0) {
    throw DimensionError(fmt::format("gather_rows: {} indices for batch {}", idx.size(), b));
  }
  const std::size_t r = idx.size() / b;
  for (std::uint32_t i : idx) {
    if (i >= n) throw DimensionError(fmt::format("gather_rows: index {} out of {}", i, n));
  }
  Tensor out(sx.rank() == 3 ? Shape{b, r, d} : Shape{r, d});
  const double* xv = x.value().data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t j = 0; j < r; ++j) {
      const double* src = xv + (bi * n + idx[bi * r + j]) * d;
      std::copy(src, src + d, out.data() + (bi * r + j) * d);
    }
  }
  std::vector<std::uint32_t> saved(idx.begin(), idx.end());
  const auto ix = x.id();
  return x.tape()->record("gather_rows", std::move(out), {x},
                          [ix, b, n, d, r, saved = std::move(saved)](Tape& t, std::uint32_t,
                                                                     const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t j = 0; j < r; ++j) {
        double* dst = gx.data() + (bi * n + saved[bi * r + j]) * d;
        const double* src = go.data() + (bi * r + j) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
}

Var pick(Var x, std::span<const std::uint32_t> idx) {
  const Shape& sx = x.shape();
  const std::size_t c = sx.cols();
  const std::size_t rows = sx.numel() / c;
  if (idx.size() != rows) {
    throw DimensionError(fmt::format("pick: {} indices for {} rows", idx.size(), rows));
  }
  Tensor out(sx.rank() == 3 ? Shape{sx[0], sx[1]} : Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= c) throw DimensionError(fmt::format("pick: index {} out of {}", idx[r], c));
    out[r] = x.value()[r * c + idx[r]];
  }
  std::vector<std::uint32_t> saved(idx.begin(), idx.end());
  const auto ix = x.id();
  return x.tape()->record("pick", std::move(out), {x},
                          [ix, c, saved = std::move(saved)](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t r = 0; r < saved.size(); ++r) gx[r * c + saved[r]] += go[r];
  });
}

Var split_heads(Var x, std::size_t heads) {
  const Shape& sx = x.shape();
  const std::size_t b = sx.batch(), m = sx.rows(), d = sx.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError(fmt::format("split_heads: width {} not divisible by {}", d, heads));
  }
  const std::size_t k = d / heads;
  Tensor out(Shape{b * heads, m, k});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* src = x.value().data() + (bi * m + i) * d + h * k;
        std::copy(src, src + k, out.data() + ((bi * heads + h) * m + i) * k);
      }
    }
  }
  const auto ix = x.id();
  return x.tape()->record("split_heads", std::move(out), {x},
                          [ix, b, m, d, k, heads](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < m; ++i) {
          double* dst = gx.data() + (bi * m + i) * d + h * k;
          const double* src = go.data() + ((bi * heads + h) * m + i) * k;
          for (std::size_t c = 0; c < k; ++c) dst[c] += src[c];
        }
      }
    }
  });
}

Var merge_heads(Var x, std::size_t heads) {
  const Shape& sx = x.shape();
  if (sx.rank() != 3 || heads == 0 || sx[0] % heads != 0) {
    throw DimensionError(fmt::format("merge_heads: {} with {} heads", sx.str(), heads));
  }
  const std::size_t b = sx[0] / heads, m = sx[1], k = sx[2], d = k * heads;
  Tensor out(Shape{b, m, d});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* src = x.value().data() + ((bi * heads + h) * m + i) * k;
        std::copy(src, src + k, out.data() + (bi * m + i) * d + h * k);
      }
    }
  }
  const auto ix = x.id();
  return x.tape()->record("merge_heads", std::move(out), {x},
                          [ix, b, m, d, k, heads](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < m; ++i) {
          double* dst = gx.data() + ((bi * heads + h) * m + i) * k;
          const double* src = go.data() + (bi * m + i) * d + h * k;
          for (std::size_t c = 0; c < k; ++c) dst[c] += src[c];
        }
      }
    }
  });
}

Var add_head_bias(Var scores, Var bias, std::size_t heads) {
  const Shape& ss = scores.shape();
  const Shape& sb = bias.shape();
  if (ss.rank() != 3 || sb.rank() != 2 || heads == 0 || ss[0] % heads != 0 ||
      sb[1] != heads * sb[0] || ss[1] > sb[0] || ss[2] > sb[0]) {
    throw DimensionError(fmt::format("add_head_bias: scores {} bias {} heads {}", ss.str(),
                                     sb.str(), heads));
  }
  const std::size_t bh = ss[0], r = ss[1], c = ss[2], nmax = sb[0], width = sb[1];
  Tensor out = scores.value();
  const double* bv = bias.value().data();
  for (std::size_t i = 0; i < bh; ++i) {
    const std::size_t h = i % heads;
    for (std::size_t row = 0; row < r; ++row) {
      const double* src = bv + row * width + h * nmax;
      double* dst = out.data() + (i * r + row) * c;
      for (std::size_t col = 0; col < c; ++col) dst[col] += src[col];
    }
  }
  const auto is = scores.id(), ib = bias.id();
  return scores.tape()->record("add_head_bias", std::move(out), {scores, bias},
                               [is, ib, bh, r, c, nmax, width, heads](Tape& t, std::uint32_t,
                                                                      const Tensor& go) {
    if (t.requires_grad(is)) accumulate(t.grad_acc(is), go);
    if (!t.requires_grad(ib)) return;
    Tensor& gb = t.grad_acc(ib);
    for (std::size_t i = 0; i < bh; ++i) {
      const std::size_t h = i % heads;
      for (std::size_t row = 0; row < r; ++row) {
        double* dst = gb.data() + row * width + h * nmax;
        const double* src = go.data() + (i * r + row) * c;
        for (std::size_t col = 0; col < c; ++col) dst[col] += src[col];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var mean_rows(Var x) {
  const Shape& sx = x.shape();
  if (sx.rank() != 3) throw DimensionError(fmt::format("mean_rows: expected rank 3, got {}", sx.str()));
  const std::size_t b = sx[0], r = sx[1], c = sx[2];
  Tensor out(Shape{b, 1, c});
  const double inv = 1.0 / static_cast<double>(r);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += x.value().at(i, j, k);
    }
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] *= inv;
  }
  const auto ix = x.id();
  return x.tape()->record("mean_rows", std::move(out), {x},
                          [ix, b, r, c, inv](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        for (std::size_t k = 0; k < c; ++k) gx.at(i, j, k) += go[i * c + k] * inv;
      }
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const auto ix = x.id();
  return x.tape()->record("sum", Tensor::scalar(s), {x}, [ix](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    const double g = go[0];
    for (double& v : gx.values()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var dot_const(Var x, std::span<const double> weights) {
  if (weights.size() != x.value().size()) {
    throw DimensionError(fmt::format("dot_const: {} weights for {}", weights.size(),
                                     x.shape().str()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.value()[i];
  std::vector<double> saved(weights.begin(), weights.end());
  const auto ix = x.id();
  return x.tape()->record("dot_const", Tensor::scalar(s), {x},
                          [ix, saved = std::move(saved)](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t i = 0; i < saved.size(); ++i) gx[i] += go[0] * saved[i];
  });
}

Var weighted_l1(Var x, const Tensor& ref, const Tensor& weights) {
  if (!(ref.shape() == x.shape()) || !(weights.shape() == x.shape())) {
    throw DimensionError(fmt::format("weighted_l1: x {} ref {} weights {}", x.shape().str(),
                                     ref.shape().str(), weights.shape().str()));
  }
  double s = 0.0;
  const std::size_t n = ref.size();
  auto slope = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = weights[i] * (x.value()[i] - ref[i]);
    s += std::abs(d);
    (*slope)[i] = d > 0.0 ? weights[i] : (d < 0.0 ? -weights[i] : 0.0);
  }
  const auto ix = x.id();
  return x.tape()->record("weighted_l1", Tensor::scalar(s), {x},
                          [ix, slope](Tape& t, std::uint32_t, const Tensor& go) {
    Tensor& gx = t.grad_acc(ix);
    for (std::size_t i = 0; i < slope->size(); ++i) gx[i] += go[0] * (*slope)[i];
  });
}

}  // namespace llvrp::ad
