#include "llvrp/adam.hpp"

#include <cmath>

#include <fmt/format.h>

#include "llvrp/error.hpp"

namespace llvrp {

void Adam::step(ParameterSet& params, std::span<const ad::Tensor> grads) {
  if (grads.size() != params.size()) {
    throw ContractError(
        fmt::format("adam: {} gradients for {} parameters", grads.size(), params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(grads[i].shape() == params[i].shape())) {
      throw DimensionError(fmt::format("adam: gradient {} for parameter '{}' {}",
                                       grads[i].shape().str(), params.name(i),
                                       params[i].shape().str()));
    }
    if (!grads[i].all_finite()) {
      throw NumericError(fmt::format("adam: non-finite gradient for '{}' at step {}",
                                     params.name(i), steps_ + 1));
    }
  }
  if (m_.empty()) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double decay = config_.lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double* g = grads[i].data();
    for (std::size_t k = 0, n = params[i].size(); k < n; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps) + decay * p[k];
    }
  }
}

void Adam::restore(std::int64_t steps, std::vector<ad::Tensor> m, std::vector<ad::Tensor> v) {
  if (m.size() != v.size()) throw CheckpointError("adam: moment count mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace llvrp
