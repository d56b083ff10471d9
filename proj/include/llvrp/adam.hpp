#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "llvrp/params.hpp"

namespace llvrp {

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay:
//   p ← p − lr·m̂/(√v̂ + ε) − lr·wd·p
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  // Throws NumericError naming the parameter when a gradient is not finite.
  void step(ParameterSet& params, std::span<const ad::Tensor> grads);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  const std::vector<ad::Tensor>& first_moments() const { return m_; }
  const std::vector<ad::Tensor>& second_moments() const { return v_; }

  void restore(std::int64_t steps, std::vector<ad::Tensor> m, std::vector<ad::Tensor> v);

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<ad::Tensor> m_;
  std::vector<ad::Tensor> v_;
};

}  // namespace llvrp
