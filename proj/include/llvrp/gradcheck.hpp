#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "llvrp/autodiff.hpp"

namespace llvrp {

// Builds a scalar loss on `tape` from the inputs, which arrive as variables
// in the same order as the tensors handed to grad_check.
using GradFn = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> inputs)>;

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t samples_per_input = 20;  // coordinates checked per input tensor (all when smaller)
  std::uint64_t seed = 0;
  // Coordinates whose |central difference| is below this are judged by
  // absolute error instead: at h=1e-5 the difference quotient carries about
  // 1e-10 of rounding noise, which swamps a relative test on tiny gradients.
  double relative_floor = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;        // over coordinates at or above the floor
  double max_abs_error_small = 0.0;  // over coordinates below the floor
  std::size_t checked = 0;
  std::size_t small = 0;
};

// Relative error is |analytic − central difference| / max(1e-8, |central
// difference|). Inputs are restored before returning.
GradCheckReport grad_check_report(const GradFn& f, std::vector<ad::Tensor>& inputs,
                                  const GradCheckOptions& options = {});
// Max relative error over all sampled coordinates.
double grad_check(const GradFn& f, std::vector<ad::Tensor>& inputs, const GradCheckOptions& options = {});

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error_small = 0.0;
  std::size_t checked = 0;
  std::size_t small = 0;
  double seconds = 0.0;

  bool passed() const;
};

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kSmallGradAbsTolerance = 1e-8;
inline constexpr double kPolicyRelativeFloor = 1e-5;

// Every differentiable op composed with a random linear read-out, plus the
// softmax cross-entropy composite, the encoder and full tour log-probs for
// TSP and CVRP (n=5, d=32, h=2, L=2).
std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed);

}  // namespace llvrp
