#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "llvrp/tensor.hpp"

namespace llvrp {

// Ordered collection of named learnable tensors. Index order is the canonical
// order for gradients, optimiser moments and checkpoints.
class ParameterSet {
 public:
  std::size_t add(std::string name, ad::Tensor init);

  std::size_t size() const { return values_.size(); }
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::string& name(std::size_t i) const { return names_[i]; }
  ad::Tensor& operator[](std::size_t i) { return values_[i]; }
  const ad::Tensor& operator[](std::size_t i) const { return values_[i]; }
  ad::Tensor& at(std::string_view name) { return values_[index(name)]; }
  const ad::Tensor& at(std::string_view name) const { return values_[index(name)]; }

  std::size_t total_elements() const;

  // Zero tensors with one entry per parameter, matching shapes.
  std::vector<ad::Tensor> zeros_like() const;

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> values_;
};

}  // namespace llvrp
