#include "llvrp/params.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "llvrp/error.hpp"

namespace llvrp {

std::size_t ParameterSet::add(std::string name, ad::Tensor init) {
  if (contains(name)) throw ContractError(fmt::format("duplicate parameter '{}'", name));
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::size_t ParameterSet::index(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ContractError(fmt::format("unknown parameter '{}'", name));
  return static_cast<std::size_t>(it - names_.begin());
}

bool ParameterSet::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::vector<ad::Tensor> ParameterSet::zeros_like() const {
  std::vector<ad::Tensor> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.emplace_back(v.shape(), 0.0);
  return out;
}

}  // namespace llvrp
