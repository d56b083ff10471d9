#include "llvrp/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "llvrp/error.hpp"

namespace llvrp::ad {

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.size() > 3) {
    throw DimensionError(fmt::format("tensor rank {} exceeds 3", dims.size()));
  }
  rank_ = dims.size();
  std::copy(dims.begin(), dims.end(), dims_.begin());
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::size_t Shape::batch() const { return rank_ == 3 ? dims_[0] : 1; }

std::size_t Shape::rows() const {
  if (rank_ == 3) return dims_[1];
  if (rank_ == 2) return dims_[0];
  return 1;
}

std::size_t Shape::cols() const { return rank_ == 0 ? 1 : dims_[rank_ - 1]; }

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < rank_; ++i) {
    if (i) s += "x";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

bool Shape::operator==(const Shape& other) const {
  if (rank_ != other.rank_) return false;
  for (std::size_t i = 0; i < rank_; ++i) {
    if (dims_[i] != other.dims_[i]) return false;
  }
  return true;
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), values_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : shape_(shape), values_(values.begin(), values.end()) {
  if (values_.size() != shape_.numel()) {
    throw DimensionError(fmt::format("shape {} needs {} values, got {}", shape_.str(),
                                     shape_.numel(), values_.size()));
  }
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ContractError(fmt::format("item() on non-scalar tensor {}", shape_.str()));
  }
  return values_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != values_.size()) {
    throw DimensionError(
        fmt::format("cannot reshape {} into {}", shape_.str(), shape.str()));
  }
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

}  // namespace llvrp::ad
