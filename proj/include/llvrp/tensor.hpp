#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace llvrp::ad {

// Up to three dimensions, interpreted as (batch, rows, cols). Lower ranks are
// right-aligned: a rank-1 shape {n} reads as batch=1, rows=1, cols=n.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::size_t numel() const;

  std::size_t batch() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::string str() const;
  bool operator==(const Shape& other) const;

 private:
  std::array<std::size_t, 3> dims_{};
  std::size_t rank_ = 0;
};

// Storage starts on a cache-line boundary. Vectorised kernels choose their
// peeling by address, so a fixed alignment keeps results bitwise repeatable.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

// Dense row-major 64-bit tensor. Rank 0 is a scalar holding one value.
class Tensor {
 public:
  Tensor() : values_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, const std::vector<double>& values);
  Tensor(Shape shape, std::initializer_list<double> values) : Tensor(shape, std::vector<double>(values)) {}

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double> vector() const { return {values_.begin(), values_.end()}; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double& at(std::size_t r, std::size_t c) { return values_[r * shape_.cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_.cols() + c]; }
  double& at(std::size_t b, std::size_t r, std::size_t c) {
    return values_[(b * shape_.rows() + r) * shape_.cols() + c];
  }
  double at(std::size_t b, std::size_t r, std::size_t c) const {
    return values_[(b * shape_.rows() + r) * shape_.cols() + c];
  }

  double item() const;
  bool all_finite() const;
  void fill(double v);
  // Same values under a different shape with equal element count.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  Storage values_;
};

}  // namespace llvrp::ad
