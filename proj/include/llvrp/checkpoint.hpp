#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "llvrp/tensor.hpp"

namespace llvrp {

// Container of named tensors.
//
// Binary layout (all integers u64 little-endian, values f64 little-endian):
//   "LLVRP1"
//   repeated until end of file:
//     name_len, name bytes (UTF-8), rank, dims[rank], values[prod(dims)]
class Checkpoint {
 public:
  static constexpr std::string_view kMagic = "LLVRP1";

  void put(std::string name, ad::Tensor value);
  bool contains(std::string_view name) const;
  const ad::Tensor& get(std::string_view name) const;
  const std::vector<std::pair<std::string, ad::Tensor>>& entries() const { return entries_; }

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, ad::Tensor>> entries_;
};

}  // namespace llvrp
