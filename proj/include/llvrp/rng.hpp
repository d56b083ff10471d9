#pragma once

#include <cstdint>
#include <initializer_list>

namespace llvrp {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Counter-based stream: the n-th draw is a pure function of (key, n), so a
// stream can be split into independent children without shared state.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t key) : key_(splitmix64(key)) {}

  // Child stream identified by a path of tags, e.g. split({context, epoch}).
  Rng split(std::initializer_list<std::uint64_t> tags) const {
    std::uint64_t k = key_;
    for (std::uint64_t t : tags) k = splitmix64(k ^ splitmix64(t + 0x632be59bd9b4e019ull));
    return Rng(k);
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] by rejection (no modulo bias).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace llvrp
