#include "llvrp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "llvrp/error.hpp"

namespace llvrp {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(fmt::format("checkpoint truncated at byte {}", pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(std::string name, ad::Tensor value) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(name), std::move(value));
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

const ad::Tensor& Checkpoint::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw CheckpointError(fmt::format("checkpoint has no tensor '{}'", name));
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic);
  for (const auto& [name, t] : entries_) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, t.shape().rank());
    for (std::size_t i = 0; i < t.shape().rank(); ++i) put_u64(out, t.shape()[i]);
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) {
    throw CheckpointError("not a checkpoint: missing LLVRP1 header");
  }
  Reader r(bytes.substr(kMagic.size()));
  Checkpoint ck;
  while (!r.done()) {
    const auto len = r.u64();
    std::string name(r.take(len));
    const auto rank = r.u64();
    if (rank > 3) throw CheckpointError(fmt::format("tensor '{}' has rank {}", name, rank));
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u64();
    ad::Shape shape{std::span<const std::size_t>(dims)};
    std::vector<double> values(shape.numel());
    for (auto& v : values) v = std::bit_cast<double>(r.u64());
    ck.entries_.emplace_back(std::move(name), ad::Tensor(shape, std::move(values)));
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(fmt::format("cannot write {}", path.string()));
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace llvrp
