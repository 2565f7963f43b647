#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace esncid {

// Set of lesioned nodes, stored as a bit set (node i <-> bit i).
class LesionMask {
 public:
  static constexpr int kMaxNodes = 64;

  LesionMask() = default;
  explicit LesionMask(int n_nodes, std::uint64_t bits = 0) : n_(n_nodes), bits_(bits) {
    if (n_nodes < 0 || n_nodes > kMaxNodes)
      throw std::invalid_argument("LesionMask: node count must lie in [0, 64]");
    if (bits & ~full_bits(n_nodes)) throw std::invalid_argument("LesionMask: bit beyond node count");
  }
  LesionMask(int n_nodes, std::initializer_list<int> lesioned) : LesionMask(n_nodes) {
    for (int i : lesioned) insert(i);
  }

  static LesionMask none(int n_nodes) { return LesionMask(n_nodes); }
  static LesionMask all(int n_nodes) { return LesionMask(n_nodes, full_bits(n_nodes)); }
  static LesionMask of(int n_nodes, const std::vector<int>& lesioned) {
    LesionMask m(n_nodes);
    for (int i : lesioned) m.insert(i);
    return m;
  }

  int n_nodes() const { return n_; }
  std::uint64_t bits() const { return bits_; }
  int count() const { return std::popcount(bits_); }
  bool empty() const { return bits_ == 0; }

  bool contains(int i) const { return i >= 0 && i < n_ && ((bits_ >> i) & 1U); }
  void insert(int i) {
    check(i);
    bits_ |= std::uint64_t{1} << i;
  }
  void erase(int i) {
    check(i);
    bits_ &= ~(std::uint64_t{1} << i);
  }

  // Lesioned indices, ascending.
  std::vector<int> lesioned() const {
    std::vector<int> out;
    for (int i = 0; i < n_; ++i)
      if (contains(i)) out.push_back(i);
    return out;
  }
  std::vector<int> survivors() const {
    std::vector<int> out;
    for (int i = 0; i < n_; ++i)
      if (!contains(i)) out.push_back(i);
    return out;
  }

  std::string hex() const {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(bits_));
    return buf;
  }

  friend bool operator==(const LesionMask&, const LesionMask&) = default;

 private:
  static constexpr std::uint64_t full_bits(int n) {
    return n >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1;
  }
  void check(int i) const {
    if (i < 0 || i >= n_) throw std::out_of_range("LesionMask: node index out of range");
  }

  int n_ = 0;
  std::uint64_t bits_ = 0;
};

}  // namespace esncid

template <>
struct std::hash<esncid::LesionMask> {
  std::size_t operator()(const esncid::LesionMask& m) const noexcept {
    std::uint64_t z = m.bits() + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(m.n_nodes() + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return static_cast<std::size_t>(z ^ (z >> 31));
  }
};
