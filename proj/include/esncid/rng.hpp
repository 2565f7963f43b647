#pragma once

// Seed derivation and random streams.
//
// Every stochastic stage draws from a stream whose seed is derived from the
// master seed plus a stage label and index, so adding a stage never shifts the
// draws of another. Counter-based draws are used wherever results must not
// depend on evaluation order (SER runs, permutation walks).

#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace esncid {

namespace detail {

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

}  // namespace detail

// SplitMix64 finaliser; bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// BLAKE2b keyed on (master, label, index); first 8 bytes little-endian.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  detail::ensure_sodium();
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, 8);
  std::array<unsigned char, 8> buf{};
  for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>(master >> (8 * b));
  crypto_generichash_update(&st, buf.data(), buf.size());
  crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(label.data()),
                            label.size());
  for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>(index >> (8 * b));
  crypto_generichash_update(&st, buf.data(), buf.size());
  std::array<unsigned char, 8> out{};
  crypto_generichash_final(&st, out.data(), out.size());
  std::uint64_t seed = 0;
  for (int b = 0; b < 8; ++b) seed |= static_cast<std::uint64_t>(out[b]) << (8 * b);
  return seed;
}

// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

namespace detail {
inline constexpr std::uint64_t kCounterSalt = 0x632BE59BD9B4E019ULL;
}

// Counter-based draw: a pure function of (key, counter).
constexpr double counter_uniform(std::uint64_t key, std::uint64_t counter) noexcept {
  return to_unit(mix64(mix64(key) ^ mix64(counter + detail::kCounterSalt)));
}

constexpr std::uint64_t substream_key(std::uint64_t key, std::uint64_t index) noexcept {
  return mix64(key ^ mix64(index ^ 0xD1B54A32D192ED03ULL));
}

// Sequential stream with platform-independent conversions (the std
// distributions are implementation-defined, which would break digests).
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }
  double uniform() { return to_unit(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Stream::below: bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r = 0;
    do {
      r = engine_();
    } while (r >= limit);
    return r % bound;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace esncid
