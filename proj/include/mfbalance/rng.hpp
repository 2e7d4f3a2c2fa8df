#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mfbalance {

using Rng = std::mt19937_64;

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Derives an independent sub-stream seed from a master seed and a fixed label.
/// Adding a new label never perturbs the streams of existing labels.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label) noexcept {
  return detail::splitmix64(detail::splitmix64(master) ^ detail::fnv1a(label));
}

inline Rng make_rng(std::uint64_t master, std::string_view label) {
  return Rng(derive_seed(master, label));
}

}  // namespace mfbalance
