#pragma once

#include <cstdint>
#include <string_view>

namespace ink {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named sub-seed: independent streams for generation, training, benchmarking
/// and so on, all derived from one root seed.
constexpr std::uint64_t derive_seed(std::uint64_t root,
                                    std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(root ^ mix64(h));
}

} // namespace ink
