#pragma once

// Platform-stable randomness. std::mt19937_64 output is fully specified by
// the standard, but the std distributions and std::shuffle are not, so the
// helpers below are used wherever results must be reproducible.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace alps {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named sub-seed: the same (seed, name) always yields the same stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

/// Uniform integer in [0, n) by rejection; n must be > 0.
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
  const std::uint64_t limit = Engine::max() - (Engine::max() % n);
  std::uint64_t v;
  do {
    v = eng();
  } while (v >= limit && limit != 0);
  return v % n;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Engine& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

template <class T>
void stable_shuffle(std::span<T> items, Engine& eng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform_index(eng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace alps
