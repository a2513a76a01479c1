#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace faasmeter {

// Stable 64-bit FNV-1a; std::hash is not stable across implementations.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent generator per (seed, stream name). Keying streams by name keeps a
// function's schedule unchanged when other functions are added or removed.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view stream) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(fnv1a(stream))));
}

// Uniform in [0, 1) derived from a name only; used for fixed per-function traits.
inline double unit_hash(std::string_view name, std::uint64_t salt) {
  return static_cast<double>(splitmix64(fnv1a(name) ^ splitmix64(salt)) >> 11) * 0x1.0p-53;
}

}  // namespace faasmeter
