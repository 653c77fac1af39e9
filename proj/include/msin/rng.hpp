// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace msin {

using Rng = std::mt19937_64;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for the sub-stream `name` of the run seeded by
/// `seed`. Streams used: "init", "shuffle", "dropout", "synth", "search".
inline Rng make_stream(std::uint64_t seed, std::string_view name,
                       std::uint64_t index = 0) {
  const std::uint64_t a = splitmix64(seed), b = fnv1a(name),
                      c = splitmix64(index + 0x51ed);
  std::seed_seq seq{std::uint32_t(a), std::uint32_t(a >> 32), std::uint32_t(b),
                    std::uint32_t(b >> 32), std::uint32_t(c), std::uint32_t(c >> 32)};
  return Rng(seq);
}

}  // namespace msin
