#pragma once

#include <cstdint>
#include <random>

namespace nncov {

using Rng = std::mt19937_64;

// Independent stream for a (base seed, a, b) triple; used to give every seed
// visit its own generator so results do not depend on scheduling.
inline Rng derive_rng(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace nncov
