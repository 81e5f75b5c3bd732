#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace evidencelab {

// All randomness in the library flows through this engine type. The raw
// output sequence of mt19937_64 is fixed by the standard; the helpers below
// avoid std::*_distribution so draws are identical across standard libraries.
using Rng = std::mt19937_64;

// 64-bit FNV-1a. Used for stream labels, config digests and state hashes.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

constexpr std::uint64_t stream_tag(std::string_view label) noexcept { return fnv1a(label); }

// Independent stream for a (master seed, path) pair, e.g.
// make_stream(seed, {stream_tag("deck"), group, member, block, period}).
Rng make_stream(std::uint64_t master_seed, std::initializer_list<std::uint64_t> path);

// Uniform integer in [0, bound). bound must be positive.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound);

// Uniform integer in [lo, hi].
int uniform_int(Rng& rng, int lo, int hi);

// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

inline bool coin(Rng& rng) { return (rng() >> 63) != 0; }

}  // namespace evidencelab
