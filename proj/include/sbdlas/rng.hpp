#pragma once

#include <cstdint>
#include <random>

namespace sbdlas {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Decorrelated seed for stream `stream` of a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return mix_seed(base + 0x100000001b3ULL * stream);
}

/// Independent generator for stream `stream` of a base seed.
inline Rng make_rng(std::uint64_t base, std::uint64_t stream = 0) {
    return Rng(derive_seed(base, stream));
}

} // namespace sbdlas
