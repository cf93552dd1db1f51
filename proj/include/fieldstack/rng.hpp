#pragma once

#include <cstdint>
#include <random>

namespace fieldstack {

/// Uniform integer in [0, n) via rejection sampling on raw 64-bit draws.
/// std::uniform_int_distribution is implementation-defined, so seeded runs
/// would differ across standard libraries; this keeps the stream portable.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t n) {
    const std::uint64_t rem = (0 - n) % n;
    std::uint64_t x;
    do {
        x = gen();
    } while (x < rem);
    return x % n;
}

} // namespace fieldstack
