#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace rlol {

/// FNV-1a, used to turn stream labels and config text into 64-bit keys.
constexpr std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Counter-based generator keyed by (seed, stream label, step, index).
///
/// Two generators built from the same four coordinates produce identical
/// streams no matter which thread or in what order they are consumed, which is
/// what makes parallel rollout workers reproducible.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::string_view stream, std::uint64_t step = 0, std::uint64_t index = 0);

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal via Box-Muller.
    double normal();
    /// Uniform integer in [0, n); n > 0. Rejection sampling, so unbiased.
    std::uint64_t below(std::uint64_t n);

private:
    std::array<std::uint32_t, 2> key_{};
    std::array<std::uint32_t, 4> counter_{};
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace rlol
