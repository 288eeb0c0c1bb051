#pragma once

#include <bit>
#include <cstdint>
#include <span>

namespace rlol {

/// bfloat16 bit pattern of `x`, rounded to nearest with ties to even.
/// NaN inputs map to a quiet NaN.
constexpr std::uint16_t bf16_bits(float x) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
    if ((bits & 0x7F800000u) == 0x7F800000u && (bits & 0x007FFFFFu) != 0u)
        return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);
    const std::uint32_t lsb = (bits >> 16) & 1u;
    return static_cast<std::uint16_t>((bits + 0x7FFFu + lsb) >> 16);
}

constexpr float bf16_to_float(std::uint16_t b) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16);
}

/// Value a committed parameter takes after storage in bf16.
constexpr float commit_bf16(float x) { return bf16_to_float(bf16_bits(x)); }

inline void commit_bf16(std::span<const float> master, std::span<std::uint16_t> stored) {
    for (std::size_t i = 0; i < master.size(); ++i) stored[i] = bf16_bits(master[i]);
}

}  // namespace rlol
