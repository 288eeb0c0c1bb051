#pragma once

// Binary checkpoint layout (all integers little-endian):
//
//   "RLOL" | u32 version | u64 model-config hash | u64 step
//   model config: 6 x u64 sizes, u8 tie_output, u8 value_head
//   u8 has_optimizer [u8 kind | u64 t | 6 x f64 hyperparameters | u8 bias_correction]
//   u32 entry count, then per entry:
//     u16 name length | name | u8 dtype (0 bf16, 1 f32) | u8 rank | rank x u64 dims
//     | u64 payload offset | u64 byte count
//   payload
//
// Entry names: "stored/<param>", "master/<param>", "m/<param>", "v/<param>"
// and, for probes, "grad/<param>".

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rlol/model.hpp"
#include "rlol/optimizers.hpp"

namespace rlol {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ParamStore params;
    std::optional<OptimizerState> optimizer;
    std::optional<Gradients> grads;

    bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rlol
