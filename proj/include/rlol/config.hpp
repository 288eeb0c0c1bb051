#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rlol/envs.hpp"
#include "rlol/model.hpp"
#include "rlol/optimizers.hpp"
#include "rlol/rl.hpp"

namespace rlol {

/// Supervised warm start applied before RL, standing in for a pretrained base
/// model. Uses AdamW at `lr`; its optimizer state is discarded and the masters
/// are reset to the committed bf16 values afterwards.
struct InitConfig {
    std::size_t pretrain_steps = 0;
    double pretrain_lr = 1e-3;
    std::size_t pretrain_batch = 64;
    std::size_t pretrain_dataset_size = 4096;
    bool operator==(const InitConfig&) const = default;
};

struct ExperimentConfig {
    std::string name = "run";
    std::uint64_t seed = 0;
    std::size_t steps = 300;
    std::string output_dir = "runs";
    std::size_t checkpoint_interval = 25;
    std::vector<std::uint64_t> probe_steps{50};
    std::size_t workers = 1;
    std::size_t eval_prompts = 128;
    std::size_t eval_interval = 25;
    /// Window (in steps) averaged for the final training reward.
    std::size_t final_window = 10;
    /// A mean KL to the reference above this marks the run diverged.
    double divergence_kl = 10.0;
    /// Master-weight L2 norm above this multiple of its initial value marks the
    /// run diverged; catches saturated policies whose KL gradient has vanished.
    double divergence_norm_ratio = 10.0;
    bool record_wall_ms = false;

    ModelConfig model;
    EnvSpec env;
    AlgoConfig algo;
    std::size_t sft_dataset_size = 1000;
    std::size_t sft_batch = 128;

    OptimizerKind optimizer = OptimizerKind::adamw;
    HyperParams hp = HyperParams::defaults(OptimizerKind::adamw);

    /// Critic learning rate (PPO); 0 means "same as the policy".
    double critic_lr = 0.0;
    bool critic_init_from_policy = true;

    InitConfig init;

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Flat `key = value` text with dotted sections; every key is emitted, so
/// parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& config);
/// Strict: unknown or duplicate keys and malformed values throw config errors.
/// Keys not present keep their defaults. `#` starts a comment line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Applies one `key=value` override on top of `config`.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

std::uint64_t config_hash(const ExperimentConfig& config);

/// Policy-model config turned into the critic's: tied output and a value head.
ModelConfig critic_model_config(const ModelConfig& policy);

}  // namespace rlol
