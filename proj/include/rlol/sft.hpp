#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rlol/envs.hpp"
#include "rlol/model.hpp"
#include "rlol/optimizers.hpp"

namespace rlol {

struct SftExample {
    std::vector<std::int32_t> prompt;
    std::vector<std::int32_t> target;  // answer followed by EOS
    bool operator==(const SftExample&) const = default;
};

struct SftDataset {
    std::vector<SftExample> examples;
    std::uint64_t seed = 0;
    bool operator==(const SftDataset&) const = default;
};

/// `size` env prompts with their ground-truth responses; every target is
/// checked with `score` during construction.
SftDataset build_sft_dataset(const EnvSpec& spec, std::size_t size, std::uint64_t seed);

/// One example per line: prompt tokens, " | ", target tokens, space separated.
void save_sft_dataset(const SftDataset& data, const std::string& path);
SftDataset load_sft_dataset(const std::string& path);

/// Indices of the minibatch used at `step`; depends only on (dataset size, seed, step).
std::vector<std::size_t> sft_minibatch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                               std::uint64_t step);

/// Mean cross-entropy over target tokens (prompt positions masked) and its gradients.
double sft_loss_and_gradients(const ParamStore& params, const std::vector<SftExample>& minibatch, Gradients* grads);

struct SftStepReport {
    std::uint64_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;  // before clipping
    std::size_t tokens = 0;
};

/// One supervised update through the same optimizer path as RL: gradients
/// clipped to `max_grad_norm`, `optimizer_step`, bf16 commit.
SftStepReport sft_step(ParamStore& params, OptimizerState& optimizer, const std::vector<SftExample>& minibatch,
                       double max_grad_norm = 1.0, Gradients* captured_grads = nullptr);

}  // namespace rlol
