#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rlol/envs.hpp"
#include "rlol/model.hpp"
#include "rlol/optimizers.hpp"

namespace rlol {

struct RolloutBatch {
    std::vector<Episode> episodes;  // contiguous groups of `group_size`
    std::size_t group_size = 1;
    double temperature = 1.0;
    /// Per episode, aligned with `response` tokens.
    std::vector<std::vector<float>> logp_old;
    std::vector<std::vector<float>> logp_ref;

    std::size_t groups() const { return group_size == 0 ? 0 : episodes.size() / group_size; }
    std::size_t response_tokens() const;
    double mean_reward() const;
};

struct RolloutOptions {
    std::size_t n_prompts = 32;
    std::size_t group_size = 4;
    double temperature = 1.0;
    bool greedy = false;
    std::size_t max_response_len = 2;
    /// Threads used for sampling; results do not depend on this.
    std::size_t workers = 1;
};

/// Samples `group_size` responses for each of `n_prompts` prompts.
///
/// Prompt i is drawn from stream ("prompts", step, i) and its responses from
/// ("rollout", step, i), so the batch is a function of (seed, step) alone.
/// `logp_old` is recorded at sampling time from `policy`; `logp_ref` from
/// `reference` (skipped when null). Responses stop at EOS or
/// `max_response_len`, whichever comes first.
RolloutBatch generate_rollouts(const ParamStore& policy, const ParamStore* reference, const EnvSpec& spec,
                               const RolloutOptions& options, std::uint64_t seed, std::uint64_t step);

/// Same sampling procedure over caller-supplied prompts.
RolloutBatch generate_rollouts_for(const ParamStore& policy, const ParamStore* reference, const EnvSpec& spec,
                                   const std::vector<Prompt>& prompts, const RolloutOptions& options,
                                   std::uint64_t seed, std::uint64_t step);

/// Prompt + response rows, right-padded with kPad to the longest episode.
TokenBatch pack_episodes(const std::vector<Episode>& episodes);
/// Flat positions (b * seq + t) of the logits that predict each response token,
/// in episode order.
std::vector<std::size_t> response_logit_rows(const std::vector<Episode>& episodes, std::size_t seq);
/// Next-token targets aligned with `response_logit_rows`.
std::vector<std::int32_t> response_targets(const std::vector<Episode>& episodes);

/// Log-probabilities of every response token under `params` at `temperature`.
std::vector<std::vector<float>> response_log_probs(const ParamStore& params, const std::vector<Episode>& episodes,
                                                   double temperature);

/// Group-relative advantages: r - mean(group), divided by (std + eps) when
/// `normalize_std`. Population std. Groups with zero std get all-zero advantages.
std::vector<double> grpo_advantages(std::span<const double> rewards, std::size_t group_size, bool normalize_std = true,
                                    double eps = 1e-6);

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;  // advantages + values
};

/// delta_t = r_t + gamma V_{t+1} - V_t, A_t = delta_t + gamma lambda A_{t+1}, V_T = 0.
GaeResult gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda);

/// mean over tokens of -min(rho A, clip(rho, 1-eps, 1+eps) A).
double policy_loss(std::span<const double> logp_new, std::span<const double> logp_old,
                   std::span<const double> advantages, double clip_eps);
/// mean over tokens of exp(ref - new) - (ref - new) - 1.
double kl_loss(std::span<const double> logp_new, std::span<const double> logp_ref);

enum class Algo { grpo, ppo, sft };
const char* to_string(Algo algo);
Algo parse_algo(const std::string& text);

struct AlgoConfig {
    Algo algo = Algo::grpo;
    std::size_t group_size = 4;
    std::size_t batch_prompts = 32;
    double clip_eps = 0.2;
    double kl_coeff = 0.001;
    double max_grad_norm = 1.0;
    double temperature = 1.0;
    bool normalize_std = true;
    double adv_eps = 1e-6;
    double gamma = 1.0;
    double lambda = 0.95;
    bool whiten_advantages = true;  // PPO: standardize GAE advantages over the batch

    void validate() const;
    bool operator==(const AlgoConfig&) const = default;
};

struct TrainStepReport {
    std::uint64_t step = 0;
    double mean_reward = 0.0;
    double policy_loss = 0.0;
    double kl = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;  // before clipping
    double clip_fraction = 0.0;
    std::size_t tokens = 0;
    double critic_loss = 0.0;
    double critic_grad_norm = 0.0;
};

/// Critic network and its optimizer (PPO only).
struct Critic {
    ParamStore params;
    OptimizerState optimizer;
};

/// Policy gradients of policy_loss + kl_coeff * kl_loss for `batch`, given
/// per-token advantages aligned with the response tokens. Also fills the
/// loss fields of `report`.
Gradients policy_gradients(const ParamStore& policy, const RolloutBatch& batch,
                           const std::vector<std::vector<double>>& token_advantages, const AlgoConfig& cfg,
                           TrainStepReport& report);

/// One on-policy update. GRPO broadcasts group advantages over each
/// response; PPO runs GAE with `critic` (required) and also updates it.
/// Gradients are clipped to `max_grad_norm` before the optimizer step.
/// A non-finite loss throws before any parameter is modified.
TrainStepReport train_step(ParamStore& policy, OptimizerState& optimizer, const RolloutBatch& batch,
                           const AlgoConfig& cfg, Critic* critic = nullptr,
                           Gradients* captured_grads = nullptr);

}  // namespace rlol
