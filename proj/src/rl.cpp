#include "rlol/rl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "rlol/error.hpp"

namespace rlol {

std::size_t RolloutBatch::response_tokens() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.response.size();
    return n;
}

double RolloutBatch::mean_reward() const {
    if (episodes.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : episodes) s += e.reward;
    return s / static_cast<double>(episodes.size());
}

// ---- sampling ---------------------------------------------------------------

namespace {

/// log softmax(z / temperature) over one row, in double.
std::vector<double> log_softmax_row(const float* z, std::size_t V, double temperature) {
    std::vector<double> out(V);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(z[j]) / temperature);
    double s = 0.0;
    for (std::size_t j = 0; j < V; ++j) s += std::exp(static_cast<double>(z[j]) / temperature - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < V; ++j) out[j] = static_cast<double>(z[j]) / temperature - lse;
    return out;
}

std::int32_t sample_token(const std::vector<double>& logp, bool greedy, CounterRng& rng) {
    if (greedy) return static_cast<std::int32_t>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    const double u = rng.uniform();
    double c = 0.0;
    for (std::size_t j = 0; j < logp.size(); ++j) {
        c += std::exp(logp[j]);
        if (u < c) return static_cast<std::int32_t>(j);
    }
    // u landed in the rounding gap above the accumulated mass
    for (std::size_t j = logp.size(); j-- > 0;)
        if (std::isfinite(logp[j])) return static_cast<std::int32_t>(j);
    return 0;
}

/// Autoregressively extends episodes [begin, end). Each prompt group owns its
/// RNG stream, so the result is independent of how prompts are partitioned.
void sample_range(const ParamStore& policy, const EnvSpec& spec, const RolloutOptions& opt, std::uint64_t seed,
                  std::uint64_t step, std::vector<Episode>& eps, std::vector<std::vector<float>>& logp,
                  std::size_t begin, std::size_t end) {
    const std::size_t V = policy.config.vocab_size;
    const std::size_t max_seq = policy.config.max_seq_len;
    std::map<std::size_t, CounterRng> rngs;
    for (std::size_t i = begin; i < end; ++i)
        if (!rngs.count(eps[i].group_id)) rngs.emplace(eps[i].group_id, CounterRng(seed, "rollout", step, eps[i].group_id));
    std::vector<bool> done(eps.size(), false);
    for (std::size_t j = 0; j < opt.max_response_len; ++j) {
        // Active episodes bucketed by current length; one forward per bucket.
        std::map<std::size_t, std::vector<std::size_t>> buckets;
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t len = eps[i].prompt.size() + eps[i].response.size();
            if (done[i] || len >= max_seq) continue;
            buckets[len].push_back(i);
        }
        if (buckets.empty()) break;
        std::map<std::size_t, std::vector<double>> row_logp;
        for (const auto& [len, members] : buckets) {
            TokenBatch tb{members.size(), len, {}};
            tb.tokens.reserve(members.size() * len);
            for (auto i : members) {
                tb.tokens.insert(tb.tokens.end(), eps[i].prompt.begin(), eps[i].prompt.end());
                tb.tokens.insert(tb.tokens.end(), eps[i].response.begin(), eps[i].response.end());
            }
            const Tensor<float> logits = forward_logits(policy, tb);
            for (std::size_t r = 0; r < members.size(); ++r)
                row_logp[members[r]] = log_softmax_row(logits.data.data() + (r * len + len - 1) * V, V, opt.temperature);
        }
        for (auto& [i, lp] : row_logp) {
            const std::int32_t tok = sample_token(lp, opt.greedy, rngs.at(eps[i].group_id));
            eps[i].response.push_back(tok);
            logp[i].push_back(static_cast<float>(lp[static_cast<std::size_t>(tok)]));
            if (tok == vocab::kEos) done[i] = true;
        }
    }
    (void)spec;
}

}  // namespace

RolloutBatch generate_rollouts_for(const ParamStore& policy, const ParamStore* reference, const EnvSpec& spec,
                                   const std::vector<Prompt>& prompts, const RolloutOptions& opt, std::uint64_t seed,
                                   std::uint64_t step) {
    require(opt.group_size >= 1, ErrorKind::invalid_argument, "generate_rollouts: group size must be >= 1");
    require(opt.temperature > 0.0, ErrorKind::invalid_argument, "generate_rollouts: temperature must be positive");
    RolloutBatch batch;
    batch.group_size = opt.group_size;
    batch.temperature = opt.temperature;
    for (std::size_t i = 0; i < prompts.size(); ++i)
        for (std::size_t g = 0; g < opt.group_size; ++g)
            batch.episodes.push_back(Episode{prompts[i].tokens, {}, 0.0, i});
    batch.logp_old.assign(batch.episodes.size(), {});

    const std::size_t workers = std::max<std::size_t>(1, std::min(opt.workers, prompts.size()));
    if (workers == 1) {
        sample_range(policy, spec, opt, seed, step, batch.episodes, batch.logp_old, 0, batch.episodes.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t per = (prompts.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t pb = std::min(prompts.size(), w * per), pe = std::min(prompts.size(), pb + per);
            if (pb == pe) continue;
            pool.emplace_back([&, pb, pe] {
                sample_range(policy, spec, opt, seed, step, batch.episodes, batch.logp_old, pb * opt.group_size,
                             pe * opt.group_size);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : batch.episodes) e.reward = score(spec, e.prompt, e.response);
    // Sampling-time values agree to float rounding; the recomputation makes
    // them identical to what the first training forward sees.
    if (!batch.episodes.empty()) batch.logp_old = response_log_probs(policy, batch.episodes, opt.temperature);
    if (reference != nullptr && !batch.episodes.empty())
        batch.logp_ref = response_log_probs(*reference, batch.episodes, opt.temperature);
    return batch;
}

RolloutBatch generate_rollouts(const ParamStore& policy, const ParamStore* reference, const EnvSpec& spec,
                               const RolloutOptions& opt, std::uint64_t seed, std::uint64_t step) {
    std::vector<Prompt> prompts;
    prompts.reserve(opt.n_prompts);
    for (std::size_t i = 0; i < opt.n_prompts; ++i) {
        CounterRng rng(seed, "prompts", step, i);
        prompts.push_back(sample_prompt(spec, rng));
    }
    return generate_rollouts_for(policy, reference, spec, prompts, opt, seed, step);
}

TokenBatch pack_episodes(const std::vector<Episode>& episodes) {
    std::size_t seq = 0;
    for (const auto& e : episodes) seq = std::max(seq, e.prompt.size() + e.response.size());
    TokenBatch tb{episodes.size(), seq, std::vector<std::int32_t>(episodes.size() * seq, vocab::kPad)};
    for (std::size_t b = 0; b < episodes.size(); ++b) {
        auto it = tb.tokens.begin() + static_cast<std::ptrdiff_t>(b * seq);
        it = std::copy(episodes[b].prompt.begin(), episodes[b].prompt.end(), it);
        std::copy(episodes[b].response.begin(), episodes[b].response.end(), it);
    }
    return tb;
}

std::vector<std::size_t> response_logit_rows(const std::vector<Episode>& episodes, std::size_t seq) {
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < episodes.size(); ++b) {
        require(!episodes[b].prompt.empty(), ErrorKind::invalid_argument, "episode with empty prompt");
        for (std::size_t j = 0; j < episodes[b].response.size(); ++j)
            rows.push_back(b * seq + episodes[b].prompt.size() + j - 1);
    }
    return rows;
}

std::vector<std::int32_t> response_targets(const std::vector<Episode>& episodes) {
    std::vector<std::int32_t> t;
    for (const auto& e : episodes) t.insert(t.end(), e.response.begin(), e.response.end());
    return t;
}

namespace {

/// Per-token log-probabilities of the response tokens of a packed batch. Both
/// rollout bookkeeping and training go through this, so an unchanged policy
/// reproduces its recorded log-probabilities bit for bit.
ad::Var<float> trace_response_log_probs(const BoundParams<float>& bound, const TokenBatch& tb,
                                        std::span<const std::size_t> rows, double temperature) {
    ad::Var<float> logits = trace_logits(bound, tb);
    if (temperature != 1.0) logits = ad::scale(logits, static_cast<float>(1.0 / temperature));
    std::vector<std::int32_t> targets(tb.tokens.size(), vocab::kPad);
    for (std::size_t b = 0; b < tb.batch; ++b)
        for (std::size_t s = 0; s + 1 < tb.seq; ++s) targets[b * tb.seq + s] = tb.at(b, s + 1);
    return ad::gather(ad::log_softmax_gather(logits, std::span<const std::int32_t>(targets)), rows);
}

}  // namespace

std::vector<std::vector<float>> response_log_probs(const ParamStore& params, const std::vector<Episode>& episodes,
                                                   double temperature) {
    const TokenBatch tb = pack_episodes(episodes);
    std::vector<std::vector<float>> out(episodes.size());
    const auto rows = response_logit_rows(episodes, tb.seq);
    if (rows.empty()) return out;
    ad::Tape<float> tape;
    const auto bound = bind_params(tape, params, false);
    const auto lp = trace_response_log_probs(bound, tb, rows, temperature).value();
    std::size_t k = 0;
    for (std::size_t b = 0; b < episodes.size(); ++b)
        for (std::size_t j = 0; j < episodes[b].response.size(); ++j) out[b].push_back(lp.data[k++]);
    return out;
}

// ---- advantages and scalar losses -------------------------------------------

std::vector<double> grpo_advantages(std::span<const double> rewards, std::size_t group_size, bool normalize_std,
                                    double eps) {
    require(group_size >= 1 && rewards.size() % group_size == 0, ErrorKind::dimension,
            "grpo_advantages: rewards do not form whole groups of " + std::to_string(group_size));
    std::vector<double> adv(rewards.size());
    for (std::size_t g0 = 0; g0 < rewards.size(); g0 += group_size) {
        double mean = 0.0;
        for (std::size_t i = 0; i < group_size; ++i) mean += rewards[g0 + i];
        mean /= static_cast<double>(group_size);
        double var = 0.0;
        for (std::size_t i = 0; i < group_size; ++i) var += (rewards[g0 + i] - mean) * (rewards[g0 + i] - mean);
        const double sd = std::sqrt(var / static_cast<double>(group_size));
        for (std::size_t i = 0; i < group_size; ++i) {
            if (sd == 0.0) adv[g0 + i] = 0.0;
            else adv[g0 + i] = normalize_std ? (rewards[g0 + i] - mean) / (sd + eps) : rewards[g0 + i] - mean;
        }
    }
    return adv;
}

GaeResult gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                         double lambda) {
    require(rewards.size() == values.size(), ErrorKind::dimension, "gae_advantages: length mismatch");
    require(gamma >= 0.0 && gamma <= 1.0 && lambda >= 0.0 && lambda <= 1.0, ErrorKind::invalid_argument,
            "gae_advantages: gamma and lambda must lie in [0, 1]");
    const std::size_t T = rewards.size();
    GaeResult r{std::vector<double>(T), std::vector<double>(T)};
    double next_adv = 0.0;
    for (std::size_t t = T; t-- > 0;) {
        const double next_v = t + 1 < T ? values[t + 1] : 0.0;
        const double delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        r.advantages[t] = next_adv;
        r.returns[t] = next_adv + values[t];
    }
    return r;
}

double policy_loss(std::span<const double> logp_new, std::span<const double> logp_old,
                   std::span<const double> advantages, double clip_eps) {
    require(logp_new.size() == logp_old.size() && logp_new.size() == advantages.size() && !logp_new.empty(),
            ErrorKind::dimension, "policy_loss: misaligned inputs");
    double total = 0.0;
    for (std::size_t i = 0; i < logp_new.size(); ++i) {
        const double rho = std::exp(logp_new[i] - logp_old[i]);
        require(std::isfinite(rho), ErrorKind::non_finite, "policy_loss: non-finite probability ratio");
        const double a = advantages[i];
        total += -std::min(rho * a, std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps) * a);
    }
    return total / static_cast<double>(logp_new.size());
}

double kl_loss(std::span<const double> logp_new, std::span<const double> logp_ref) {
    require(logp_new.size() == logp_ref.size() && !logp_new.empty(), ErrorKind::dimension,
            "kl_loss: misaligned inputs");
    double total = 0.0;
    for (std::size_t i = 0; i < logp_new.size(); ++i) {
        const double d = logp_ref[i] - logp_new[i];
        total += std::exp(d) - d - 1.0;
    }
    return total / static_cast<double>(logp_new.size());
}

// ---- training step ------------------------------------------------------------

const char* to_string(Algo algo) {
    switch (algo) {
        case Algo::grpo: return "grpo";
        case Algo::ppo: return "ppo";
        case Algo::sft: return "sft";
    }
    return "?";
}

Algo parse_algo(const std::string& text) {
    if (text == "grpo") return Algo::grpo;
    if (text == "ppo") return Algo::ppo;
    if (text == "sft") return Algo::sft;
    fail(ErrorKind::config, "unknown algo '" + text + "'");
}

void AlgoConfig::validate() const {
    require(group_size >= 1, ErrorKind::config, "algo: group_size must be >= 1");
    require(batch_prompts >= 1, ErrorKind::config, "algo: batch_prompts must be >= 1");
    require(clip_eps > 0.0, ErrorKind::config, "algo: clip_eps must be positive");
    require(kl_coeff >= 0.0, ErrorKind::config, "algo: kl_coeff must be non-negative");
    require(max_grad_norm > 0.0, ErrorKind::config, "algo: max_grad_norm must be positive");
    require(temperature > 0.0, ErrorKind::config, "algo: temperature must be positive");
    require(adv_eps >= 0.0, ErrorKind::config, "algo: adv_eps must be non-negative");
    require(gamma >= 0.0 && gamma <= 1.0 && lambda >= 0.0 && lambda <= 1.0, ErrorKind::config,
            "algo: gamma and lambda must lie in [0, 1]");
}

namespace {

std::vector<float> flatten(const std::vector<std::vector<float>>& rows) {
    std::vector<float> out;
    for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
    return out;
}

bool all_finite(const Gradients& g) {
    for (const auto& t : g)
        for (float x : t)
            if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

Gradients policy_gradients(const ParamStore& policy, const RolloutBatch& batch,
                           const std::vector<std::vector<double>>& token_advantages, const AlgoConfig& cfg,
                           TrainStepReport& report) {
    require(!batch.episodes.empty(), ErrorKind::invalid_argument, "train_step: empty batch");
    require(batch.logp_old.size() == batch.episodes.size(), ErrorKind::dimension, "train_step: missing logp_old");
    const bool use_kl = cfg.kl_coeff > 0.0;
    require(!use_kl || batch.logp_ref.size() == batch.episodes.size(), ErrorKind::dimension,
            "train_step: missing logp_ref");
    const TokenBatch tb = pack_episodes(batch.episodes);
    const auto rows = response_logit_rows(batch.episodes, tb.seq);
    require(!rows.empty(), ErrorKind::invalid_argument, "train_step: batch has no response tokens");
    const auto old = flatten(batch.logp_old);
    std::vector<float> adv;
    for (const auto& a : token_advantages)
        for (double x : a) adv.push_back(static_cast<float>(x));
    require(old.size() == rows.size() && adv.size() == rows.size(), ErrorKind::dimension,
            "train_step: per-token arrays do not match response tokens");

    using namespace ad;
    Tape<float> tape;
    auto bound = bind_params(tape, policy, true);
    Var<float> lp = trace_response_log_probs(bound, tb, rows, batch.temperature);
    Var<float> pol = clipped_surrogate(lp, std::span<const float>(old), std::span<const float>(adv),
                                       static_cast<float>(cfg.clip_eps));
    Var<float> loss = pol;
    report.kl = 0.0;
    if (use_kl) {
        const auto ref = flatten(batch.logp_ref);
        Var<float> kl = kl_k3(lp, std::span<const float>(ref));
        report.kl = kl.value().data[0];
        loss = add(pol, scale(kl, static_cast<float>(cfg.kl_coeff)));
    }
    report.policy_loss = pol.value().data[0];
    report.loss = loss.value().data[0];
    report.tokens = rows.size();
    std::size_t clipped = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (std::abs(std::exp(static_cast<double>(lp.value().data[i]) - old[i]) - 1.0) > cfg.clip_eps) ++clipped;
    report.clip_fraction = static_cast<double>(clipped) / static_cast<double>(rows.size());
    require(std::isfinite(report.loss), ErrorKind::non_finite, "train_step: non-finite loss");
    tape.backward(loss);
    return collect_gradients(bound);
}

TrainStepReport train_step(ParamStore& policy, OptimizerState& optimizer, const RolloutBatch& batch,
                           const AlgoConfig& cfg, Critic* critic, Gradients* captured_grads) {
    cfg.validate();
    require(cfg.algo != Algo::sft, ErrorKind::invalid_argument, "train_step: sft batches go through sft_step");
    require(!batch.episodes.empty(), ErrorKind::invalid_argument, "train_step: empty batch");
    TrainStepReport report;
    report.step = policy.step;
    report.mean_reward = batch.mean_reward();

    std::vector<std::vector<double>> token_adv(batch.episodes.size());
    Gradients critic_grads;
    if (cfg.algo == Algo::grpo) {
        std::vector<double> rewards;
        for (const auto& e : batch.episodes) rewards.push_back(e.reward);
        const auto adv = grpo_advantages(rewards, batch.group_size, cfg.normalize_std, cfg.adv_eps);
        for (std::size_t i = 0; i < batch.episodes.size(); ++i)
            token_adv[i].assign(batch.episodes[i].response.size(), adv[i]);
    } else {
        require(critic != nullptr, ErrorKind::invalid_argument, "train_step: ppo needs a critic");
        const TokenBatch tb = pack_episodes(batch.episodes);
        const auto rows = response_logit_rows(batch.episodes, tb.seq);
        const Tensor<float> values = forward_value(critic->params, tb);
        std::vector<double> returns;
        std::size_t k = 0;
        for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
            const std::size_t T = batch.episodes[i].response.size();
            std::vector<double> r(T, 0.0), v(T);
            if (T > 0) r[T - 1] = batch.episodes[i].reward;
            for (std::size_t t = 0; t < T; ++t) v[t] = values.data[rows[k + t]];
            k += T;
            auto g = gae_advantages(r, v, cfg.gamma, cfg.lambda);
            token_adv[i] = std::move(g.advantages);
            returns.insert(returns.end(), g.returns.begin(), g.returns.end());
        }
        if (cfg.whiten_advantages) {
            double mean = 0.0, n = 0.0;
            for (const auto& a : token_adv)
                for (double x : a) mean += x, n += 1.0;
            mean /= std::max(n, 1.0);
            double var = 0.0;
            for (const auto& a : token_adv)
                for (double x : a) var += (x - mean) * (x - mean);
            const double sd = std::sqrt(var / std::max(n, 1.0));
            for (auto& a : token_adv)
                for (double& x : a) x = (x - mean) / (sd + 1e-8);
        }
        ad::Tape<float> tape;
        auto bound = bind_params(tape, critic->params, true);
        auto vals = ad::gather(trace_values(bound, tb), std::span<const std::size_t>(rows));
        std::vector<float> targets(returns.begin(), returns.end());
        auto closs = ad::half_mse(vals, std::span<const float>(targets));
        report.critic_loss = closs.value().data[0];
        require(std::isfinite(report.critic_loss), ErrorKind::non_finite, "train_step: non-finite critic loss");
        tape.backward(closs);
        critic_grads = collect_gradients(bound);
    }

    Gradients grads = policy_gradients(policy, batch, token_adv, cfg, report);
    require(all_finite(grads) && all_finite(critic_grads), ErrorKind::non_finite, "train_step: non-finite gradient");
    report.grad_norm = clip_global_norm(grads, cfg.max_grad_norm);
    if (critic != nullptr && cfg.algo == Algo::ppo) {
        report.critic_grad_norm = clip_global_norm(critic_grads, cfg.max_grad_norm);
        optimizer_step(critic->optimizer, critic->params, critic_grads);
    }
    optimizer_step(optimizer, policy, grads);
    if (captured_grads != nullptr) *captured_grads = std::move(grads);
    return report;
}

}  // namespace rlol
