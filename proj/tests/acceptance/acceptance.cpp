// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Long-running criteria share runs: 4, 5 and 6 use the same six GRPO runs and
// 9 reuses the AdamW seed-0 run's probe.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rlol/analysis.hpp"
#include "rlol/bf16.hpp"
#include "rlol/config.hpp"
#include "rlol/error.hpp"
#include "rlol/experiment.hpp"
#include "rlol/optimizers.hpp"
#include "rlol/rl.hpp"

using namespace rlol;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Context {
    fs::path source_dir;
    fs::path out_dir;
    std::string unit_binary;

    ExperimentConfig config(const std::string& name) const {
        return load_config((source_dir / "configs" / (name + ".conf")).string());
    }
    fs::path run_dir(const std::string& name) const { return out_dir / name; }
};

// ---------------------------------------------------------------- criterion 1

/// Straight-line scalar transcription of the four update rules.
struct RefState {
    double theta, m, v;
};

RefState reference_update(OptimizerKind k, const HyperParams& hp, std::uint64_t t, RefState s, double g) {
    switch (k) {
        case OptimizerKind::sgd:
            s.theta = s.theta - hp.lr * g;
            break;
        case OptimizerKind::sgd_momentum:
            s.m = hp.momentum * s.m + g;
            s.theta = s.theta - hp.lr * s.m;
            break;
        case OptimizerKind::rmsprop:
            s.v = hp.beta2 * s.v + (1.0 - hp.beta2) * g * g;
            s.theta = s.theta - hp.lr * g / (std::sqrt(s.v) + hp.eps);
            break;
        case OptimizerKind::adamw: {
            s.m = hp.beta1 * s.m + (1.0 - hp.beta1) * g;
            s.v = hp.beta2 * s.v + (1.0 - hp.beta2) * g * g;
            double mh = s.m, vh = s.v;
            if (hp.bias_correction) {
                mh = s.m / (1.0 - std::pow(hp.beta1, static_cast<double>(t)));
                vh = s.v / (1.0 - std::pow(hp.beta2, static_cast<double>(t)));
            }
            s.theta = s.theta - hp.lr * (mh / (std::sqrt(vh) + hp.eps) + hp.weight_decay * s.theta);
            break;
        }
    }
    return s;
}

Outcome optimizer_fuzz() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 gen(20240611);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto log_uniform = [&](double lo, double hi) { return std::pow(10.0, lo + (hi - lo) * u(gen)); };
    double worst = 0.0;
    std::size_t cases = 0, bad = 0;
    for (auto k : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::rmsprop, OptimizerKind::adamw}) {
        for (int i = 0; i < 1000; ++i, ++cases) {
            HyperParams hp;
            hp.lr = log_uniform(-7, 0);
            hp.momentum = 0.999 * u(gen);
            hp.beta1 = 0.999 * u(gen);
            hp.beta2 = 1.0 - log_uniform(-5, -1);
            hp.eps = log_uniform(-10, -6);
            hp.weight_decay = 0.1 * u(gen);
            hp.bias_correction = u(gen) < 0.5;
            const std::uint64_t t = 1 + static_cast<std::uint64_t>(u(gen) * 10000);
            const double sign = u(gen) < 0.5 ? -1.0 : 1.0;
            const RefState s0{4.0 * u(gen) - 2.0, 2.0 * u(gen) - 1.0, log_uniform(-12, 0)};
            const double g = sign * log_uniform(-8, 1);

            const RefState want = reference_update(k, hp, t, s0, g);
            RefState got = s0;
            std::span<double> th(&got.theta, 1), m(&got.m, uses_m(k) ? 1 : 0), v(&got.v, uses_v(k) ? 1 : 0);
            apply_update<double>(k, hp, t, th, m, v, std::span<const double>(&g, 1));

            // Relative to max(1, |reference|): absolute near unit scale.
            auto err = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
            double e = err(got.theta, want.theta);
            if (uses_m(k)) e = std::max(e, err(got.m, want.m));
            if (uses_v(k)) e = std::max(e, err(got.v, want.v));
            worst = std::max(worst, e);
            bad += !(e <= 1e-12);
        }
    }
    const double secs = seconds_since(t0);
    return {bad == 0 && secs < 5.0, fmt("%zu cases, %zu outside 1e-12, worst %.3g, %.3f s (limit 5 s)", cases, bad, worst, secs)};
}

// ---------------------------------------------------------------- criterion 2

Outcome gradient_check(const Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig c = ctx.config("ppo_sgd");
    c.model.d_model = 32;
    c.model.n_layers = 2;
    c.model.n_heads = 4;
    c.model.d_ff = 128;
    const json r = gradcheck_config(c, 64, 1e-5);
    const double err = r["max_rel_error"].get<double>();
    const std::size_t coords = r["coords_checked"].get<std::size_t>();
    const double secs = seconds_since(t0);
    return {err < 1e-3 && coords >= 64 && secs < 60.0,
            fmt("d=32 L=2 (policy + value head), %zu coords, max rel error %.3g (limit 1e-3), %.1f s", coords, err, secs)};
}

// ---------------------------------------------------------------- criterion 3

Outcome memory_accounting(const Context& ctx) {
    const std::uint64_t big = 1'700'000'000;
    const double saving = static_cast<double>(optimizer_memory_bytes(big, OptimizerKind::adamw) -
                                              optimizer_memory_bytes(big, OptimizerKind::sgd));
    const double rel = std::abs(saving - 13.6e9) / 13.6e9;
    bool ok = rel <= 0.01;

    const ParamStore toy = init_params(ctx.config("grpo_sgd").model, 0);
    const std::uint64_t p = toy.count();
    const std::map<OptimizerKind, std::uint64_t> order{
        {OptimizerKind::sgd, 1}, {OptimizerKind::sgd_momentum, 2}, {OptimizerKind::rmsprop, 2}, {OptimizerKind::adamw, 3}};
    std::string cols;
    for (const auto& [k, mult] : order) {
        const std::uint64_t bytes = optimizer_memory_bytes(p, k);
        const std::uint64_t held = 4 * p + make_optimizer_state(k, HyperParams::defaults(k), toy).buffer_bytes();
        ok = ok && bytes == mult * 4 * p && held == bytes;
        cols += fmt(" %s=%llun", to_string(k), static_cast<unsigned long long>(bytes / (4 * p)));
    }
    return {ok, fmt("savings %.4g GB (rel err %.2g, limit 1%%); state for p=%llu:%s", saving / 1e9, rel,
                    static_cast<unsigned long long>(p), cols.c_str())};
}

// ------------------------------------------------------------ criteria 4 to 6

struct SeededRuns {
    std::vector<RunSummary> summaries;
    std::vector<json> analyses;
};

SeededRuns run_seeds(const Context& ctx, const std::string& name, std::size_t seeds) {
    SeededRuns out;
    for (std::size_t s = 0; s < seeds; ++s) {
        ExperimentConfig c = ctx.config(name);
        c.seed = s;
        const fs::path dir = ctx.run_dir(fmt("%s_s%zu", name.c_str(), s));
        fs::remove_all(dir);
        const auto t0 = std::chrono::steady_clock::now();
        out.summaries.push_back(run_experiment(c, dir.string()));
        out.analyses.push_back(analyze_run(dir.string()));
        const RunSummary& r = out.summaries.back();
        std::printf("  run %-16s seed %zu: reward %.3f -> %.3f, sparsity %.4f, rank %.2f%s (%.0f s)\n", name.c_str(), s,
                    r.initial_reward, r.final_reward, r.sparsity, r.mean_effective_rank, r.diverged ? ", diverged" : "",
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return out;
}

std::vector<double> field(const SeededRuns& r, double RunSummary::*f) {
    std::vector<double> v;
    for (const auto& s : r.summaries) v.push_back(s.*f);
    return v;
}

std::vector<double> improvements(const SeededRuns& r) {
    std::vector<double> v;
    for (const auto& s : r.summaries) v.push_back(s.final_reward - s.initial_reward);
    return v;
}

Outcome finding_rewards(const SeededRuns& sgd, const SeededRuns& adam) {
    const double fs_ = median(field(sgd, &RunSummary::final_reward)), fa = median(field(adam, &RunSummary::final_reward));
    const double is = median(improvements(sgd)), ia = median(improvements(adam));
    const bool gap = std::abs(fs_ - fa) <= 0.05;
    return {gap && is >= 0.2 && ia >= 0.2,
            fmt("median final reward sgd %.3f vs adamw %.3f (|gap| %.3f, limit 0.05); median gain over step 0 sgd %+.3f, "
                "adamw %+.3f (need >= 0.2)",
                fs_, fa, std::abs(fs_ - fa), is, ia)};
}

Outcome finding_sparsity(const SeededRuns& sgd, const SeededRuns& adam) {
    const double ss = median(field(sgd, &RunSummary::sparsity)), sa = median(field(adam, &RunSummary::sparsity));
    const double rs = median(field(sgd, &RunSummary::mean_effective_rank)),
                 ra = median(field(adam, &RunSummary::mean_effective_rank));
    return {ss - sa >= 0.05 && rs < ra,
            fmt("median bf16 sparsity sgd %.4f vs adamw %.4f (diff %+.1f pp, need >= +5); mean effective rank sgd %.2f vs "
                "adamw %.2f (need sgd < adamw)",
                ss, sa, 100.0 * (ss - sa), rs, ra)};
}

Outcome finding_trend(const SeededRuns& sgd, const SeededRuns& adam) {
    auto monotone = [](const SeededRuns& r, std::size_t& violations) {
        std::vector<double> drops;
        for (const auto& a : r.analyses) {
            const auto tr = a["sparsity_trend"]["sparsity"].get<std::vector<double>>();
            for (std::size_t i = 1; i < tr.size(); ++i) violations += tr[i] > tr[i - 1];
            drops.push_back(tr.front() - tr.back());
        }
        return median(drops);
    };
    std::size_t vs = 0, va = 0;
    const double ds = monotone(sgd, vs), da = monotone(adam, va);
    return {vs == 0 && va == 0 && ds < da,
            fmt("checkpoint trend increases: sgd %zu, adamw %zu (need 0); median total drop sgd %.4f vs adamw %.4f (need "
                "sgd < adamw)",
                vs, va, ds, da)};
}

// ---------------------------------------------------------------- criterion 7

Outcome lr_sweep(const Context& ctx) {
    const std::vector<double> grid{1e-3, 1e-2, 1e-1, 1.0, 10.0};
    const fs::path out = ctx.run_dir("sweep_sgd");
    fs::remove_all(out);
    const SweepResult r = sweep_lr(ctx.config("sweep_sgd"), grid, {0, 1, 2}, out.string());
    std::size_t diverged_10 = 0, n_10 = 0;
    for (const auto& row : r.rows)
        if (row.lr == 10.0) {
            ++n_10;
            diverged_10 += row.diverged || !row.ok;
        }
    std::string medians;
    for (std::size_t i = 0; i < grid.size(); ++i) medians += fmt(" %g:%.3f", grid[i], r.median_final_reward[i]);
    const double best = *std::max_element(r.median_final_reward.begin(), r.median_final_reward.end());
    const double at3 = r.median_final_reward[0];
    const bool mid = r.median_final_reward[2] >= at3 && r.median_final_reward[3] >= at3;
    const bool top = (n_10 > 0 && diverged_10 == n_10) || best - r.median_final_reward[4] >= 0.3;
    return {mid && top, fmt("median final reward by lr%s; lr=10 diverged in %zu/%zu seeds, %.3f below best", medians.c_str(),
                            diverged_10, n_10, best - r.median_final_reward[4])};
}

// ---------------------------------------------------------------- criterion 8

const json& probe_at(const json& analysis, std::uint64_t step) {
    for (const auto& p : analysis["probes"])
        if (p["step"].get<std::uint64_t>() == step) return p;
    throw Error(ErrorKind::io, fmt("no probe at step %llu", static_cast<unsigned long long>(step)));
}

Outcome effective_lr_span(const SeededRuns& adam) {
    const json& p = probe_at(adam.analyses.front(), 50);
    const double dec = p["effective_lr_decades"].get<double>();
    const auto& e = p["effective_lr"];
    return {dec >= 2.0, fmt("adamw seed 0 probe 50: effective lr p01 %.3g, p50 %.3g, p99 %.3g, min %.3g, max %.3g; "
                            "log10(p99/p01) = %.2f (need >= 2)",
                            e["p01"].get<double>(), e["p50"].get<double>(), e["p99"].get<double>(), e["min"].get<double>(),
                            e["max"].get<double>(), dec)};
}

// ---------------------------------------------------------------- criterion 9

Outcome sft_vs_rl(const Context& ctx, const SeededRuns& adam) {
    ExperimentConfig c = ctx.config("sft_adamw");
    const ExperimentConfig g = ctx.config("grpo_adamw");
    c.steps = 50;  // the probe is taken after update 50; later steps do not affect it
    if (!(c.hp == g.hp && c.optimizer == g.optimizer && c.model == g.model && c.init == g.init))
        return {false, "sft and grpo configs do not share optimizer, model and init settings"};
    const fs::path dir = ctx.run_dir("sft_adamw_s0");
    fs::remove_all(dir);
    run_experiment(c, dir.string());
    const json sft = probe_at(analyze_run(dir.string()), 50);
    const json rl = probe_at(adam.analyses.front(), 50);
    const double ss = sft["sqrt_v"]["std"].get<double>(), sr = rl["sqrt_v"]["std"].get<double>();
    const json cs = sft["alignment"]["cosine"], cr = rl["alignment"]["cosine"];
    if (cs.is_null() || cr.is_null()) return {false, "alignment cosine undefined (zero-norm vector) at probe 50"};
    return {ss > sr && cs.get<double>() > cr.get<double>(),
            fmt("std(sqrt v) sft %.3g vs grpo %.3g; cos(m_prev, g) sft %.4f vs grpo %.4f (need sft > grpo for both)", ss, sr,
                cs.get<double>(), cr.get<double>())};
}

// --------------------------------------------------------------- criterion 10

ParamStore flat_store(std::size_t n, float fill) {
    ParamStore p;
    p.tensors.push_back({"w", {n}, std::vector<float>(n, fill), std::vector<std::uint16_t>(n, 0)});
    p.commit();
    return p;
}

Outcome unit_examples(const Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> failed;
    std::size_t total = 0;
    auto check = [&](bool ok, const std::string& what) {
        ++total;
        if (!ok) failed.push_back(what);
    };

    // Sparsity edge cases.
    {
        const ParamStore a = flat_store(100, 0.0f);
        check(update_sparsity(a, a).sparsity == 1.0, "identical checkpoints -> 1.0");
        ParamStore one = a;
        one.tensors[0].master[7] = 1e-3f;
        one.commit();
        check(update_sparsity(a, one).sparsity == 0.99, "one of 100 changed by 1e-3 -> 0.99");
        ParamStore tiny = a;
        for (float& x : tiny.tensors[0].master) x = 1e-6f;
        tiny.commit();
        check(update_sparsity(a, tiny).sparsity == 1.0, "all changed by 1e-6 -> 1.0");
    }
    // Effective rank.
    {
        std::vector<double> outer(64);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) outer[i * 8 + j] = (i + 1.0) * (j - 3.5);
        check(effective_rank(8, 8, outer) == 1, "rank-1 outer product -> 1");
        std::vector<double> diag(4, 0.0);
        diag[0] = 10.0;
        diag[3] = 0.1;
        check(effective_rank(2, 2, diag) == 1, "diag(10, 0.1) -> 1");
        std::vector<double> eye(100, 0.0);
        for (int i = 0; i < 10; ++i) eye[i * 10 + i] = 1.0;
        check(effective_rank(10, 10, eye) == 10, "10x10 identity -> 10");
        UpdateDiff d;
        d.names = {"a", "b"};
        d.shapes = {{8, 8}, {10, 10}};
        std::vector<double> rank3(100, 0.0);
        for (int i = 0; i < 3; ++i) rank3[i * 10 + i] = 1.0;
        d.delta = {outer, rank3};
        d.n = 164;
        check(mean_effective_rank(d) == 2.0, "ranks 1 and 3 -> mean 2.0");
    }
    // GRPO degenerate group and hand cases.
    {
        const std::vector<double> ones{1, 1, 1, 1};
        check(grpo_advantages(ones, 4) == std::vector<double>(4, 0.0), "group [1,1,1,1] -> zeros");
        const std::vector<double> two{1, 0};
        check(grpo_advantages(two, 2, true, 0.0) == std::vector<double>{1, -1}, "group [1,0], eps 0 -> [1,-1]");
        const std::vector<double> four{1, 0, 1, 0};
        const auto a = grpo_advantages(four, 4);
        const std::vector<double> want{1, -1, 1, -1};
        bool close = true;
        for (int i = 0; i < 4; ++i) close = close && std::abs(a[i] - want[i]) <= 1e-5;  // eps = 1e-6 in the denominator
        check(close, "group [1,0,1,0] -> [1,-1,1,-1]");
    }
    // GAE collapses.
    {
        const std::vector<double> r{0.5, -1.0, 2.0}, v{0.3, 0.1, -0.4};
        const auto l0 = gae_advantages(r, v, 0.9, 0.0);
        const auto g0 = gae_advantages(r, v, 0.0, 0.7);
        bool lam = true, gam = true;
        for (std::size_t t = 0; t < 3; ++t) {
            const double next = t + 1 < 3 ? v[t + 1] : 0.0;
            lam = lam && l0.advantages[t] == r[t] + 0.9 * next - v[t];
            gam = gam && g0.advantages[t] == r[t] - v[t];
        }
        check(lam, "lambda=0 -> A_t = delta_t");
        check(gam, "gamma=0 -> A_t = r_t - V_t");
    }
    // k3 estimator.
    {
        const std::vector<double> x{-0.3, 0.0, 1.2};
        check(kl_loss(x, x) == 0.0, "identical policies -> 0");
        std::mt19937_64 gen(3);
        std::normal_distribution<double> n(0.0, 3.0);
        bool nonneg = true;
        for (int i = 0; i < 1000; ++i) {
            const std::vector<double> a{n(gen)}, b{n(gen)};
            nonneg = nonneg && kl_loss(a, b) >= 0.0;
        }
        check(nonneg, "k3 >= 0 on random inputs");
        const std::vector<double> lp{0.0}, lr{std::numbers::ln2};
        check(std::abs(kl_loss(lp, lr) - 0.3069) < 5e-5, "ref - new = ln 2 -> ~0.3069");
    }
    // bf16 ulp suppression at 1.0, as stated.
    {
        check(commit_bf16(1.0f) == 1.0f, "bf16: 1.0 -> 1.0");
        check(commit_bf16(1.0f + 1e-6f) == 1.0f, "bf16: 1.0 + 1e-6 -> 1.0");
        check(commit_bf16(1.0f + 0.002f) == 1.0f, "bf16: 1.0 + 0.002 -> 1.0");
        const float got = commit_bf16(1.0f + 0.0039f);
        check(got == 1.00390625f, fmt("bf16: 1.0 + 0.0039 -> 1.00390625 (got %.9g; next value above 1.0 is %.9g)", got,
                                      bf16_to_float(static_cast<std::uint16_t>(bf16_bits(1.0f) + 1))));
    }
    // Momentum recovery.
    {
        const std::vector<double> m_t{1.9}, g{1.0};
        check(std::abs(recover_prev_momentum(m_t, g, 0.9)[0] - 2.0) <= 1e-12, "m_t=1.9, g=1 -> m_prev 2.0");
        const std::vector<double> zero{0.0};
        check(recover_prev_momentum(m_t, zero, 0.9)[0] == 1.9 / 0.9, "g=0 -> m_t / beta1");
        std::mt19937_64 gen(9);
        std::normal_distribution<double> n;
        std::vector<double> prev(256), grad(256), cur(256);
        for (std::size_t i = 0; i < 256; ++i) {
            prev[i] = n(gen);
            grad[i] = n(gen);
            cur[i] = 0.9 * prev[i] + 0.1 * grad[i];
        }
        const auto back = recover_prev_momentum(cur, grad, 0.9);
        double worst = 0.0;
        for (std::size_t i = 0; i < 256; ++i) worst = std::max(worst, std::abs(back[i] - prev[i]));
        check(worst <= 1e-12, "recover after update is identity");
    }

    // The full unit suite covers every remaining example.
    bool suite = false;
    if (!ctx.unit_binary.empty()) {
        const std::string cmd = "\"" + ctx.unit_binary + "\" --minimal > /dev/null 2>&1";
        suite = std::system(cmd.c_str()) == 0;
    }
    check(suite, "unit suite (" + (ctx.unit_binary.empty() ? std::string("not given") : ctx.unit_binary) + ")");

    const double secs = seconds_since(t0);
    std::string detail = fmt("%zu/%zu checks pass, %.1f s (limit 60 s)", total - failed.size(), total, secs);
    for (const auto& f : failed) detail += "; FAILED " + f;
    return {failed.empty() && secs < 60.0, detail};
}

// --------------------------------------------------------------- criterion 11

Outcome ppo_generalization(const Context& ctx) {
    const SeededRuns s = run_seeds(ctx, "ppo_sgd", 1), a = run_seeds(ctx, "ppo_adamw", 1);
    const RunSummary &rs = s.summaries.front(), &ra = a.summaries.front();
    if (!rs.critic_sparsity || !ra.critic_sparsity) return {false, "critic sparsity missing"};
    const bool improve = rs.final_reward > rs.initial_reward && ra.final_reward > ra.initial_reward;
    const bool policy = rs.sparsity - ra.sparsity >= 0.05 && rs.mean_effective_rank < ra.mean_effective_rank;
    const bool critic = *rs.critic_sparsity > *ra.critic_sparsity;
    return {improve && policy && critic,
            fmt("reward sgd %.3f -> %.3f, adamw %.3f -> %.3f; policy sparsity sgd %.4f vs adamw %.4f, rank %.2f vs %.2f; "
                "critic sparsity sgd %.4f vs adamw %.4f",
                rs.initial_reward, rs.final_reward, ra.initial_reward, ra.final_reward, rs.sparsity, ra.sparsity,
                rs.mean_effective_rank, ra.mean_effective_rank, *rs.critic_sparsity, *ra.critic_sparsity)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rlol acceptance gate"};
    Context ctx;
    std::string source = RLOL_SOURCE_DIR, out = "acceptance_runs";
    std::vector<int> only;
    app.add_option("--source-dir", source, "Repository root (for configs/)");
    app.add_option("--out", out, "Directory for run artifacts");
    app.add_option("--unit-binary", ctx.unit_binary, "Unit test executable");
    app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    ctx.source_dir = source;
    ctx.out_dir = fs::absolute(out);
    fs::create_directories(ctx.out_dir);

    const std::set<int> want(only.begin(), only.end());
    auto selected = [&](std::initializer_list<int> ids) {
        if (want.empty()) return true;
        for (int i : ids)
            if (want.count(i)) return true;
        return false;
    };

    std::map<int, std::pair<std::string, Outcome>> results;
    auto record = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
        if (!selected({id})) return;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
        std::fflush(stdout);
        results[id] = {title, o};
    };

    record(1, "optimizer oracle fuzz", optimizer_fuzz);
    record(2, "gradient check", [&] { return gradient_check(ctx); });
    record(3, "memory accounting", [&] { return memory_accounting(ctx); });
    record(10, "metric unit suite", [&] { return unit_examples(ctx); });

    if (selected({4, 5, 6, 8, 9})) {
        const SeededRuns sgd = run_seeds(ctx, "grpo_sgd", 3), adam = run_seeds(ctx, "grpo_adamw", 3);
        record(4, "sgd matches adamw reward", [&] { return finding_rewards(sgd, adam); });
        record(5, "sgd sparser and lower rank", [&] { return finding_sparsity(sgd, adam); });
        record(6, "sparsity trend", [&] { return finding_trend(sgd, adam); });
        record(8, "effective lr span", [&] { return effective_lr_span(adam); });
        record(9, "sft vs rl moments", [&] { return sft_vs_rl(ctx, adam); });
    }
    record(7, "sgd lr sweep", [&] { return lr_sweep(ctx); });
    record(11, "ppo generalization", [&] { return ppo_generalization(ctx); });

    std::size_t failed = 0;
    std::printf("\nsummary:\n");
    for (const auto& [id, r] : results) {
        std::printf("  %2d %-28s %s\n", id, r.first.c_str(), r.second.pass ? "PASS" : "FAIL");
        failed += !r.second.pass;
    }
    std::printf("%zu/%zu criteria pass\n", results.size() - failed, results.size());
    return failed == 0 ? 0 : 1;
}
