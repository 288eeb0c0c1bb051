#include "rlol/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "rlol/analysis.hpp"
#include "rlol/checkpoint.hpp"
#include "rlol/error.hpp"
#include "rlol/plot.hpp"
#include "rlol/rl.hpp"
#include "rlol/sft.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rlol {

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::io, "cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double master_norm(const ParamStore& p) {
    double s = 0.0;
    for (const auto& t : p.tensors)
        for (float x : t.master) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

std::string step_name(const char* prefix, std::uint64_t step) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_step_%06llu.rlol", prefix, static_cast<unsigned long long>(step));
    return buf;
}

/// Sorted (step, path) pairs of files named <prefix>_step_NNNNNN.rlol.
std::vector<std::pair<std::uint64_t, fs::path>> list_steps(const fs::path& dir, const std::string& prefix) {
    std::vector<std::pair<std::uint64_t, fs::path>> out;
    if (!fs::exists(dir)) return out;
    const std::string head = prefix + "_step_";
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind(head, 0) != 0 || e.path().extension() != ".rlol") continue;
        out.emplace_back(std::stoull(name.substr(head.size(), name.size() - head.size() - 5)), e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

json optional_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }
std::optional<double> optional_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

std::uint64_t derived_seed(std::uint64_t seed, std::string_view label) {
    return fnv1a64(label, fnv1a64(std::to_string(seed)));
}

std::vector<Prompt> validation_prompts(const ExperimentConfig& c, const EnvSpec& spec) {
    std::vector<Prompt> prompts;
    for (std::size_t i = 0; i < c.eval_prompts; ++i) {
        CounterRng rng(c.seed, "validation", 0, i);
        prompts.push_back(sample_prompt(spec, rng));
    }
    return prompts;
}

double validation_reward(const ExperimentConfig& c, const ParamStore& policy, const EnvSpec& spec) {
    if (c.eval_prompts == 0) return 0.0;
    RolloutOptions opt;
    opt.group_size = 1;
    opt.greedy = true;
    opt.temperature = c.algo.temperature;
    opt.max_response_len = spec.max_response_len;
    opt.workers = c.workers;
    return generate_rollouts_for(policy, nullptr, spec, validation_prompts(c, spec), opt, c.seed, 0).mean_reward();
}

ParamStore make_critic(const ExperimentConfig& c, const ParamStore& policy) {
    ParamStore critic = init_params(critic_model_config(c.model), derived_seed(c.seed, "critic"));
    if (c.critic_init_from_policy) {
        for (auto& t : critic.tensors) {
            const auto idx = policy.index_of(t.name);
            if (idx && policy.tensors[*idx].shape == t.shape) t.master = policy.tensors[*idx].master;
        }
    }
    critic.commit();
    critic.load_master_from_stored();
    return critic;
}

json distribution_json(const Distribution& d, bool with_histogram) {
    json j = {{"count", d.count}, {"mean", d.mean}, {"std", d.std}, {"min", d.min}, {"max", d.max},
              {"p01", d.p01},     {"p50", d.p50},   {"p99", d.p99}};
    if (with_histogram) j["histogram"] = {{"edges", d.histogram.edges}, {"counts", d.histogram.counts}};
    return j;
}

/// Probe analysis of one captured optimizer state.
json probe_json(const Checkpoint& probe, bool with_histograms) {
    json j;
    j["step"] = probe.params.step;
    const auto& st = *probe.optimizer;
    j["optimizer"] = to_string(st.kind);
    const Gradients& g = *probe.grads;
    if (uses_v(st.kind)) {
        const MomentStats ms = moment_statistics(st, g);
        j["sqrt_v"] = distribution_json(ms.sqrt_v, with_histograms);
        j["abs_m"] = ms.abs_m ? distribution_json(*ms.abs_m, with_histograms) : json(nullptr);
        j["abs_g"] = distribution_json(ms.abs_g, with_histograms);
        const Distribution lr = effective_lr_distribution(st);
        j["effective_lr"] = distribution_json(lr, with_histograms);
        j["effective_lr_decades"] = decades_spanned(lr);
    } else {
        auto ag = flatten_f64(g);
        for (double& x : ag) x = std::abs(x);
        j["abs_g"] = distribution_json(describe(ag), with_histograms);
        j["sqrt_v"] = nullptr;
        j["effective_lr"] = nullptr;
    }
    if (st.kind == OptimizerKind::adamw && st.hp.beta1 > 0.0) {
        const auto m_t = flatten_f64(st.m), g_t = flatten_f64(g);
        const auto rec = momentum_alignment(recover_prev_momentum(m_t, g_t, st.hp.beta1), g_t, st.t);
        j["alignment"] = {{"step", rec.step}, {"cosine", optional_json(rec.cosine)},
                          {"history_ratio", optional_json(rec.history_ratio)}};
    } else {
        j["alignment"] = nullptr;
    }
    return j;
}

std::mutex g_warm_mutex;
std::map<std::string, ParamStore> g_warm_cache;

}  // namespace

double median(std::vector<double> v) {
    require(!v.empty(), ErrorKind::invalid_argument, "median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string output_root(const ExperimentConfig& config) {
    if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
    return config.output_dir;
}

std::string run_directory(const ExperimentConfig& config) {
    return (fs::path(output_root(config)) / config.name).string();
}

ParamStore warm_start(const ExperimentConfig& c) {
    std::ostringstream key;
    key << c.seed << '|' << c.model.hash() << '|' << to_string(c.env.kind) << ',' << c.env.difficulty << ','
        << c.env.max_prompt_len << ',' << c.env.max_response_len << '|' << c.init.pretrain_steps << ','
        << c.init.pretrain_lr << ',' << c.init.pretrain_batch << ',' << c.init.pretrain_dataset_size << ','
        << c.algo.max_grad_norm;
    {
        std::lock_guard lock(g_warm_mutex);
        if (auto it = g_warm_cache.find(key.str()); it != g_warm_cache.end()) return it->second;
    }
    ParamStore p = init_params(c.model, c.seed);
    if (c.init.pretrain_steps > 0) {
        const SftDataset data = build_sft_dataset(c.env, c.init.pretrain_dataset_size, derived_seed(c.seed, "pretrain_data"));
        HyperParams hp = HyperParams::defaults(OptimizerKind::adamw);
        hp.lr = c.init.pretrain_lr;
        OptimizerState st = make_optimizer_state(OptimizerKind::adamw, hp, p);
        const std::uint64_t batch_seed = derived_seed(c.seed, "pretrain_batches");
        for (std::size_t s = 0; s < c.init.pretrain_steps; ++s) {
            std::vector<SftExample> mb;
            for (auto i : sft_minibatch_indices(data.examples.size(), c.init.pretrain_batch, batch_seed, s))
                mb.push_back(data.examples[i]);
            sft_step(p, st, mb, c.algo.max_grad_norm);
        }
        p.load_master_from_stored();
        p.step = 0;
    }
    std::lock_guard lock(g_warm_mutex);
    g_warm_cache.emplace(key.str(), p);
    return p;
}

json to_json(const RunSummary& s) {
    return {{"run_dir", s.run_dir},
            {"steps_completed", s.steps_completed},
            {"diverged", s.diverged},
            {"diverged_reason", s.diverged_reason},
            {"initial_reward", s.initial_reward},
            {"final_reward", s.final_reward},
            {"initial_val_reward", optional_json(s.initial_val_reward)},
            {"final_val_reward", optional_json(s.final_val_reward)},
            {"sparsity", s.sparsity},
            {"sparsity_master", s.sparsity_master},
            {"mean_effective_rank", s.mean_effective_rank},
            {"critic_sparsity", optional_json(s.critic_sparsity)},
            {"critic_mean_effective_rank", optional_json(s.critic_mean_effective_rank)},
            {"param_count", s.param_count},
            {"memory_bytes", s.memory_bytes},
            {"rewards", s.rewards},
            {"sparsity_curve", s.sparsity_curve}};
}

RunSummary summary_from_json(const json& j) {
    RunSummary s;
    s.run_dir = j.at("run_dir").get<std::string>();
    s.steps_completed = j.at("steps_completed").get<std::size_t>();
    s.diverged = j.at("diverged").get<bool>();
    s.diverged_reason = j.at("diverged_reason").get<std::string>();
    s.initial_reward = j.at("initial_reward").get<double>();
    s.final_reward = j.at("final_reward").get<double>();
    s.initial_val_reward = optional_from(j.at("initial_val_reward"));
    s.final_val_reward = optional_from(j.at("final_val_reward"));
    s.sparsity = j.at("sparsity").get<double>();
    s.sparsity_master = j.at("sparsity_master").get<double>();
    s.mean_effective_rank = j.at("mean_effective_rank").get<double>();
    s.critic_sparsity = optional_from(j.at("critic_sparsity"));
    s.critic_mean_effective_rank = optional_from(j.at("critic_mean_effective_rank"));
    s.param_count = j.at("param_count").get<std::uint64_t>();
    s.memory_bytes = j.at("memory_bytes").get<std::uint64_t>();
    s.rewards = j.at("rewards").get<std::vector<double>>();
    s.sparsity_curve = j.at("sparsity_curve").get<std::vector<double>>();
    return s;
}

RunSummary run_experiment(const ExperimentConfig& c, const std::string& run_dir_arg) {
    c.validate();
    const fs::path dir = run_dir_arg.empty() ? fs::path(run_directory(c)) : fs::path(run_dir_arg);
    fs::create_directories(dir / "checkpoints");
    fs::create_directories(dir / "probes");
    write_text(dir / "config.txt", serialize_config(c));

    RunSummary sum;
    sum.run_dir = dir.string();
    ParamStore policy = warm_start(c);
    const ParamStore reference = policy;
    const ParamStore theta0 = policy;
    const double norm0 = master_norm(theta0);
    OptimizerState opt = make_optimizer_state(c.optimizer, c.hp, policy);
    std::optional<Critic> critic;
    std::optional<ParamStore> critic0;
    if (c.algo.algo == Algo::ppo) {
        Critic cr{make_critic(c, policy), {}};
        HyperParams chp = c.hp;
        if (c.critic_lr > 0.0) chp.lr = c.critic_lr;
        cr.optimizer = make_optimizer_state(c.optimizer, chp, cr.params);
        critic0 = cr.params;
        critic = std::move(cr);
    }
    std::optional<SftDataset> sft_data;
    if (c.algo.algo == Algo::sft) sft_data = build_sft_dataset(c.env, c.sft_dataset_size, derived_seed(c.seed, "sft_data"));

    sum.param_count = policy.count();
    sum.memory_bytes = optimizer_memory_bytes(sum.param_count, c.optimizer);

    auto save_state = [&](std::uint64_t step) {
        save_checkpoint((dir / "checkpoints" / step_name("policy", step)).string(), Checkpoint{policy, opt, std::nullopt});
        if (critic)
            save_checkpoint((dir / "checkpoints" / step_name("critic", step)).string(),
                            Checkpoint{critic->params, critic->optimizer, std::nullopt});
    };
    save_state(0);

    DifficultyController difficulty(c.env);
    const std::set<std::uint64_t> probes(c.probe_steps.begin(), c.probe_steps.end());
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
    require(metrics.good(), ErrorKind::io, "cannot write metrics.jsonl");

    if (c.eval_prompts > 0) sum.initial_val_reward = validation_reward(c, policy, difficulty.spec());
    std::optional<double> last_val = sum.initial_val_reward;
    const auto t_start = std::chrono::steady_clock::now();

    RolloutOptions ro;
    ro.n_prompts = c.algo.batch_prompts;
    ro.group_size = c.algo.group_size;
    ro.temperature = c.algo.temperature;
    ro.workers = c.workers;

    for (std::size_t step = 0; step < c.steps; ++step) {
        json rec;
        rec["step"] = step;
        rec["difficulty"] = difficulty.spec().difficulty;
        Gradients grads;
        try {
            if (c.algo.algo == Algo::sft) {
                std::vector<SftExample> mb;
                for (auto i : sft_minibatch_indices(sft_data->examples.size(), c.sft_batch, derived_seed(c.seed, "sft_batches"), step))
                    mb.push_back(sft_data->examples[i]);
                const SftStepReport r = sft_step(policy, opt, mb, c.algo.max_grad_norm, &grads);
                rec["mean_reward"] = nullptr;
                rec["loss"] = r.loss;
                rec["grad_norm"] = r.grad_norm;
                rec["tokens"] = r.tokens;
            } else {
                ro.max_response_len = difficulty.spec().max_response_len;
                const RolloutBatch batch = generate_rollouts(policy, &reference, difficulty.spec(), ro, c.seed, step);
                const TrainStepReport r =
                    train_step(policy, opt, batch, c.algo, critic ? &*critic : nullptr, &grads);
                rec["mean_reward"] = r.mean_reward;
                rec["loss"] = r.loss;
                rec["policy_loss"] = r.policy_loss;
                rec["kl"] = r.kl;
                rec["grad_norm"] = r.grad_norm;
                rec["clip_fraction"] = r.clip_fraction;
                rec["tokens"] = r.tokens;
                if (critic) {
                    rec["critic_loss"] = r.critic_loss;
                    rec["critic_grad_norm"] = r.critic_grad_norm;
                }
                sum.rewards.push_back(r.mean_reward);
                if (c.env.kind == EnvKind::evolving) difficulty.observe(r.mean_reward);
                if (!(r.kl <= c.divergence_kl)) {
                    sum.diverged = true;
                    sum.diverged_reason = "kl " + std::to_string(r.kl) + " exceeds run.divergence_kl";
                }
            }
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::non_finite) throw;
            sum.diverged = true;
            sum.diverged_reason = e.what();
            rec["error"] = e.what();
        }
        if (!rec.contains("error") && !sum.diverged) {
            const double ratio = master_norm(policy) / norm0;
            if (!(ratio <= c.divergence_norm_ratio)) {
                sum.diverged = true;
                sum.diverged_reason = "master norm grew " + std::to_string(ratio) + "x, exceeds run.divergence_norm_ratio";
            }
        }
        if (!rec.contains("error")) {
            sum.steps_completed = step + 1;
            const double sp = update_sparsity(theta0, policy).sparsity;
            sum.sparsity_curve.push_back(sp);
            rec["sparsity_vs_init"] = sp;
            if (critic) rec["critic_sparsity_vs_init"] = update_sparsity(*critic0, critic->params).sparsity;
            if ((step + 1) % c.eval_interval == 0 && c.eval_prompts > 0) {
                last_val = validation_reward(c, policy, difficulty.spec());
                rec["val_reward"] = *last_val;
            }
            if (probes.count(step + 1)) {
                Checkpoint probe{policy, opt, grads};
                save_checkpoint((dir / "probes" / step_name("policy", step + 1)).string(), probe);
                rec["probe"] = probe_json(probe, false);
            }
            if ((step + 1) % c.checkpoint_interval == 0 && step + 1 < c.steps) save_state(step + 1);
        }
        if (c.record_wall_ms)
            rec["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
        if (sum.diverged) rec["diverged"] = sum.diverged_reason;
        metrics << rec.dump() << '\n';
        if (sum.diverged) break;
    }
    metrics.close();
    if (sum.steps_completed > 0) save_state(policy.step);

    if (!sum.rewards.empty()) {
        sum.initial_reward = sum.rewards.front();
        const std::size_t w = std::min(c.final_window, sum.rewards.size());
        double s = 0.0;
        for (std::size_t i = sum.rewards.size() - w; i < sum.rewards.size(); ++i) s += sum.rewards[i];
        sum.final_reward = s / static_cast<double>(w);
    }
    if (c.eval_prompts > 0) sum.final_val_reward = sum.steps_completed > 0 ? validation_reward(c, policy, difficulty.spec()) : last_val;
    const UpdateDiff diff = compute_diff(theta0, policy);
    sum.sparsity = sparsity_of(diff).sparsity;
    sum.sparsity_master = update_sparsity(theta0, policy, 1e-5, DiffSpace::master).sparsity;
    sum.mean_effective_rank = mean_effective_rank(diff);
    if (critic) {
        const UpdateDiff cd = compute_diff(*critic0, critic->params);
        sum.critic_sparsity = sparsity_of(cd).sparsity;
        sum.critic_mean_effective_rank = mean_effective_rank(cd);
    }
    json report = to_json(sum);
    report["name"] = c.name;
    report["algo"] = to_string(c.algo.algo);
    report["optimizer"] = to_string(c.optimizer);
    report["lr"] = c.hp.lr;
    report["seed"] = c.seed;
    report["config_hash"] = config_hash(c);
    write_text(dir / "report.json", report.dump(2) + "\n");
    return sum;
}

// ---- analysis bundle ----------------------------------------------------------

json analyze_run(const std::string& run_dir) {
    const fs::path dir(run_dir);
    const ExperimentConfig cfg = parse_config(read_text(dir / "config.txt"));
    const auto ckpts = list_steps(dir / "checkpoints", "policy");
    require(!ckpts.empty(), ErrorKind::io, "analyze: no policy checkpoints in " + run_dir);
    std::vector<ParamStore> series;
    for (const auto& [step, path] : ckpts) series.push_back(load_checkpoint(path.string()).params);

    json out;
    out["run_dir"] = run_dir;
    out["checkpoint_steps"] = json::array();
    for (const auto& [step, path] : ckpts) out["checkpoint_steps"].push_back(step);

    const UpdateDiff diff = compute_diff(series.front(), series.back());
    const SparsityReport sp = sparsity_of(diff);
    json per_tensor = json::array();
    for (const auto& t : sp.per_tensor)
        per_tensor.push_back({{"name", t.name}, {"changed", t.changed}, {"total", t.total}, {"sparsity", t.sparsity}});
    out["sparsity"] = {{"global", sp.sparsity}, {"changed", sp.changed}, {"total", sp.total}, {"tol", sp.tol},
                       {"per_tensor", per_tensor}};
    out["sparsity_master"] = update_sparsity(series.front(), series.back(), 1e-5, DiffSpace::master).sparsity;

    std::string layer_csv = "grouping,group,changed,total,sparsity\n";
    json layerwise;
    for (const auto& [label, fn] : std::vector<std::pair<std::string, LayerGrouping>>{{"layer", group_by_layer},
                                                                                      {"submodule", group_by_submodule}}) {
        json arr = json::array();
        for (const auto& g : layerwise_sparsity(diff, fn)) {
            arr.push_back({{"group", g.group}, {"changed", g.changed}, {"total", g.total}, {"sparsity", g.sparsity}});
            layer_csv += label + "," + g.group + "," + std::to_string(g.changed) + "," + std::to_string(g.total) + "," +
                         json(g.sparsity).dump() + "\n";
        }
        layerwise[label] = arr;
    }
    out["layerwise"] = layerwise;
    write_text(dir / "layerwise.csv", layer_csv);

    const auto ranks = rank_report(diff);
    std::string rank_csv = "name,rows,cols,effective_rank\n";
    json rank_arr = json::array();
    double rank_sum = 0.0;
    for (const auto& r : ranks) {
        rank_arr.push_back({{"name", r.name}, {"rows", r.rows}, {"cols", r.cols}, {"rank", r.rank}});
        rank_csv += r.name + "," + std::to_string(r.rows) + "," + std::to_string(r.cols) + "," + std::to_string(r.rank) + "\n";
        rank_sum += static_cast<double>(r.rank);
    }
    out["ranks"] = rank_arr;
    out["mean_effective_rank"] = ranks.empty() ? json(nullptr) : json(rank_sum / static_cast<double>(ranks.size()));
    write_text(dir / "ranks.csv", rank_csv);

    std::vector<double> trend = series.size() >= 2 ? sparsity_trend(series) : std::vector<double>{1.0};
    out["sparsity_trend"] = {{"steps", out["checkpoint_steps"]}, {"sparsity", trend}};
    std::string trend_csv = "step,sparsity\n";
    PlotSeries ts{"policy", {}, trend};
    for (std::size_t i = 0; i < trend.size(); ++i) {
        trend_csv += std::to_string(ckpts[i].first) + "," + json(trend[i]).dump() + "\n";
        ts.x.push_back(static_cast<double>(ckpts[i].first));
    }
    write_text(dir / "sparsity_trend.csv", trend_csv);
    std::vector<PlotSeries> trend_plot{ts};

    const auto critic_ckpts = list_steps(dir / "checkpoints", "critic");
    if (!critic_ckpts.empty()) {
        std::vector<ParamStore> cs;
        for (const auto& [step, path] : critic_ckpts) cs.push_back(load_checkpoint(path.string()).params);
        const UpdateDiff cd = compute_diff(cs.front(), cs.back());
        out["critic"] = {{"sparsity", sparsity_of(cd).sparsity}, {"mean_effective_rank", mean_effective_rank(cd)}};
        if (cs.size() >= 2) {
            PlotSeries cts{"critic", {}, sparsity_trend(cs)};
            for (const auto& [step, path] : critic_ckpts) cts.x.push_back(static_cast<double>(step));
            trend_plot.push_back(cts);
        }
    }
    write_text(dir / "sparsity_trend.svg",
               line_chart_svg(trend_plot, {"Update sparsity vs step", "step", "sparsity", false, false, 640, 400}));

    // Probes: moment statistics, effective learning rates, momentum alignment.
    json probes = json::array(), alignment = json::array(), gaps = json::array();
    const auto probe_files = list_steps(dir / "probes", "policy");
    std::set<std::uint64_t> found;
    for (const auto& [step, path] : probe_files) {
        const Checkpoint probe = load_checkpoint(path.string());
        require(probe.optimizer && probe.grads, ErrorKind::io, "probe " + path.string() + " lacks optimizer state");
        json pj = probe_json(probe, true);
        if (!pj["alignment"].is_null()) alignment.push_back(pj["alignment"]);
        probes.push_back(pj);
        found.insert(step);
        for (const char* key : {"sqrt_v", "abs_m", "abs_g", "effective_lr"}) {
            if (pj[key].is_null()) continue;
            const auto& h = pj[key]["histogram"];
            std::string csv = "bin_lo,bin_hi,count\n";
            for (std::size_t b = 0; b < h["counts"].size(); ++b)
                csv += json(h["edges"][b]).dump() + "," + json(h["edges"][b + 1]).dump() + "," + h["counts"][b].dump() + "\n";
            char name[96];
            std::snprintf(name, sizeof name, "hist_%s_step_%06llu.csv", key, static_cast<unsigned long long>(step));
            write_text(dir / name, csv);
        }
    }
    for (auto s : cfg.probe_steps)
        if (s <= cfg.steps && !found.count(s)) gaps.push_back({{"probe_step", s}, {"reason", "probe file missing"}});
    out["probes"] = probes;
    out["alignment"] = alignment;
    out["gaps"] = gaps;

    // Reward curve straight from metrics.jsonl.
    if (fs::exists(dir / "metrics.jsonl")) {
        PlotSeries rs{"train reward", {}, {}}, vs{"validation reward", {}, {}};
        std::istringstream in(read_text(dir / "metrics.jsonl"));
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) continue;
            const json r = json::parse(line);
            const double step = r["step"].get<double>();
            if (r.contains("mean_reward") && r["mean_reward"].is_number()) {
                rs.x.push_back(step);
                rs.y.push_back(r["mean_reward"].get<double>());
            }
            if (r.contains("val_reward")) {
                vs.x.push_back(step + 1);
                vs.y.push_back(r["val_reward"].get<double>());
            }
        }
        write_text(dir / "reward.svg", line_chart_svg({rs, vs}, {"Reward vs step", "step", "reward", false, false, 640, 400}));
    }
    write_text(dir / "analysis.json", out.dump(2) + "\n");
    return out;
}

// ---- comparison -------------------------------------------------------------

json compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    require(run_dirs.size() >= 2, ErrorKind::invalid_argument, "compare: need at least two runs");
    struct Row {
        std::string name, optimizer;
        double lr;
        ExperimentConfig cfg;
        json report;
    };
    std::vector<Row> rows;
    for (const auto& d : run_dirs) {
        Row r;
        r.cfg = parse_config(read_text(fs::path(d) / "config.txt"));
        r.report = json::parse(read_text(fs::path(d) / "report.json"));
        r.name = fs::path(d).filename().string();
        r.optimizer = to_string(r.cfg.optimizer);
        r.lr = r.cfg.hp.lr;
        rows.push_back(std::move(r));
    }
    for (const auto& r : rows)
        require(r.cfg.model == rows.front().cfg.model, ErrorKind::invalid_argument,
                "compare: run " + r.name + " uses a different model config");
    for (const auto& r : rows)
        require(r.cfg.env.kind == rows.front().cfg.env.kind, ErrorKind::invalid_argument,
                "compare: run " + r.name + " uses a different environment");

    const std::vector<std::string> cols{"final_reward", "sparsity", "mean_effective_rank", "memory_bytes"};
    json out = json::array();
    std::string csv = "run,optimizer,lr,final_reward,sparsity,mean_effective_rank,memory_bytes,"
                      "delta_final_reward,delta_sparsity,delta_mean_effective_rank,delta_memory_bytes\n";
    char line[512];
    std::string txt;
    std::snprintf(line, sizeof line, "%-28s %-13s %9s %12s %10s %10s %14s\n", "run", "optimizer", "lr", "final_reward",
                  "sparsity", "mean_rank", "memory_bytes");
    txt += line;
    for (const auto& r : rows) {
        json j = {{"run", r.name}, {"optimizer", r.optimizer}, {"lr", r.lr}};
        for (const auto& c : cols) {
            j[c] = r.report.at(c);
            j["delta_" + c] = r.report.at(c).get<double>() - rows.front().report.at(c).get<double>();
        }
        out.push_back(j);
        csv += r.name + "," + r.optimizer + "," + json(r.lr).dump();
        for (const auto& c : cols) csv += "," + j[c].dump();
        for (const auto& c : cols) csv += "," + j["delta_" + c].dump();
        csv += "\n";
        std::snprintf(line, sizeof line, "%-28s %-13s %9.2e %12.4f %10.4f %10.2f %14llu\n", r.name.c_str(),
                      r.optimizer.c_str(), r.lr, j["final_reward"].get<double>(), j["sparsity"].get<double>(),
                      j["mean_effective_rank"].get<double>(),
                      static_cast<unsigned long long>(j["memory_bytes"].get<std::uint64_t>()));
        txt += line;
    }
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "compare.csv", csv);
    write_text(fs::path(out_dir) / "compare.txt", txt);

    std::vector<PlotSeries> reward, sparsity;
    for (const auto& r : rows) {
        PlotSeries a{r.name, {}, r.report.at("rewards").get<std::vector<double>>()};
        PlotSeries b{r.name, {}, r.report.at("sparsity_curve").get<std::vector<double>>()};
        for (std::size_t i = 0; i < a.y.size(); ++i) a.x.push_back(static_cast<double>(i));
        for (std::size_t i = 0; i < b.y.size(); ++i) b.x.push_back(static_cast<double>(i + 1));
        reward.push_back(std::move(a));
        sparsity.push_back(std::move(b));
    }
    write_text(fs::path(out_dir) / "reward.svg",
               line_chart_svg(reward, {"Training reward", "step", "mean reward", false, false, 640, 400}));
    write_text(fs::path(out_dir) / "sparsity.svg",
               line_chart_svg(sparsity, {"Update sparsity vs initial policy", "step", "sparsity", false, false, 640, 400}));
    return out;
}

// ---- learning-rate sweep --------------------------------------------------------

SweepResult sweep_lr(const ExperimentConfig& base, const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds,
                     const std::string& out_dir) {
    require(!grid.empty(), ErrorKind::invalid_argument, "sweep_lr: empty grid");
    require(!seeds.empty(), ErrorKind::invalid_argument, "sweep_lr: no seeds");
    fs::create_directories(out_dir);
    SweepResult res;
    for (double lr : grid) {
        std::vector<double> finals;
        bool diverged = false;
        for (auto seed : seeds) {
            ExperimentConfig c = base;
            c.hp.lr = lr;
            c.seed = seed;
            char name[128];
            std::snprintf(name, sizeof name, "%s_lr%g_s%llu", base.name.c_str(), lr, static_cast<unsigned long long>(seed));
            c.name = name;
            SweepRow row;
            row.lr = lr;
            row.seed = seed;
            row.run_dir = (fs::path(out_dir) / c.name).string();
            try {
                const RunSummary s = run_experiment(c, row.run_dir);
                row.ok = true;
                row.diverged = s.diverged;
                row.final_reward = s.final_reward;
            } catch (const std::exception& e) {
                row.error = e.what();
                row.diverged = true;
            }
            diverged = diverged || row.diverged;
            finals.push_back(row.final_reward);
            res.rows.push_back(row);
        }
        res.median_final_reward.push_back(median(finals));
        res.any_diverged.push_back(diverged);
    }
    std::string csv = "lr,seed,ok,diverged,final_reward,error\n";
    json rows = json::array();
    for (const auto& r : res.rows) {
        csv += json(r.lr).dump() + "," + std::to_string(r.seed) + "," + (r.ok ? "true" : "false") + "," +
               (r.diverged ? "true" : "false") + "," + json(r.final_reward).dump() + "," + json(r.error).dump() + "\n";
        rows.push_back({{"lr", r.lr}, {"seed", r.seed}, {"run_dir", r.run_dir}, {"ok", r.ok}, {"diverged", r.diverged},
                        {"final_reward", r.final_reward}, {"error", r.error}});
    }
    write_text(fs::path(out_dir) / "sweep.csv", csv);
    json summary = {{"grid", grid}, {"median_final_reward", res.median_final_reward},
                    {"any_diverged", res.any_diverged}, {"runs", rows}};
    write_text(fs::path(out_dir) / "sweep.json", summary.dump(2) + "\n");
    PlotSeries s{"median final reward", grid, res.median_final_reward};
    write_text(fs::path(out_dir) / "sweep.svg",
               line_chart_svg({s}, {"Final reward vs learning rate", "learning rate", "final reward", true, false, 640, 400}));
    return res;
}

// ---- gradient check -----------------------------------------------------------

json gradcheck_config(const ExperimentConfig& c, std::size_t coords, double h) {
    c.model.validate();
    const ParamStore store = init_params(c.model, c.seed);
    const std::size_t batch = 2, seq = std::min<std::size_t>(c.model.max_seq_len, 6);
    TokenBatch tb{batch, seq, {}};
    CounterRng rng(c.seed, "gradcheck_tokens");
    for (std::size_t i = 0; i < batch * seq; ++i) tb.tokens.push_back(static_cast<std::int32_t>(rng.below(c.model.vocab_size)));
    std::vector<std::int32_t> targets(batch * seq);
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(c.model.vocab_size));

    ad::TracedFn f = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> vars) {
        BoundParams<double> bound{&tape, &store, std::vector<ad::Var<double>>(vars.begin(), vars.end())};
        ad::Var<double> loss = ad::cross_entropy_logits(trace_logits(bound, tb), std::span<const std::int32_t>(targets));
        if (c.model.value_head) loss = ad::add(loss, ad::mean(trace_values(bound, tb)));
        return loss;
    };
    const auto res = ad::grad_check(f, master_tensors_f64(store), h, coords, c.seed);
    return {{"max_rel_error", res.max_rel_error}, {"coords_checked", res.coords_checked}, {"h", h},
            {"param_count", store.count()}};
}

}  // namespace rlol
