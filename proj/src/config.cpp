#include "rlol/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "rlol/error.hpp"

namespace rlol {

namespace {

std::string fmt_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, end);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
    fail(ErrorKind::config, "config key '" + key + "': '" + value + "' is not " + what);
}

double parse_double(const std::string& key, const std::string& v) {
    double x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
    return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad_value(key, v, "true or false");
}

struct Field {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <class M>
Field size_field(M ExperimentConfig::*outer, std::size_t M::*member) {
    return {[=](const ExperimentConfig& c) { return std::to_string(c.*outer.*member); },
            [=](ExperimentConfig& c, const std::string& k, const std::string& v) {
                c.*outer.*member = static_cast<std::size_t>(parse_u64(k, v));
            }};
}
template <class M>
Field double_field(M ExperimentConfig::*outer, double M::*member) {
    return {[=](const ExperimentConfig& c) { return fmt_double(c.*outer.*member); },
            [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*outer.*member = parse_double(k, v); }};
}
template <class M>
Field bool_field(M ExperimentConfig::*outer, bool M::*member) {
    return {[=](const ExperimentConfig& c) { return std::string(c.*outer.*member ? "true" : "false"); },
            [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*outer.*member = parse_bool(k, v); }};
}
Field top_size(std::size_t ExperimentConfig::*m) {
    return {[=](const ExperimentConfig& c) { return std::to_string(c.*m); },
            [=](ExperimentConfig& c, const std::string& k, const std::string& v) {
                c.*m = static_cast<std::size_t>(parse_u64(k, v));
            }};
}
Field top_double(double ExperimentConfig::*m) {
    return {[=](const ExperimentConfig& c) { return fmt_double(c.*m); },
            [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_double(k, v); }};
}
Field top_bool(bool ExperimentConfig::*m) {
    return {[=](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); },
            [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); }};
}

const std::map<std::string, Field>& fields() {
    using C = ExperimentConfig;
    static const std::map<std::string, Field> table = {
        {"run.name", {[](const C& c) { return c.name; },
                      [](C& c, const std::string&, const std::string& v) { c.name = v; }}},
        {"run.seed", {[](const C& c) { return std::to_string(c.seed); },
                      [](C& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }}},
        {"run.steps", top_size(&C::steps)},
        {"run.output_dir", {[](const C& c) { return c.output_dir; },
                            [](C& c, const std::string&, const std::string& v) { c.output_dir = v; }}},
        {"run.checkpoint_interval", top_size(&C::checkpoint_interval)},
        {"run.probe_steps",
         {[](const C& c) {
              std::string s;
              for (std::size_t i = 0; i < c.probe_steps.size(); ++i)
                  s += (i ? "," : "") + std::to_string(c.probe_steps[i]);
              return s;
          },
          [](C& c, const std::string& k, const std::string& v) {
              c.probe_steps.clear();
              std::stringstream ss(v);
              for (std::string item; std::getline(ss, item, ',');) {
                  item = trim(item);
                  if (!item.empty()) c.probe_steps.push_back(parse_u64(k, item));
              }
          }}},
        {"run.workers", top_size(&C::workers)},
        {"run.eval_prompts", top_size(&C::eval_prompts)},
        {"run.eval_interval", top_size(&C::eval_interval)},
        {"run.final_window", top_size(&C::final_window)},
        {"run.divergence_kl", top_double(&C::divergence_kl)},
        {"run.divergence_norm_ratio", top_double(&C::divergence_norm_ratio)},
        {"run.record_wall_ms", top_bool(&C::record_wall_ms)},

        {"model.vocab_size", size_field(&C::model, &ModelConfig::vocab_size)},
        {"model.d_model", size_field(&C::model, &ModelConfig::d_model)},
        {"model.n_layers", size_field(&C::model, &ModelConfig::n_layers)},
        {"model.n_heads", size_field(&C::model, &ModelConfig::n_heads)},
        {"model.d_ff", size_field(&C::model, &ModelConfig::d_ff)},
        {"model.max_seq_len", size_field(&C::model, &ModelConfig::max_seq_len)},
        {"model.tie_output", bool_field(&C::model, &ModelConfig::tie_output)},
        {"model.value_head", bool_field(&C::model, &ModelConfig::value_head)},

        {"env.kind", {[](const C& c) { return std::string(to_string(c.env.kind)); },
                      [](C& c, const std::string&, const std::string& v) { c.env.kind = parse_env_kind(v); }}},
        {"env.vocab_size", size_field(&C::env, &EnvSpec::vocab_size)},
        {"env.difficulty", size_field(&C::env, &EnvSpec::difficulty)},
        {"env.evolve_threshold", double_field(&C::env, &EnvSpec::evolve_threshold)},
        {"env.evolve_window", size_field(&C::env, &EnvSpec::evolve_window)},
        {"env.max_prompt_len", size_field(&C::env, &EnvSpec::max_prompt_len)},
        {"env.max_response_len", size_field(&C::env, &EnvSpec::max_response_len)},

        {"algo.name", {[](const C& c) { return std::string(to_string(c.algo.algo)); },
                       [](C& c, const std::string&, const std::string& v) { c.algo.algo = parse_algo(v); }}},
        {"algo.group_size", size_field(&C::algo, &AlgoConfig::group_size)},
        {"algo.batch_prompts", size_field(&C::algo, &AlgoConfig::batch_prompts)},
        {"algo.clip_eps", double_field(&C::algo, &AlgoConfig::clip_eps)},
        {"algo.kl_coeff", double_field(&C::algo, &AlgoConfig::kl_coeff)},
        {"algo.max_grad_norm", double_field(&C::algo, &AlgoConfig::max_grad_norm)},
        {"algo.temperature", double_field(&C::algo, &AlgoConfig::temperature)},
        {"algo.normalize_std", bool_field(&C::algo, &AlgoConfig::normalize_std)},
        {"algo.adv_eps", double_field(&C::algo, &AlgoConfig::adv_eps)},
        {"algo.gamma", double_field(&C::algo, &AlgoConfig::gamma)},
        {"algo.lambda", double_field(&C::algo, &AlgoConfig::lambda)},
        {"algo.whiten_advantages", bool_field(&C::algo, &AlgoConfig::whiten_advantages)},
        {"algo.sft_dataset_size", top_size(&C::sft_dataset_size)},
        {"algo.sft_batch", top_size(&C::sft_batch)},

        {"optim.kind", {[](const C& c) { return std::string(to_string(c.optimizer)); },
                        [](C& c, const std::string&, const std::string& v) { c.optimizer = parse_optimizer_kind(v); }}},
        {"optim.lr", double_field(&C::hp, &HyperParams::lr)},
        {"optim.momentum", double_field(&C::hp, &HyperParams::momentum)},
        {"optim.beta1", double_field(&C::hp, &HyperParams::beta1)},
        {"optim.beta2", double_field(&C::hp, &HyperParams::beta2)},
        {"optim.eps", double_field(&C::hp, &HyperParams::eps)},
        {"optim.weight_decay", double_field(&C::hp, &HyperParams::weight_decay)},
        {"optim.bias_correction", bool_field(&C::hp, &HyperParams::bias_correction)},

        {"critic.lr", top_double(&C::critic_lr)},
        {"critic.init_from_policy", top_bool(&C::critic_init_from_policy)},

        {"init.pretrain_steps", size_field(&C::init, &InitConfig::pretrain_steps)},
        {"init.pretrain_lr", double_field(&C::init, &InitConfig::pretrain_lr)},
        {"init.pretrain_batch", size_field(&C::init, &InitConfig::pretrain_batch)},
        {"init.pretrain_dataset_size", size_field(&C::init, &InitConfig::pretrain_dataset_size)},
    };
    return table;
}

}  // namespace

void ExperimentConfig::validate() const {
    require(!name.empty() && name.find('/') == std::string::npos && name != "." && name != "..", ErrorKind::config,
            "run.name must be a plain directory name");
    require(checkpoint_interval >= 1, ErrorKind::config, "run.checkpoint_interval must be >= 1");
    require(eval_interval >= 1, ErrorKind::config, "run.eval_interval must be >= 1");
    require(final_window >= 1, ErrorKind::config, "run.final_window must be >= 1");
    require(workers >= 1, ErrorKind::config, "run.workers must be >= 1");
    require(divergence_kl > 0.0, ErrorKind::config, "run.divergence_kl must be positive");
    require(divergence_norm_ratio > 1.0, ErrorKind::config, "run.divergence_norm_ratio must exceed 1");
    model.validate();
    env.validate();
    require(model.vocab_size == env.vocab_size, ErrorKind::config, "model.vocab_size must equal env.vocab_size");
    const std::size_t longest = env.max_prompt_len + env.max_response_len;
    require(model.max_seq_len >= longest, ErrorKind::config,
            "model.max_seq_len must cover env.max_prompt_len + env.max_response_len");
    algo.validate();
    hp.validate();
    require(critic_lr >= 0.0, ErrorKind::config, "critic.lr must be non-negative");
    require(sft_dataset_size >= 1 && sft_batch >= 1, ErrorKind::config, "algo.sft_* sizes must be >= 1");
    require(init.pretrain_lr > 0.0 && init.pretrain_batch >= 1 && init.pretrain_dataset_size >= 1, ErrorKind::config,
            "init.pretrain_* must be positive");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : fields()) keys.push_back(k);
    return keys;
}

std::string serialize_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& [k, f] : fields()) out += k + " = " + f.get(config) + "\n";
    return out;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    require(it != fields().end(), ErrorKind::config, "unknown config key '" + key + "'");
    it->second.set(config, key, value);
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        require(eq != std::string::npos, ErrorKind::config, "config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
        require(seen.insert(key).second, ErrorKind::config, "duplicate config key '" + key + "'");
        set_config_value(c, key, value);
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::uint64_t config_hash(const ExperimentConfig& config) {
    return fnv1a64(serialize_config(config));
}

ModelConfig critic_model_config(const ModelConfig& policy) {
    ModelConfig c = policy;
    c.tie_output = true;
    c.value_head = true;
    return c;
}

}  // namespace rlol
