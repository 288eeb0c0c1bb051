#include "rlol/model.hpp"

#include <cmath>
#include <sstream>

#include "rlol/rng.hpp"

namespace rlol {

void ModelConfig::validate() const {
    require(vocab_size > 0 && d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0 && max_seq_len > 0,
            ErrorKind::invalid_argument, "model config: all sizes must be positive");
    require(d_model % n_heads == 0, ErrorKind::invalid_argument, "model config: d_model must be divisible by n_heads");
}

std::uint64_t ModelConfig::hash() const {
    std::ostringstream os;
    os << vocab_size << ',' << d_model << ',' << n_layers << ',' << n_heads << ',' << d_ff << ',' << max_seq_len
       << ',' << tie_output << ',' << value_head;
    return fnv1a64(os.str());
}

std::size_t expected_param_count(const ModelConfig& c) {
    const std::size_t d = c.d_model, ff = c.d_ff;
    const std::size_t per_layer = d + 4 * d * d + d + d * ff + ff + ff * d + d;
    std::size_t n = c.vocab_size * d + c.max_seq_len * d + c.n_layers * per_layer + d;
    if (!c.tie_output) n += d * c.vocab_size;
    if (c.value_head) n += d + 1;
    return n;
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

std::optional<std::size_t> ParamStore::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i)
        if (tensors[i].name == name) return i;
    return std::nullopt;
}

const ParamTensor& ParamStore::at(std::string_view name) const {
    auto i = index_of(name);
    require(i.has_value(), ErrorKind::invalid_argument, "no parameter named " + std::string(name));
    return tensors[*i];
}

ParamTensor& ParamStore::at(std::string_view name) {
    auto i = index_of(name);
    require(i.has_value(), ErrorKind::invalid_argument, "no parameter named " + std::string(name));
    return tensors[*i];
}

void ParamStore::commit() {
    for (auto& t : tensors) commit_bf16(t.master, t.stored);
}

void ParamStore::load_master_from_stored() {
    for (auto& t : tensors)
        for (std::size_t i = 0; i < t.size(); ++i) t.master[i] = t.stored_value(i);
}

namespace {

enum class Init { normal, normal_residual, zeros, ones };

void add_tensor(ParamStore& store, std::string name, Shape shape, Init init, std::uint64_t seed) {
    ParamTensor t;
    t.name = std::move(name);
    t.shape = std::move(shape);
    const std::size_t n = numel(t.shape);
    t.master.assign(n, 0.0f);
    t.stored.assign(n, 0);
    const double std_dev =
        init == Init::normal_residual ? 0.02 / std::sqrt(2.0 * static_cast<double>(store.config.n_layers)) : 0.02;
    if (init == Init::normal || init == Init::normal_residual) {
        CounterRng rng(seed, "init/" + t.name);
        for (auto& x : t.master) x = static_cast<float>(rng.normal() * std_dev);
    } else if (init == Init::ones) {
        std::fill(t.master.begin(), t.master.end(), 1.0f);
    }
    store.tensors.push_back(std::move(t));
}

}  // namespace

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ParamStore s;
    s.config = config;
    const std::size_t d = config.d_model, ff = config.d_ff;
    add_tensor(s, "tok_emb", {config.vocab_size, d}, Init::normal, seed);
    add_tensor(s, "pos_emb", {config.max_seq_len, d}, Init::normal, seed);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add_tensor(s, p + "attn_norm.gain", {d}, Init::ones, seed);
        add_tensor(s, p + "attn.wq", {d, d}, Init::normal, seed);
        add_tensor(s, p + "attn.wk", {d, d}, Init::normal, seed);
        add_tensor(s, p + "attn.wv", {d, d}, Init::normal, seed);
        add_tensor(s, p + "attn.wo", {d, d}, Init::normal_residual, seed);
        add_tensor(s, p + "mlp_norm.gain", {d}, Init::ones, seed);
        add_tensor(s, p + "mlp.w1", {d, ff}, Init::normal, seed);
        add_tensor(s, p + "mlp.b1", {ff}, Init::zeros, seed);
        add_tensor(s, p + "mlp.w2", {ff, d}, Init::normal_residual, seed);
        add_tensor(s, p + "mlp.b2", {d}, Init::zeros, seed);
    }
    add_tensor(s, "final_norm.gain", {d}, Init::ones, seed);
    if (!config.tie_output) add_tensor(s, "lm_head", {d, config.vocab_size}, Init::normal, seed);
    if (config.value_head) {
        add_tensor(s, "value_head.w", {d, 1}, Init::normal, seed);
        add_tensor(s, "value_head.b", {1}, Init::zeros, seed);
    }
    s.commit();
    return s;
}

// ---- tracing ----------------------------------------------------------------

template <class T>
ad::Var<T> BoundParams<T>::operator[](std::string_view name) const {
    auto i = store->index_of(name);
    require(i.has_value(), ErrorKind::invalid_argument, "no parameter named " + std::string(name));
    return vars[*i];
}

template <class T>
BoundParams<T> bind_params(ad::Tape<T>& tape, const ParamStore& store, bool trainable) {
    BoundParams<T> b{&tape, &store, {}};
    b.vars.reserve(store.tensors.size());
    for (const auto& t : store.tensors) {
        Tensor<T> v;
        v.shape = t.shape;
        v.data.assign(t.master.begin(), t.master.end());
        b.vars.push_back(trainable ? tape.leaf(std::move(v)) : tape.constant(std::move(v)));
    }
    return b;
}

template <class T>
Gradients collect_gradients(BoundParams<T>& bound) {
    Gradients g;
    g.reserve(bound.vars.size());
    for (auto& v : bound.vars) {
        const auto& gv = bound.tape->grad(v).data;
        g.emplace_back(gv.begin(), gv.end());
    }
    return g;
}

template <class T>
ad::Var<T> trace_hidden(const BoundParams<T>& p, const TokenBatch& tokens) {
    const ModelConfig& c = p.store->config;
    require(tokens.seq >= 1 && tokens.seq <= c.max_seq_len, ErrorKind::invalid_argument,
            "sequence length " + std::to_string(tokens.seq) + " exceeds max_seq_len");
    require(tokens.tokens.size() == tokens.batch * tokens.seq, ErrorKind::dimension, "token batch size mismatch");
    for (auto tok : tokens.tokens)
        require(tok >= 0 && static_cast<std::size_t>(tok) < c.vocab_size, ErrorKind::invalid_argument,
                "token " + std::to_string(tok) + " out of range");
    std::vector<std::int32_t> positions(tokens.tokens.size());
    for (std::size_t b = 0; b < tokens.batch; ++b)
        for (std::size_t t = 0; t < tokens.seq; ++t) positions[b * tokens.seq + t] = static_cast<std::int32_t>(t);

    using namespace ad;
    Var<T> x = add(embedding(p["tok_emb"], std::span<const std::int32_t>(tokens.tokens)),
                   embedding(p["pos_emb"], std::span<const std::int32_t>(positions)));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        Var<T> h = rms_norm(x, p[pre + "attn_norm.gain"]);
        Var<T> q = matmul(h, p[pre + "attn.wq"]);
        Var<T> k = matmul(h, p[pre + "attn.wk"]);
        Var<T> v = matmul(h, p[pre + "attn.wv"]);
        Var<T> att = causal_attention(q, k, v, tokens.batch, tokens.seq, c.n_heads);
        x = add(x, matmul(att, p[pre + "attn.wo"]));
        h = rms_norm(x, p[pre + "mlp_norm.gain"]);
        Var<T> u = gelu(add_bias(matmul(h, p[pre + "mlp.w1"]), p[pre + "mlp.b1"]));
        x = add(x, add_bias(matmul(u, p[pre + "mlp.w2"]), p[pre + "mlp.b2"]));
    }
    return rms_norm(x, p["final_norm.gain"]);
}

template <class T>
ad::Var<T> trace_logits(const BoundParams<T>& p, const TokenBatch& tokens) {
    ad::Var<T> h = trace_hidden(p, tokens);
    if (p.store->config.tie_output) return ad::matmul(h, ad::transpose(p["tok_emb"]));
    return ad::matmul(h, p["lm_head"]);
}

template <class T>
ad::Var<T> trace_values(const BoundParams<T>& p, const TokenBatch& tokens) {
    require(p.store->config.value_head, ErrorKind::invalid_argument, "forward_value: model has no value head");
    ad::Var<T> h = trace_hidden(p, tokens);
    return ad::add_bias(ad::matmul(h, p["value_head.w"]), p["value_head.b"]);
}

Tensor<float> forward_logits(const ParamStore& params, const TokenBatch& tokens) {
    ad::Tape<float> tape;
    auto bound = bind_params(tape, params, false);
    Tensor<float> out = trace_logits(bound, tokens).value();
    out.shape = {tokens.batch, tokens.seq, params.config.vocab_size};
    return out;
}

Tensor<float> log_probs_for_actions(const Tensor<float>& logits, const TokenBatch& tokens) {
    require(logits.rank() == 3 && logits.shape[0] == tokens.batch && logits.shape[1] == tokens.seq,
            ErrorKind::dimension, "log_probs_for_actions: logits do not match tokens");
    require(tokens.seq >= 2, ErrorKind::dimension, "log_probs_for_actions: need at least two positions");
    const std::size_t V = logits.shape[2];
    Tensor<float> out({tokens.batch, tokens.seq - 1});
    for (std::size_t b = 0; b < tokens.batch; ++b) {
        for (std::size_t t = 0; t + 1 < tokens.seq; ++t) {
            const float* z = logits.data.data() + (b * tokens.seq + t) * V;
            float mx = z[0];
            for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, z[j]);
            float s = 0;
            for (std::size_t j = 0; j < V; ++j) s += std::exp(z[j] - mx);
            const auto next = static_cast<std::size_t>(tokens.at(b, t + 1));
            require(next < V, ErrorKind::invalid_argument, "log_probs_for_actions: token out of range");
            out.data[b * (tokens.seq - 1) + t] = z[next] - mx - std::log(s);
        }
    }
    return out;
}

Tensor<float> forward_value(const ParamStore& params, const TokenBatch& tokens) {
    ad::Tape<float> tape;
    auto bound = bind_params(tape, params, false);
    Tensor<float> out = trace_values(bound, tokens).value();
    out.shape = {tokens.batch, tokens.seq};
    return out;
}

std::vector<Tensor<double>> master_tensors_f64(const ParamStore& store) {
    std::vector<Tensor<double>> out;
    for (const auto& t : store.tensors) {
        Tensor<double> d;
        d.shape = t.shape;
        d.data.assign(t.master.begin(), t.master.end());
        out.push_back(std::move(d));
    }
    return out;
}

#define RLOL_INSTANTIATE(T)                                                                  \
    template struct BoundParams<T>;                                                         \
    template BoundParams<T> bind_params(ad::Tape<T>&, const ParamStore&, bool);             \
    template Gradients collect_gradients(BoundParams<T>&);                                  \
    template ad::Var<T> trace_hidden(const BoundParams<T>&, const TokenBatch&);             \
    template ad::Var<T> trace_logits(const BoundParams<T>&, const TokenBatch&);             \
    template ad::Var<T> trace_values(const BoundParams<T>&, const TokenBatch&);

RLOL_INSTANTIATE(float)
RLOL_INSTANTIATE(double)

#undef RLOL_INSTANTIATE

}  // namespace rlol
