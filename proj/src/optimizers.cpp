// Built with -ffp-contract=off: the rmsprop and sgd rules must stay bitwise
// identical to their adamw / sgd_momentum special cases.
#include "rlol/optimizers.hpp"

#include <cmath>

#include "rlol/error.hpp"

namespace rlol {

const char* to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::sgd_momentum: return "sgd_momentum";
        case OptimizerKind::rmsprop: return "rmsprop";
        case OptimizerKind::adamw: return "adamw";
    }
    return "?";
}

OptimizerKind parse_optimizer_kind(const std::string& text) {
    if (text == "sgd") return OptimizerKind::sgd;
    if (text == "sgd_momentum") return OptimizerKind::sgd_momentum;
    if (text == "rmsprop") return OptimizerKind::rmsprop;
    if (text == "adamw") return OptimizerKind::adamw;
    fail(ErrorKind::config, "unknown optimizer '" + text + "'");
}

HyperParams HyperParams::defaults(OptimizerKind kind) {
    HyperParams hp;
    hp.lr = (kind == OptimizerKind::sgd || kind == OptimizerKind::sgd_momentum) ? 1e-1 : 1e-6;
    return hp;
}

void HyperParams::validate() const {
    require(std::isfinite(lr) && lr > 0.0, ErrorKind::config, "optimizer: lr must be positive");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::config, "optimizer: momentum must lie in [0, 1)");
    require(beta1 >= 0.0 && beta1 < 1.0, ErrorKind::config, "optimizer: beta1 must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, ErrorKind::config, "optimizer: beta2 must lie in [0, 1)");
    require(eps > 0.0, ErrorKind::config, "optimizer: eps must be positive");
    require(weight_decay >= 0.0, ErrorKind::config, "optimizer: weight_decay must be non-negative");
}

std::size_t buffer_count(OptimizerKind kind) {
    return (uses_m(kind) ? 1 : 0) + (uses_v(kind) ? 1 : 0);
}

template <class T>
void apply_update(OptimizerKind kind, const HyperParams& hp, std::uint64_t t, std::span<T> theta, std::span<T> m,
                  std::span<T> v, std::span<const T> g) {
    const std::size_t n = theta.size();
    require(g.size() == n, ErrorKind::dimension, "apply_update: gradient size mismatch");
    require(!uses_m(kind) || m.size() == n, ErrorKind::dimension, "apply_update: m size mismatch");
    require(!uses_v(kind) || v.size() == n, ErrorKind::dimension, "apply_update: v size mismatch");
    const T lr = static_cast<T>(hp.lr);
    const T eps = static_cast<T>(hp.eps);
    switch (kind) {
        case OptimizerKind::sgd:
            for (std::size_t i = 0; i < n; ++i) theta[i] = theta[i] - lr * g[i];
            break;
        case OptimizerKind::sgd_momentum: {
            const T mu = static_cast<T>(hp.momentum);
            for (std::size_t i = 0; i < n; ++i) {
                m[i] = mu * m[i] + g[i];
                theta[i] = theta[i] - lr * m[i];
            }
            break;
        }
        case OptimizerKind::rmsprop: {
            const T b2 = static_cast<T>(hp.beta2), c2 = static_cast<T>(1.0 - hp.beta2);
            for (std::size_t i = 0; i < n; ++i) {
                v[i] = b2 * v[i] + c2 * (g[i] * g[i]);
                theta[i] = theta[i] - lr * (g[i] / (std::sqrt(v[i]) + eps));
            }
            break;
        }
        case OptimizerKind::adamw: {
            const T b1 = static_cast<T>(hp.beta1), c1 = static_cast<T>(1.0 - hp.beta1);
            const T b2 = static_cast<T>(hp.beta2), c2 = static_cast<T>(1.0 - hp.beta2);
            const T wd = static_cast<T>(hp.weight_decay);
            T bc1 = 1, bc2 = 1;
            if (hp.bias_correction) {
                bc1 = static_cast<T>(1.0 - std::pow(hp.beta1, static_cast<double>(t)));
                bc2 = static_cast<T>(1.0 - std::pow(hp.beta2, static_cast<double>(t)));
            }
            for (std::size_t i = 0; i < n; ++i) {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * (g[i] * g[i]);
                T mh = m[i], vh = v[i];
                if (hp.bias_correction) {
                    mh = mh / bc1;
                    vh = vh / bc2;
                }
                theta[i] = theta[i] - lr * (mh / (std::sqrt(vh) + eps) + wd * theta[i]);
            }
            break;
        }
    }
}

template void apply_update<float>(OptimizerKind, const HyperParams&, std::uint64_t, std::span<float>,
                                  std::span<float>, std::span<float>, std::span<const float>);
template void apply_update<double>(OptimizerKind, const HyperParams&, std::uint64_t, std::span<double>,
                                   std::span<double>, std::span<double>, std::span<const double>);

std::size_t OptimizerState::buffer_bytes() const {
    std::size_t n = 0;
    for (const auto& b : m) n += b.size() * sizeof(float);
    for (const auto& b : v) n += b.size() * sizeof(float);
    return n;
}

OptimizerState make_optimizer_state(OptimizerKind kind, const HyperParams& hp, const ParamStore& params) {
    hp.validate();
    OptimizerState s;
    s.kind = kind;
    s.hp = hp;
    if (uses_m(kind))
        for (const auto& t : params.tensors) s.m.emplace_back(t.size(), 0.0f);
    if (uses_v(kind))
        for (const auto& t : params.tensors) s.v.emplace_back(t.size(), 0.0f);
    return s;
}

void optimizer_step(OptimizerState& state, ParamStore& params, const Gradients& grads) {
    require(grads.size() == params.tensors.size(), ErrorKind::dimension, "optimizer_step: gradient count mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k) {
        require(grads[k].size() == params.tensors[k].size(), ErrorKind::dimension,
                "optimizer_step: gradient shape mismatch for " + params.tensors[k].name);
        for (float x : grads[k])
            require(std::isfinite(x), ErrorKind::non_finite,
                    "optimizer_step: non-finite gradient in " + params.tensors[k].name);
    }
    require(!uses_m(state.kind) || state.m.size() == grads.size(), ErrorKind::dimension,
            "optimizer_step: state does not match parameters");
    require(!uses_v(state.kind) || state.v.size() == grads.size(), ErrorKind::dimension,
            "optimizer_step: state does not match parameters");
    ++state.t;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        std::span<float> m, v;
        if (uses_m(state.kind)) m = state.m[k];
        if (uses_v(state.kind)) v = state.v[k];
        apply_update<float>(state.kind, state.hp, state.t, params.tensors[k].master, m, v, grads[k]);
    }
    params.commit();
    ++params.step;
}

std::uint64_t optimizer_memory_bytes(std::uint64_t p, OptimizerKind kind, std::uint64_t d_optim) {
    require(p > 0, ErrorKind::invalid_argument, "optimizer_memory_bytes: p must be positive");
    return (1 + buffer_count(kind)) * p * d_optim;
}

double effective_lr(double lr, double v, double eps) {
    return lr / (std::sqrt(v) + eps);
}

std::vector<double> effective_lr(double lr, std::span<const float> v, double eps) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = effective_lr(lr, static_cast<double>(v[i]), eps);
    return out;
}

double global_norm(const Gradients& grads) {
    double s = 0.0;
    for (const auto& g : grads)
        for (float x : g) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

double clip_global_norm(Gradients& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm > max_norm && norm > 0.0) {
        const float f = static_cast<float>(max_norm / norm);
        for (auto& g : grads)
            for (float& x : g) x *= f;
    }
    return norm;
}

}  // namespace rlol
