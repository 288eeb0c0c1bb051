#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rlol/model.hpp"

namespace rlol {

enum class OptimizerKind { sgd, sgd_momentum, rmsprop, adamw };

const char* to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct HyperParams {
    double lr = 1e-6;
    double momentum = 0.9;  // mu, sgd_momentum only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  // decoupled, adamw only
    bool bias_correction = true;  // adamw only

    /// Defaults for `kind`; only the learning rate differs between kinds.
    static HyperParams defaults(OptimizerKind kind);
    void validate() const;
    bool operator==(const HyperParams&) const = default;
};

/// Number of per-parameter buffers the rule keeps: 0, 1 (m), 1 (v), 2 (m, v).
std::size_t buffer_count(OptimizerKind kind);
constexpr bool uses_m(OptimizerKind k) { return k == OptimizerKind::sgd_momentum || k == OptimizerKind::adamw; }
constexpr bool uses_v(OptimizerKind k) { return k == OptimizerKind::rmsprop || k == OptimizerKind::adamw; }

/// One update of a flat parameter range at step `t` (1-based, after increment).
/// `m` / `v` may be empty when the kind does not use them. Instantiated for
/// float (training) and double (reference checks).
template <class T>
void apply_update(OptimizerKind kind, const HyperParams& hp, std::uint64_t t, std::span<T> theta, std::span<T> m,
                  std::span<T> v, std::span<const T> g);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adamw;
    HyperParams hp;
    std::uint64_t t = 0;
    std::vector<std::vector<float>> m;  // one per parameter tensor; empty when unused
    std::vector<std::vector<float>> v;

    /// Bytes held in m and v.
    std::size_t buffer_bytes() const;
    bool operator==(const OptimizerState&) const = default;
};

OptimizerState make_optimizer_state(OptimizerKind kind, const HyperParams& hp, const ParamStore& params);

/// Applies one update to the FP32 masters, then commits bf16 stored values and
/// increments both `state.t` and `params.step`. Non-finite gradients reject the
/// step before anything is modified.
void optimizer_step(OptimizerState& state, ParamStore& params, const Gradients& grads);

/// Persistent bytes for `p` parameters: master weights plus optimizer buffers,
/// each element `d_optim` bytes wide.
std::uint64_t optimizer_memory_bytes(std::uint64_t p, OptimizerKind kind, std::uint64_t d_optim = 4);

/// lr / (sqrt(v) + eps), elementwise.
double effective_lr(double lr, double v, double eps);
std::vector<double> effective_lr(double lr, std::span<const float> v, double eps);

/// L2 norm over all gradient tensors.
double global_norm(const Gradients& grads);
/// Scales `grads` so their global norm is at most `max_norm`; returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace rlol
