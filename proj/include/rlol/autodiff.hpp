#pragma once

// Define-by-run reverse-mode autodiff over a flat tape.
//
// Every primitive appends one node holding its output value and a backward
// closure. Nodes are appended in evaluation order, so the tape is already a
// topological order and `backward` is a single reverse sweep.
//
// A Tape is confined to one thread. Nodes whose inputs are all constants do
// not record a backward closure, so inference-only forwards are cheap.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rlol/tensor.hpp"

namespace rlol::ad {

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape; }
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input (a parameter).
    Var<T> leaf(Tensor<T> value);
    /// Non-differentiable input.
    Var<T> constant(Tensor<T> value);

    /// Appends a node. `fn` is dropped when no input requires a gradient.
    Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, const char* kind, BackwardFn fn);

    /// Reverse sweep from a scalar root. Leaves that the root does not depend on
    /// end up with zero gradients.
    void backward(Var<T> root);

    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor<T>& grad(Var<T> v);
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    const char* kind(std::size_t id) const { return nodes_[id].kind; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient accumulator of node `id`, allocated (zeroed) on first use.
    Tensor<T>& grad_buffer(std::size_t id);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<std::size_t> inputs;
        const char* kind = "";
        BackwardFn backward;
        bool requires_grad = false;
        bool is_leaf = false;
    };
    std::vector<Node> nodes_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

// ---- primitives -----------------------------------------------------------

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
template <class T> Var<T> transpose(Var<T> a);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T factor);
/// a[m x n] + bias[n] broadcast over rows; the only broadcasting primitive.
template <class T> Var<T> add_bias(Var<T> a, Var<T> bias);
template <class T> Var<T> gelu(Var<T> a);
template <class T> Var<T> tanh(Var<T> a);
/// x / sqrt(mean(x^2) + eps) * gain, per row.
template <class T> Var<T> rms_norm(Var<T> x, Var<T> gain, T eps = T(1e-6));
template <class T> Var<T> embedding(Var<T> table, std::span<const std::int32_t> indices);
/// Multi-head causal self-attention over `batch` sequences of length `seq`.
/// q, k, v are [batch*seq x d] with heads laid out contiguously along d.
template <class T> Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch,
                                           std::size_t seq, std::size_t heads);
template <class T> Var<T> softmax_rows(Var<T> x);
/// log softmax(logits[i])[targets[i]] for each row: returns [m].
template <class T> Var<T> log_softmax_gather(Var<T> logits, std::span<const std::int32_t> targets);
/// Mean negative log-likelihood of `targets` under row-wise softmax.
template <class T> Var<T> cross_entropy_logits(Var<T> logits, std::span<const std::int32_t> targets);
/// Flat index select: out[k] = a.data[indices[k]].
template <class T> Var<T> gather(Var<T> a, std::span<const std::size_t> indices);
template <class T> Var<T> sum(Var<T> a);
template <class T> Var<T> mean(Var<T> a);

/// mean_k -min(r_k A_k, clip(r_k, 1-eps, 1+eps) A_k), r_k = exp(logp_new_k - logp_old_k).
template <class T>
Var<T> clipped_surrogate(Var<T> logp_new, std::span<const T> logp_old, std::span<const T> advantages,
                         T clip_eps);
/// mean_k exp(ref_k - new_k) - (ref_k - new_k) - 1.
template <class T> Var<T> kl_k3(Var<T> logp_new, std::span<const T> logp_ref);
/// 0.5 * mean_k (values_k - targets_k)^2.
template <class T> Var<T> half_mse(Var<T> values, std::span<const T> targets);

// ---- gradient checking ----------------------------------------------------

using TracedFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares analytic gradients against central differences with step `h` on up to
/// `max_coords` coordinates (all of them when there are fewer), sampled
/// deterministically from `seed`. Relative error is
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
GradCheckResult grad_check(const TracedFn& f, const std::vector<Tensor<double>>& params, double h,
                           std::size_t max_coords, std::uint64_t seed = 0);

}  // namespace rlol::ad
