#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlol/autodiff.hpp"
#include "rlol/bf16.hpp"
#include "rlol/tensor.hpp"

namespace rlol {

struct ModelConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 16;
    bool tie_output = false;
    bool value_head = false;

    void validate() const;
    /// Hash of the architecture fields; stored in checkpoints.
    std::uint64_t hash() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Closed-form parameter count for `config`.
std::size_t expected_param_count(const ModelConfig& config);

/// One named parameter: FP32 master values plus their committed bf16 bit patterns.
struct ParamTensor {
    std::string name;
    Shape shape;
    std::vector<float> master;
    std::vector<std::uint16_t> stored;

    std::size_t size() const { return master.size(); }
    float stored_value(std::size_t i) const { return bf16_to_float(stored[i]); }
    bool operator==(const ParamTensor&) const = default;
};

/// Ordered parameter collection. Order is fixed by the architecture, so
/// iteration is deterministic and matches gradient / optimizer-buffer order.
class ParamStore {
public:
    ModelConfig config;
    std::uint64_t step = 0;
    std::vector<ParamTensor> tensors;

    std::size_t count() const;
    std::optional<std::size_t> index_of(std::string_view name) const;
    const ParamTensor& at(std::string_view name) const;
    ParamTensor& at(std::string_view name);

    /// stored <- bf16(master) for every tensor.
    void commit();
    /// master <- stored, i.e. the state right after loading a bf16 checkpoint.
    void load_master_from_stored();

    bool operator==(const ParamStore&) const = default;
};

using Gradients = std::vector<std::vector<float>>;

/// Deterministic in (config, seed). Weights ~ N(0, 0.02^2), residual output
/// projections scaled by 1/sqrt(2 * n_layers), biases 0, norm gains 1.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

/// Right-padded token rows.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::int32_t> tokens;  // batch * seq, row-major

    std::int32_t at(std::size_t b, std::size_t t) const { return tokens[b * seq + t]; }
};

/// Parameters bound onto a tape, in store order.
template <class T>
struct BoundParams {
    ad::Tape<T>* tape = nullptr;
    const ParamStore* store = nullptr;
    std::vector<ad::Var<T>> vars;

    ad::Var<T> operator[](std::string_view name) const;
};

/// Binds FP32 masters as leaves (`trainable`) or constants.
template <class T>
BoundParams<T> bind_params(ad::Tape<T>& tape, const ParamStore& store, bool trainable);

/// Gradients of the bound leaves after `tape.backward`, converted to float.
template <class T>
Gradients collect_gradients(BoundParams<T>& bound);

/// Final-norm hidden states, [batch*seq x d_model].
template <class T>
ad::Var<T> trace_hidden(const BoundParams<T>& params, const TokenBatch& tokens);
/// Logits, [batch*seq x vocab].
template <class T>
ad::Var<T> trace_logits(const BoundParams<T>& params, const TokenBatch& tokens);
/// Per-position values, [batch*seq x 1]. Requires a value head.
template <class T>
ad::Var<T> trace_values(const BoundParams<T>& params, const TokenBatch& tokens);

/// Logits as a [batch x seq x vocab] tensor, computed from FP32 masters.
Tensor<float> forward_logits(const ParamStore& params, const TokenBatch& tokens);
/// Log-softmax at the realized next token: [batch x (seq-1)].
Tensor<float> log_probs_for_actions(const Tensor<float>& logits, const TokenBatch& tokens);
/// Values as [batch x seq].
Tensor<float> forward_value(const ParamStore& params, const TokenBatch& tokens);

/// Parameter tensors as fp64 copies of the masters (for gradient checks).
std::vector<Tensor<double>> master_tensors_f64(const ParamStore& store);

}  // namespace rlol
