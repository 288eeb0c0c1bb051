#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rlol/error.hpp"
#include "rlol/model.hpp"

using namespace rlol;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.vocab_size = 64;
    c.d_model = 32;
    c.n_layers = 2;
    c.n_heads = 4;
    c.d_ff = 128;
    c.max_seq_len = 16;
    return c;
}

TokenBatch batch_of(std::vector<std::vector<std::int32_t>> rows) {
    TokenBatch b{rows.size(), rows.front().size(), {}};
    for (const auto& r : rows) b.tokens.insert(b.tokens.end(), r.begin(), r.end());
    return b;
}

}  // namespace

TEST_CASE("init_params: determinism, seed sensitivity, bf16 commit") {
    const auto c = small_config();
    const ParamStore a = init_params(c, 3), b = init_params(c, 3), d = init_params(c, 4);
    CHECK(a == b);
    CHECK_FALSE(a == d);
    for (const auto& t : a.tensors) {
        REQUIRE(t.stored.size() == t.master.size());
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.stored[i] == bf16_bits(t.master[i]));
    }
    for (const auto& t : a.tensors) {
        if (t.name.ends_with(".b1") || t.name.ends_with(".b2"))
            for (float x : t.master) CHECK(x == 0.0f);
        if (t.name.ends_with(".gain"))
            for (float x : t.master) CHECK(x == 1.0f);
    }
    ModelConfig bad = c;
    bad.n_heads = 5;
    CHECK_THROWS_AS(init_params(bad, 0), Error);
}

TEST_CASE("parameter count matches a hand count of weight shapes") {
    const auto c = small_config();
    const std::size_t V = 64, d = 32, L = 2, ff = 128, S = 16;
    const std::size_t per_layer = d              // attention norm gain
                                  + 4 * d * d    // wq, wk, wv, wo
                                  + d            // mlp norm gain
                                  + d * ff + ff  // w1, b1
                                  + ff * d + d;  // w2, b2
    const std::size_t want = V * d + S * d + L * per_layer + d + d * V;
    CHECK(want == 29664);
    CHECK(init_params(c, 0).count() == want);
    CHECK(expected_param_count(c) == want);

    ModelConfig tied = c;
    tied.tie_output = true;
    tied.value_head = true;
    CHECK(init_params(tied, 0).count() == want - d * V + d + 1);
}

TEST_CASE("forward_logits: causality and identical rows") {
    const auto p = init_params(small_config(), 1);
    const std::vector<std::int32_t> base{1, 12, 4, 17, 3, 20, 2};
    for (std::size_t t = 0; t + 1 < base.size(); ++t) {
        auto changed = base;
        for (std::size_t u = t + 1; u < changed.size(); ++u) changed[u] = static_cast<std::int32_t>((changed[u] * 7 + 5) % 64);
        const auto la = forward_logits(p, batch_of({base})), lb = forward_logits(p, batch_of({changed}));
        for (std::size_t i = 0; i < (t + 1) * 64; ++i) CHECK(la.data[i] == lb.data[i]);
    }
    const auto rows = forward_logits(p, batch_of({base, base, base}));
    CHECK(rows.shape == Shape{3, 7, 64});
    for (std::size_t i = 0; i < 7 * 64; ++i) {
        CHECK(rows.data[i] == rows.data[7 * 64 + i]);
        CHECK(rows.data[i] == rows.data[2 * 7 * 64 + i]);
    }
    CHECK_THROWS_AS(forward_logits(p, batch_of({{1, 64}})), Error);
    CHECK_THROWS_AS(forward_logits(p, batch_of({std::vector<std::int32_t>(17, 1)})), Error);
}

TEST_CASE("log_probs_for_actions: uniform, normalization, scalar oracle") {
    const TokenBatch tb = batch_of({{1, 5, 7}});
    Tensor<float> uniform({1, 3, 8}, 0.25f);
    const auto lp = log_probs_for_actions(uniform, tb);
    CHECK(lp.shape == Shape{1, 2});
    for (float x : lp.data) CHECK(x == doctest::Approx(-std::log(8.0)).epsilon(1e-6));

    const auto p = init_params(small_config(), 2);
    const TokenBatch seq = batch_of({{1, 11, 4, 13}});
    const auto logits = forward_logits(p, seq);
    for (std::size_t t = 0; t + 1 < 4; ++t) {
        double total = 0.0;
        for (std::int32_t v = 0; v < 64; ++v) {
            TokenBatch alt = seq;
            alt.tokens[t + 1] = v;
            total += std::exp(static_cast<double>(log_probs_for_actions(logits, alt).data[t]));
        }
        CHECK(std::abs(total - 1.0) <= 1e-6);
    }

    Tensor<float> l3({1, 3, 4}, std::vector<float>{0.1f, -0.4f, 2.0f, 0.0f, 1.5f, 0.2f, -1.0f, 0.3f, 0, 0, 0, 0});
    const TokenBatch tk = batch_of({{0, 2, 1}});
    const auto got = log_probs_for_actions(l3, tk);
    CHECK(got.data[0] == doctest::Approx(oracle::log_softmax_at({0.1f, -0.4f, 2.0f, 0.0f}, 2)).epsilon(1e-6));
    CHECK(got.data[1] == doctest::Approx(oracle::log_softmax_at({1.5f, 0.2f, -1.0f, 0.3f}, 1)).epsilon(1e-6));
}

TEST_CASE("forward_value: zero head, causality, missing head") {
    ModelConfig c = small_config();
    c.value_head = true;
    ParamStore p = init_params(c, 5);
    const std::vector<std::int32_t> base{1, 12, 4, 17, 3};
    auto changed = base;
    changed[4] = 30;
    const auto va = forward_value(p, batch_of({base})), vb = forward_value(p, batch_of({changed}));
    CHECK(va.shape == Shape{1, 5});
    for (std::size_t t = 0; t < 4; ++t) CHECK(va.data[t] == vb.data[t]);

    for (auto* name : {"value_head.w", "value_head.b"}) {
        auto& t = p.at(name);
        std::fill(t.master.begin(), t.master.end(), 0.0f);
    }
    p.commit();
    for (float v : forward_value(p, batch_of({base, changed})).data) CHECK(v == 0.0f);

    CHECK_THROWS_AS(forward_value(init_params(small_config(), 0), batch_of({base})), Error);
}

TEST_CASE("model gradients pass grad_check") {
    ModelConfig c = small_config();
    c.value_head = true;
    const ParamStore store = init_params(c, 9);
    const TokenBatch tb = batch_of({{1, 12, 4, 17, 3}, {1, 19, 4, 10, 3}});

    ad::TracedFn logits = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> vars) {
        BoundParams<double> b{&tape, &store, {vars.begin(), vars.end()}};
        return ad::sum(trace_logits(b, tb));
    };
    CHECK(ad::grad_check(logits, master_tensors_f64(store), 1e-5, 64, 1).max_rel_error < 1e-3);

    ad::TracedFn values = [&](ad::Tape<double>& tape, std::span<const ad::Var<double>> vars) {
        BoundParams<double> b{&tape, &store, {vars.begin(), vars.end()}};
        auto v = trace_values(b, tb);
        return ad::sum(ad::mul(v, v));
    };
    CHECK(ad::grad_check(values, master_tensors_f64(store), 1e-5, 64, 2).max_rel_error < 1e-3);
}
