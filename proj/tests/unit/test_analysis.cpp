#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rlol/error.hpp"
#include "rlol/analysis.hpp"

using namespace rlol;

namespace {

ParamTensor tensor(std::string name, Shape shape, float fill) {
    const std::size_t n = numel(shape);
    return {std::move(name), std::move(shape), std::vector<float>(n, fill), std::vector<std::uint16_t>(n, 0)};
}

/// Store whose tensors are named like a two-layer model.
ParamStore layered_store() {
    ParamStore p;
    p.tensors.push_back(tensor("tok_emb", {4, 5}, 0.5f));
    p.tensors.push_back(tensor("layers.0.attn.wq", {5, 5}, 0.25f));
    p.tensors.push_back(tensor("layers.0.mlp.w1", {5, 6}, 0.25f));
    p.tensors.push_back(tensor("layers.1.attn.wq", {5, 5}, 0.25f));
    p.tensors.push_back(tensor("layers.1.mlp.b1", {6}, 0.0f));
    p.tensors.push_back(tensor("lm_head", {5, 4}, 0.125f));
    p.commit();
    return p;
}

UpdateDiff diff_of(std::vector<std::pair<Shape, std::vector<double>>> mats) {
    UpdateDiff d;
    for (std::size_t i = 0; i < mats.size(); ++i) {
        d.names.push_back("m" + std::to_string(i));
        d.shapes.push_back(mats[i].first);
        d.n += mats[i].second.size();
        d.delta.push_back(mats[i].second);
    }
    return d;
}

/// Rank by the energy rule from eigenvalues of A^T A computed with a plain
/// cyclic Jacobi eigen-solver (independent of the library's one-sided SVD).
std::size_t rank_oracle(std::size_t rows, std::size_t cols, const std::vector<double>& a) {
    std::vector<double> g(cols * cols, 0.0);
    for (std::size_t i = 0; i < cols; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            for (std::size_t r = 0; r < rows; ++r) g[i * cols + j] += a[r * cols + i] * a[r * cols + j];
    for (int sweep = 0; sweep < 100; ++sweep)
        for (std::size_t p = 0; p < cols; ++p)
            for (std::size_t q = p + 1; q < cols; ++q) {
                const double apq = g[p * cols + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (g[q * cols + q] - g[p * cols + p]) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < cols; ++k) {
                    const double gkp = g[k * cols + p], gkq = g[k * cols + q];
                    g[k * cols + p] = c * gkp - s * gkq;
                    g[k * cols + q] = s * gkp + c * gkq;
                }
                for (std::size_t k = 0; k < cols; ++k) {
                    const double gpk = g[p * cols + k], gqk = g[q * cols + k];
                    g[p * cols + k] = c * gpk - s * gqk;
                    g[q * cols + k] = s * gpk + c * gqk;
                }
            }
    std::vector<double> ev;
    for (std::size_t i = 0; i < cols; ++i) ev.push_back(std::max(0.0, g[i * cols + i]));
    std::sort(ev.rbegin(), ev.rend());
    double total = 0.0, acc = 0.0;
    for (double e : ev) total += e;
    if (total == 0.0) return 0;
    for (std::size_t k = 0; k < ev.size(); ++k) {
        acc += ev[k];
        if (acc >= 0.99 * total) return k + 1;
    }
    return ev.size();
}

}  // namespace

TEST_CASE("update sparsity edge cases") {
    ParamStore a;
    a.tensors.push_back(tensor("w", {100}, 1.0f));
    a.commit();
    CHECK(update_sparsity(a, a).sparsity == 1.0);

    ParamStore b = a;
    b.tensors[0].master[7] = 1.0f + 0.0078125f;  // exactly representable, |delta| > 1e-5
    b.commit();
    const auto one = update_sparsity(a, b);
    CHECK(one.changed == 1);
    CHECK(one.sparsity == doctest::Approx(0.99).epsilon(1e-15));

    const auto d = diff_of({{{100}, std::vector<double>(100, 1e-6)}});
    CHECK(sparsity_of(d).sparsity == 1.0);
    const auto e = diff_of({{{100}, std::vector<double>(100, 1e-3)}});
    CHECK(sparsity_of(e).sparsity == 0.0);

    ParamStore c;
    c.tensors.push_back(tensor("w", {99}, 1.0f));
    c.commit();
    CHECK_THROWS_AS(update_sparsity(a, c), Error);

    // Master-space diff sees changes that the bf16 commit suppresses.
    ParamStore m = a;
    for (auto& x : m.tensors[0].master) x += 1e-4f;
    m.commit();
    CHECK(update_sparsity(a, m).sparsity == 1.0);
    CHECK(update_sparsity(a, m, 1e-5, DiffSpace::master).sparsity == 0.0);
}

TEST_CASE("layerwise sparsity") {
    const ParamStore base = layered_store();
    ParamStore all = base;
    for (auto& t : all.tensors)
        for (auto& x : t.master) x += 0.5f;
    all.commit();
    const auto d_all = compute_diff(base, all);
    const double global = sparsity_of(d_all).sparsity;
    for (const auto& g : layerwise_sparsity(d_all, group_by_layer)) CHECK(g.sparsity == global);

    ParamStore l0 = base;
    l0.at("layers.0.attn.wq").master[3] += 0.5f;
    l0.commit();
    const auto groups = layerwise_sparsity(compute_diff(base, l0), group_by_layer);
    REQUIRE(groups.size() == 4);
    for (const auto& g : groups) {
        if (g.group == "layer.0") CHECK(g.sparsity < 1.0);
        else CHECK(g.sparsity == 1.0);
    }

    std::mt19937_64 gen(2);
    ParamStore rnd = base;
    for (auto& t : rnd.tensors)
        for (auto& x : t.master)
            if (gen() % 3 == 0) x += 0.5f;
    rnd.commit();
    const auto dr = compute_diff(base, rnd);
    for (auto grouping : {LayerGrouping(group_by_layer), LayerGrouping(group_by_submodule)}) {
        double weighted = 0.0;
        std::size_t total = 0;
        for (const auto& g : layerwise_sparsity(dr, grouping)) {
            weighted += g.sparsity * static_cast<double>(g.total);
            total += g.total;
        }
        CHECK(total == dr.n);
        CHECK(std::abs(weighted / static_cast<double>(total) - sparsity_of(dr).sparsity) <= 1e-9);
    }
    CHECK(group_by_submodule("layers.3.attn.wk") == std::optional<std::string>("attention"));
    CHECK(group_by_submodule("layers.3.mlp_norm.gain") == std::optional<std::string>("mlp"));
    CHECK(group_by_layer("value_head.w") == std::optional<std::string>("head"));
    CHECK_THROWS_AS(layerwise_sparsity(dr, [](const std::string&) { return std::optional<std::string>(); }), Error);
}

TEST_CASE("effective rank: rank-1, diagonal, identity, zero, random vs oracle") {
    std::mt19937_64 gen(8);
    const auto u = oracle::random_vector(8, gen), v = oracle::random_vector(8, gen);
    std::vector<double> outer(64);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) outer[i * 8 + j] = u[i] * v[j];
    CHECK(effective_rank(8, 8, outer) == 1);

    CHECK(effective_rank(2, 2, std::vector<double>{10, 0, 0, 0.1}) == 1);
    std::vector<double> eye(100, 0.0);
    for (int i = 0; i < 10; ++i) eye[i * 11] = 1.0;
    CHECK(effective_rank(10, 10, eye) == 10);
    const auto sv = singular_values(10, 10, eye);
    for (double s : sv) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(effective_rank(3, 4, std::vector<double>(12, 0.0)) == 0);

    for (auto [r, c] : {std::pair<std::size_t, std::size_t>{6, 4}, {4, 9}, {7, 7}}) {
        auto a = oracle::random_vector(r * c, gen);
        CHECK(effective_rank(r, c, a) == rank_oracle(r, c, a));
        // Known spectrum: diag(3, 2, 1) padded; singular values must come back sorted.
        std::vector<double> d(r * c, 0.0);
        const double vals[] = {1.0, 3.0, 2.0};
        for (std::size_t i = 0; i < 3; ++i) d[i * c + i] = vals[i];
        const auto s = singular_values(r, c, d);
        CHECK(s[0] == doctest::Approx(3.0));
        CHECK(s[1] == doctest::Approx(2.0));
        CHECK(s[2] == doctest::Approx(1.0));
    }
}

TEST_CASE("mean effective rank") {
    std::vector<double> r1(16), r3(25, 0.0);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) r1[i * 4 + j] = (i + 1.0) * (j - 1.5);
    for (int i = 0; i < 3; ++i) r3[i * 6] = 1.0;
    CHECK(mean_effective_rank(diff_of({{{4, 4}, r1}, {{4, 4}, r1}})) == 1.0);
    CHECK(mean_effective_rank(diff_of({{{4, 4}, r1}, {{5, 5}, r3}, {{7}, std::vector<double>(7, 1.0)}})) == 2.0);
    CHECK_THROWS_AS(mean_effective_rank(diff_of({{{7}, std::vector<double>(7, 1.0)}})), Error);

    std::mt19937_64 gen(12);
    std::vector<std::pair<Shape, std::vector<double>>> mats{{{5, 3}, oracle::random_vector(15, gen)},
                                                             {{3, 6}, oracle::random_vector(18, gen)},
                                                             {{4, 4}, r1}};
    const auto d = diff_of(mats);
    const auto rep = rank_report(d);
    REQUIRE(rep.size() == 3);
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t want = rank_oracle(mats[i].first[0], mats[i].first[1], mats[i].second);
        CHECK(rep[i].rank == want);
        sum += static_cast<double>(want);
    }
    CHECK(mean_effective_rank(d) == doctest::Approx(sum / 3.0));
}

TEST_CASE("momentum recovery") {
    const std::vector<double> m{1.9}, g{1.0};
    CHECK(recover_prev_momentum(m, g, 0.9)[0] == doctest::Approx(2.0).epsilon(1e-15));
    const std::vector<double> mz{0.45}, gz{0.0};
    CHECK(recover_prev_momentum(mz, gz, 0.9)[0] == doctest::Approx(0.5).epsilon(1e-15));

    std::mt19937_64 gen(4);
    const auto prev = oracle::random_vector(100, gen), gr = oracle::random_vector(100, gen);
    std::vector<double> mt(100);
    for (int i = 0; i < 100; ++i) mt[i] = 0.9 * prev[i] + 0.1 * gr[i];
    const auto rec = recover_prev_momentum(mt, gr, 0.9);
    for (int i = 0; i < 100; ++i) CHECK(std::abs(rec[i] - prev[i]) <= 1e-12);
    CHECK_THROWS_AS(recover_prev_momentum(m, g, 1.0), Error);
    CHECK_THROWS_AS(recover_prev_momentum(m, g, 0.0), Error);
}

TEST_CASE("momentum alignment") {
    const std::vector<double> g{1.0, -2.0, 0.5};
    const auto same = momentum_alignment(g, g, 3);
    CHECK(same.step == 3);
    CHECK(*same.cosine == doctest::Approx(1.0));
    CHECK(*same.history_ratio == doctest::Approx(1.0));
    const std::vector<double> orth{2.0, 1.0, 0.0};
    CHECK(*momentum_alignment(orth, g).cosine == doctest::Approx(0.0));
    const std::vector<double> neg{-2.0, 4.0, -1.0};
    const auto n = momentum_alignment(neg, g);
    CHECK(*n.cosine == doctest::Approx(-1.0));
    CHECK(*n.history_ratio == doctest::Approx(2.0));
    const std::vector<double> zero(3, 0.0);
    CHECK_FALSE(momentum_alignment(zero, g).cosine.has_value());
    CHECK_FALSE(momentum_alignment(g, zero).history_ratio.has_value());
}

TEST_CASE("moment statistics and histograms") {
    OptimizerState st;
    st.kind = OptimizerKind::adamw;
    st.m = {std::vector<float>(10, 0.1f)};
    st.v = {std::vector<float>(10, 4e-6f)};
    const Gradients g{std::vector<float>(10, 1.0f)};
    const auto ms = moment_statistics(st, g);
    CHECK(ms.sqrt_v.std == 0.0);
    CHECK(ms.sqrt_v.mean == doctest::Approx(2e-3).epsilon(1e-6));
    std::size_t occupied = 0, total = 0;
    for (auto c : ms.sqrt_v.histogram.counts) {
        occupied += c > 0;
        total += c;
    }
    CHECK(occupied == 1);
    CHECK(total == 10);

    const float a = 1e-6f, b = 9e-6f;
    st.v = {{a, b, a, b, a, b, a, b}};
    st.m = {std::vector<float>(8, 0.0f)};
    const auto two = moment_statistics(st, {std::vector<float>(8, 0.0f)});
    const double want = std::abs(std::sqrt(static_cast<double>(b)) - std::sqrt(static_cast<double>(a))) / 2;
    CHECK(two.sqrt_v.std == doctest::Approx(want).epsilon(1e-9));

    std::mt19937_64 gen(6);
    auto vals = oracle::random_vector(1000, gen, 1e-3);
    vals.push_back(0.0);
    vals.push_back(1e9);
    const auto h = log_histogram(vals);
    std::size_t sum = 0;
    for (auto c : h.counts) sum += c;
    CHECK(sum == vals.size());
    CHECK(h.edges.size() == h.counts.size() + 1);
    CHECK(h.edges[0] == 0.0);

    st.kind = OptimizerKind::sgd;
    CHECK_THROWS_AS(moment_statistics(st, g), Error);
}

TEST_CASE("effective-lr distribution and decade span") {
    OptimizerState st;
    st.kind = OptimizerKind::adamw;
    st.hp = HyperParams::defaults(OptimizerKind::adamw);
    std::vector<float> v;
    for (int i = 0; i < 1000; ++i) v.push_back(static_cast<float>(std::pow(10.0, -14 + 8.0 * i / 999)));
    st.v = {v};
    const auto d = effective_lr_distribution(st);
    CHECK(d.count == 1000);
    CHECK(d.max <= 100.0);
    CHECK(decades_spanned(d) == doctest::Approx(std::log10(d.p99 / d.p01)));
    CHECK(decades_spanned(d) > 2.0);
}

TEST_CASE("sparsity trend") {
    ParamStore base;
    base.tensors.push_back(tensor("w", {10}, 1.0f));
    base.commit();
    CHECK(sparsity_trend({base, base, base}) == std::vector<double>{1.0, 1.0, 1.0});

    std::vector<ParamStore> series{base};
    ParamStore cur = base;
    for (int k = 0; k < 5; ++k) {
        cur.tensors[0].master[k * 2] += 0.5f;
        cur.commit();
        series.push_back(cur);
    }
    const auto trend = sparsity_trend(series);
    for (std::size_t i = 1; i < trend.size(); ++i) CHECK(trend[i] <= trend[i - 1]);
    for (std::size_t i = 0; i < series.size(); ++i) CHECK(trend[i] == update_sparsity(series[0], series[i]).sparsity);
    CHECK_THROWS_AS(sparsity_trend({base}), Error);
}
