#include "rlol/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlol/error.hpp"

namespace rlol {

UpdateDiff compute_diff(const ParamStore& before, const ParamStore& after, DiffSpace space) {
    require(before.tensors.size() == after.tensors.size(), ErrorKind::dimension,
            "compute_diff: parameter stores have different tensor counts");
    UpdateDiff d;
    for (std::size_t k = 0; k < before.tensors.size(); ++k) {
        const auto& a = before.tensors[k];
        const auto& b = after.tensors[k];
        require(a.name == b.name && a.shape == b.shape, ErrorKind::dimension,
                "compute_diff: tensor " + a.name + " does not match " + b.name);
        std::vector<double> delta(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            delta[i] = space == DiffSpace::stored
                           ? static_cast<double>(b.stored_value(i)) - static_cast<double>(a.stored_value(i))
                           : static_cast<double>(b.master[i]) - static_cast<double>(a.master[i]);
        }
        d.names.push_back(a.name);
        d.shapes.push_back(a.shape);
        d.delta.push_back(std::move(delta));
        d.n += a.size();
    }
    return d;
}

SparsityReport sparsity_of(const UpdateDiff& diff, double tol) {
    require(tol >= 0.0, ErrorKind::invalid_argument, "sparsity: tol must be non-negative");
    SparsityReport r;
    r.tol = tol;
    for (std::size_t k = 0; k < diff.delta.size(); ++k) {
        TensorSparsity t{diff.names[k], 0, diff.delta[k].size(), 1.0};
        for (double x : diff.delta[k])
            if (std::abs(x) > tol) ++t.changed;
        if (t.total > 0) t.sparsity = 1.0 - static_cast<double>(t.changed) / static_cast<double>(t.total);
        r.changed += t.changed;
        r.total += t.total;
        r.per_tensor.push_back(std::move(t));
    }
    if (r.total > 0) r.sparsity = 1.0 - static_cast<double>(r.changed) / static_cast<double>(r.total);
    return r;
}

SparsityReport update_sparsity(const ParamStore& before, const ParamStore& after, double tol, DiffSpace space) {
    return sparsity_of(compute_diff(before, after, space), tol);
}

std::optional<std::string> group_by_layer(const std::string& name) {
    if (name.rfind("layers.", 0) == 0) {
        const auto dot = name.find('.', 7);
        if (dot == std::string::npos) return std::nullopt;
        return "layer." + name.substr(7, dot - 7);
    }
    if (name == "tok_emb" || name == "pos_emb") return std::string("embedding");
    if (name == "final_norm.gain" || name == "lm_head" || name.rfind("value_head.", 0) == 0) return std::string("head");
    return std::nullopt;
}

std::optional<std::string> group_by_submodule(const std::string& name) {
    if (name.rfind("layers.", 0) == 0) {
        if (name.find(".attn") != std::string::npos) return std::string("attention");
        if (name.find(".mlp") != std::string::npos) return std::string("mlp");
        return std::nullopt;
    }
    return group_by_layer(name);
}

std::vector<GroupSparsity> layerwise_sparsity(const UpdateDiff& diff, const LayerGrouping& grouping, double tol) {
    const SparsityReport r = sparsity_of(diff, tol);
    std::vector<GroupSparsity> groups;
    for (const auto& t : r.per_tensor) {
        const auto label = grouping(t.name);
        require(label.has_value(), ErrorKind::invalid_argument, "layerwise_sparsity: tensor " + t.name + " is ungrouped");
        auto it = std::find_if(groups.begin(), groups.end(), [&](const GroupSparsity& g) { return g.group == *label; });
        if (it == groups.end()) {
            groups.push_back(GroupSparsity{*label, 0, 0, 1.0});
            it = groups.end() - 1;
        }
        it->changed += t.changed;
        it->total += t.total;
    }
    for (auto& g : groups)
        if (g.total > 0) g.sparsity = 1.0 - static_cast<double>(g.changed) / static_cast<double>(g.total);
    return groups;
}

std::vector<double> singular_values(std::size_t rows, std::size_t cols, std::span<const double> data, double tol,
                                    std::size_t max_sweeps) {
    require(data.size() == rows * cols, ErrorKind::dimension, "singular_values: data does not match shape");
    if (rows == 0 || cols == 0) return {};
    // Orthogonalize the columns of the taller orientation; columns stored contiguously.
    const bool flip = rows < cols;
    const std::size_t m = flip ? cols : rows, n = flip ? rows : cols;
    std::vector<double> a(m * n);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double x = data[r * cols + c];
            require(std::isfinite(x), ErrorKind::non_finite, "singular_values: non-finite entry");
            if (flip) a[r * m + c] = x;  // column r of the transpose
            else a[c * m + r] = x;
        }
    auto col = [&](std::size_t j) { return a.data() + j * m; };
    double frob2 = 0.0;
    for (double x : a) frob2 += x * x;
    // Columns this far below the total mass are rounding residue; rotating them
    // cannot change any energy fraction and may never meet the relative test.
    const double negligible = 1e-30 * frob2;
    bool converged = false;
    for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double alpha = 0, beta = 0, gamma = 0;
                const double* ci = col(i);
                const double* cj = col(j);
                for (std::size_t k = 0; k < m; ++k) {
                    alpha += ci[k] * ci[k];
                    beta += cj[k] * cj[k];
                    gamma += ci[k] * cj[k];
                }
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                if (alpha <= negligible || beta <= negligible) continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t), s = c * t;
                double* pi = col(i);
                double* pj = col(j);
                for (std::size_t k = 0; k < m; ++k) {
                    const double xi = pi[k], xj = pj[k];
                    pi[k] = c * xi - s * xj;
                    pj[k] = s * xi + c * xj;
                }
            }
        }
    }
    require(converged, ErrorKind::convergence,
            "singular_values: Jacobi sweeps did not converge within " + std::to_string(max_sweeps));
    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < m; ++k) s += col(j)[k] * col(j)[k];
        sigma[j] = std::sqrt(s);
    }
    std::sort(sigma.begin(), sigma.end(), std::greater<>());
    return sigma;
}

std::size_t effective_rank_of_singular_values(std::span<const double> sigma, double energy) {
    require(energy > 0.0 && energy <= 1.0, ErrorKind::invalid_argument, "effective_rank: energy must lie in (0, 1]");
    double total = 0.0;
    for (double s : sigma) total += s * s;
    if (total == 0.0) return 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < sigma.size(); ++k) {
        acc += sigma[k] * sigma[k];
        if (acc >= energy * total) return k + 1;
    }
    return sigma.size();
}

std::size_t effective_rank(std::size_t rows, std::size_t cols, std::span<const double> data, double energy) {
    const auto sigma = singular_values(rows, cols, data);
    return effective_rank_of_singular_values(sigma, energy);
}

std::vector<TensorRank> rank_report(const UpdateDiff& diff, double energy) {
    std::vector<TensorRank> out;
    for (std::size_t k = 0; k < diff.delta.size(); ++k) {
        if (diff.shapes[k].size() != 2) continue;
        const std::size_t r = diff.shapes[k][0], c = diff.shapes[k][1];
        out.push_back(TensorRank{diff.names[k], r, c, effective_rank(r, c, diff.delta[k], energy)});
    }
    return out;
}

double mean_effective_rank(const UpdateDiff& diff, double energy) {
    const auto ranks = rank_report(diff, energy);
    require(!ranks.empty(), ErrorKind::invalid_argument, "mean_effective_rank: no two-dimensional tensors");
    double s = 0.0;
    for (const auto& r : ranks) s += static_cast<double>(r.rank);
    return s / static_cast<double>(ranks.size());
}

std::vector<double> recover_prev_momentum(std::span<const double> m_t, std::span<const double> g_t, double beta1) {
    require(beta1 > 0.0 && beta1 < 1.0, ErrorKind::invalid_argument, "recover_prev_momentum: beta1 must lie in (0, 1)");
    require(m_t.size() == g_t.size(), ErrorKind::dimension, "recover_prev_momentum: length mismatch");
    std::vector<double> out(m_t.size());
    for (std::size_t i = 0; i < m_t.size(); ++i) out[i] = (m_t[i] - (1.0 - beta1) * g_t[i]) / beta1;
    return out;
}

AlignmentRecord momentum_alignment(std::span<const double> m_prev, std::span<const double> g, std::uint64_t step) {
    require(m_prev.size() == g.size(), ErrorKind::dimension, "momentum_alignment: length mismatch");
    double dot = 0, nm = 0, ng = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        dot += m_prev[i] * g[i];
        nm += m_prev[i] * m_prev[i];
        ng += g[i] * g[i];
    }
    nm = std::sqrt(nm);
    ng = std::sqrt(ng);
    AlignmentRecord r;
    r.step = step;
    if (nm > 0 && ng > 0) r.cosine = std::clamp(dot / (nm * ng), -1.0, 1.0);
    if (ng > 0) r.history_ratio = nm / ng;
    return r;
}

Histogram log_histogram(std::span<const double> values, double lo, double hi, std::size_t per_decade) {
    require(lo > 0 && hi > lo && per_decade >= 1, ErrorKind::invalid_argument, "log_histogram: bad range");
    Histogram h;
    const double decades = std::log10(hi / lo);
    const auto bins = static_cast<std::size_t>(std::ceil(decades * static_cast<double>(per_decade) - 1e-9));
    h.edges.push_back(0.0);
    for (std::size_t b = 0; b <= bins; ++b)
        h.edges.push_back(lo * std::pow(10.0, static_cast<double>(b) / static_cast<double>(per_decade)));
    h.counts.assign(h.edges.size() - 1, 0);
    for (double x : values) {
        const double a = std::abs(x);
        std::size_t b = 0;
        if (a >= lo) {
            b = 1 + static_cast<std::size_t>(std::floor(std::log10(a / lo) * static_cast<double>(per_decade)));
            b = std::min(b, h.counts.size() - 1);
            // guard the floor against log10 rounding at exact edges
            while (b > 1 && a < h.edges[b]) --b;
            while (b + 1 < h.counts.size() && a >= h.edges[b + 1]) ++b;
        }
        ++h.counts[b];
    }
    return h;
}

Distribution describe(std::span<const double> values) {
    Distribution d;
    d.count = values.size();
    d.histogram = log_histogram(values);
    if (values.empty()) return d;
    double s = 0;
    for (double x : values) s += x;
    d.mean = s / static_cast<double>(values.size());
    double var = 0;
    for (double x : values) var += (x - d.mean) * (x - d.mean);
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double p) { return sorted[static_cast<std::size_t>(std::floor(p * static_cast<double>(sorted.size() - 1)))]; };
    d.min = sorted.front();
    d.max = sorted.back();
    // A constant sample has exactly zero spread; the rounded mean can miss it by an ulp.
    d.std = d.min == d.max ? 0.0 : std::sqrt(var / static_cast<double>(values.size()));
    d.p01 = q(0.01);
    d.p50 = q(0.5);
    d.p99 = q(0.99);
    return d;
}

std::vector<double> flatten_f64(const std::vector<std::vector<float>>& buffers) {
    std::vector<double> out;
    for (const auto& b : buffers) out.insert(out.end(), b.begin(), b.end());
    return out;
}

MomentStats moment_statistics(const OptimizerState& state, const Gradients& grads) {
    require(uses_v(state.kind) && !state.v.empty(), ErrorKind::invalid_argument,
            std::string("moment_statistics: ") + to_string(state.kind) + " keeps no second moment");
    MomentStats ms;
    auto v = flatten_f64(state.v);
    for (double& x : v) x = std::sqrt(x);
    ms.sqrt_v = describe(v);
    if (uses_m(state.kind)) {
        auto m = flatten_f64(state.m);
        for (double& x : m) x = std::abs(x);
        ms.abs_m = describe(m);
    }
    auto g = flatten_f64(grads);
    require(g.size() == v.size(), ErrorKind::dimension, "moment_statistics: gradients do not match state");
    for (double& x : g) x = std::abs(x);
    ms.abs_g = describe(g);
    return ms;
}

Distribution effective_lr_distribution(const OptimizerState& state) {
    require(uses_v(state.kind) && !state.v.empty(), ErrorKind::invalid_argument,
            std::string("effective_lr_distribution: ") + to_string(state.kind) + " keeps no second moment");
    std::vector<double> lr;
    for (const auto& b : state.v) {
        const auto e = effective_lr(state.hp.lr, b, state.hp.eps);
        lr.insert(lr.end(), e.begin(), e.end());
    }
    return describe(lr);
}

double decades_spanned(const Distribution& d) {
    require(d.p01 > 0.0, ErrorKind::invalid_argument, "decades_spanned: distribution is not positive");
    return std::log10(d.p99 / d.p01);
}

std::vector<double> sparsity_trend(const std::vector<ParamStore>& series, double tol, DiffSpace space) {
    require(series.size() >= 2, ErrorKind::invalid_argument, "sparsity_trend: need at least two checkpoints");
    std::vector<double> out;
    out.reserve(series.size());
    for (const auto& s : series) {
        require(s.config == series.front().config, ErrorKind::invalid_argument,
                "sparsity_trend: checkpoints come from different model configs");
        out.push_back(update_sparsity(series.front(), s, tol, space).sparsity);
    }
    return out;
}

}  // namespace rlol
