#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlol/model.hpp"
#include "rlol/optimizers.hpp"

namespace rlol {

enum class DiffSpace { stored, master };

/// theta1 - theta0 per tensor, in fp64.
struct UpdateDiff {
    std::vector<std::string> names;
    std::vector<Shape> shapes;
    std::vector<std::vector<double>> delta;
    std::size_t n = 0;
};

/// Diff of bf16 stored values (default) or FP32 masters. Structure mismatch throws.
UpdateDiff compute_diff(const ParamStore& before, const ParamStore& after, DiffSpace space = DiffSpace::stored);

struct TensorSparsity {
    std::string name;
    std::size_t changed = 0;
    std::size_t total = 0;
    double sparsity = 1.0;
};

struct SparsityReport {
    double sparsity = 1.0;  // 1 - changed / n
    std::size_t changed = 0;
    std::size_t total = 0;
    double tol = 1e-5;
    std::vector<TensorSparsity> per_tensor;
};

/// Entries with |delta| > tol count as updated.
SparsityReport sparsity_of(const UpdateDiff& diff, double tol = 1e-5);
SparsityReport update_sparsity(const ParamStore& before, const ParamStore& after, double tol = 1e-5,
                               DiffSpace space = DiffSpace::stored);

/// Maps a tensor name to its group label, or nullopt when the grouping does not cover it.
using LayerGrouping = std::function<std::optional<std::string>(const std::string&)>;

/// "layer.<i>" for transformer blocks, "embedding" for token/position tables,
/// "head" for the final norm and output heads.
std::optional<std::string> group_by_layer(const std::string& name);
/// "attention", "mlp", "embedding" or "head".
std::optional<std::string> group_by_submodule(const std::string& name);

struct GroupSparsity {
    std::string group;
    std::size_t changed = 0;
    std::size_t total = 0;
    double sparsity = 1.0;
};

/// Sparsity per group, in order of first appearance. Ungrouped tensors throw.
std::vector<GroupSparsity> layerwise_sparsity(const UpdateDiff& diff, const LayerGrouping& grouping, double tol = 1e-5);

/// Singular values (descending) of a row-major rows x cols matrix by one-sided
/// Jacobi rotations. Converged when every column pair has
/// |a_i . a_j| <= tol * |a_i| |a_j|; otherwise throws a convergence error.
std::vector<double> singular_values(std::size_t rows, std::size_t cols, std::span<const double> data,
                                    double tol = 1e-10, std::size_t max_sweeps = 60);

/// Smallest k with sum_{i<=k} s_i^2 >= energy * sum s_i^2; 0 for a zero matrix.
std::size_t effective_rank(std::size_t rows, std::size_t cols, std::span<const double> data, double energy = 0.99);
std::size_t effective_rank_of_singular_values(std::span<const double> sigma, double energy = 0.99);

struct TensorRank {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t rank = 0;
};

/// Effective rank of every 2-D tensor in the diff.
std::vector<TensorRank> rank_report(const UpdateDiff& diff, double energy = 0.99);
/// Mean effective rank over 2-D tensors only; throws when there are none.
double mean_effective_rank(const UpdateDiff& diff, double energy = 0.99);

/// m_{t-1} = (m_t - (1 - beta1) g_t) / beta1. beta1 must lie in (0, 1).
std::vector<double> recover_prev_momentum(std::span<const double> m_t, std::span<const double> g_t, double beta1);

struct AlignmentRecord {
    std::uint64_t step = 0;
    /// nullopt when either vector has zero norm.
    std::optional<double> cosine;
    /// ||m_prev|| / ||g||; nullopt when ||g|| = 0.
    std::optional<double> history_ratio;
};

AlignmentRecord momentum_alignment(std::span<const double> m_prev, std::span<const double> g, std::uint64_t step = 0);

/// Log-spaced histogram over [lo, hi) with `per_decade` bins per decade, plus a
/// leading bin [0, lo) for zeros and tiny values. Values at or above hi land in
/// the last bin, so counts always sum to the number of samples.
struct Histogram {
    std::vector<double> edges;  // counts.size() + 1 entries, edges[0] == 0
    std::vector<std::size_t> counts;
};

Histogram log_histogram(std::span<const double> values, double lo = 1e-12, double hi = 1e3, std::size_t per_decade = 4);

struct Distribution {
    std::size_t count = 0;
    double mean = 0.0;
    double std = 0.0;  // population
    double min = 0.0;
    double max = 0.0;
    double p01 = 0.0;
    double p50 = 0.0;
    double p99 = 0.0;
    Histogram histogram;
};

Distribution describe(std::span<const double> values);

struct MomentStats {
    Distribution sqrt_v;
    std::optional<Distribution> abs_m;  // absent for rmsprop
    Distribution abs_g;
};

/// Statistics of sqrt(v), |m| and |g| over all parameters. Requires a v buffer.
MomentStats moment_statistics(const OptimizerState& state, const Gradients& grads);

/// lr / (sqrt(v) + eps) over all parameters of an adamw or rmsprop state.
Distribution effective_lr_distribution(const OptimizerState& state);
/// log10(p99 / p01) of a positive distribution.
double decades_spanned(const Distribution& d);

/// update_sparsity(series[0], series[t]) for every t.
std::vector<double> sparsity_trend(const std::vector<ParamStore>& series, double tol = 1e-5,
                                   DiffSpace space = DiffSpace::stored);

/// Flattened copy of per-tensor float buffers in fp64.
std::vector<double> flatten_f64(const std::vector<std::vector<float>>& buffers);

}  // namespace rlol
