#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlol/config.hpp"
#include "rlol/model.hpp"

namespace rlol {

/// Overrides `run.output_dir` when set.
inline constexpr const char* kOutputRootEnv = "RLOL_OUTPUT_ROOT";

/// Output root after applying the environment override.
std::string output_root(const ExperimentConfig& config);
/// output_root / run.name
std::string run_directory(const ExperimentConfig& config);

/// Initial policy: init_params followed by the optional supervised warm start,
/// with masters reset to the committed bf16 values. Cached per process.
ParamStore warm_start(const ExperimentConfig& config);

struct RunSummary {
    std::string run_dir;
    std::size_t steps_completed = 0;
    bool diverged = false;
    std::string diverged_reason;
    double initial_reward = 0.0;  // training reward of the step-0 batch
    double final_reward = 0.0;    // mean training reward over the last `final_window` steps
    std::optional<double> initial_val_reward;
    std::optional<double> final_val_reward;
    double sparsity = 1.0;         // bf16 stored values, final vs step 0
    double sparsity_master = 1.0;  // FP32 masters, final vs step 0
    double mean_effective_rank = 0.0;
    std::optional<double> critic_sparsity;
    std::optional<double> critic_mean_effective_rank;
    std::uint64_t param_count = 0;
    std::uint64_t memory_bytes = 0;
    std::vector<double> rewards;   // per step
    std::vector<double> sparsity_curve;  // per step, after the update
};

nlohmann::json to_json(const RunSummary& s);
RunSummary summary_from_json(const nlohmann::json& j);

/// Executes one run into `run_dir` (default: run_directory(config)), writing
/// config.txt, metrics.jsonl, checkpoints/, probes/ and report.json.
/// A non-finite loss, a KL above `run.divergence_kl` or master weights grown
/// past `run.divergence_norm_ratio` times their initial norm halt the run; the
/// summary is then flagged diverged and the last good state is checkpointed.
RunSummary run_experiment(const ExperimentConfig& config, const std::string& run_dir = "");

/// Recomputes the analysis bundle from a run directory's artifacts and writes
/// analysis.json, CSV tables and SVG plots next to them.
nlohmann::json analyze_run(const std::string& run_dir);

/// Side-by-side table of completed runs (same model config required), written
/// as compare.csv, compare.txt, reward.svg and sparsity.svg into `out_dir`.
nlohmann::json compare_runs(const std::vector<std::string>& run_dirs, const std::string& out_dir);

struct SweepRow {
    double lr = 0.0;
    std::uint64_t seed = 0;
    std::string run_dir;
    bool ok = false;
    bool diverged = false;
    double final_reward = 0.0;
    std::string error;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    /// Per lr (grid order): median final reward over seeds; diverged runs included.
    std::vector<double> median_final_reward;
    std::vector<bool> any_diverged;
};

/// One run per (lr, seed); failures are recorded and the sweep continues.
/// Writes sweep.csv, sweep.json and sweep.svg into `out_dir`.
SweepResult sweep_lr(const ExperimentConfig& base, const std::vector<double>& grid,
                     const std::vector<std::uint64_t>& seeds, const std::string& out_dir);

/// Finite-difference check of the config's model on a fixed token batch (fp64).
nlohmann::json gradcheck_config(const ExperimentConfig& config, std::size_t coords = 64, double h = 1e-5);

double median(std::vector<double> values);

}  // namespace rlol
