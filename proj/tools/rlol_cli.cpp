// Command-line front end: train, sweep-lr, analyze, compare, gradcheck.
// Results go to stdout as JSON; failures print {"error": kind, "message": ...}
// to stderr and exit nonzero.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rlol/config.hpp"
#include "rlol/error.hpp"
#include "rlol/experiment.hpp"

namespace {

using nlohmann::json;

int report_error(const char* kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
    return 1;
}

rlol::ExperimentConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
    rlol::ExperimentConfig c = rlol::load_config(path);
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        rlol::require(eq != std::string::npos, rlol::ErrorKind::config, "--set expects key=value, got '" + kv + "'");
        rlol::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale RL optimizer experiments"};
    app.require_subcommand(1);

    std::string config_path, run_dir, out_dir;
    std::vector<std::string> sets, run_dirs;
    std::vector<double> grid;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t coords = 64;
    double h = 1e-5;

    auto* train = app.add_subcommand("train", "Run one experiment from a config file");
    train->add_option("config", config_path, "Config file")->required();
    train->add_option("--set", sets, "Override a config key (key=value), repeatable");
    train->add_option("--run-dir", run_dir, "Run directory (default: output root / run.name)");

    auto* sweep = app.add_subcommand("sweep-lr", "Sweep the learning rate over a grid and seeds");
    sweep->add_option("config", config_path, "Base config file")->required();
    sweep->add_option("--grid", grid, "Learning rates")->required()->delimiter(',');
    sweep->add_option("--seeds", seeds, "Seeds (default 0,1,2)")->delimiter(',');
    sweep->add_option("--set", sets, "Override a config key (key=value), repeatable");
    sweep->add_option("--out", out_dir, "Output directory (default: output root / run.name_sweep)");

    auto* analyze = app.add_subcommand("analyze", "Write the analysis bundle for a run directory");
    analyze->add_option("run_dir", run_dir, "Run directory")->required();

    auto* compare = app.add_subcommand("compare", "Compare completed runs");
    compare->add_option("run_dirs", run_dirs, "Run directories")->required();
    compare->add_option("--out", out_dir, "Output directory")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the config's model");
    gradcheck->add_option("config", config_path, "Config file")->required();
    gradcheck->add_option("--set", sets, "Override a config key (key=value), repeatable");
    gradcheck->add_option("--coords", coords, "Coordinates to sample");
    gradcheck->add_option("--step", h, "Central difference step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage", e.what());
    }

    try {
        json out;
        if (*train) {
            const auto c = load_with_overrides(config_path, sets);
            out = rlol::to_json(rlol::run_experiment(c, run_dir));
            out.erase("rewards");
            out.erase("sparsity_curve");
        } else if (*sweep) {
            const auto c = load_with_overrides(config_path, sets);
            if (out_dir.empty()) out_dir = rlol::run_directory(c) + "_sweep";
            const auto res = rlol::sweep_lr(c, grid, seeds, out_dir);
            out = {{"out_dir", out_dir}, {"grid", grid}, {"median_final_reward", res.median_final_reward},
                   {"any_diverged", res.any_diverged}};
        } else if (*analyze) {
            out = rlol::analyze_run(run_dir);
            out.erase("probes");
        } else if (*compare) {
            out = rlol::compare_runs(run_dirs, out_dir);
        } else if (*gradcheck) {
            out = rlol::gradcheck_config(load_with_overrides(config_path, sets), coords, h);
        }
        std::cout << out.dump(2) << std::endl;
        return 0;
    } catch (const rlol::Error& e) {
        return report_error(rlol::to_string(e.kind()), e.what());
    } catch (const std::exception& e) {
        return report_error("internal", e.what());
    }
}
