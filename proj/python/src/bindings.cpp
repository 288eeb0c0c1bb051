// Python bindings. Structured results cross the boundary as JSON text and are
// decoded on the Python side.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rlol/analysis.hpp"
#include "rlol/bf16.hpp"
#include "rlol/checkpoint.hpp"
#include "rlol/config.hpp"
#include "rlol/error.hpp"
#include "rlol/experiment.hpp"
#include "rlol/optimizers.hpp"
#include "rlol/rl.hpp"

namespace py = pybind11;
using namespace rlol;

namespace {

std::string sweep_json(const SweepResult& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"lr", row.lr},
                        {"seed", row.seed},
                        {"run_dir", row.run_dir},
                        {"ok", row.ok},
                        {"diverged", row.diverged},
                        {"final_reward", row.final_reward},
                        {"error", row.error}});
    return nlohmann::json{{"rows", rows}, {"median_final_reward", r.median_final_reward}, {"any_diverged", r.any_diverged}}
        .dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "rlol native core";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(PyExc_ValueError, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
        }
    });

    py::class_<ExperimentConfig>(m, "Config")
        .def(py::init<>())
        .def_static("from_file", &load_config, py::arg("path"))
        .def_static("from_text", &parse_config, py::arg("text"))
        .def("set", [](ExperimentConfig& c, const std::string& k, const std::string& v) { set_config_value(c, k, v); },
             py::arg("key"), py::arg("value"))
        .def("to_text", &serialize_config)
        .def("validate", &ExperimentConfig::validate)
        .def("hash", &config_hash)
        .def_static("keys", &config_keys)
        .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; });

    m.def("run_experiment", [](const ExperimentConfig& c, const std::string& dir) { return to_json(run_experiment(c, dir)).dump(); },
          py::arg("config"), py::arg("run_dir") = "", py::call_guard<py::gil_scoped_release>());
    m.def("analyze_run", [](const std::string& dir) { return analyze_run(dir).dump(); }, py::arg("run_dir"),
          py::call_guard<py::gil_scoped_release>());
    m.def("compare_runs", [](const std::vector<std::string>& dirs, const std::string& out) { return compare_runs(dirs, out).dump(); },
          py::arg("run_dirs"), py::arg("out_dir"), py::call_guard<py::gil_scoped_release>());
    m.def("sweep_lr",
          [](const ExperimentConfig& c, const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds,
             const std::string& out) { return sweep_json(sweep_lr(c, grid, seeds, out)); },
          py::arg("config"), py::arg("grid"), py::arg("seeds"), py::arg("out_dir"), py::call_guard<py::gil_scoped_release>());
    m.def("gradcheck", [](const ExperimentConfig& c, std::size_t coords, double h) { return gradcheck_config(c, coords, h).dump(); },
          py::arg("config"), py::arg("coords") = 64, py::arg("h") = 1e-5);
    m.def("checkpoint_sparsity",
          [](const std::string& before, const std::string& after, double tol, bool master) {
              return update_sparsity(load_checkpoint(before).params, load_checkpoint(after).params, tol,
                                     master ? DiffSpace::master : DiffSpace::stored)
                  .sparsity;
          },
          py::arg("before"), py::arg("after"), py::arg("tol") = 1e-5, py::arg("master") = false);

    m.def("commit_bf16", [](float x) { return commit_bf16(x); }, py::arg("x"));
    m.def("optimizer_memory_bytes",
          [](std::uint64_t p, const std::string& kind, std::uint64_t d) { return optimizer_memory_bytes(p, parse_optimizer_kind(kind), d); },
          py::arg("p"), py::arg("kind"), py::arg("d_optim") = 4);
    m.def("optimizer_update",
          [](const std::string& kind, std::uint64_t t, double theta, double mom, double v, double g, double lr, double momentum,
             double beta1, double beta2, double eps, double weight_decay, bool bias_correction) {
              const OptimizerKind k = parse_optimizer_kind(kind);
              HyperParams hp{lr, momentum, beta1, beta2, eps, weight_decay, bias_correction};
              hp.validate();
              std::span<double> th(&theta, 1), ms(&mom, uses_m(k) ? 1 : 0), vs(&v, uses_v(k) ? 1 : 0);
              apply_update<double>(k, hp, t, th, ms, vs, std::span<const double>(&g, 1));
              return py::make_tuple(theta, mom, v);
          },
          py::arg("kind"), py::arg("t"), py::arg("theta"), py::arg("m"), py::arg("v"), py::arg("g"), py::arg("lr"),
          py::arg("momentum") = 0.9, py::arg("beta1") = 0.9, py::arg("beta2") = 0.999, py::arg("eps") = 1e-8,
          py::arg("weight_decay") = 0.01, py::arg("bias_correction") = true);
    m.def("effective_lr", py::overload_cast<double, double, double>(&effective_lr), py::arg("lr"), py::arg("v"),
          py::arg("eps") = 1e-8);
    m.def("grpo_advantages",
          [](const std::vector<double>& r, std::size_t g, bool norm, double eps) { return grpo_advantages(r, g, norm, eps); },
          py::arg("rewards"), py::arg("group_size"), py::arg("normalize_std") = true, py::arg("eps") = 1e-6);
    m.def("gae_advantages",
          [](const std::vector<double>& r, const std::vector<double>& v, double gamma, double lambda) {
              auto res = gae_advantages(r, v, gamma, lambda);
              return py::make_tuple(res.advantages, res.returns);
          },
          py::arg("rewards"), py::arg("values"), py::arg("gamma"), py::arg("lam"));
    m.def("policy_loss",
          [](const std::vector<double>& n, const std::vector<double>& o, const std::vector<double>& a, double eps) {
              return policy_loss(n, o, a, eps);
          },
          py::arg("logp_new"), py::arg("logp_old"), py::arg("advantages"), py::arg("clip_eps") = 0.2);
    m.def("kl_loss", [](const std::vector<double>& n, const std::vector<double>& r) { return kl_loss(n, r); },
          py::arg("logp_new"), py::arg("logp_ref"));
    m.def("effective_rank",
          [](std::size_t rows, std::size_t cols, const std::vector<double>& data, double energy) {
              return effective_rank(rows, cols, data, energy);
          },
          py::arg("rows"), py::arg("cols"), py::arg("data"), py::arg("energy") = 0.99);
    m.def("recover_prev_momentum",
          [](const std::vector<double>& m_t, const std::vector<double>& g, double beta1) { return recover_prev_momentum(m_t, g, beta1); },
          py::arg("m_t"), py::arg("g_t"), py::arg("beta1"));
}
