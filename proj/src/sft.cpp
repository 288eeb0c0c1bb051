#include "rlol/sft.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "rlol/error.hpp"
#include "rlol/rl.hpp"

namespace rlol {

SftDataset build_sft_dataset(const EnvSpec& spec, std::size_t size, std::uint64_t seed) {
    require(size >= 1, ErrorKind::invalid_argument, "build_sft_dataset: size must be >= 1");
    spec.validate();
    SftDataset d;
    d.seed = seed;
    d.examples.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        CounterRng rng(seed, "sft_data", 0, i);
        const Prompt p = sample_prompt(spec, rng);
        SftExample ex{p.tokens, reference_response(p)};
        require(score(spec, ex.prompt, ex.target) == 1.0, ErrorKind::invalid_argument,
                "build_sft_dataset: ground truth failed verification for " + vocab::decode(ex.prompt));
        d.examples.push_back(std::move(ex));
    }
    return d;
}

void save_sft_dataset(const SftDataset& data, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::io, "cannot write " + path);
    for (const auto& ex : data.examples) {
        for (std::size_t i = 0; i < ex.prompt.size(); ++i) out << (i ? " " : "") << ex.prompt[i];
        out << " |";
        for (auto t : ex.target) out << ' ' << t;
        out << '\n';
    }
}

SftDataset load_sft_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot read " + path);
    SftDataset d;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto bar = line.find('|');
        require(bar != std::string::npos, ErrorKind::io, "malformed dataset line: " + line);
        SftExample ex;
        std::istringstream a(line.substr(0, bar)), b(line.substr(bar + 1));
        for (std::int32_t t; a >> t;) ex.prompt.push_back(t);
        for (std::int32_t t; b >> t;) ex.target.push_back(t);
        d.examples.push_back(std::move(ex));
    }
    return d;
}

std::vector<std::size_t> sft_minibatch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                               std::uint64_t step) {
    require(dataset_size >= 1 && batch_size >= 1, ErrorKind::invalid_argument, "sft minibatch: empty dataset or batch");
    CounterRng rng(seed, "sft_batch", step);
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(dataset_size));
    return idx;
}

double sft_loss_and_gradients(const ParamStore& params, const std::vector<SftExample>& minibatch, Gradients* grads) {
    require(!minibatch.empty(), ErrorKind::invalid_argument, "sft: empty minibatch");
    std::vector<Episode> eps;
    eps.reserve(minibatch.size());
    for (const auto& ex : minibatch) eps.push_back(Episode{ex.prompt, ex.target, 0.0, 0});
    const TokenBatch tb = pack_episodes(eps);
    const auto rows = response_logit_rows(eps, tb.seq);
    const auto targets = response_targets(eps);
    require(!rows.empty(), ErrorKind::invalid_argument, "sft: minibatch has no target tokens");

    using namespace ad;
    Tape<float> tape;
    auto bound = bind_params(tape, params, grads != nullptr);
    // Row gather first, so prompt positions never enter the loss.
    std::vector<std::int32_t> row_targets(tb.tokens.size(), vocab::kPad);
    for (std::size_t k = 0; k < rows.size(); ++k) row_targets[rows[k]] = targets[k];
    Var<float> lp = gather(log_softmax_gather(trace_logits(bound, tb), std::span<const std::int32_t>(row_targets)),
                           std::span<const std::size_t>(rows));
    Var<float> loss = scale(mean(lp), -1.0f);
    const double value = loss.value().data[0];
    require(std::isfinite(value), ErrorKind::non_finite, "sft: non-finite loss");
    if (grads != nullptr) {
        tape.backward(loss);
        *grads = collect_gradients(bound);
    }
    return value;
}

SftStepReport sft_step(ParamStore& params, OptimizerState& optimizer, const std::vector<SftExample>& minibatch,
                       double max_grad_norm, Gradients* captured_grads) {
    SftStepReport r;
    r.step = params.step;
    for (const auto& ex : minibatch) r.tokens += ex.target.size();
    Gradients g;
    r.loss = sft_loss_and_gradients(params, minibatch, &g);
    r.grad_norm = clip_global_norm(g, max_grad_norm);
    optimizer_step(optimizer, params, g);
    if (captured_grads != nullptr) *captured_grads = std::move(g);
    return r;
}

}  // namespace rlol
