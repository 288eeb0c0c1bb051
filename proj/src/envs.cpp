#include "rlol/envs.hpp"

#include <algorithm>
#include <numeric>

#include "rlol/error.hpp"

namespace rlol {

namespace vocab {

std::string decode(const std::vector<std::int32_t>& tokens) {
    std::string out;
    for (auto t : tokens) {
        if (is_digit(t)) out += static_cast<char>('0' + (t - kDigit0));
        else if (t == kPad) out += '_';
        else if (t == kBos) out += '^';
        else if (t == kEos) out += '$';
        else if (t == kEquals) out += '=';
        else if (t == kPlus) out += '+';
        else if (t == kReverse) out += 'R';
        else if (t == kSort) out += 'S';
        else out += '?';
    }
    return out;
}

}  // namespace vocab

const char* to_string(EnvKind kind) {
    switch (kind) {
        case EnvKind::mod_arith: return "mod_arith";
        case EnvKind::seq_reverse: return "seq_reverse";
        case EnvKind::seq_sort: return "seq_sort";
        case EnvKind::evolving: return "evolving";
    }
    return "?";
}

EnvKind parse_env_kind(const std::string& text) {
    if (text == "mod_arith") return EnvKind::mod_arith;
    if (text == "seq_reverse") return EnvKind::seq_reverse;
    if (text == "seq_sort") return EnvKind::seq_sort;
    if (text == "evolving") return EnvKind::evolving;
    fail(ErrorKind::config, "unknown env kind '" + text + "'");
}

std::size_t prompt_length(EnvKind task, std::size_t difficulty) {
    switch (task) {
        case EnvKind::mod_arith: return 2 * (difficulty + 1) + 3;  // ^ a + b =
        case EnvKind::seq_reverse:
        case EnvKind::seq_sort: return (3 + difficulty) + 3;  // ^ R x.. =
        case EnvKind::evolving:
            return std::max({prompt_length(EnvKind::mod_arith, difficulty),
                             prompt_length(EnvKind::seq_reverse, difficulty)});
    }
    return 0;
}

std::size_t answer_length(EnvKind task, std::size_t difficulty) {
    switch (task) {
        case EnvKind::mod_arith: return difficulty + 1;
        case EnvKind::seq_reverse:
        case EnvKind::seq_sort: return 3 + difficulty;
        case EnvKind::evolving:
            return std::max(answer_length(EnvKind::mod_arith, difficulty),
                            answer_length(EnvKind::seq_reverse, difficulty));
    }
    return 0;
}

std::size_t max_feasible_difficulty(const EnvSpec& spec) {
    std::size_t d = 0;
    auto fits = [&](std::size_t level) {
        return prompt_length(spec.kind, level) <= spec.max_prompt_len &&
               answer_length(spec.kind, level) + 1 <= spec.max_response_len;
    };
    if (!fits(0)) return 0;
    while (d < 64 && fits(d + 1)) ++d;
    return d;
}

void EnvSpec::validate() const {
    require(vocab_size == static_cast<std::size_t>(vocab::kSize), ErrorKind::config,
            "env: vocab_size must be " + std::to_string(vocab::kSize));
    require(evolve_threshold > 0.0 && evolve_threshold <= 1.0, ErrorKind::config,
            "env: evolve_threshold must lie in (0, 1]");
    require(evolve_window >= 1, ErrorKind::config, "env: evolve_window must be >= 1");
    require(prompt_length(kind, difficulty) <= max_prompt_len, ErrorKind::config,
            "env: prompts at difficulty " + std::to_string(difficulty) + " exceed max_prompt_len");
    require(answer_length(kind, difficulty) + 1 <= max_response_len, ErrorKind::config,
            "env: max_response_len too small for the answer plus EOS at difficulty " + std::to_string(difficulty));
}

namespace {

std::vector<std::int32_t> digits_of(std::uint64_t value, std::size_t width) {
    std::vector<std::int32_t> out(width);
    for (std::size_t i = width; i-- > 0;) {
        out[i] = vocab::digit(static_cast<int>(value % 10));
        value /= 10;
    }
    return out;
}

std::uint64_t pow10(std::size_t n) {
    std::uint64_t p = 1;
    for (std::size_t i = 0; i < n; ++i) p *= 10;
    return p;
}

EnvKind pick_task(const EnvSpec& spec, CounterRng& rng) {
    if (spec.kind != EnvKind::evolving) return spec.kind;
    static constexpr EnvKind tasks[] = {EnvKind::mod_arith, EnvKind::seq_reverse, EnvKind::seq_sort};
    return tasks[rng.below(3)];
}

}  // namespace

Prompt sample_prompt(const EnvSpec& spec, CounterRng& rng) {
    Prompt p;
    p.task = pick_task(spec, rng);
    const std::size_t d = spec.difficulty;
    if (p.task == EnvKind::mod_arith) {
        const std::size_t width = d + 1;
        const std::uint64_t mod = pow10(width);
        const std::uint64_t a = rng.below(mod), b = rng.below(mod);
        p.tokens.push_back(vocab::kBos);
        auto da = digits_of(a, width), db = digits_of(b, width);
        p.tokens.insert(p.tokens.end(), da.begin(), da.end());
        p.tokens.push_back(vocab::kPlus);
        p.tokens.insert(p.tokens.end(), db.begin(), db.end());
        p.tokens.push_back(vocab::kEquals);
    } else {
        const std::size_t len = 3 + d;
        p.tokens = {vocab::kBos, p.task == EnvKind::seq_reverse ? vocab::kReverse : vocab::kSort};
        for (std::size_t i = 0; i < len; ++i) p.tokens.push_back(vocab::digit(static_cast<int>(rng.below(10))));
        p.tokens.push_back(vocab::kEquals);
    }
    p.answer = *expected_answer(p.tokens);
    return p;
}

std::optional<std::vector<std::int32_t>> expected_answer(const std::vector<std::int32_t>& prompt) {
    if (prompt.size() < 4 || prompt.front() != vocab::kBos || prompt.back() != vocab::kEquals) return std::nullopt;
    if (prompt[1] == vocab::kReverse || prompt[1] == vocab::kSort) {
        std::vector<std::int32_t> seq(prompt.begin() + 2, prompt.end() - 1);
        if (seq.empty() || !std::all_of(seq.begin(), seq.end(), vocab::is_digit)) return std::nullopt;
        if (prompt[1] == vocab::kReverse) std::reverse(seq.begin(), seq.end());
        else std::sort(seq.begin(), seq.end());
        return seq;
    }
    auto plus = std::find(prompt.begin() + 1, prompt.end(), vocab::kPlus);
    if (plus == prompt.end()) return std::nullopt;
    const std::vector<std::int32_t> a(prompt.begin() + 1, plus), b(plus + 1, prompt.end() - 1);
    if (a.empty() || a.size() != b.size() || a.size() > 18) return std::nullopt;
    if (!std::all_of(a.begin(), a.end(), vocab::is_digit) || !std::all_of(b.begin(), b.end(), vocab::is_digit))
        return std::nullopt;
    auto value = [](const std::vector<std::int32_t>& ds) {
        std::uint64_t v = 0;
        for (auto t : ds) v = v * 10 + static_cast<std::uint64_t>(t - vocab::kDigit0);
        return v;
    };
    return digits_of((value(a) + value(b)) % pow10(a.size()), a.size());
}

double score(const EnvSpec& spec, const std::vector<std::int32_t>& prompt, const std::vector<std::int32_t>& response) {
    (void)spec;
    const auto expected = expected_answer(prompt);
    if (!expected) return 0.0;
    const auto eos = std::find(response.begin(), response.end(), vocab::kEos);
    const std::vector<std::int32_t> region(response.begin(), eos);
    return region == *expected ? 1.0 : 0.0;
}

std::vector<std::int32_t> reference_response(const Prompt& prompt) {
    std::vector<std::int32_t> r = prompt.answer;
    r.push_back(vocab::kEos);
    return r;
}

EnvSpec evolve(const EnvSpec& spec, double rate) {
    require(rate >= 0.0 && rate <= 1.0, ErrorKind::invalid_argument, "evolve: success rate must lie in [0, 1]");
    EnvSpec next = spec;
    if (rate >= spec.evolve_threshold && spec.difficulty < max_feasible_difficulty(spec)) ++next.difficulty;
    return next;
}

bool DifficultyController::observe(double rate) {
    window_.push_back(rate);
    if (window_.size() > spec_.evolve_window) window_.pop_front();
    if (window_.size() < spec_.evolve_window) return false;
    const double avg = std::accumulate(window_.begin(), window_.end(), 0.0) / static_cast<double>(window_.size());
    EnvSpec next = evolve(spec_, avg);
    if (next.difficulty == spec_.difficulty) return false;
    spec_ = next;
    window_.clear();
    return true;
}

}  // namespace rlol
