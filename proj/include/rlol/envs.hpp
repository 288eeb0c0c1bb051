#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "rlol/rng.hpp"

namespace rlol {

/// Closed 64-symbol vocabulary shared by every environment.
namespace vocab {
inline constexpr std::int32_t kSize = 64;
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kEquals = 3;
inline constexpr std::int32_t kPlus = 4;
inline constexpr std::int32_t kReverse = 5;
inline constexpr std::int32_t kSort = 6;
inline constexpr std::int32_t kDigit0 = 10;

constexpr std::int32_t digit(int d) { return kDigit0 + d; }
constexpr bool is_digit(std::int32_t tok) { return tok >= kDigit0 && tok < kDigit0 + 10; }
std::string decode(const std::vector<std::int32_t>& tokens);
}  // namespace vocab

enum class EnvKind { mod_arith, seq_reverse, seq_sort, evolving };

const char* to_string(EnvKind kind);
EnvKind parse_env_kind(const std::string& text);

struct EnvSpec {
    EnvKind kind = EnvKind::mod_arith;
    std::size_t vocab_size = vocab::kSize;
    std::size_t difficulty = 0;
    double evolve_threshold = 0.9;
    /// Number of recent batches averaged before `evolve` is consulted.
    std::size_t evolve_window = 8;
    std::size_t max_prompt_len = 12;
    std::size_t max_response_len = 2;

    void validate() const;
    bool operator==(const EnvSpec&) const = default;
};

/// Prompt length / answer length of a task at a difficulty level.
std::size_t prompt_length(EnvKind task, std::size_t difficulty);
std::size_t answer_length(EnvKind task, std::size_t difficulty);
/// Largest difficulty whose prompts and ground-truth responses fit the length limits in `spec`.
std::size_t max_feasible_difficulty(const EnvSpec& spec);

struct Prompt {
    EnvKind task = EnvKind::mod_arith;  // concrete task (never `evolving`)
    std::vector<std::int32_t> tokens;
    std::vector<std::int32_t> answer;  // hidden ground truth, without EOS
};

struct Episode {
    std::vector<std::int32_t> prompt;
    std::vector<std::int32_t> response;
    double reward = 0.0;
    std::size_t group_id = 0;
};

/// Draws one prompt. `evolving` picks the task uniformly per prompt.
Prompt sample_prompt(const EnvSpec& spec, CounterRng& rng);

/// Verifier answer recomputed from the prompt tokens; nullopt for malformed prompts.
std::optional<std::vector<std::int32_t>> expected_answer(const std::vector<std::int32_t>& prompt);

/// 1 iff the response up to its first EOS (or all of it, when truncated)
/// equals the verifier's answer; 0 otherwise. Pure.
double score(const EnvSpec& spec, const std::vector<std::int32_t>& prompt, const std::vector<std::int32_t>& response);

/// Ground-truth response: answer followed by EOS.
std::vector<std::int32_t> reference_response(const Prompt& prompt);

/// difficulty + 1 iff rate >= threshold (and a harder level still fits); other fields unchanged.
EnvSpec evolve(const EnvSpec& spec, double recent_success_rate);

/// Sliding window of batch success rates that drives `evolve` during a run.
class DifficultyController {
public:
    explicit DifficultyController(EnvSpec spec) : spec_(std::move(spec)) {}

    /// Records a batch; returns true when the difficulty increased.
    bool observe(double batch_success_rate);
    const EnvSpec& spec() const { return spec_; }

private:
    EnvSpec spec_;
    std::deque<double> window_;
};

}  // namespace rlol
