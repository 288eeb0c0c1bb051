#include <doctest.h>

#include <algorithm>

#include "rlol/error.hpp"
#include "rlol/envs.hpp"

using namespace rlol;
namespace vb = rlol::vocab;

namespace {

EnvSpec roomy(EnvKind kind, std::size_t difficulty = 0) {
    EnvSpec s;
    s.kind = kind;
    s.difficulty = difficulty;
    s.max_prompt_len = 32;
    s.max_response_len = 16;
    return s;
}

int digit_value(std::int32_t tok) { return tok - vb::kDigit0; }

}  // namespace

TEST_CASE("mod_arith level 0: single digits, answer is (a+b) mod 10") {
    const EnvSpec spec;
    CounterRng rng(1, "env");
    for (int i = 0; i < 500; ++i) {
        const Prompt p = sample_prompt(spec, rng);
        REQUIRE(p.tokens.size() == 5);
        CHECK(p.tokens[0] == vb::kBos);
        CHECK(vb::is_digit(p.tokens[1]));
        CHECK(p.tokens[2] == vb::kPlus);
        CHECK(vb::is_digit(p.tokens[3]));
        CHECK(p.tokens[4] == vb::kEquals);
        REQUIRE(p.answer.size() == 1);
        CHECK(digit_value(p.answer[0]) == (digit_value(p.tokens[1]) + digit_value(p.tokens[3])) % 10);
        CHECK(score(spec, p.tokens, reference_response(p)) == 1.0);
    }
}

TEST_CASE("sequence tasks: length 3+d, reverse and sort answers") {
    for (std::size_t d = 0; d < 5; ++d) {
        for (EnvKind k : {EnvKind::seq_reverse, EnvKind::seq_sort}) {
            const EnvSpec spec = roomy(k, d);
            CounterRng rng(d, "env");
            const Prompt p = sample_prompt(spec, rng);
            const std::vector<std::int32_t> seq(p.tokens.begin() + 2, p.tokens.end() - 1);
            CHECK(seq.size() == 3 + d);
            auto want = seq;
            if (k == EnvKind::seq_reverse) std::reverse(want.begin(), want.end());
            else std::sort(want.begin(), want.end());
            CHECK(p.answer == want);
            CHECK(score(spec, p.tokens, reference_response(p)) == 1.0);
        }
    }
}

TEST_CASE("prompt stream is deterministic in the rng coordinates") {
    for (EnvKind k : {EnvKind::mod_arith, EnvKind::seq_reverse, EnvKind::seq_sort, EnvKind::evolving}) {
        const EnvSpec spec = roomy(k, 2);
        CounterRng a(9, "prompts", 4), b(9, "prompts", 4), c(10, "prompts", 4);
        bool differs = false;
        for (int i = 0; i < 50; ++i) {
            const Prompt pa = sample_prompt(spec, a), pb = sample_prompt(spec, b), pc = sample_prompt(spec, c);
            CHECK(pa.tokens == pb.tokens);
            CHECK(pa.answer == pb.answer);
            differs = differs || pa.tokens != pc.tokens;
        }
        CHECK(differs);
    }
}

TEST_CASE("score: correct, empty, truncated, trailing tokens after EOS") {
    const EnvSpec spec = roomy(EnvKind::mod_arith, 1);
    CounterRng rng(3, "env");
    const Prompt p = sample_prompt(spec, rng);
    auto ok = reference_response(p);
    CHECK(score(spec, p.tokens, ok) == 1.0);
    CHECK(score(spec, p.tokens, {}) == 0.0);
    CHECK(score(spec, p.tokens, {vb::kEos}) == 0.0);
    CHECK(score(spec, p.tokens, p.answer) == 1.0);  // truncated right at the answer
    auto extra = ok;
    extra.push_back(vb::digit(3));
    CHECK(score(spec, p.tokens, extra) == 1.0);  // tokens after EOS are ignored
    auto wrong = ok;
    wrong[0] = wrong[0] == vb::digit(0) ? vb::digit(1) : vb::digit(0);
    CHECK(score(spec, p.tokens, wrong) == 0.0);
    CHECK(score(spec, {vb::kBos, vb::kPlus}, ok) == 0.0);  // malformed prompt
}

TEST_CASE("exhaustive 2-token responses: exactly the ground truth scores 1") {
    const EnvSpec spec;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        CounterRng rng(seed, "env");
        const Prompt p = sample_prompt(spec, rng);
        int winners = 0;
        std::vector<std::int32_t> winner;
        for (std::int32_t x = 0; x < vb::kSize; ++x)
            for (std::int32_t y = 0; y < vb::kSize; ++y)
                if (score(spec, p.tokens, {x, y}) == 1.0) {
                    ++winners;
                    winner = {x, y};
                }
        CHECK(winners == 1);
        CHECK(winner == reference_response(p));
    }
}

TEST_CASE("evolve: threshold rule and induction") {
    EnvSpec s = roomy(EnvKind::mod_arith);
    CHECK(evolve(s, 1.0).difficulty == 1);
    CHECK(evolve(s, 0.0).difficulty == 0);
    CHECK(evolve(s, 0.9).difficulty == 1);
    CHECK(evolve(s, 0.89).difficulty == 0);
    EnvSpec t = evolve(s, 1.0);
    t.difficulty = s.difficulty;
    CHECK(t == s);  // other fields preserved

    s.evolve_threshold = 0.5;
    EnvSpec e = s;
    for (int i = 0; i < 5; ++i) e = evolve(e, 1.0);
    CHECK(e.difficulty == s.difficulty + 5);
    CHECK_THROWS_AS(evolve(s, 1.5), Error);
}

TEST_CASE("difficulty controller never decreases and evolving prompts stay feasible") {
    EnvSpec s = roomy(EnvKind::evolving);
    s.evolve_window = 2;
    DifficultyController ctl(s);
    std::size_t last = 0;
    for (double r : {1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.2, 0.1, 1.0, 1.0}) {
        ctl.observe(r);
        CHECK(ctl.spec().difficulty >= last);
        last = ctl.spec().difficulty;
        CounterRng rng(last, "env");
        for (int i = 0; i < 20; ++i) {
            const Prompt p = sample_prompt(ctl.spec(), rng);
            CHECK(p.tokens.size() <= s.max_prompt_len);
            CHECK(reference_response(p).size() <= s.max_response_len);
            CHECK(score(ctl.spec(), p.tokens, reference_response(p)) == 1.0);
        }
    }
    CHECK(last >= 2);
}
