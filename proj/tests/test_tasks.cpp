#include "test_util.hpp"

#include "wino/tasks.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <unordered_set>

using namespace wino;
using namespace wino::test;

namespace {

std::vector<int> framed(const TaskSample & s, int L) { return frame_response(s.answer_tokens, L); }

}  // namespace

TEST_CASE("vocab layout and round trips") {
    const Vocab & v = Vocab::get();
    CHECK(v.size() == 32);
    CHECK(v.id('0') == 4);
    const std::string text = "123+456=579|abc>%,-*";
    CHECK(v.decode(v.encode(text)) == text);
    std::vector<int> ids(28);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ids[i] = static_cast<int>(i) + 4;
    }
    CHECK(v.encode(v.decode(ids)) == ids);
    CHECK_THROWS_AS(v.id('Z'), std::invalid_argument);
    CHECK_THROWS_AS(v.decode(std::vector<int>{ MASK_ID }), std::invalid_argument);
    const std::vector<int> with_specials{ BOA_ID, 5, EOS_ID, PAD_ID, MASK_ID };
    CHECK(v.render(with_specials) == "^1$._");
    CHECK(v.parse_rendered("^1$._") == with_specials);
}

TEST_CASE("add samples") {
    const TaskSample zero = make_add_sample(0, 0);
    CHECK(zero.prompt_text == "0+0=");
    CHECK(zero.answer_text == "0");
    CHECK(make_add_sample(123, 456).answer_text == "579");

    TaskSpec spec;
    spec.digits = 3;
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const TaskSample s    = generate_sample(spec, rng);
        const auto       plus = s.prompt_text.find('+');
        const long long  a    = std::stoll(s.prompt_text.substr(0, plus));
        const long long  b    = std::stoll(s.prompt_text.substr(plus + 1, s.prompt_text.size() - plus - 2));
        REQUIRE(a >= 100);
        REQUIRE(a <= 999);
        REQUIRE(b >= 100);
        REQUIRE(b <= 999);
        REQUIRE(std::to_string(a + b) == s.answer_text);
    }
}

TEST_CASE("reverse, sort and chain-mod samples") {
    const TaskSample r = make_sample("reverse", "abc|", "cba");
    CHECK(r.answer_text == "cba");
    TaskSpec spec;
    spec.kind = TaskKind::reverse;
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const TaskSample s = generate_sample(spec, rng);
        std::string      body = s.prompt_text.substr(0, s.prompt_text.size() - 1);
        std::reverse(body.begin(), body.end());
        CHECK(body == s.answer_text);
    }
    spec.kind = TaskKind::sort;
    for (int i = 0; i < 100; ++i) {
        const TaskSample s = generate_sample(spec, rng);
        CHECK(std::is_sorted(s.answer_text.begin(), s.answer_text.end()));
        CHECK(s.prompt_text.back() == '>');
    }
    spec.kind = TaskKind::chain_mod;
    for (int i = 0; i < 200; ++i) {
        const TaskSample s = generate_sample(spec, rng);
        // independent re-evaluation of "d op d op d ... %m="
        const std::string & p   = s.prompt_text;
        const auto          pct = p.find('%');
        const long long     m   = std::stoll(p.substr(pct + 1, p.size() - pct - 2));
        long long           acc = (p[0] - '0') % m;
        for (std::size_t k = 1; k + 1 < pct; k += 2) {
            const long long x = p[k + 1] - '0';
            if (p[k] == '+') acc = (acc + x) % m;
            if (p[k] == '-') acc = (acc - x + 10 * m) % m;
            if (p[k] == '*') acc = (acc * x) % m;
        }
        CHECK(std::to_string(acc) == s.answer_text);
    }
}

TEST_CASE("generators never emit specials and framed answers evaluate true") {
    for (auto kind : { TaskKind::add, TaskKind::reverse, TaskKind::sort, TaskKind::chain_mod }) {
        TaskSpec spec;
        spec.kind = kind;
        Rng       rng(3);
        const int L = spec.effective_generation_length();
        for (int i = 0; i < 200; ++i) {
            const TaskSample s = generate_sample(spec, rng);
            for (int t : s.prompt_tokens) {
                CHECK(t > BOA_ID);
            }
            for (int t : s.answer_tokens) {
                CHECK(t > BOA_ID);
            }
            CHECK(evaluate(spec, s, framed(s, L)));
        }
    }
}

TEST_CASE("evaluate edge cases") {
    TaskSpec         spec;
    const TaskSample s = make_add_sample(123, 456);
    auto             y = framed(s, 8);
    CHECK(evaluate(spec, s, y));

    auto flipped = y;
    flipped[2]   = Vocab::get().id('8');
    CHECK_FALSE(evaluate(spec, s, flipped));

    auto masked = y;
    masked[7]   = MASK_ID;
    CHECK_FALSE(evaluate(spec, s, masked));

    auto no_eos = y;
    no_eos[4]   = PAD_ID;
    CHECK_FALSE(evaluate(spec, s, no_eos));

    // trailing content after EOS is ignored
    auto trailing = y;
    trailing[6]   = Vocab::get().id('9');
    CHECK(evaluate(spec, s, trailing));

    // PAD inside the answer span is stripped
    const std::vector<int> inner_pad{ BOA_ID, 9, PAD_ID, 11, 13, EOS_ID, PAD_ID, PAD_ID };
    CHECK(evaluate(spec, s, inner_pad));
}

TEST_CASE("frame_response layout") {
    const std::vector<int> a{ 9, 11, 13 };
    CHECK(frame_response(a, 8) == std::vector<int>{ BOA_ID, 9, 11, 13, EOS_ID, PAD_ID, PAD_ID, PAD_ID });
    CHECK_THROWS_AS(frame_response(a, 4), std::invalid_argument);
}

TEST_CASE("task spec lengths and validation") {
    TaskSpec spec;
    CHECK(spec.max_answer_length() == 4);
    CHECK(spec.recommended_generation_length() == 8);
    spec.generation_length = 5;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec.generation_length = 0;
    spec.digits            = 0;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    CHECK(parse_task_kind("chain-mod") == TaskKind::chain_mod);
    CHECK_THROWS_AS(parse_task_kind("mul"), std::invalid_argument);
}

TEST_CASE("datasets round trip and report bad lines") {
    const auto path = temp_path("data.jsonl");
    TaskSpec   spec;
    Rng        rng(4);

    CHECK(build_dataset(spec, 0, rng, path).empty());
    CHECK(load_dataset(path).empty());

    const auto samples = build_dataset(spec, 1000, rng, path);
    const auto loaded  = load_dataset(path);
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].prompt_text == samples[i].prompt_text);
        CHECK(loaded[i].answer_text == samples[i].answer_text);
        CHECK(loaded[i].prompt_tokens == samples[i].prompt_tokens);
        CHECK(loaded[i].answer_tokens == samples[i].answer_tokens);
    }

    {
        std::ofstream f(path, std::ios::trunc);
        f << R"({"task":"add","prompt":"1+2=","answer":"3"})" << '\n' << "{not json" << '\n';
    }
    try {
        load_dataset(path);
        FAIL("expected DatasetError");
    } catch (const DatasetError & e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("generated prompts are distinct") {
    TaskSpec spec;
    spec.digits = 4;
    Rng        rng(5);
    const auto samples = generate_samples(spec, 1000, rng);
    std::unordered_set<std::string> seen;
    for (const auto & s : samples) {
        CHECK(seen.insert(s.prompt_text).second);
    }
    Rng        rng2(6);
    const auto held_out = generate_samples(spec, 500, rng2, &samples);
    for (const auto & s : held_out) {
        CHECK(seen.count(s.prompt_text) == 0);
    }
}

TEST_CASE("generation is deterministic per seed") {
    TaskSpec spec;
    Rng      a(8), b(8);
    for (int i = 0; i < 50; ++i) {
        CHECK(generate_sample(spec, a).prompt_text == generate_sample(spec, b).prompt_text);
    }
}
