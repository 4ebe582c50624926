#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dca/tasks.hpp"
#include "doctest.h"

using namespace dca::tasks;
using i64 = std::int64_t;

namespace {

// Independent string-slicing oracle for second-last letter concatenation.
std::string slice_oracle(const std::string& words) {
    std::string answer;
    std::stringstream ss(words);
    std::string w;
    while (ss >> w) answer.push_back(w[w.size() - 2]);
    return answer;
}

// Pull the quoted word list out of a letter-concat prompt.
std::string quoted_words(const std::string& prompt) {
    const auto a = prompt.find('"');
    const auto b = prompt.rfind('"');
    REQUIRE(a != std::string::npos);
    REQUIRE(b > a);
    return prompt.substr(a + 1, b - a - 1);
}

// Howard Hinnant's civil-date algorithm: independent day-count oracle.
i64 days_from_civil(i64 y, i64 m, i64 d) {
    y -= m <= 2;
    const i64 era = (y >= 0 ? y : y - 399) / 400;
    const i64 yoe = y - era * 400;
    const i64 doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const i64 doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

void civil_from_days(i64 z, i64& y, i64& m, i64& d) {
    z += 719468;
    const i64 era = (z >= 0 ? z : z - 146096) / 146097;
    const i64 doe = z - era * 146097;
    const i64 yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const i64 doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const i64 mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = yoe + era * 400 + (m <= 2);
}

void parse_date(const std::string& s, i64& y, i64& m, i64& d) {
    m = std::stoll(s.substr(0, 2));
    d = std::stoll(s.substr(3, 2));
    y = std::stoll(s.substr(6, 4));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("second-last-letter rule: paper example GALLEGOS MORAN -> OA") {
    CHECK(slice_oracle("GALLEGOS MORAN") == "OA");
    CHECK(slice_oracle("AB CD") == "AC");
}

TEST_CASE("letter_concat: 1000 examples verified by the string-slicing oracle") {
    const auto examples = gen_letter_concat(7, 1000, 3, 8, 2);
    REQUIRE(examples.size() == 1000);
    const std::string prefix = "Take the second last letters of the words in \"";
    const std::string suffix = "\" and concatenate them";
    std::set<std::string> prompts;
    for (const Example& ex : examples) {
        CHECK(ex.task == Task::letter_concat);
        CHECK(ex.prompt.substr(0, prefix.size()) == prefix);
        CHECK(ex.prompt.substr(ex.prompt.size() - suffix.size()) == suffix);
        CHECK(slice_oracle(quoted_words(ex.prompt)) == ex.answer);
        prompts.insert(ex.prompt);
    }
    CHECK(prompts.size() == 1000);  // unique prompts, so any split is disjoint
    CHECK_THROWS_AS(gen_letter_concat(1, 5, 1, 3, 2), dca::ConfigError);
}

TEST_CASE("arithmetic: spec example 1+2=? plus 1000 integer-oracle checks") {
    // Operands in {1,2} with + only: exactly the four unique prompts.
    const auto tiny = gen_arithmetic(3, 4, 1, 2, true, false);
    bool found = false;
    for (const Example& ex : tiny) {
        if (ex.prompt == "1+2=?") {
            found = true;
            CHECK(ex.answer == "3");
        }
    }
    CHECK(found);

    const auto batch = gen_arithmetic(11, 1000, 0, 999, true, true);
    REQUIRE(batch.size() == 1000);
    for (const Example& ex : batch) {
        const auto op = ex.prompt.find_first_of("+-", 1);
        REQUIRE(op != std::string::npos);
        const i64 a = std::stoll(ex.prompt.substr(0, op));
        const i64 b = std::stoll(ex.prompt.substr(op + 1, ex.prompt.size() - op - 3));
        const i64 expect = ex.prompt[op] == '+' ? a + b : a - b;
        CHECK(std::to_string(expect) == ex.answer);
        CHECK(ex.prompt.substr(ex.prompt.size() - 2) == "=?");
    }
    CHECK(gen_arithmetic(11, 1, 0, 0, false, true).size() == 1);  // 0-0 only
    CHECK_THROWS_AS(gen_arithmetic(11, 2, 0, 0, false, true), dca::DataError);
}

TEST_CASE("arithmetic 0+0 edge") {
    const auto ex = gen_arithmetic(1, 1, 0, 0, true, false);
    CHECK(ex[0].prompt == "0+0=?");
    CHECK(ex[0].answer == "0");
}

TEST_CASE("date: rollover and leap-year closed cases") {
    const auto y2022 = gen_date(5, 365, 2022, 2022);
    bool found = false;
    for (const Example& ex : y2022) {
        if (ex.prompt.find("12/31/2022") != std::string::npos) {
            found = true;
            CHECK(ex.answer == "01/01/2023");
        }
    }
    CHECK(found);

    const auto y2020 = gen_date(5, 366, 2020, 2020);
    found = false;
    for (const Example& ex : y2020) {
        if (ex.prompt.find("02/28/2020") != std::string::npos) {
            found = true;
            CHECK(ex.answer == "02/29/2020");
        }
    }
    CHECK(found);
}

TEST_CASE("date: 1000 examples verified by the day-count oracle") {
    const auto batch = gen_date(13, 1000, 1900, 2099);
    REQUIRE(batch.size() == 1000);
    for (const Example& ex : batch) {
        const auto pos = ex.prompt.find("If today is ");
        REQUIRE(pos == 0);
        i64 y, m, d, ty, tm, td;
        parse_date(ex.prompt.substr(12, 10), y, m, d);
        parse_date(ex.answer, ty, tm, td);
        i64 oy, om, od;
        civil_from_days(days_from_civil(y, m, d) + 1, oy, om, od);
        CHECK(oy == ty);
        CHECK(om == tm);
        CHECK(od == td);
    }
}

TEST_CASE("tokenizer: stable ids, round trip, OOV rejection") {
    const Tokenizer tok;
    CHECK(tok.vocab_size() == 75);
    const std::string text = "Take the second last letters of 12/31/2022, \"AB-CD\"+=?";
    const auto ids = tok.encode(text);
    CHECK(tok.decode(ids) == text);
    const Tokenizer tok2;
    CHECK(tok2.encode(text) == ids);
    CHECK_THROWS_AS(tok.encode("tab\tchar"), dca::DataError);
}

TEST_CASE("encode_batch: layout, masks, and overflow errors") {
    const Tokenizer tok;
    std::vector<Example> exs = {{"1+2=?", "3", Task::arithmetic},
                                {"10-4=?", "6", Task::arithmetic}};
    const Batch b = encode_batch(tok, exs, 32);
    CHECK(b.batch == 2);
    CHECK(b.seq == 10);  // BOS + "10-4=?" + SEP + "6" + EOS
    CHECK(b.lengths[0] == 9);
    CHECK(b.lengths[1] == 10);
    for (i64 r = 0; r < b.batch; ++r) {
        CHECK(b.tokens[r * b.seq] == tok.bos_id());
        i64 answered = 0;
        for (i64 t = 0; t < b.seq; ++t) {
            const bool overlap = b.answer_mask[r * b.seq + t] && b.pad_mask[r * b.seq + t];
            CHECK_FALSE(overlap);
            answered += b.answer_mask[r * b.seq + t];
        }
        CHECK(answered == 2);  // one answer char + EOS
    }
    // Row 0 is one token shorter, so it ends in a pad.
    CHECK(b.pad_mask[0 * b.seq + 9] == 1);
    CHECK(b.tokens[0 * b.seq + 9] == tok.pad_id());

    CHECK_THROWS_AS(encode_batch(tok, exs, 8), dca::DataError);
    try {
        encode_batch(tok, exs, 8);
    } catch (const dca::DataError& e) {
        CHECK(std::string(e.what()).find("=?") != std::string::npos);  // names the offender
    }
}

TEST_CASE("ce views: prompt-region corruption does not change the answer loss") {
    const Tokenizer tok;
    std::vector<Example> exs = {{"12+3=?", "15", Task::arithmetic}};
    const Batch b = encode_batch(tok, exs, 32);
    auto [targets, mask] = answer_ce_views(b);
    // Masked positions must be exactly those whose target is answer or EOS.
    i64 masked = 0;
    for (i64 t = 0; t + 1 < b.seq; ++t) {
        if (mask[t]) {
            ++masked;
            CHECK(b.answer_mask[t + 1] == 1);
        }
    }
    CHECK(masked == 3);  // '1', '5', EOS
    // Corrupt every unmasked target: the masked view is unchanged.
    auto corrupted = targets;
    for (i64 t = 0; t < b.seq; ++t) {
        if (!mask[t]) corrupted[t] = 9;
    }
    for (i64 t = 0; t < b.seq; ++t) {
        if (mask[t]) CHECK(corrupted[t] == targets[t]);
    }

    auto [lm_targets, lm_mask] = lm_ce_views(b);
    i64 lm_count = 0;
    for (i64 t = 0; t + 1 < b.seq; ++t) lm_count += lm_mask[t];
    CHECK(lm_count == b.lengths[0] - 1);  // every non-pad transition
}

TEST_CASE("same seed gives byte-identical dataset files") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "dca_test_tasks";
    fs::create_directories(dir);
    const auto a = gen_letter_concat(21, 50, 3, 6, 2);
    const auto b = gen_letter_concat(21, 50, 3, 6, 2);
    write_jsonl((dir / "a.jsonl").string(), a);
    write_jsonl((dir / "b.jsonl").string(), b);
    CHECK(read_file((dir / "a.jsonl").string()) == read_file((dir / "b.jsonl").string()));

    const auto loaded = read_jsonl((dir / "a.jsonl").string());
    REQUIRE(loaded.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(loaded[i].prompt == a[i].prompt);
        CHECK(loaded[i].answer == a[i].answer);
        CHECK(loaded[i].task == a[i].task);
    }

    std::ofstream(dir / "bad.jsonl") << "{not json}\n";
    CHECK_THROWS_AS(read_jsonl((dir / "bad.jsonl").string()), dca::DataError);
}
