#include "dca/tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "dca/rng.hpp"
#include "json.hpp"

namespace dca::tasks {

namespace {

using json = nlohmann::json;

constexpr const char* kLetterPrefix = "Take the second last letters of the words in \"";
constexpr const char* kLetterSuffix = "\" and concatenate them";

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int month_len(int m, int y) {
    static const int lens[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap(y)) return 29;
    return lens[m - 1];
}

std::string format_date(int m, int d, int y) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d/%02d/%04d", m, d, y);
    return buf;
}

}  // namespace

std::string task_name(Task t) {
    switch (t) {
        case Task::letter_concat: return "letter_concat";
        case Task::date: return "date";
        case Task::arithmetic: return "arithmetic";
    }
    return "unknown";
}

Task task_from_name(const std::string& name) {
    if (name == "letter_concat") return Task::letter_concat;
    if (name == "date") return Task::date;
    if (name == "arithmetic") return Task::arithmetic;
    throw ConfigError("task: unknown value '" + name +
                      "' (letter_concat|date|arithmetic)");
}

Tokenizer::Tokenizer() {
    chars_ =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
        "abcdefghijklmnopqrstuvwxyz"
        "0123456789"
        " \"+-=?/,.";
    std::fill(std::begin(char_to_id_), std::end(char_to_id_), -1);
    for (std::size_t i = 0; i < chars_.size(); ++i) {
        char_to_id_[static_cast<unsigned char>(chars_[i])] = static_cast<std::int32_t>(i) + 4;
    }
}

std::int64_t Tokenizer::vocab_size() const {
    return static_cast<std::int64_t>(chars_.size()) + 4;
}

std::vector<std::int32_t> Tokenizer::encode(const std::string& text) const {
    std::vector<std::int32_t> out;
    out.reserve(text.size());
    for (char c : text) {
        const std::int32_t id = char_to_id_[static_cast<unsigned char>(c)];
        if (id < 0) {
            throw DataError(std::string("tokenizer: character '") + c + "' not in vocabulary");
        }
        out.push_back(id);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (std::int32_t id : ids) {
        if (id < 4) continue;
        const std::int64_t ci = id - 4;
        if (ci >= static_cast<std::int64_t>(chars_.size())) {
            throw DataError("tokenizer: id " + std::to_string(id) + " outside vocabulary");
        }
        out.push_back(chars_[ci]);
    }
    return out;
}

std::vector<Example> gen_letter_concat(std::uint64_t seed, std::int64_t n,
                                       std::int64_t word_len_min, std::int64_t word_len_max,
                                       std::int64_t words_per_prompt) {
    if (word_len_min < 2) {
        throw ConfigError("letter_concat: word_len_min must be >= 2 (second-last letter)");
    }
    if (word_len_max < word_len_min) throw ConfigError("letter_concat: empty word length range");
    if (words_per_prompt < 1) throw ConfigError("letter_concat: words_per_prompt must be >= 1");
    Rng rng(seed);
    std::vector<Example> out;
    out.reserve(n);
    std::unordered_set<std::string> seen;
    std::int64_t attempts = 0;
    while (static_cast<std::int64_t>(out.size()) < n) {
        if (++attempts > 1000 * n + 1000) {
            throw DataError("letter_concat: could not draw enough unique prompts");
        }
        std::string words;
        std::string answer;
        for (std::int64_t w = 0; w < words_per_prompt; ++w) {
            const std::int64_t len = rng.uniform_int(word_len_min, word_len_max);
            std::string word;
            for (std::int64_t i = 0; i < len; ++i) {
                word.push_back(static_cast<char>('A' + rng.uniform_int(0, 25)));
            }
            answer.push_back(word[word.size() - 2]);
            if (w) words.push_back(' ');
            words += word;
        }
        std::string prompt = kLetterPrefix + words + kLetterSuffix;
        if (!seen.insert(prompt).second) continue;
        out.push_back({std::move(prompt), std::move(answer), Task::letter_concat});
    }
    return out;
}

std::vector<Example> gen_arithmetic(std::uint64_t seed, std::int64_t n,
                                    std::int64_t operand_min, std::int64_t operand_max,
                                    bool with_add, bool with_sub) {
    if (!with_add && !with_sub) throw ConfigError("arithmetic: no operators enabled");
    if (operand_max < operand_min) throw ConfigError("arithmetic: empty operand range");
    constexpr std::int64_t kI32Max = 2147483647;
    if (operand_min < -kI32Max || operand_max > kI32Max) {
        throw ConfigError("arithmetic: operand range must fit signed 32-bit");
    }
    const std::int64_t span = operand_max - operand_min + 1;
    const std::int64_t ops = (with_add ? 1 : 0) + (with_sub ? 1 : 0);
    if (n > span * span * ops) {
        throw DataError("arithmetic: requested more unique prompts than the range allows");
    }
    Rng rng(seed);
    std::vector<Example> out;
    out.reserve(n);
    std::unordered_set<std::string> seen;
    std::int64_t attempts = 0;
    while (static_cast<std::int64_t>(out.size()) < n) {
        if (++attempts > 1000 * n + 1000) {
            throw DataError("arithmetic: could not draw enough unique prompts");
        }
        const std::int64_t a = rng.uniform_int(operand_min, operand_max);
        const std::int64_t b = rng.uniform_int(operand_min, operand_max);
        const bool sub = with_sub && (!with_add || rng.uniform_int(0, 1) == 1);
        std::string prompt = std::to_string(a) + (sub ? "-" : "+") + std::to_string(b) + "=?";
        if (!seen.insert(prompt).second) continue;
        out.push_back({std::move(prompt), std::to_string(sub ? a - b : a + b), Task::arithmetic});
    }
    return out;
}

std::vector<Example> gen_date(std::uint64_t seed, std::int64_t n, int year_min, int year_max) {
    if (year_min < 1 || year_max > 9998 || year_max < year_min) {
        throw ConfigError("date: year range must lie within [1, 9998]");
    }
    std::int64_t distinct = 0;
    for (int y = year_min; y <= year_max; ++y) distinct += is_leap(y) ? 366 : 365;
    if (n > distinct) {
        throw DataError("date: requested more unique prompts than the year range holds");
    }
    Rng rng(seed);
    std::vector<Example> out;
    out.reserve(n);
    std::unordered_set<std::string> seen;
    std::int64_t attempts = 0;
    while (static_cast<std::int64_t>(out.size()) < n) {
        if (++attempts > 1000 * n + 1000) {
            throw DataError("date: could not draw enough unique prompts");
        }
        const int y = static_cast<int>(rng.uniform_int(year_min, year_max));
        const int m = static_cast<int>(rng.uniform_int(1, 12));
        const int d = static_cast<int>(rng.uniform_int(1, month_len(m, y)));
        std::string prompt =
            "If today is " + format_date(m, d, y) + ", what is tomorrow in MM/DD/YYYY?";
        if (!seen.insert(prompt).second) continue;
        int ty = y, tm = m, td = d + 1;
        if (td > month_len(tm, ty)) {
            td = 1;
            if (++tm > 12) {
                tm = 1;
                ++ty;
            }
        }
        out.push_back({std::move(prompt), format_date(tm, td, ty), Task::date});
    }
    return out;
}

Batch encode_batch(const Tokenizer& tok, const std::vector<Example>& examples,
                   std::int64_t max_seq) {
    if (examples.empty()) throw DataError("encode_batch: empty batch");
    std::vector<std::vector<std::int32_t>> rows;
    std::vector<std::int64_t> answer_starts;
    rows.reserve(examples.size());
    std::int64_t seq = 0;
    for (const Example& ex : examples) {
        std::vector<std::int32_t> ids;
        ids.push_back(tok.bos_id());
        const auto p = tok.encode(ex.prompt);
        ids.insert(ids.end(), p.begin(), p.end());
        ids.push_back(tok.sep_id());
        answer_starts.push_back(static_cast<std::int64_t>(ids.size()));
        const auto a = tok.encode(ex.answer);
        ids.insert(ids.end(), a.begin(), a.end());
        ids.push_back(tok.eos_id());
        if (static_cast<std::int64_t>(ids.size()) > max_seq) {
            throw DataError("encode_batch: example needs " + std::to_string(ids.size()) +
                            " tokens but max_seq_len is " + std::to_string(max_seq) +
                            ": \"" + ex.prompt + "\"");
        }
        seq = std::max(seq, static_cast<std::int64_t>(ids.size()));
        rows.push_back(std::move(ids));
    }
    Batch b;
    b.batch = static_cast<std::int64_t>(rows.size());
    b.seq = seq;
    b.tokens.assign(b.batch * seq, tok.pad_id());
    b.answer_mask.assign(b.batch * seq, 0);
    b.pad_mask.assign(b.batch * seq, 0);
    b.lengths.resize(b.batch);
    for (std::int64_t r = 0; r < b.batch; ++r) {
        const auto& ids = rows[r];
        const std::int64_t len = static_cast<std::int64_t>(ids.size());
        b.lengths[r] = len;
        std::copy(ids.begin(), ids.end(), b.tokens.begin() + r * seq);
        for (std::int64_t t = answer_starts[r]; t < len; ++t) b.answer_mask[r * seq + t] = 1;
        for (std::int64_t t = len; t < seq; ++t) b.pad_mask[r * seq + t] = 1;
    }
    return b;
}

std::pair<std::vector<std::int32_t>, std::vector<std::uint8_t>> answer_ce_views(const Batch& b) {
    std::vector<std::int32_t> targets(b.batch * b.seq, 0);
    std::vector<std::uint8_t> mask(b.batch * b.seq, 0);
    for (std::int64_t r = 0; r < b.batch; ++r) {
        for (std::int64_t t = 0; t + 1 < b.seq; ++t) {
            targets[r * b.seq + t] = b.tokens[r * b.seq + t + 1];
            mask[r * b.seq + t] = b.answer_mask[r * b.seq + t + 1];
        }
    }
    return {std::move(targets), std::move(mask)};
}

std::pair<std::vector<std::int32_t>, std::vector<std::uint8_t>> lm_ce_views(const Batch& b) {
    std::vector<std::int32_t> targets(b.batch * b.seq, 0);
    std::vector<std::uint8_t> mask(b.batch * b.seq, 0);
    for (std::int64_t r = 0; r < b.batch; ++r) {
        for (std::int64_t t = 0; t + 1 < b.seq; ++t) {
            targets[r * b.seq + t] = b.tokens[r * b.seq + t + 1];
            mask[r * b.seq + t] = b.pad_mask[r * b.seq + t + 1] ? 0 : 1;
        }
    }
    return {std::move(targets), std::move(mask)};
}

void write_jsonl(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_jsonl: cannot open " + path);
    for (const Example& ex : examples) {
        json j;
        j["prompt"] = ex.prompt;
        j["answer"] = ex.answer;
        j["task"] = task_name(ex.task);
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("write_jsonl: write failed for " + path);
}

std::vector<Example> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_jsonl: cannot open " + path);
    std::vector<Example> out;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("prompt") || !j.contains("answer") || !j.contains("task")) {
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected fields prompt/answer/task");
        }
        Example ex;
        ex.prompt = j["prompt"].get<std::string>();
        ex.answer = j["answer"].get<std::string>();
        ex.task = task_from_name(j["task"].get<std::string>());
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace dca::tasks
