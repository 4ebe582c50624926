#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dca/errors.hpp"

namespace dca::tasks {

enum class Task { letter_concat, date, arithmetic };

std::string task_name(Task t);
Task task_from_name(const std::string& name);  // throws ConfigError

struct Example {
    std::string prompt;
    std::string answer;
    Task task = Task::letter_concat;
};

// Fixed character vocabulary: ids are stable across runs and platforms.
class Tokenizer {
public:
    Tokenizer();

    std::int64_t vocab_size() const;
    std::int32_t pad_id() const { return 0; }
    std::int32_t bos_id() const { return 1; }
    std::int32_t eos_id() const { return 2; }
    std::int32_t sep_id() const { return 3; }

    std::vector<std::int32_t> encode(const std::string& text) const;  // DataError on OOV
    std::string decode(const std::vector<std::int32_t>& ids) const;   // specials skipped

private:
    std::string chars_;
    std::int32_t char_to_id_[256];
};

// Prompts within one call are unique, so any split of the output is disjoint
// on the prompt string. All generators are pure functions of their seed.
std::vector<Example> gen_letter_concat(std::uint64_t seed, std::int64_t n,
                                       std::int64_t word_len_min, std::int64_t word_len_max,
                                       std::int64_t words_per_prompt);
std::vector<Example> gen_arithmetic(std::uint64_t seed, std::int64_t n,
                                    std::int64_t operand_min, std::int64_t operand_max,
                                    bool with_add, bool with_sub);
std::vector<Example> gen_date(std::uint64_t seed, std::int64_t n, int year_min, int year_max);

// Row layout: BOS prompt SEP answer EOS PAD...; rows are padded to the
// longest row in the batch. answer_mask marks answer tokens plus EOS.
struct Batch {
    std::int64_t batch = 0;
    std::int64_t seq = 0;
    std::vector<std::int32_t> tokens;
    std::vector<std::uint8_t> answer_mask;
    std::vector<std::uint8_t> pad_mask;
    std::vector<std::int64_t> lengths;  // non-pad tokens per row
};

Batch encode_batch(const Tokenizer& tok, const std::vector<Example>& examples,
                   std::int64_t max_seq);

// Next-token views for the loss: targets[b,t] = tokens[b,t+1]. The answer
// variant masks answer+EOS targets, the lm variant every non-pad target.
std::pair<std::vector<std::int32_t>, std::vector<std::uint8_t>> answer_ce_views(const Batch& b);
std::pair<std::vector<std::int32_t>, std::vector<std::uint8_t>> lm_ce_views(const Batch& b);

void write_jsonl(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> read_jsonl(const std::string& path);

}  // namespace dca::tasks
