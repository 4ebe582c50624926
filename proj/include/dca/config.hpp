#pragma once

#include <cstdint>
#include <string>

#include "dca/errors.hpp"

namespace dca {

// Architecture plus DCA hyperparameters. Desk-scale defaults; the adaption
// prompt of length M is split into a general segment of length H and a
// problem-specific segment of length M-H, and the variance regularizer runs
// over the topmost `causal_layers` of the `adapter_layers` adapted layers.
struct ModelConfig {
    std::int64_t n_layers = 4;       // N
    std::int64_t n_heads = 4;
    std::int64_t head_dim = 16;
    std::int64_t vocab_size = 75;  // matches the fixed task tokenizer
    std::int64_t max_seq_len = 96;
    std::int64_t adapter_layers = 4;  // L, topmost
    std::int64_t adapter_len = 10;    // M
    std::int64_t general_len = 2;     // H
    std::int64_t causal_layers = 4;   // L', topmost
    double alpha = 1.0;
    double rope_base = 10000.0;
    double rms_eps = 1e-6;
    std::int64_t ffn_hidden = 128;

    std::int64_t model_dim() const { return n_heads * head_dim; }  // C

    void validate() const;
};

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::int64_t epochs = 8;
    std::int64_t batch_size = 8;
    std::int64_t max_steps = 2000;  // 0 = run all epochs
    std::uint64_t seed = 0;
    double alpha = 1.0;
    enum class Schedule { constant, cosine };
    Schedule schedule = Schedule::constant;
    double grad_clip = 1.0;  // global norm, 0 disables
    enum class Trainable { adapters, base };
    Trainable trainable = Trainable::adapters;
    // Which targets the CE covers: `answer` masks to answer+EOS tokens, `lm`
    // covers every non-pad transition. `auto_scope` picks answer for adapter
    // runs and lm for base runs.
    enum class CeScope { auto_scope, answer, lm };
    CeScope ce_scope = CeScope::auto_scope;

    void validate() const;
};

std::string schedule_name(TrainConfig::Schedule s);
TrainConfig::Schedule schedule_from_name(const std::string& name);
std::string trainable_name(TrainConfig::Trainable t);
TrainConfig::Trainable trainable_from_name(const std::string& name);

}  // namespace dca
