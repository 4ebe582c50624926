#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dca/config.hpp"
#include "dca/loss.hpp"
#include "dca/model.hpp"
#include "dca/tasks.hpp"

namespace dca {

struct StepRecord {
    std::int64_t step = 0;
    LossReport loss;
    double grad_norm = 0.0;  // global norm before clipping
    double wall_ms = 0.0;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t t = 0;
};

// Decoupled weight decay: params with decay_mask set are first scaled by
// (1 - lr*wd), then the bias-corrected Adam update is applied.
void adamw_step(std::vector<Tensor>& params, const std::vector<std::string>& names,
                const std::vector<std::uint8_t>& decay_mask, AdamState& state,
                const TrainConfig& cfg, double lr);

struct TrainState {
    AdamState adam;
    std::int64_t next_step = 0;
};

std::int64_t planned_steps(const TrainConfig& cfg, std::int64_t n_examples);

// Batch composition for a step is a pure function of (seed, step), so a run
// resumed from a checkpoint retraces the uninterrupted trajectory exactly.
std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t step,
                                        std::int64_t n_examples, std::int64_t batch_size);

// cfg.trainable selects the mode: `adapters` fine-tunes the adaption prompts
// and gates against a frozen base (answer-region CE + alpha * causal term);
// `base` trains all model parameters as a plain LM over full sequences.
std::vector<StepRecord> train(const ModelConfig& mc, ModelParams& model,
                              AdapterParams& adapters, const std::vector<tasks::Example>& data,
                              const tasks::Tokenizer& tok, const TrainConfig& tc,
                              TrainState& state,
                              const std::function<void(const StepRecord&)>& on_step = {});

// L*(M*C) + L*n_heads: adaption prompts plus per-head gates.
std::int64_t trainable_param_count(const ModelConfig& cfg);

}  // namespace dca
