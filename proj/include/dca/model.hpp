#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dca/adapter.hpp"
#include "dca/config.hpp"
#include "dca/tensor.hpp"

namespace dca {

// Pre-norm decoder layer: rotary multi-head attention and a SiLU-gated MLP.
struct LayerParams {
    Tensor wq, wk, wv, wo;        // [C, C]
    Tensor w_gate, w_up;          // [C, F]
    Tensor w_down;                // [F, C]
    Tensor attn_norm, mlp_norm;   // [C]
};

struct ModelParams {
    Tensor embedding;   // [V, C]
    std::vector<LayerParams> layers;
    Tensor final_norm;  // [C]
    Tensor out_head;    // [C, V]
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Flat views over the parameter sets; handles alias the stored buffers.
std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& p);
std::vector<std::pair<std::string, Tensor>> named_params(const AdapterParams& a);

void set_trainable(Tensor& t, bool trainable);
void set_trainable(ModelParams& p, bool trainable);
void set_trainable(AdapterParams& a, bool trainable);

struct ForwardOptions {
    bool want_traces = false;      // collect AttentionTrace (detached values)
    std::int64_t trace_batch = 0;  // batch element the traces describe
    bool want_xg = false;          // collect X_G of the topmost causal_layers
};

struct ForwardResult {
    Tensor logits;                        // [batch, seq, vocab]
    std::vector<AttentionTrace> traces;   // when requested
    std::vector<Tensor> xg;               // topmost L' layers, bottom-up
    std::vector<std::int64_t> xg_layers;  // layer index of each xg entry
};

// adapters == nullptr runs the plain transformer.
ForwardResult forward(const ModelConfig& cfg, const ModelParams& params,
                      const AdapterParams* adapters, const std::vector<std::int32_t>& tokens,
                      std::int64_t batch, std::int64_t seq,
                      const ForwardOptions& opts = {});

// Argmax continuation; stops at stop_token, max_new tokens, or the context
// limit. The stop token is not part of the returned continuation.
std::vector<std::int32_t> greedy_decode(const ModelConfig& cfg, const ModelParams& params,
                                        const AdapterParams* adapters,
                                        const std::vector<std::int32_t>& prompt,
                                        std::int64_t max_new, std::int32_t stop_token);

}  // namespace dca
