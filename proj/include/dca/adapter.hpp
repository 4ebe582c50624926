#pragma once

#include <cstdint>
#include <vector>

#include "dca/config.hpp"
#include "dca/tensor.hpp"

namespace dca {

// Learnable adaption prompt of one adapted layer, split into the general
// segment T1 of length H and the problem-specific segment T2 of length M-H,
// plus the per-head post-softmax gate. Gates start at exactly zero so an
// untrained adapter leaves the base model's behaviour unchanged.
struct AdapterLayerParams {
    Tensor t1;    // [H, C]
    Tensor t2;    // [M-H, C]
    Tensor gate;  // [n_heads]
};

struct AdapterParams {
    std::int64_t first_layer = 0;  // == n_layers - adapter_layers
    std::vector<AdapterLayerParams> layers;

    bool has_layer(std::int64_t layer) const {
        return layer >= first_layer &&
               layer < first_layer + static_cast<std::int64_t>(layers.size());
    }
    const AdapterLayerParams& at_layer(std::int64_t layer) const {
        return layers[layer - first_layer];
    }
};

AdapterParams init_adapters(const ModelConfig& cfg, std::uint64_t seed);

// Partitioned post-softmax attention of one adapted layer and head, for
// export and inspection. Vanilla rows sum to 1; the adapter rows of
// [s_adap1 ; s_adap2] sum to the head's gate.
struct AttentionTrace {
    std::int64_t layer = 0;
    std::int64_t head = 0;
    Tensor s_vanilla;  // [q_len, k_len]
    Tensor s_adap1;    // [q_len, H]
    Tensor s_adap2;    // [q_len, M-H]
};

// X_G estimate: the attention readout of the general adapter segment.
// Stays on the tape, so the variance penalty reaches T1 and the gates.
Tensor estimate_xg(const Tensor& s_adap1, const Tensor& v_adap1);

}  // namespace dca
