#include "dca/adapter.hpp"

#include "dca/rng.hpp"

namespace dca {

AdapterParams init_adapters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::int64_t c = cfg.model_dim();
    AdapterParams out;
    out.first_layer = cfg.n_layers - cfg.adapter_layers;
    out.layers.resize(cfg.adapter_layers);
    for (auto& layer : out.layers) {
        layer.t1 = make_tensor({cfg.general_len, c});
        layer.t2 = make_tensor({cfg.adapter_len - cfg.general_len, c});
        for (double& v : *layer.t1.data) v = 0.02 * rng.normal();
        for (double& v : *layer.t2.data) v = 0.02 * rng.normal();
        layer.gate = make_tensor({cfg.n_heads});  // zero-init
    }
    return out;
}

Tensor estimate_xg(const Tensor& s_adap1, const Tensor& v_adap1) {
    if (s_adap1.size(-1) != v_adap1.size(-2)) {
        throw ShapeError("estimate_xg: inner dims of " + format_shape(s_adap1.shape) +
                         " and " + format_shape(v_adap1.shape) + " do not match");
    }
    return matmul(s_adap1, v_adap1);
}

}  // namespace dca
