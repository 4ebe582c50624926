#include "dca/loss.hpp"

#include <algorithm>

namespace dca {

Tensor causal_loss(const std::vector<Tensor>& xg_per_layer,
                   const std::vector<std::int64_t>& valid_lens,
                   std::vector<double>* per_layer_var) {
    if (xg_per_layer.empty()) throw DataError("causal_loss: no X_G layers");
    const std::int64_t batch = xg_per_layer[0].shape.empty() ? 0 : xg_per_layer[0].shape[0];
    if (batch < 1) throw DataError("causal_loss: empty batch");
    if (static_cast<std::int64_t>(valid_lens.size()) != batch) {
        throw ShapeError("causal_loss: valid_lens must have one entry per sample");
    }
    std::int64_t min_len = *std::min_element(valid_lens.begin(), valid_lens.end());
    if (min_len < 1) throw DataError("causal_loss: a sample has no valid positions");

    Tensor acc;
    std::vector<double> vars;
    vars.reserve(xg_per_layer.size());
    for (const Tensor& xg : xg_per_layer) {
        if (xg.ndim() != 4 || xg.shape[0] != batch) {
            throw ShapeError("causal_loss: X_G must be [batch, heads, q_len, dim], got " +
                             format_shape(xg.shape));
        }
        const std::int64_t len = std::min(min_len, xg.shape[2]);
        Tensor v = mean_all(variance(narrow(xg, 2, 0, len), 0));
        vars.push_back(v.item());
        acc = acc.defined() ? add(acc, v) : v;
    }
    Tensor out = scale(acc, 1.0 / static_cast<double>(xg_per_layer.size()));
    if (per_layer_var) *per_layer_var = std::move(vars);
    return out;
}

std::pair<Tensor, LossReport> total_loss(const Tensor& ce, const Tensor& causal, double alpha,
                                         std::vector<double> per_layer_var) {
    if (alpha < 0.0) throw ConfigError("total_loss: alpha must be >= 0");
    Tensor total = add(ce, scale(causal, alpha));
    LossReport report;
    report.ce = ce.item();
    report.causal = causal.item();
    report.total = total.item();
    report.per_layer_var = std::move(per_layer_var);
    return {total, report};
}

}  // namespace dca
