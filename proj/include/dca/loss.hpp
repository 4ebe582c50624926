#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dca/tensor.hpp"

namespace dca {

struct LossReport {
    double ce = 0.0;
    double causal = 0.0;
    double total = 0.0;
    std::vector<double> per_layer_var;
};

// Mean over layers of the population variance of X_G across the batch, taken
// per (head, position, feature) coordinate. Positions are restricted to the
// prefix valid in every sample (min of valid_lens); padding never counts.
Tensor causal_loss(const std::vector<Tensor>& xg_per_layer,
                   const std::vector<std::int64_t>& valid_lens,
                   std::vector<double>* per_layer_var = nullptr);

// total = ce + alpha * causal; gradients flow through both terms.
std::pair<Tensor, LossReport> total_loss(const Tensor& ce, const Tensor& causal, double alpha,
                                         std::vector<double> per_layer_var = {});

}  // namespace dca
