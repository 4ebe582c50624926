#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dca/rng.hpp"
#include "dca/tensor.hpp"

namespace testutil {

inline dca::Tensor random_tensor(std::vector<std::int64_t> shape, dca::Rng& rng,
                                 double scale = 1.0, bool requires_grad = false) {
    dca::Tensor t = dca::make_tensor(std::move(shape), requires_grad);
    for (double& v : *t.data) v = scale * rng.normal();
    return t;
}

inline bool bitwise_equal(const dca::Tensor& a, const dca::Tensor& b) {
    if (a.shape != b.shape) return false;
    const auto n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        if (a.cdata()[i] != b.cdata()[i]) return false;
    }
    return true;
}

inline double max_abs_diff(const dca::Tensor& a, const dca::Tensor& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a.cdata()[i] - b.cdata()[i]));
    }
    return m;
}

// Central finite differences against the analytic gradients of `params`.
// loss_fn must rebuild the forward pass from the params' current values.
// Returns the worst scaled error max|fd-g| / max(|fd|,|g|,1e-6).
inline double gradcheck(std::vector<dca::Tensor> params,
                        const std::function<dca::Tensor()>& loss_fn, double h = 1e-5,
                        std::int64_t max_coords_per_param = 0) {
    for (dca::Tensor& p : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        dca::Tape tape;
        dca::TapeScope scope(tape);
        dca::Tensor loss = loss_fn();
        tape.backward(loss);
    }
    for (dca::Tensor& p : params) analytic.push_back(*p.grad);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        dca::Tensor& p = params[pi];
        const std::int64_t n = p.numel();
        const std::int64_t stride =
            max_coords_per_param > 0 && n > max_coords_per_param
                ? n / max_coords_per_param
                : 1;
        for (std::int64_t j = 0; j < n; j += stride) {
            double* x = p.mdata() + j;
            const double orig = *x;
            *x = orig + h;
            const double f1 = loss_fn().item();
            *x = orig - h;
            const double f0 = loss_fn().item();
            *x = orig;
            const double fd = (f1 - f0) / (2.0 * h);
            const double g = analytic[pi][j];
            const double err = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-6});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace testutil
