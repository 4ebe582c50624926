#include "dca/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "dca/rng.hpp"

namespace dca {

namespace {

using i64 = std::int64_t;

constexpr double kPi = 3.14159265358979323846;

double scheduled_lr(const TrainConfig& tc, i64 step, i64 total_steps) {
    if (tc.schedule == TrainConfig::Schedule::cosine && total_steps > 0) {
        return tc.lr * 0.5 *
               (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
    }
    return tc.lr;
}

}  // namespace

void adamw_step(std::vector<Tensor>& params, const std::vector<std::string>& names,
                const std::vector<std::uint8_t>& decay_mask, AdamState& state,
                const TrainConfig& cfg, double lr) {
    if (params.size() != names.size() || params.size() != decay_mask.size()) {
        throw ShapeError("adamw_step: params/names/decay_mask size mismatch");
    }
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adamw_step: optimizer state does not match parameter set");
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.grad) throw ShapeError("adamw_step: parameter '" + names[i] + "' has no grad");
        const i64 n = p.numel();
        if (static_cast<i64>(state.m[i].size()) != n) {
            throw ShapeError("adamw_step: state shape mismatch for '" + names[i] + "'");
        }
        double* theta = p.mdata();
        const double* g = p.gdata();
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        const double decay = decay_mask[i] ? 1.0 - lr * cfg.weight_decay : 1.0;
        for (i64 j = 0; j < n; ++j) {
            if (!std::isfinite(g[j])) {
                throw NumericError("adamw_step: non-finite gradient in parameter '" + names[i] +
                                   "' at element " + std::to_string(j));
            }
            theta[j] *= decay;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            theta[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
        }
    }
}

i64 planned_steps(const TrainConfig& cfg, i64 n_examples) {
    const i64 spe = (n_examples + cfg.batch_size - 1) / cfg.batch_size;
    i64 total = cfg.epochs * spe;
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
    return total;
}

std::vector<i64> batch_indices(std::uint64_t seed, i64 step, i64 n_examples, i64 batch_size) {
    const i64 spe = (n_examples + batch_size - 1) / batch_size;
    const i64 epoch = step / spe;
    const i64 pos = step % spe;
    Rng rng(seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1));
    std::vector<i64> perm(n_examples);
    std::iota(perm.begin(), perm.end(), 0);
    for (i64 i = n_examples - 1; i > 0; --i) {
        std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    }
    const i64 lo = pos * batch_size;
    const i64 hi = std::min(n_examples, lo + batch_size);
    return {perm.begin() + lo, perm.begin() + hi};
}

std::vector<StepRecord> train(const ModelConfig& mc, ModelParams& model,
                              AdapterParams& adapters, const std::vector<tasks::Example>& data,
                              const tasks::Tokenizer& tok, const TrainConfig& tc,
                              TrainState& state,
                              const std::function<void(const StepRecord&)>& on_step) {
    mc.validate();
    tc.validate();
    if (data.empty()) throw DataError("train: empty dataset");
    const bool adapter_mode = tc.trainable == TrainConfig::Trainable::adapters;

    set_trainable(model, !adapter_mode);
    std::vector<std::string> names;
    std::vector<Tensor> trainables;
    std::vector<std::uint8_t> decay_mask;
    if (adapter_mode) {
        set_trainable(adapters, true);
        for (auto& [name, t] : named_params(adapters)) {
            names.push_back(name);
            trainables.push_back(t);
            // Decay the prompts, never the gates.
            decay_mask.push_back(name.find(".gate") == std::string::npos ? 1 : 0);
        }
    } else {
        for (auto& [name, t] : named_params(model)) {
            names.push_back(name);
            trainables.push_back(t);
            decay_mask.push_back(t.ndim() >= 2 ? 1 : 0);  // no decay on norm vectors
        }
    }

    const i64 n = static_cast<i64>(data.size());
    const i64 total_steps = planned_steps(tc, n);
    std::vector<StepRecord> records;
    records.reserve(total_steps - state.next_step);

    for (i64 step = state.next_step; step < total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<tasks::Example> batch_ex;
        for (i64 idx : batch_indices(tc.seed, step, n, tc.batch_size)) {
            batch_ex.push_back(data[idx]);
        }
        const tasks::Batch enc = encode_batch(tok, batch_ex, mc.max_seq_len);

        Tape tape;
        TapeScope scope(tape);
        ForwardOptions fo;
        fo.want_xg = adapter_mode;
        ForwardResult fr = forward(mc, model, adapter_mode ? &adapters : nullptr, enc.tokens,
                                   enc.batch, enc.seq, fo);
        LossReport report;
        Tensor total;
        if (adapter_mode) {
            const auto [targets, mask] = tasks::answer_ce_views(enc);
            Tensor ce = cross_entropy(fr.logits, targets, mask);
            std::vector<double> plv;
            Tensor causal = causal_loss(fr.xg, enc.lengths, &plv);
            std::tie(total, report) = total_loss(ce, causal, tc.alpha, std::move(plv));
        } else {
            const auto [targets, mask] = tasks::lm_ce_views(enc);
            total = cross_entropy(fr.logits, targets, mask);
            report.ce = total.item();
            report.total = report.ce;
        }
        if (!std::isfinite(report.total)) {
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        }
        tape.backward(total);

        double sq = 0.0;
        for (Tensor& p : trainables) {
            const double* g = p.gdata();
            for (i64 j = 0; j < p.numel(); ++j) sq += g[j] * g[j];
        }
        const double grad_norm = std::sqrt(sq);
        if (tc.grad_clip > 0.0 && grad_norm > tc.grad_clip) {
            const double f = tc.grad_clip / grad_norm;
            for (Tensor& p : trainables) {
                double* g = p.gdata();
                for (i64 j = 0; j < p.numel(); ++j) g[j] *= f;
            }
        }
        adamw_step(trainables, names, decay_mask, state.adam, tc,
                   scheduled_lr(tc, step, total_steps));
        zero_grad(trainables);

        StepRecord rec;
        rec.step = step;
        rec.loss = std::move(report);
        rec.grad_norm = grad_norm;
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        if (on_step) on_step(rec);
        records.push_back(std::move(rec));
    }
    state.next_step = total_steps;

    set_trainable(model, false);
    set_trainable(adapters, false);
    return records;
}

i64 trainable_param_count(const ModelConfig& cfg) {
    return cfg.adapter_layers * (cfg.adapter_len * cfg.model_dim() + cfg.n_heads);
}

}  // namespace dca
