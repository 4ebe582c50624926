#include "dca/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dca/rng.hpp"

namespace dca {

namespace {

using i64 = std::int64_t;

void fill_normal(Tensor& t, Rng& rng, double std_dev) {
    for (double& v : *t.data) v = std_dev * rng.normal();
}

// Detached [rows, cols] copy of t[b, h] for a 4-D tensor.
Tensor slice_bh(const Tensor& t, i64 b, i64 h) {
    const i64 rows = t.shape[2], cols = t.shape[3];
    Tensor out = make_tensor({rows, cols});
    const i64 off = (b * t.shape[1] + h) * rows * cols;
    std::copy(t.cdata() + off, t.cdata() + off + rows * cols, out.mdata());
    return out;
}

// [s, s + extra]: -inf above the diagonal in the first s columns; the extra
// (adapter) columns stay 0, so prefix keys are visible to every query.
Tensor causal_mask(i64 s, i64 extra) {
    Tensor m = make_tensor({s, s + extra});
    const double ninf = -std::numeric_limits<double>::infinity();
    double* p = m.mdata();
    for (i64 q = 0; q < s; ++q) {
        for (i64 k = 0; k < s; ++k) p[q * (s + extra) + k] = k > q ? ninf : 0.0;
    }
    return m;
}

void check_adapters(const ModelConfig& cfg, const AdapterParams& a) {
    const i64 c = cfg.model_dim();
    if (static_cast<i64>(a.layers.size()) != cfg.adapter_layers ||
        a.first_layer != cfg.n_layers - cfg.adapter_layers) {
        throw ConfigError("adapters: expected " + std::to_string(cfg.adapter_layers) +
                          " entries starting at layer " +
                          std::to_string(cfg.n_layers - cfg.adapter_layers));
    }
    for (const auto& l : a.layers) {
        if (l.t1.shape != std::vector<i64>{cfg.general_len, c} ||
            l.t2.shape != std::vector<i64>{cfg.adapter_len - cfg.general_len, c} ||
            l.gate.shape != std::vector<i64>{cfg.n_heads}) {
            throw ConfigError("adapters: tensor shapes do not match the model config");
        }
    }
}

struct AttnResult {
    Tensor out;  // [B, S, C]
    Tensor xg;   // [B, heads, S, head_dim] when adapted
    std::vector<AttentionTrace> traces;
};

AttnResult attention(const ModelConfig& cfg, const LayerParams& lp,
                     const AdapterLayerParams* ad, i64 layer_idx, const Tensor& x,
                     i64 b, i64 s, bool want_trace, i64 trace_batch) {
    const i64 heads = cfg.n_heads;
    const i64 d = cfg.head_dim;
    const i64 c = cfg.model_dim();
    Tensor q = rope(transpose(reshape(matmul(x, lp.wq), {b, s, heads, d}), 1, 2), cfg.rope_base);
    Tensor k = rope(transpose(reshape(matmul(x, lp.wk), {b, s, heads, d}), 1, 2), cfg.rope_base);
    Tensor v = transpose(reshape(matmul(x, lp.wv), {b, s, heads, d}), 1, 2);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    AttnResult res;
    if (!ad) {
        Tensor scores = add(scale(matmul(q, transpose(k, 2, 3)), inv_sqrt_d), causal_mask(s, 0));
        Tensor attnw = softmax(scores, -1);
        res.out = matmul(reshape(transpose(matmul(attnw, v), 1, 2), {b, s, c}), lp.wo);
        if (want_trace) {
            for (i64 h = 0; h < heads; ++h) {
                AttentionTrace tr;
                tr.layer = layer_idx;
                tr.head = h;
                tr.s_vanilla = slice_bh(attnw, trace_batch, h);
                tr.s_adap1 = make_tensor({s, 0});
                tr.s_adap2 = make_tensor({s, 0});
                res.traces.push_back(std::move(tr));
            }
        }
        return res;
    }

    const i64 hl = ad->t1.shape[0];
    const i64 m2 = ad->t2.shape[0];
    const i64 m = hl + m2;
    // Adapter prompts live in embedding space and reuse the layer's own
    // key/value projections; they carry no rotary position.
    auto project_heads = [&](const Tensor& t, const Tensor& w) {
        return expand_leading(transpose(reshape(matmul(t, w), {t.shape[0], heads, d}), 0, 1), b);
    };
    Tensor k1 = project_heads(ad->t1, lp.wk);
    Tensor k2 = project_heads(ad->t2, lp.wk);
    Tensor v1 = project_heads(ad->t1, lp.wv);
    Tensor v2 = project_heads(ad->t2, lp.wv);

    // Joint raw scores over [K_vanilla; K_adap1; K_adap2], then softmax per
    // block: the vanilla block on its own, the full M-column adapter block on
    // its own scaled by the per-head gate, and only then the H / M-H split.
    Tensor k_full = concat({k, k1, k2}, 2);
    Tensor raw = add(scale(matmul(q, transpose(k_full, 2, 3)), inv_sqrt_d), causal_mask(s, m));
    auto blocks = split(raw, 3, {s, m});
    Tensor s_van = softmax(blocks[0], -1);
    Tensor s_adp = scale_channels(softmax(blocks[1], -1), ad->gate, 1);
    auto sp = split(s_adp, 3, {hl, m2});

    Tensor xg = estimate_xg(sp[0], v1);
    Tensor ctx = add(add(matmul(s_van, v), xg), matmul(sp[1], v2));
    res.out = matmul(reshape(transpose(ctx, 1, 2), {b, s, c}), lp.wo);
    res.xg = xg;
    if (want_trace) {
        for (i64 h = 0; h < heads; ++h) {
            AttentionTrace tr;
            tr.layer = layer_idx;
            tr.head = h;
            tr.s_vanilla = slice_bh(s_van, trace_batch, h);
            tr.s_adap1 = slice_bh(sp[0], trace_batch, h);
            tr.s_adap2 = slice_bh(sp[1], trace_batch, h);
            res.traces.push_back(std::move(tr));
        }
    }
    return res;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const i64 c = cfg.model_dim();
    const i64 f = cfg.ffn_hidden;
    ModelParams p;
    p.embedding = make_tensor({cfg.vocab_size, c});
    fill_normal(p.embedding, rng, 0.02);
    p.layers.resize(cfg.n_layers);
    for (auto& l : p.layers) {
        l.wq = make_tensor({c, c});
        l.wk = make_tensor({c, c});
        l.wv = make_tensor({c, c});
        l.wo = make_tensor({c, c});
        l.w_gate = make_tensor({c, f});
        l.w_up = make_tensor({c, f});
        l.w_down = make_tensor({f, c});
        for (Tensor* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up, &l.w_down}) {
            fill_normal(*t, rng, 0.02);
        }
        l.attn_norm = full_like_value({c}, 1.0);
        l.mlp_norm = full_like_value({c}, 1.0);
    }
    p.final_norm = full_like_value({c}, 1.0);
    p.out_head = make_tensor({c, cfg.vocab_size});
    fill_normal(p.out_head, rng, 0.02);
    return p;
}

std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& p) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("model.embedding", p.embedding);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const std::string base = "model.layers." + std::to_string(i) + ".";
        const LayerParams& l = p.layers[i];
        out.emplace_back(base + "wq", l.wq);
        out.emplace_back(base + "wk", l.wk);
        out.emplace_back(base + "wv", l.wv);
        out.emplace_back(base + "wo", l.wo);
        out.emplace_back(base + "w_gate", l.w_gate);
        out.emplace_back(base + "w_up", l.w_up);
        out.emplace_back(base + "w_down", l.w_down);
        out.emplace_back(base + "attn_norm", l.attn_norm);
        out.emplace_back(base + "mlp_norm", l.mlp_norm);
    }
    out.emplace_back("model.final_norm", p.final_norm);
    out.emplace_back("model.out_head", p.out_head);
    return out;
}

std::vector<std::pair<std::string, Tensor>> named_params(const AdapterParams& a) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const std::string base = "adapter." + std::to_string(i) + ".";
        out.emplace_back(base + "t1", a.layers[i].t1);
        out.emplace_back(base + "t2", a.layers[i].t2);
        out.emplace_back(base + "gate", a.layers[i].gate);
    }
    return out;
}

void set_trainable(Tensor& t, bool trainable) {
    t.requires_grad = trainable;
    if (trainable) {
        t.ensure_grad();
    } else {
        t.grad.reset();
    }
}

void set_trainable(ModelParams& p, bool trainable) {
    set_trainable(p.embedding, trainable);
    for (LayerParams& l : p.layers) {
        for (Tensor* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up, &l.w_down,
                          &l.attn_norm, &l.mlp_norm}) {
            set_trainable(*t, trainable);
        }
    }
    set_trainable(p.final_norm, trainable);
    set_trainable(p.out_head, trainable);
}

void set_trainable(AdapterParams& a, bool trainable) {
    for (AdapterLayerParams& l : a.layers) {
        set_trainable(l.t1, trainable);
        set_trainable(l.t2, trainable);
        set_trainable(l.gate, trainable);
    }
}

ForwardResult forward(const ModelConfig& cfg, const ModelParams& params,
                      const AdapterParams* adapters, const std::vector<std::int32_t>& tokens,
                      i64 batch, i64 seq, const ForwardOptions& opts) {
    if (batch < 1 || seq < 1) throw DataError("forward: empty batch or sequence");
    if (seq > cfg.max_seq_len) {
        throw DataError("forward: sequence length " + std::to_string(seq) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (static_cast<i64>(tokens.size()) != batch * seq) {
        throw ShapeError("forward: tokens size " + std::to_string(tokens.size()) +
                         " != batch*seq " + std::to_string(batch * seq));
    }
    if (adapters) check_adapters(cfg, *adapters);

    Tensor x = embedding_lookup(params.embedding, tokens, batch, seq);
    ForwardResult out;
    for (i64 li = 0; li < cfg.n_layers; ++li) {
        const LayerParams& lp = params.layers[li];
        const AdapterLayerParams* ad =
            adapters && adapters->has_layer(li) ? &adapters->at_layer(li) : nullptr;
        AttnResult ar = attention(cfg, lp, ad, li, rms_norm(x, lp.attn_norm, cfg.rms_eps),
                                  batch, seq, opts.want_traces, opts.trace_batch);
        x = add(x, ar.out);
        Tensor xm = rms_norm(x, lp.mlp_norm, cfg.rms_eps);
        x = add(x, matmul(mul(silu(matmul(xm, lp.w_gate)), matmul(xm, lp.w_up)), lp.w_down));
        if (opts.want_xg && ad && li >= cfg.n_layers - cfg.causal_layers) {
            out.xg.push_back(ar.xg);
            out.xg_layers.push_back(li);
        }
        for (auto& tr : ar.traces) out.traces.push_back(std::move(tr));
    }
    out.logits = matmul(rms_norm(x, params.final_norm, cfg.rms_eps), params.out_head);
    return out;
}

std::vector<std::int32_t> greedy_decode(const ModelConfig& cfg, const ModelParams& params,
                                        const AdapterParams* adapters,
                                        const std::vector<std::int32_t>& prompt,
                                        i64 max_new, std::int32_t stop_token) {
    if (prompt.empty()) throw DataError("greedy_decode: empty prompt");
    std::vector<std::int32_t> ctx = prompt;
    std::vector<std::int32_t> gen;
    const i64 vocab = cfg.vocab_size;
    for (i64 i = 0; i < max_new; ++i) {
        if (static_cast<i64>(ctx.size()) > cfg.max_seq_len) break;
        ForwardResult fr = forward(cfg, params, adapters, ctx, 1, static_cast<i64>(ctx.size()));
        const double* row = fr.logits.cdata() + (ctx.size() - 1) * vocab;
        std::int32_t best = 0;
        for (i64 v2 = 1; v2 < vocab; ++v2) {
            if (row[v2] > row[best]) best = static_cast<std::int32_t>(v2);
        }
        if (best == stop_token) break;
        gen.push_back(best);
        ctx.push_back(best);
    }
    return gen;
}

}  // namespace dca
