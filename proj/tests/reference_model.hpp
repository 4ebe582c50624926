#pragma once

// Literal-loop reference transformer used as the independent oracle for the
// fused implementation: plain double buffers, O(seq^2) attention, explicit
// blockwise softmax over [K_vanilla; K_adap1; K_adap2], explicit X_G sums.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "dca/model.hpp"

namespace refmodel {

using i64 = std::int64_t;

struct HeadScores {
    std::vector<double> s_van;  // [q][S]
    std::vector<double> s1;     // [q][H]
    std::vector<double> s2;     // [q][M-H]
};

struct RefResult {
    std::vector<double> logits;                  // [B][S][V]
    std::map<i64, std::vector<HeadScores>> scores;  // layer -> per head, batch 0
    std::vector<std::vector<double>> xg;         // per causal layer, [B][H][S][D]
    std::vector<i64> xg_layers;
};

inline void ref_rms_norm(const double* x, const double* w, double* y, i64 c, double eps) {
    double ss = 0.0;
    for (i64 i = 0; i < c; ++i) ss += x[i] * x[i];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
    for (i64 i = 0; i < c; ++i) y[i] = x[i] * inv * w[i];
}

inline void ref_matvec(const double* x, const double* w, double* y, i64 in, i64 out) {
    for (i64 o = 0; o < out; ++o) {
        double s = 0.0;
        for (i64 i = 0; i < in; ++i) s += x[i] * w[i * out + o];
        y[o] = s;
    }
}

inline void ref_rope(double* vec, i64 d, i64 pos, double base) {
    for (i64 i = 0; i < d / 2; ++i) {
        const double theta =
            static_cast<double>(pos) *
            std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
        const double c = std::cos(theta), s = std::sin(theta);
        const double a = vec[2 * i], b = vec[2 * i + 1];
        vec[2 * i] = a * c - b * s;
        vec[2 * i + 1] = a * s + b * c;
    }
}

inline void ref_softmax(double* row, i64 n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (i64 i = 0; i < n; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (i64 i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    for (i64 i = 0; i < n; ++i) row[i] /= sum;
}

inline double ref_silu(double v) { return v / (1.0 + std::exp(-v)); }

inline RefResult ref_forward(const dca::ModelConfig& cfg, const dca::ModelParams& params,
                             const dca::AdapterParams* adapters,
                             const std::vector<std::int32_t>& tokens, i64 B, i64 S) {
    const i64 C = cfg.model_dim();
    const i64 H = cfg.n_heads;
    const i64 D = cfg.head_dim;
    const i64 F = cfg.ffn_hidden;
    const i64 V = cfg.vocab_size;

    RefResult res;
    std::vector<double> x(B * S * C);
    for (i64 r = 0; r < B * S; ++r) {
        const double* row = params.embedding.cdata() + tokens[r] * C;
        std::copy(row, row + C, x.begin() + r * C);
    }

    for (i64 li = 0; li < cfg.n_layers; ++li) {
        const dca::LayerParams& lp = params.layers[li];
        const dca::AdapterLayerParams* ad =
            adapters && adapters->has_layer(li) ? &adapters->at_layer(li) : nullptr;
        const i64 hl = ad ? ad->t1.shape[0] : 0;
        const i64 m2 = ad ? ad->t2.shape[0] : 0;

        // Adapter keys/values per head (position-free, layer projections).
        std::vector<double> k1(hl * C), v1(hl * C), k2(m2 * C), v2(m2 * C);
        if (ad) {
            for (i64 j = 0; j < hl; ++j) {
                ref_matvec(ad->t1.cdata() + j * C, lp.wk.cdata(), k1.data() + j * C, C, C);
                ref_matvec(ad->t1.cdata() + j * C, lp.wv.cdata(), v1.data() + j * C, C, C);
            }
            for (i64 j = 0; j < m2; ++j) {
                ref_matvec(ad->t2.cdata() + j * C, lp.wk.cdata(), k2.data() + j * C, C, C);
                ref_matvec(ad->t2.cdata() + j * C, lp.wv.cdata(), v2.data() + j * C, C, C);
            }
        }

        const bool collect_xg = ad && li >= cfg.n_layers - cfg.causal_layers;
        std::vector<double> xg(collect_xg ? B * H * S * D : 0, 0.0);
        res.scores.emplace(li, std::vector<HeadScores>(H));

        std::vector<double> attn_out(B * S * C, 0.0);
        std::vector<double> xn(C), q(B * S * C), k(B * S * C), v(B * S * C);
        for (i64 b = 0; b < B; ++b) {
            for (i64 s = 0; s < S; ++s) {
                const i64 r = b * S + s;
                ref_rms_norm(x.data() + r * C, lp.attn_norm.cdata(), xn.data(), C, cfg.rms_eps);
                ref_matvec(xn.data(), lp.wq.cdata(), q.data() + r * C, C, C);
                ref_matvec(xn.data(), lp.wk.cdata(), k.data() + r * C, C, C);
                ref_matvec(xn.data(), lp.wv.cdata(), v.data() + r * C, C, C);
                for (i64 h = 0; h < H; ++h) {
                    ref_rope(q.data() + r * C + h * D, D, s, cfg.rope_base);
                    ref_rope(k.data() + r * C + h * D, D, s, cfg.rope_base);
                }
            }
        }
        for (i64 b = 0; b < B; ++b) {
            for (i64 h = 0; h < H; ++h) {
                HeadScores& hs = res.scores[li][h];
                if (b == 0) {
                    hs.s_van.assign(S * S, 0.0);
                    hs.s1.assign(S * hl, 0.0);
                    hs.s2.assign(S * m2, 0.0);
                }
                for (i64 qs = 0; qs < S; ++qs) {
                    const double* qv = q.data() + (b * S + qs) * C + h * D;
                    std::vector<double> van(S), a1(hl), a2(m2);
                    for (i64 ks = 0; ks < S; ++ks) {
                        if (ks > qs) {
                            van[ks] = -std::numeric_limits<double>::infinity();
                            continue;
                        }
                        const double* kv = k.data() + (b * S + ks) * C + h * D;
                        double s = 0.0;
                        for (i64 dd = 0; dd < D; ++dd) s += qv[dd] * kv[dd];
                        van[ks] = s / std::sqrt(static_cast<double>(D));
                    }
                    ref_softmax(van.data(), S);
                    if (ad) {
                        std::vector<double> adap(hl + m2);
                        for (i64 j = 0; j < hl; ++j) {
                            const double* kv = k1.data() + j * C + h * D;
                            double s = 0.0;
                            for (i64 dd = 0; dd < D; ++dd) s += qv[dd] * kv[dd];
                            adap[j] = s / std::sqrt(static_cast<double>(D));
                        }
                        for (i64 j = 0; j < m2; ++j) {
                            const double* kv = k2.data() + j * C + h * D;
                            double s = 0.0;
                            for (i64 dd = 0; dd < D; ++dd) s += qv[dd] * kv[dd];
                            adap[hl + j] = s / std::sqrt(static_cast<double>(D));
                        }
                        ref_softmax(adap.data(), hl + m2);
                        const double g = ad->gate.cdata()[h];
                        for (double& sv : adap) sv *= g;
                        std::copy(adap.begin(), adap.begin() + hl, a1.begin());
                        std::copy(adap.begin() + hl, adap.end(), a2.begin());
                    }
                    if (b == 0) {
                        std::copy(van.begin(), van.end(), hs.s_van.begin() + qs * S);
                        std::copy(a1.begin(), a1.end(), hs.s1.begin() + qs * hl);
                        std::copy(a2.begin(), a2.end(), hs.s2.begin() + qs * m2);
                    }
                    double* out = attn_out.data() + (b * S + qs) * C + h * D;
                    for (i64 dd = 0; dd < D; ++dd) {
                        double acc = 0.0;
                        for (i64 ks = 0; ks <= qs; ++ks) {
                            acc += van[ks] * v[(b * S + ks) * C + h * D + dd];
                        }
                        double xg_acc = 0.0;
                        for (i64 j = 0; j < hl; ++j) xg_acc += a1[j] * v1[j * C + h * D + dd];
                        for (i64 j = 0; j < m2; ++j) acc += a2[j] * v2[j * C + h * D + dd];
                        out[dd] = acc + xg_acc;
                        if (collect_xg) {
                            xg[((b * H + h) * S + qs) * D + dd] = xg_acc;
                        }
                    }
                }
            }
        }
        // Output projection + residual, then the gated MLP block.
        std::vector<double> proj(C);
        for (i64 r = 0; r < B * S; ++r) {
            ref_matvec(attn_out.data() + r * C, lp.wo.cdata(), proj.data(), C, C);
            for (i64 i = 0; i < C; ++i) x[r * C + i] += proj[i];
        }
        std::vector<double> gate(F), up(F), down(C);
        for (i64 r = 0; r < B * S; ++r) {
            ref_rms_norm(x.data() + r * C, lp.mlp_norm.cdata(), xn.data(), C, cfg.rms_eps);
            ref_matvec(xn.data(), lp.w_gate.cdata(), gate.data(), C, F);
            ref_matvec(xn.data(), lp.w_up.cdata(), up.data(), C, F);
            for (i64 i = 0; i < F; ++i) gate[i] = ref_silu(gate[i]) * up[i];
            ref_matvec(gate.data(), lp.w_down.cdata(), down.data(), F, C);
            for (i64 i = 0; i < C; ++i) x[r * C + i] += down[i];
        }
        if (collect_xg) {
            res.xg.push_back(std::move(xg));
            res.xg_layers.push_back(li);
        }
    }

    res.logits.assign(B * S * V, 0.0);
    std::vector<double> xn(C);
    for (i64 r = 0; r < B * S; ++r) {
        ref_rms_norm(x.data() + r * C, params.final_norm.cdata(), xn.data(), C, cfg.rms_eps);
        ref_matvec(xn.data(), params.out_head.cdata(), res.logits.data() + r * V, C, V);
    }
    return res;
}

}  // namespace refmodel
