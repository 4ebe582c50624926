#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "dca/loss.hpp"
#include "dca/model.hpp"
#include "doctest.h"
#include "reference_model.hpp"
#include "testutil.hpp"

using namespace dca;
using i64 = std::int64_t;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 3;
    cfg.n_heads = 2;
    cfg.head_dim = 8;
    cfg.vocab_size = 12;
    cfg.max_seq_len = 16;
    cfg.adapter_layers = 2;
    cfg.adapter_len = 5;
    cfg.general_len = 2;
    cfg.causal_layers = 2;
    cfg.ffn_hidden = 24;
    return cfg;
}

std::vector<std::int32_t> random_tokens(i64 n, i64 vocab, Rng& rng) {
    std::vector<std::int32_t> t(n);
    for (auto& v : t) v = static_cast<std::int32_t>(rng.uniform_int(0, vocab - 1));
    return t;
}

void randomize_gates(AdapterParams& a, Rng& rng, double scale) {
    for (auto& l : a.layers) {
        for (double& g : *l.gate.data) g = scale * rng.uniform();
    }
}

}  // namespace

TEST_CASE("init_adapters: zero gates, seed determinism") {
    const ModelConfig cfg = tiny_config();
    const AdapterParams a = init_adapters(cfg, 5);
    REQUIRE(a.layers.size() == 2);
    CHECK(a.first_layer == 1);
    for (const auto& l : a.layers) {
        for (double g : *l.gate.data) CHECK(g == 0.0);
        CHECK(l.t1.shape == std::vector<i64>{2, 16});
        CHECK(l.t2.shape == std::vector<i64>{3, 16});
    }
    const AdapterParams b = init_adapters(cfg, 5);
    const AdapterParams c = init_adapters(cfg, 6);
    CHECK(testutil::bitwise_equal(a.layers[0].t1, b.layers[0].t1));
    CHECK(testutil::bitwise_equal(a.layers[1].t2, b.layers[1].t2));
    CHECK_FALSE(testutil::bitwise_equal(a.layers[0].t1, c.layers[0].t1));
    for (double g : *c.layers[0].gate.data) CHECK(g == 0.0);
}

TEST_CASE("zero-gate no-op: augmented forward equals plain forward bit-exactly") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 10);
    Rng rng(50);
    for (int trial = 0; trial < 5; ++trial) {
        AdapterParams adapters = init_adapters(cfg, 100 + trial);
        // Arbitrary prompt values; only the gates must be zero.
        for (auto& l : adapters.layers) {
            for (double& v : *l.t1.data) v = rng.normal();
            for (double& v : *l.t2.data) v = rng.normal();
        }
        const i64 b = 2, s = 6;
        const auto tokens = random_tokens(b * s, cfg.vocab_size, rng);
        const auto with = forward(cfg, params, &adapters, tokens, b, s);
        const auto without = forward(cfg, params, nullptr, tokens, b, s);
        CHECK(testutil::bitwise_equal(with.logits, without.logits));
    }
}

TEST_CASE("trace row sums: vanilla to 1, adapter block to the head gate") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 11);
    AdapterParams adapters = init_adapters(cfg, 12);
    Rng rng(51);
    randomize_gates(adapters, rng, 0.8);

    ForwardOptions fo;
    fo.want_traces = true;
    const i64 s = 7;
    const auto tokens = random_tokens(s, cfg.vocab_size, rng);
    const auto fr = forward(cfg, params, &adapters, tokens, 1, s, fo);
    for (const auto& tr : fr.traces) {
        for (i64 q = 0; q < s; ++q) {
            double van = 0.0;
            for (i64 k = 0; k < tr.s_vanilla.shape[1]; ++k) van += tr.s_vanilla.at({q, k});
            CHECK(std::abs(van - 1.0) < 1e-9);
            if (tr.s_adap1.numel() == 0) continue;
            double adap = 0.0;
            for (i64 k = 0; k < tr.s_adap1.shape[1]; ++k) adap += tr.s_adap1.at({q, k});
            for (i64 k = 0; k < tr.s_adap2.shape[1]; ++k) adap += tr.s_adap2.at({q, k});
            const double g = adapters.at_layer(tr.layer).gate.at({tr.head});
            CHECK(std::abs(adap - g) < 1e-9);
        }
    }
}

TEST_CASE("augmented attention matches the literal-loop reference") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 13);
    AdapterParams adapters = init_adapters(cfg, 14);
    Rng rng(52);
    randomize_gates(adapters, rng, 1.0);

    const i64 b = 2, s = 6;
    const auto tokens = random_tokens(b * s, cfg.vocab_size, rng);
    ForwardOptions fo;
    fo.want_traces = true;
    fo.want_xg = true;
    const auto fr = forward(cfg, params, &adapters, tokens, b, s, fo);
    const auto ref = refmodel::ref_forward(cfg, params, &adapters, tokens, b, s);

    double worst = 0.0;
    for (i64 i = 0; i < fr.logits.numel(); ++i) {
        worst = std::max(worst, std::abs(fr.logits.cdata()[i] - ref.logits[i]));
    }
    CHECK(worst < 1e-10);

    // Partitioned score blocks per layer and head (batch element 0).
    for (const auto& tr : fr.traces) {
        const auto& rh = ref.scores.at(tr.layer)[tr.head];
        double w = 0.0;
        for (i64 i = 0; i < tr.s_vanilla.numel(); ++i) {
            w = std::max(w, std::abs(tr.s_vanilla.cdata()[i] - rh.s_van[i]));
        }
        for (i64 i = 0; i < tr.s_adap1.numel(); ++i) {
            w = std::max(w, std::abs(tr.s_adap1.cdata()[i] - rh.s1[i]));
        }
        for (i64 i = 0; i < tr.s_adap2.numel(); ++i) {
            w = std::max(w, std::abs(tr.s_adap2.cdata()[i] - rh.s2[i]));
        }
        CHECK(w < 1e-10);
    }

    // X_G per causal layer.
    REQUIRE(fr.xg.size() == ref.xg.size());
    for (std::size_t li = 0; li < fr.xg.size(); ++li) {
        CHECK(fr.xg_layers[li] == ref.xg_layers[li]);
        double w = 0.0;
        for (i64 i = 0; i < fr.xg[li].numel(); ++i) {
            w = std::max(w, std::abs(fr.xg[li].cdata()[i] - ref.xg[li][i]));
        }
        CHECK(w < 1e-10);
    }
}

TEST_CASE("estimate_xg: zeros, identity, loop oracle") {
    Tensor z = from_values({1, 1, 2, 3}, std::vector<double>(6, 0.0));
    Tensor v = from_values({1, 1, 3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor xg = estimate_xg(z, v);
    for (i64 i = 0; i < xg.numel(); ++i) CHECK(xg.cdata()[i] == 0.0);

    // H=1 with weight 1 selects the single adapter value row.
    Tensor one = from_values({1, 1, 1, 1}, {1.0});
    Tensor row = from_values({1, 1, 1, 4}, {9, 8, 7, 6});
    CHECK(testutil::bitwise_equal(estimate_xg(one, row), row));

    Rng rng(53);
    Tensor s = testutil::random_tensor({2, 3, 4, 2}, rng);
    Tensor vals = testutil::random_tensor({2, 3, 2, 5}, rng);
    Tensor out = estimate_xg(s, vals);
    for (i64 b = 0; b < 2; ++b) {
        for (i64 h = 0; h < 3; ++h) {
            for (i64 q = 0; q < 4; ++q) {
                for (i64 d = 0; d < 5; ++d) {
                    double acc = 0.0;
                    for (i64 j = 0; j < 2; ++j) {
                        acc += s.at({b, h, q, j}) * vals.at({b, h, j, d});
                    }
                    CHECK(std::abs(out.at({b, h, q, d}) - acc) < 1e-12);
                }
            }
        }
    }

    CHECK_THROWS_AS(estimate_xg(from_values({1, 1, 2, 3}, std::vector<double>(6, 0.0)),
                                from_values({1, 1, 2, 3}, std::vector<double>(6, 0.0))),
                    ShapeError);
}

TEST_CASE("blockwise softmax pipeline: split concatenates back exactly") {
    Rng rng(54);
    const i64 b = 2, h = 3, q = 4, s = 5, hl = 2, m2 = 3;
    Tensor raw = testutil::random_tensor({b, h, q, s + hl + m2}, rng, 1.3);
    Tensor gates = testutil::random_tensor({h}, rng, 0.5);

    auto blocks = split(raw, 3, {s, hl + m2});
    Tensor s_van = softmax(blocks[0], -1);
    Tensor s_adp = scale_channels(softmax(blocks[1], -1), gates, 1);
    auto pieces = split(s_adp, 3, {hl, m2});
    Tensor joint = concat({s_van, s_adp}, 3);
    Tensor rejoined = concat({s_van, pieces[0], pieces[1]}, 3);
    CHECK(testutil::bitwise_equal(rejoined, joint));
}

TEST_CASE("gradients reach T1 and gates; frozen weights get none") {
    const ModelConfig cfg = tiny_config();
    ModelParams params = init_params(cfg, 15);
    AdapterParams adapters = init_adapters(cfg, 16);
    Rng rng(55);
    randomize_gates(adapters, rng, 0.5);
    set_trainable(adapters, true);

    const i64 b = 3, s = 6;
    const auto tokens = random_tokens(b * s, cfg.vocab_size, rng);
    Tape tape;
    Tensor causal;
    {
        TapeScope scope(tape);
        ForwardOptions fo;
        fo.want_xg = true;
        const auto fr = forward(cfg, params, &adapters, tokens, b, s, fo);
        causal = causal_loss(fr.xg, std::vector<i64>(b, s));
    }
    REQUIRE(causal.item() > 0.0);
    tape.backward(causal);

    double t1_norm = 0.0, gate_norm = 0.0;
    for (const auto& l : adapters.layers) {
        for (double g : *l.t1.grad) t1_norm += g * g;
        for (double g : *l.gate.grad) gate_norm += g * g;
    }
    CHECK(t1_norm > 0.0);
    CHECK(gate_norm > 0.0);
    // Frozen base parameters never own grad buffers.
    for (const auto& [name, t] : named_params(params)) CHECK(t.grad == nullptr);
}

TEST_CASE("adapter shape mismatches are rejected as config errors") {
    const ModelConfig cfg = tiny_config();
    const ModelParams params = init_params(cfg, 17);
    AdapterParams bad = init_adapters(cfg, 18);
    bad.layers.pop_back();
    CHECK_THROWS_AS(forward(cfg, params, &bad, {1, 2}, 1, 2), ConfigError);
}
