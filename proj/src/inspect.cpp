#include "dca/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dca/checkpoint.hpp"
#include "dca/loss.hpp"
#include "dca/train.hpp"

namespace dca {

namespace {

using i64 = std::int64_t;
using json = nlohmann::json;

json matrix_json(const Tensor& t) {
    json rows = json::array();
    const i64 r = t.shape[0], c = t.shape[1];
    for (i64 i = 0; i < r; ++i) {
        json row = json::array();
        for (i64 j = 0; j < c; ++j) row.push_back(t.cdata()[i * c + j]);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::string> token_labels(const tasks::Tokenizer& tok,
                                      const std::vector<std::int32_t>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (std::int32_t id : ids) {
        if (id == tok.pad_id()) {
            out.push_back("<pad>");
        } else if (id == tok.bos_id()) {
            out.push_back("<bos>");
        } else if (id == tok.eos_id()) {
            out.push_back("<eos>");
        } else if (id == tok.sep_id()) {
            out.push_back("<sep>");
        } else {
            out.push_back(tok.decode({id}));
        }
    }
    return out;
}

}  // namespace

json EvalReport::to_json() const {
    json by = json::object();
    for (const auto& [name, stats] : by_task) {
        by[name] = {{"correct", stats.correct},
                    {"total", stats.total},
                    {"accuracy", stats.accuracy()}};
    }
    return json{{"by_task", by},
                {"correct", correct},
                {"total", total},
                {"accuracy", accuracy()}};
}

std::vector<std::string> predict_answers(const ModelConfig& cfg, const ModelParams& params,
                                         const AdapterParams* adapters,
                                         const std::vector<tasks::Example>& examples,
                                         const tasks::Tokenizer& tok, i64 max_new,
                                         i64 eval_batch) {
    std::vector<std::string> out(examples.size());
    for (std::size_t lo = 0; lo < examples.size(); lo += eval_batch) {
        const std::size_t hi = std::min(examples.size(), lo + eval_batch);
        const i64 b = static_cast<i64>(hi - lo);
        std::vector<std::vector<std::int32_t>> ctx(b);
        std::vector<std::vector<std::int32_t>> gen(b);
        std::vector<bool> done(b, false);
        for (i64 r = 0; r < b; ++r) {
            ctx[r].push_back(tok.bos_id());
            const auto p = tok.encode(examples[lo + r].prompt);
            ctx[r].insert(ctx[r].end(), p.begin(), p.end());
            ctx[r].push_back(tok.sep_id());
        }
        for (i64 step = 0; step < max_new; ++step) {
            i64 seq = 0;
            bool any = false;
            for (i64 r = 0; r < b; ++r) {
                if (!done[r] && static_cast<i64>(ctx[r].size()) >= cfg.max_seq_len) done[r] = true;
                if (!done[r]) any = true;
                seq = std::max(seq, static_cast<i64>(ctx[r].size()));
            }
            if (!any) break;
            std::vector<std::int32_t> tokens(b * seq, tok.pad_id());
            for (i64 r = 0; r < b; ++r) {
                std::copy(ctx[r].begin(), ctx[r].end(), tokens.begin() + r * seq);
            }
            ForwardResult fr = forward(cfg, params, adapters, tokens, b, seq);
            for (i64 r = 0; r < b; ++r) {
                if (done[r]) continue;
                const double* row =
                    fr.logits.cdata() + (r * seq + static_cast<i64>(ctx[r].size()) - 1) *
                                            cfg.vocab_size;
                std::int32_t best = 0;
                for (i64 v = 1; v < cfg.vocab_size; ++v) {
                    if (row[v] > row[best]) best = static_cast<std::int32_t>(v);
                }
                if (best == tok.eos_id()) {
                    done[r] = true;
                } else {
                    gen[r].push_back(best);
                    ctx[r].push_back(best);
                }
            }
        }
        for (i64 r = 0; r < b; ++r) out[lo + r] = tok.decode(gen[r]);
    }
    return out;
}

EvalReport score_predictions(const std::vector<tasks::Example>& examples,
                             const std::vector<std::string>& predictions) {
    if (examples.size() != predictions.size()) {
        throw ShapeError("score_predictions: one prediction per example required");
    }
    EvalReport rep;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        TaskStats& st = rep.by_task[tasks::task_name(examples[i].task)];
        st.total += 1;
        rep.total += 1;
        if (predictions[i] == examples[i].answer) {
            st.correct += 1;
            rep.correct += 1;
        }
    }
    return rep;
}

EvalReport evaluate(const ModelConfig& cfg, const ModelParams& params,
                    const AdapterParams* adapters, const std::vector<tasks::Example>& examples,
                    const tasks::Tokenizer& tok, i64 max_new) {
    if (examples.empty()) throw DataError("evaluate: empty dataset");
    return score_predictions(examples,
                             predict_answers(cfg, params, adapters, examples, tok, max_new));
}

json export_attention(const ModelConfig& cfg, const ModelParams& params,
                      const AdapterParams* adapters, const std::string& prompt,
                      const tasks::Tokenizer& tok) {
    std::vector<std::int32_t> ids;
    ids.push_back(tok.bos_id());
    const auto p = tok.encode(prompt);
    ids.insert(ids.end(), p.begin(), p.end());
    ids.push_back(tok.sep_id());

    ForwardOptions fo;
    fo.want_traces = true;
    fo.want_xg = adapters != nullptr;
    ForwardResult fr = forward(cfg, params, adapters, ids, 1, static_cast<i64>(ids.size()), fo);

    json doc;
    doc["prompt"] = prompt;
    doc["tokens"] = token_labels(tok, ids);
    json adap_labels = json::array();
    for (i64 i = 0; i < cfg.adapter_len; ++i) adap_labels.push_back("adap_" + std::to_string(i));
    doc["adapter_labels"] = adap_labels;

    json layers = json::array();
    for (i64 li = 0; li < cfg.n_layers; ++li) {
        json layer;
        layer["layer"] = li;
        const bool adapted = adapters && adapters->has_layer(li);
        layer["adapted"] = adapted;
        if (adapted) {
            const Tensor& g = adapters->at_layer(li).gate;
            layer["gates"] = std::vector<double>(g.cdata(), g.cdata() + g.numel());
        }
        json heads = json::array();
        for (const AttentionTrace& tr : fr.traces) {
            if (tr.layer != li) continue;
            json h;
            h["head"] = tr.head;
            h["s_vanilla"] = matrix_json(tr.s_vanilla);
            h["s_adap1"] = matrix_json(tr.s_adap1);
            h["s_adap2"] = matrix_json(tr.s_adap2);
            heads.push_back(std::move(h));
        }
        layer["heads"] = std::move(heads);
        layers.push_back(std::move(layer));
    }
    for (std::size_t xi = 0; xi < fr.xg.size(); ++xi) {
        const Tensor& xg = fr.xg[xi];  // [1, heads, q, d]
        const i64 heads = xg.shape[1], q = xg.shape[2], d = xg.shape[3];
        json per_head = json::array();
        for (i64 h = 0; h < heads; ++h) {
            json rows = json::array();
            for (i64 r = 0; r < q; ++r) {
                json row = json::array();
                for (i64 j = 0; j < d; ++j) row.push_back(xg.cdata()[(h * q + r) * d + j]);
                rows.push_back(std::move(row));
            }
            per_head.push_back(std::move(rows));
        }
        layers[fr.xg_layers[xi]]["xg"] = std::move(per_head);
    }
    doc["layers"] = std::move(layers);
    return doc;
}

double adap1_divergence(const json& trace_a, const json& trace_b) {
    double sum = 0.0;
    i64 rows = 0;
    const auto& la = trace_a.at("layers");
    const auto& lb = trace_b.at("layers");
    const std::size_t n_layers = std::min(la.size(), lb.size());
    for (std::size_t li = 0; li < n_layers; ++li) {
        if (!la[li].value("adapted", false) || !lb[li].value("adapted", false)) continue;
        const auto& ha = la[li].at("heads");
        const auto& hb = lb[li].at("heads");
        for (std::size_t h = 0; h < std::min(ha.size(), hb.size()); ++h) {
            const auto& sa = ha[h].at("s_adap1");
            const auto& sb = hb[h].at("s_adap1");
            const std::size_t r = std::min(sa.size(), sb.size());
            for (std::size_t i = 0; i < r; ++i) {
                double sq = 0.0;
                const std::size_t cols = std::min(sa[i].size(), sb[i].size());
                for (std::size_t j = 0; j < cols; ++j) {
                    const double d = sa[i][j].get<double>() - sb[i][j].get<double>();
                    sq += d * d;
                }
                sum += std::sqrt(sq);
                ++rows;
            }
        }
    }
    return rows ? sum / static_cast<double>(rows) : 0.0;
}

double measure_xg_variance(const ModelConfig& cfg, const ModelParams& params,
                           const AdapterParams& adapters,
                           const std::vector<tasks::Example>& examples,
                           const tasks::Tokenizer& tok, i64 batch_size) {
    if (examples.empty()) throw DataError("measure_xg_variance: empty dataset");
    double sum = 0.0;
    i64 batches = 0;
    for (std::size_t lo = 0; lo < examples.size(); lo += batch_size) {
        const std::size_t hi = std::min(examples.size(), lo + batch_size);
        std::vector<tasks::Example> chunk(examples.begin() + lo, examples.begin() + hi);
        const tasks::Batch enc = encode_batch(tok, chunk, cfg.max_seq_len);
        ForwardOptions fo;
        fo.want_xg = true;
        ForwardResult fr = forward(cfg, params, &adapters, enc.tokens, enc.batch, enc.seq, fo);
        sum += causal_loss(fr.xg, enc.lengths).item();
        ++batches;
    }
    return sum / static_cast<double>(batches);
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("write_ablation_csv: cannot open " + path);
    out << "H,alpha,Lprime,seed,task,accuracy\n";
    for (const AblationRow& r : rows) {
        out << r.h << "," << r.alpha << "," << r.lprime << "," << r.seed << "," << r.task << ","
            << r.accuracy << "\n";
    }
}

std::vector<AblationRow> ablate(const ModelConfig& base_cfg, const TrainConfig& base_tc,
                                const ModelParams& base_model,
                                const std::vector<tasks::Example>& train_data,
                                const std::vector<tasks::Example>& eval_data,
                                const tasks::Tokenizer& tok, const AblationGrid& grid,
                                const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<AblationRow> rows;
    for (i64 h : grid.h_values) {
        for (double alpha : grid.alpha_values) {
            for (i64 lprime : grid.lprime_values) {
                ModelConfig cfg = base_cfg;
                cfg.general_len = h;
                cfg.causal_layers = lprime;
                cfg.alpha = alpha;
                try {
                    cfg.validate();
                } catch (const ConfigError& e) {
                    std::cerr << "ablate: skipping invalid grid point H=" << h
                              << " alpha=" << alpha << " L'=" << lprime << ": " << e.what()
                              << "\n";
                    continue;
                }
                for (std::uint64_t seed : grid.seeds) {
                    std::ostringstream tag;
                    tag << "run_H" << h << "_a" << alpha << "_L" << lprime << "_s" << seed;
                    const fs::path run_dir = fs::path(out_dir) / tag.str();
                    fs::create_directories(run_dir);

                    TrainConfig tc = base_tc;
                    tc.alpha = alpha;
                    tc.seed = seed;
                    tc.trainable = TrainConfig::Trainable::adapters;

                    ModelParams model = base_model;  // frozen, shared storage
                    AdapterParams adapters = init_adapters(cfg, seed);
                    TrainState state;
                    std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::binary);
                    train(cfg, model, adapters, train_data, tok, tc, state,
                          [&](const StepRecord& r) {
                              metrics << step_record_to_json(r).dump() << "\n";
                          });

                    const EvalReport rep = evaluate(cfg, model, &adapters, eval_data, tok);
                    const double xg_var =
                        measure_xg_variance(cfg, model, adapters, train_data, tok, tc.batch_size);
                    json summary = {{"H", h},
                                    {"alpha", alpha},
                                    {"Lprime", lprime},
                                    {"seed", seed},
                                    {"final_xg_var", xg_var},
                                    {"eval", rep.to_json()}};
                    std::ofstream(run_dir / "summary.json", std::ios::binary)
                        << summary.dump(2) << "\n";

                    for (const auto& [task, stats] : rep.by_task) {
                        AblationRow row;
                        row.h = h;
                        row.alpha = alpha;
                        row.lprime = lprime;
                        row.seed = seed;
                        row.task = task;
                        row.accuracy = stats.accuracy();
                        row.final_xg_var = xg_var;
                        rows.push_back(std::move(row));
                    }
                }
            }
        }
    }
    write_ablation_csv((fs::path(out_dir) / "results.csv").string(), rows);

    // Aggregate mean/sd accuracy per grid point.
    std::ofstream summary((fs::path(out_dir) / "summary.csv"), std::ios::binary);
    summary << "H,alpha,Lprime,task,mean_accuracy,sd_accuracy,runs\n";
    std::map<std::string, std::vector<double>> groups;
    std::map<std::string, AblationRow> group_key;
    for (const AblationRow& r : rows) {
        std::ostringstream k;
        k << r.h << "," << r.alpha << "," << r.lprime << "," << r.task;
        groups[k.str()].push_back(r.accuracy);
        group_key[k.str()] = r;
    }
    for (const auto& [key, accs] : groups) {
        double m = 0.0;
        for (double a : accs) m += a;
        m /= static_cast<double>(accs.size());
        double sd = 0.0;
        for (double a : accs) sd += (a - m) * (a - m);
        sd = std::sqrt(sd / static_cast<double>(accs.size()));
        summary << key << "," << m << "," << sd << "," << accs.size() << "\n";
    }
    return rows;
}

}  // namespace dca
