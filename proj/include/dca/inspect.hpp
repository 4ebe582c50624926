#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dca/config.hpp"
#include "dca/model.hpp"
#include "dca/tasks.hpp"
#include "json.hpp"

namespace dca {

struct TaskStats {
    std::int64_t correct = 0;
    std::int64_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct EvalReport {
    std::map<std::string, TaskStats> by_task;
    std::int64_t correct = 0;
    std::int64_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
    nlohmann::json to_json() const;
};

// Greedy decoding of BOS prompt SEP; examples are decoded in parallel
// batches, which is bit-identical to decoding them one at a time.
std::vector<std::string> predict_answers(const ModelConfig& cfg, const ModelParams& params,
                                         const AdapterParams* adapters,
                                         const std::vector<tasks::Example>& examples,
                                         const tasks::Tokenizer& tok,
                                         std::int64_t max_new = 16,
                                         std::int64_t eval_batch = 64);

EvalReport score_predictions(const std::vector<tasks::Example>& examples,
                             const std::vector<std::string>& predictions);

// Exact string match between the greedy decode and the stored answer.
EvalReport evaluate(const ModelConfig& cfg, const ModelParams& params,
                    const AdapterParams* adapters, const std::vector<tasks::Example>& examples,
                    const tasks::Tokenizer& tok, std::int64_t max_new = 16);

// Per layer and head: the partitioned score matrices with token labels
// (adapter columns adap_0..adap_{M-1}) plus X_G for the causal layers.
nlohmann::json export_attention(const ModelConfig& cfg, const ModelParams& params,
                                const AdapterParams* adapters, const std::string& prompt,
                                const tasks::Tokenizer& tok);

// Mean L2 distance between matching s_adap1 rows of two exported traces.
double adap1_divergence(const nlohmann::json& trace_a, const nlohmann::json& trace_b);

// Causal-loss value over the dataset in fixed evaluation batches.
double measure_xg_variance(const ModelConfig& cfg, const ModelParams& params,
                           const AdapterParams& adapters,
                           const std::vector<tasks::Example>& examples,
                           const tasks::Tokenizer& tok, std::int64_t batch_size);

struct AblationGrid {
    std::vector<std::int64_t> h_values;
    std::vector<double> alpha_values;
    std::vector<std::int64_t> lprime_values;
    std::vector<std::uint64_t> seeds;
};

struct AblationRow {
    std::int64_t h = 0;
    double alpha = 0.0;
    std::int64_t lprime = 0;
    std::uint64_t seed = 0;
    std::string task;
    double accuracy = 0.0;
    double final_xg_var = 0.0;
};

// Trains one adapter run per valid grid point and seed on a shared frozen
// base; invalid points are skipped with a warning on stderr. Writes
// `results.csv` (H,alpha,Lprime,seed,task,accuracy), an aggregated
// `summary.csv`, and one run directory with metrics per point.
std::vector<AblationRow> ablate(const ModelConfig& base_cfg, const TrainConfig& base_tc,
                                const ModelParams& base_model,
                                const std::vector<tasks::Example>& train_data,
                                const std::vector<tasks::Example>& eval_data,
                                const tasks::Tokenizer& tok, const AblationGrid& grid,
                                const std::string& out_dir);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace dca
