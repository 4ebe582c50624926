// Command-line front end: dataset generation, adapter/base training,
// evaluation, attention-trace export, and ablation sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dca/checkpoint.hpp"
#include "dca/inspect.hpp"
#include "dca/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed_flag;
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw dca::ConfigError("config file not found: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw dca::ConfigError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw dca::ConfigError("config file " + path + ": expected an object");
    for (const auto& item : j.items()) {
        if (item.key() != "model" && item.key() != "train") {
            throw dca::ConfigError("config file " + path + ": unknown section '" + item.key() +
                                   "'");
        }
    }
    return j;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& cfg_file,
                           std::uint64_t fallback) {
    if (flag) return *flag;
    if (cfg_file.contains("train") && cfg_file["train"].contains("seed")) {
        return cfg_file["train"]["seed"].get<std::uint64_t>();
    }
    if (const char* env = std::getenv("DCA_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return fallback;
}

void write_resolved_config(const fs::path& dir, const dca::ModelConfig& mc,
                           const dca::TrainConfig& tc) {
    json j;
    j["model"] = dca::model_config_to_json(mc);
    j["train"] = dca::train_config_to_json(tc);
    std::ofstream out(dir / "config.json", std::ios::binary);
    out << j.dump(2) << "\n";
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int cmd_gen_data(const CommonArgs& common, const std::string& task_name, std::int64_t n,
                 double test_frac, std::int64_t word_len_min, std::int64_t word_len_max,
                 std::int64_t words, std::int64_t operand_min, std::int64_t operand_max,
                 const std::string& ops, int year_min, int year_max, const json& cfg_file) {
    const std::uint64_t seed = resolve_seed(common.seed_flag, cfg_file, 7);
    const dca::tasks::Task task = dca::tasks::task_from_name(task_name);
    if (test_frac < 0.0 || test_frac >= 1.0) {
        throw dca::ConfigError("gen-data.test-frac: must be in [0, 1)");
    }
    std::vector<dca::tasks::Example> all;
    switch (task) {
        case dca::tasks::Task::letter_concat:
            all = dca::tasks::gen_letter_concat(seed, n, word_len_min, word_len_max, words);
            break;
        case dca::tasks::Task::arithmetic: {
            const bool add = ops.find('+') != std::string::npos;
            const bool sub = ops.find('-') != std::string::npos;
            all = dca::tasks::gen_arithmetic(seed, n, operand_min, operand_max, add, sub);
            break;
        }
        case dca::tasks::Task::date:
            all = dca::tasks::gen_date(seed, n, year_min, year_max);
            break;
    }
    fs::create_directories(common.out_dir);
    const std::int64_t n_test = static_cast<std::int64_t>(test_frac * n);
    const std::int64_t n_train = n - n_test;
    std::vector<dca::tasks::Example> train(all.begin(), all.begin() + n_train);
    std::vector<dca::tasks::Example> test(all.begin() + n_train, all.end());
    const fs::path dir(common.out_dir);
    dca::tasks::write_jsonl((dir / (task_name + "_train.jsonl")).string(), train);
    std::cout << "wrote " << train.size() << " examples to "
              << (dir / (task_name + "_train.jsonl")).string() << "\n";
    if (n_test > 0) {
        dca::tasks::write_jsonl((dir / (task_name + "_test.jsonl")).string(), test);
        std::cout << "wrote " << test.size() << " examples to "
                  << (dir / (task_name + "_test.jsonl")).string() << "\n";
    }
    return 0;
}

struct TrainFlags {
    std::string data_path;
    std::string base_ckpt;
    std::string resume;
    std::optional<double> lr, alpha, weight_decay, grad_clip;
    std::optional<std::int64_t> epochs, batch_size, max_steps;
    std::optional<std::string> schedule, trainable;
    bool preset_paper = false;
    bool eval_after = false;
};

int cmd_train(const CommonArgs& common, const TrainFlags& f, const json& cfg_file) {
    dca::ModelConfig mc = dca::model_config_from_json(cfg_file.value("model", json::object()));
    dca::TrainConfig tc = dca::train_config_from_json(cfg_file.value("train", json::object()));
    if (f.preset_paper) {
        // Published fine-tuning regime, scaled onto the desk model.
        tc.lr = 1e-3;
        tc.batch_size = 4;
        tc.epochs = 5;
        tc.max_steps = 0;
        tc.alpha = 1.0;
        mc.adapter_len = 10;
        mc.general_len = 2;
        mc.adapter_layers = std::min<std::int64_t>(20, mc.n_layers);
        mc.causal_layers = mc.adapter_layers;
        mc.alpha = 1.0;
    }
    if (f.lr) tc.lr = *f.lr;
    if (f.alpha) { tc.alpha = *f.alpha; mc.alpha = *f.alpha; }
    if (f.weight_decay) tc.weight_decay = *f.weight_decay;
    if (f.grad_clip) tc.grad_clip = *f.grad_clip;
    if (f.epochs) tc.epochs = *f.epochs;
    if (f.batch_size) tc.batch_size = *f.batch_size;
    if (f.max_steps) tc.max_steps = *f.max_steps;
    if (f.schedule) tc.schedule = dca::schedule_from_name(*f.schedule);
    if (f.trainable) tc.trainable = dca::trainable_from_name(*f.trainable);
    tc.seed = resolve_seed(common.seed_flag, cfg_file, tc.seed);
    mc.validate();
    tc.validate();

    const dca::tasks::Tokenizer tok;
    if (mc.vocab_size != tok.vocab_size()) {
        throw dca::ConfigError("model.vocab_size: must equal the tokenizer vocabulary (" +
                               std::to_string(tok.vocab_size()) + ")");
    }
    const auto data = dca::tasks::read_jsonl(f.data_path);
    if (data.empty()) throw dca::DataError("train: dataset is empty: " + f.data_path);

    fs::create_directories(common.out_dir);
    const fs::path out_dir(common.out_dir);
    write_resolved_config(out_dir, mc, tc);

    dca::ModelParams model;
    dca::AdapterParams adapters;
    dca::TrainState state;
    bool resumed = false;
    if (!f.resume.empty()) {
        const dca::Checkpoint ckpt = dca::load_checkpoint(f.resume);
        const dca::ModelConfig saved = dca::model_config_from_json(ckpt.meta.at("model_config"));
        model = dca::model_from_checkpoint(ckpt, saved);
        adapters = dca::adapters_from_checkpoint(ckpt, saved);
        mc = saved;
        state = dca::training_state_from_checkpoint(ckpt, mc, tc, model, adapters);
        resumed = true;
    } else {
        if (!f.base_ckpt.empty()) {
            const dca::Checkpoint ckpt = dca::load_checkpoint(f.base_ckpt);
            const dca::ModelConfig saved =
                dca::model_config_from_json(ckpt.meta.at("model_config"));
            if (saved.n_layers != mc.n_layers || saved.model_dim() != mc.model_dim() ||
                saved.vocab_size != mc.vocab_size || saved.ffn_hidden != mc.ffn_hidden) {
                throw dca::ConfigError("base-ckpt: architecture does not match the config");
            }
            model = dca::model_from_checkpoint(ckpt, saved);
        } else {
            model = dca::init_params(mc, tc.seed);
        }
        adapters = dca::init_adapters(mc, tc.seed);
    }

    if (tc.trainable == dca::TrainConfig::Trainable::adapters) {
        std::cout << "trainable parameters: " << dca::trainable_param_count(mc)
                  << " (L*(M*C) + L*heads = " << mc.adapter_layers << "*(" << mc.adapter_len
                  << "*" << mc.model_dim() << ") + " << mc.adapter_layers << "*" << mc.n_heads
                  << ")\n";
    }

    std::ofstream metrics(out_dir / "metrics.jsonl",
                          resumed ? std::ios::binary | std::ios::app
                                  : std::ios::binary | std::ios::trunc);
    const auto records =
        dca::train(mc, model, adapters, data, tok, tc, state, [&](const dca::StepRecord& r) {
            metrics << dca::step_record_to_json(r).dump() << "\n";
            if (r.step % 100 == 0) {
                std::cout << "step " << r.step << " total " << r.loss.total << " ce " << r.loss.ce
                          << " causal " << r.loss.causal << "\n";
            }
        });
    metrics.close();

    dca::save_training_checkpoint((out_dir / "checkpoint.dcac").string(), mc, tc, model,
                                  adapters, state);

    json summary;
    summary["steps"] = state.next_step;
    summary["trainable_params"] = tc.trainable == dca::TrainConfig::Trainable::adapters
                                      ? dca::trainable_param_count(mc)
                                      : -1;
    if (!records.empty()) {
        summary["final_total"] = records.back().loss.total;
        summary["final_ce"] = records.back().loss.ce;
    }
    if (tc.trainable == dca::TrainConfig::Trainable::adapters) {
        summary["final_xg_var"] =
            dca::measure_xg_variance(mc, model, adapters, data, tok, tc.batch_size);
    }
    if (f.eval_after) {
        const dca::EvalReport rep = dca::evaluate(
            mc, model,
            tc.trainable == dca::TrainConfig::Trainable::adapters ? &adapters : nullptr, data,
            tok);
        summary["train_eval"] = rep.to_json();
        std::cout << "train accuracy " << rep.accuracy() << "\n";
    }
    std::ofstream(out_dir / "summary.json", std::ios::binary) << summary.dump(2) << "\n";
    std::cout << "checkpoint written to " << (out_dir / "checkpoint.dcac").string() << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& out_path, std::int64_t max_new) {
    const dca::Checkpoint ckpt = dca::load_checkpoint(ckpt_path);
    const dca::ModelConfig mc = dca::model_config_from_json(ckpt.meta.at("model_config"));
    const dca::ModelParams model = dca::model_from_checkpoint(ckpt, mc);
    dca::AdapterParams adapters;
    const bool has_adapters = dca::checkpoint_has_adapters(ckpt);
    if (has_adapters) adapters = dca::adapters_from_checkpoint(ckpt, mc);
    const dca::tasks::Tokenizer tok;
    const auto data = dca::tasks::read_jsonl(data_path);
    const dca::EvalReport rep =
        dca::evaluate(mc, model, has_adapters ? &adapters : nullptr, data, tok, max_new);
    std::cout << rep.to_json().dump(2) << "\n";
    if (!out_path.empty()) {
        std::ofstream(out_path, std::ios::binary) << rep.to_json().dump(2) << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& prompt,
                const std::string& prompt2, const std::string& out_path) {
    const dca::Checkpoint ckpt = dca::load_checkpoint(ckpt_path);
    const dca::ModelConfig mc = dca::model_config_from_json(ckpt.meta.at("model_config"));
    const dca::ModelParams model = dca::model_from_checkpoint(ckpt, mc);
    dca::AdapterParams adapters;
    const bool has_adapters = dca::checkpoint_has_adapters(ckpt);
    if (has_adapters) adapters = dca::adapters_from_checkpoint(ckpt, mc);
    const dca::tasks::Tokenizer tok;
    const dca::AdapterParams* ap = has_adapters ? &adapters : nullptr;

    json doc;
    if (prompt2.empty()) {
        doc = dca::export_attention(mc, model, ap, prompt, tok);
    } else {
        json a = dca::export_attention(mc, model, ap, prompt, tok);
        json b = dca::export_attention(mc, model, ap, prompt2, tok);
        const double div = dca::adap1_divergence(a, b);
        doc["trace_a"] = std::move(a);
        doc["trace_b"] = std::move(b);
        doc["s_adap1_divergence"] = div;
        std::cout << "s_adap1 divergence: " << div << "\n";
    }
    std::ofstream(out_path, std::ios::binary) << doc.dump() << "\n";
    std::cout << "trace written to " << out_path << "\n";
    return 0;
}

int cmd_ablate(const CommonArgs& common, const json& cfg_file, const std::string& data_path,
               const std::string& eval_path, const std::string& base_ckpt,
               const std::string& h_values, const std::string& alpha_values,
               const std::string& lprime_values, const std::string& seeds,
               std::optional<std::int64_t> steps, std::optional<std::int64_t> epochs) {
    dca::ModelConfig mc = dca::model_config_from_json(cfg_file.value("model", json::object()));
    dca::TrainConfig tc = dca::train_config_from_json(cfg_file.value("train", json::object()));
    if (steps) tc.max_steps = *steps;
    if (epochs) tc.epochs = *epochs;
    tc.seed = resolve_seed(common.seed_flag, cfg_file, tc.seed);

    const dca::tasks::Tokenizer tok;
    const auto train_data = dca::tasks::read_jsonl(data_path);
    const auto eval_data = dca::tasks::read_jsonl(eval_path.empty() ? data_path : eval_path);

    dca::ModelParams base_model;
    if (!base_ckpt.empty()) {
        const dca::Checkpoint ckpt = dca::load_checkpoint(base_ckpt);
        const dca::ModelConfig saved = dca::model_config_from_json(ckpt.meta.at("model_config"));
        base_model = dca::model_from_checkpoint(ckpt, saved);
    } else {
        base_model = dca::init_params(mc, tc.seed);
    }

    dca::AblationGrid grid;
    for (const auto& s : split_csv(h_values)) grid.h_values.push_back(std::stoll(s));
    for (const auto& s : split_csv(alpha_values)) grid.alpha_values.push_back(std::stod(s));
    for (const auto& s : split_csv(lprime_values)) grid.lprime_values.push_back(std::stoll(s));
    for (const auto& s : split_csv(seeds)) grid.seeds.push_back(std::stoull(s));
    if (grid.h_values.empty()) grid.h_values = {mc.general_len};
    if (grid.alpha_values.empty()) grid.alpha_values = {tc.alpha};
    if (grid.lprime_values.empty()) grid.lprime_values = {mc.causal_layers};
    if (grid.seeds.empty()) grid.seeds = {tc.seed};

    const auto rows =
        dca::ablate(mc, tc, base_model, train_data, eval_data, tok, grid, common.out_dir);
    std::cout << "ablation finished: " << rows.size() << " rows -> "
              << (fs::path(common.out_dir) / "results.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deconfounded causal adaptation on a desk-scale transformer"};
    app.require_subcommand(1);

    CommonArgs common;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate synthetic task datasets (JSONL)");
    std::string task;
    std::int64_t n = 1000;
    double test_frac = 0.15;
    std::int64_t word_len_min = 3, word_len_max = 6, words = 2;
    std::int64_t operand_min = 0, operand_max = 999;
    std::string ops = "+-";
    int year_min = 1900, year_max = 2099;
    gen->add_option("--task", task, "letter_concat|date|arithmetic")->required();
    gen->add_option("--n", n, "number of examples");
    gen->add_option("--test-frac", test_frac, "held-out fraction");
    gen->add_option("--word-len-min", word_len_min);
    gen->add_option("--word-len-max", word_len_max);
    gen->add_option("--words", words, "words per prompt");
    gen->add_option("--operand-min", operand_min);
    gen->add_option("--operand-max", operand_max);
    gen->add_option("--ops", ops, "any of +-");
    gen->add_option("--year-min", year_min);
    gen->add_option("--year-max", year_max);

    // train
    auto* tr = app.add_subcommand("train", "Train adapters (or the base model)");
    TrainFlags tf;
    double lr_v = 0, alpha_v = 0, wd_v = 0, clip_v = 0;
    std::int64_t epochs_v = 0, batch_v = 0, steps_v = 0;
    std::string sched_v, trainable_v;
    tr->add_option("--data", tf.data_path, "training JSONL")->required();
    tr->add_option("--base-ckpt", tf.base_ckpt, "frozen base checkpoint");
    tr->add_option("--resume", tf.resume, "resume from checkpoint");
    auto* o_lr = tr->add_option("--lr", lr_v);
    auto* o_alpha = tr->add_option("--alpha", alpha_v);
    auto* o_wd = tr->add_option("--weight-decay", wd_v);
    auto* o_clip = tr->add_option("--grad-clip", clip_v);
    auto* o_epochs = tr->add_option("--epochs", epochs_v);
    auto* o_batch = tr->add_option("--batch-size", batch_v);
    auto* o_steps = tr->add_option("--steps", steps_v, "max training steps (0 = all epochs)");
    auto* o_sched = tr->add_option("--schedule", sched_v, "constant|cosine");
    auto* o_trainable = tr->add_option("--trainable", trainable_v, "adapters|base");
    std::string preset;
    tr->add_option("--preset", preset, "paper-4.1");
    tr->add_flag("--eval-after", tf.eval_after, "evaluate train accuracy at the end");

    // eval
    auto* ev = app.add_subcommand("eval", "Exact-match accuracy of a checkpoint");
    std::string ev_ckpt, ev_data, ev_out;
    std::int64_t ev_max_new = 16;
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--out", ev_out, "write the report JSON here");
    ev->add_option("--max-new", ev_max_new);

    // inspect
    auto* ins = app.add_subcommand("inspect", "Export partitioned attention traces");
    std::string in_ckpt, in_prompt, in_prompt2, in_out = "trace.json";
    ins->add_option("--ckpt", in_ckpt)->required();
    ins->add_option("--prompt", in_prompt)->required();
    ins->add_option("--prompt2", in_prompt2, "second prompt for a divergence summary");
    ins->add_option("--out", in_out);

    // ablate
    auto* ab = app.add_subcommand("ablate", "H/alpha/L' sweep");
    std::string ab_data, ab_eval, ab_base, ab_h, ab_alpha, ab_lprime, ab_seeds;
    std::int64_t ab_steps = 0, ab_epochs = 0;
    ab->add_option("--data", ab_data)->required();
    ab->add_option("--eval-data", ab_eval);
    ab->add_option("--base-ckpt", ab_base);
    ab->add_option("--h-values", ab_h, "e.g. 1,2,4,8");
    ab->add_option("--alpha-values", ab_alpha, "e.g. 0,0.1,1,10");
    ab->add_option("--lprime-values", ab_lprime);
    ab->add_option("--seeds", ab_seeds, "e.g. 1,2,3");
    auto* o_ab_steps = ab->add_option("--steps", ab_steps);
    auto* o_ab_epochs = ab->add_option("--epochs", ab_epochs);

    std::uint64_t seed_v = 0;
    for (CLI::App* sub : {gen, tr, ev, ins, ab}) {
        sub->add_option("--config", common.config_path, "JSON config file");
        sub->add_option("--out-dir", common.out_dir, "output directory");
        sub->add_option("--seed", seed_v, "run seed (env DCA_SEED is the fallback)")
            ->each([&](const std::string&) { common.seed_flag = seed_v; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const json cfg_file = load_config_file(common.config_path);
        if (gen->parsed()) {
            return cmd_gen_data(common, task, n, test_frac, word_len_min, word_len_max, words,
                                operand_min, operand_max, ops, year_min, year_max, cfg_file);
        }
        if (tr->parsed()) {
            if (*o_lr) tf.lr = lr_v;
            if (*o_alpha) tf.alpha = alpha_v;
            if (*o_wd) tf.weight_decay = wd_v;
            if (*o_clip) tf.grad_clip = clip_v;
            if (*o_epochs) tf.epochs = epochs_v;
            if (*o_batch) tf.batch_size = batch_v;
            if (*o_steps) tf.max_steps = steps_v;
            if (*o_sched) tf.schedule = sched_v;
            if (*o_trainable) tf.trainable = trainable_v;
            if (!preset.empty()) {
                if (preset != "paper-4.1") {
                    throw dca::ConfigError("train.preset: unknown preset '" + preset + "'");
                }
                tf.preset_paper = true;
            }
            return cmd_train(common, tf, cfg_file);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_out, ev_max_new);
        if (ins->parsed()) return cmd_inspect(in_ckpt, in_prompt, in_prompt2, in_out);
        if (ab->parsed()) {
            return cmd_ablate(common, cfg_file, ab_data, ab_eval, ab_base, ab_h, ab_alpha,
                              ab_lprime, ab_seeds,
                              *o_ab_steps ? std::optional<std::int64_t>(ab_steps) : std::nullopt,
                              *o_ab_epochs ? std::optional<std::int64_t>(ab_epochs)
                                           : std::nullopt);
        }
    } catch (const dca::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dca::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const dca::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
