#include "dca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace dca {

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'D', 'C', 'A', 'C', 'K', 'P', 'T', '1'};
constexpr int kVersion = 1;

template <typename T>
T get_field(const json& j, const std::string& section, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(section + "." + key + ": wrong type");
    }
}

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> known) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) throw ConfigError(section + "." + item.key() + ": unknown field");
    }
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
    return json{{"n_layers", cfg.n_layers},
                {"n_heads", cfg.n_heads},
                {"head_dim", cfg.head_dim},
                {"vocab_size", cfg.vocab_size},
                {"max_seq_len", cfg.max_seq_len},
                {"adapter_layers", cfg.adapter_layers},
                {"adapter_len", cfg.adapter_len},
                {"general_len", cfg.general_len},
                {"causal_layers", cfg.causal_layers},
                {"alpha", cfg.alpha},
                {"rope_base", cfg.rope_base},
                {"rms_eps", cfg.rms_eps},
                {"ffn_hidden", cfg.ffn_hidden}};
}

ModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("model: expected a JSON object");
    reject_unknown(j, "model",
                   {"n_layers", "n_heads", "head_dim", "vocab_size", "max_seq_len",
                    "adapter_layers", "adapter_len", "general_len", "causal_layers", "alpha",
                    "rope_base", "rms_eps", "ffn_hidden"});
    ModelConfig cfg;
    cfg.n_layers = get_field<std::int64_t>(j, "model", "n_layers", cfg.n_layers);
    cfg.n_heads = get_field<std::int64_t>(j, "model", "n_heads", cfg.n_heads);
    cfg.head_dim = get_field<std::int64_t>(j, "model", "head_dim", cfg.head_dim);
    cfg.vocab_size = get_field<std::int64_t>(j, "model", "vocab_size", cfg.vocab_size);
    cfg.max_seq_len = get_field<std::int64_t>(j, "model", "max_seq_len", cfg.max_seq_len);
    cfg.adapter_layers = get_field<std::int64_t>(j, "model", "adapter_layers", cfg.adapter_layers);
    cfg.adapter_len = get_field<std::int64_t>(j, "model", "adapter_len", cfg.adapter_len);
    cfg.general_len = get_field<std::int64_t>(j, "model", "general_len", cfg.general_len);
    cfg.causal_layers = get_field<std::int64_t>(j, "model", "causal_layers", cfg.causal_layers);
    cfg.alpha = get_field<double>(j, "model", "alpha", cfg.alpha);
    cfg.rope_base = get_field<double>(j, "model", "rope_base", cfg.rope_base);
    cfg.rms_eps = get_field<double>(j, "model", "rms_eps", cfg.rms_eps);
    cfg.ffn_hidden = get_field<std::int64_t>(j, "model", "ffn_hidden", cfg.ffn_hidden);
    cfg.validate();
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    return json{{"lr", cfg.lr},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"eps", cfg.eps},
                {"weight_decay", cfg.weight_decay},
                {"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"max_steps", cfg.max_steps},
                {"seed", cfg.seed},
                {"alpha", cfg.alpha},
                {"schedule", schedule_name(cfg.schedule)},
                {"grad_clip", cfg.grad_clip},
                {"trainable", trainable_name(cfg.trainable)}};
}

TrainConfig train_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("train: expected a JSON object");
    reject_unknown(j, "train",
                   {"lr", "beta1", "beta2", "eps", "weight_decay", "epochs", "batch_size",
                    "max_steps", "seed", "alpha", "schedule", "grad_clip", "trainable"});
    TrainConfig cfg;
    cfg.lr = get_field<double>(j, "train", "lr", cfg.lr);
    cfg.beta1 = get_field<double>(j, "train", "beta1", cfg.beta1);
    cfg.beta2 = get_field<double>(j, "train", "beta2", cfg.beta2);
    cfg.eps = get_field<double>(j, "train", "eps", cfg.eps);
    cfg.weight_decay = get_field<double>(j, "train", "weight_decay", cfg.weight_decay);
    cfg.epochs = get_field<std::int64_t>(j, "train", "epochs", cfg.epochs);
    cfg.batch_size = get_field<std::int64_t>(j, "train", "batch_size", cfg.batch_size);
    cfg.max_steps = get_field<std::int64_t>(j, "train", "max_steps", cfg.max_steps);
    cfg.seed = get_field<std::uint64_t>(j, "train", "seed", cfg.seed);
    cfg.alpha = get_field<double>(j, "train", "alpha", cfg.alpha);
    cfg.schedule = schedule_from_name(
        get_field<std::string>(j, "train", "schedule", schedule_name(cfg.schedule)));
    cfg.grad_clip = get_field<double>(j, "train", "grad_clip", cfg.grad_clip);
    cfg.trainable = trainable_from_name(
        get_field<std::string>(j, "train", "trainable", trainable_name(cfg.trainable)));
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::string& path, const json& meta,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    json manifest;
    manifest["version"] = kVersion;
    manifest["meta"] = meta;
    json entries = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["offset"] = offset;
        entries.push_back(std::move(e));
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
    }
    manifest["tensors"] = std::move(entries);
    const std::string mstr = manifest.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("save_checkpoint: cannot open " + tmp);
        out.write(kMagic, sizeof(kMagic));
        const std::uint64_t mlen = mstr.size();
        out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
        out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
        for (const auto& [name, t] : tensors) {
            out.write(reinterpret_cast<const char*>(t.cdata()),
                      static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
        if (!out) throw DataError("save_checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

const Tensor& Checkpoint::require(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
    return it->second;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("load_checkpoint: " + path + " is not a checkpoint file");
    }
    std::uint64_t mlen = 0;
    std::memcpy(&mlen, bytes.data() + sizeof(kMagic), sizeof(mlen));
    const std::uint64_t header = sizeof(kMagic) + sizeof(mlen);
    if (header + mlen > bytes.size()) {
        throw DataError("load_checkpoint: truncated manifest in " + path);
    }
    json manifest;
    try {
        manifest = json::parse(std::string_view(bytes.data() + header, mlen));
    } catch (const json::exception& e) {
        throw DataError("load_checkpoint: corrupt manifest in " + path + ": " + e.what());
    }
    if (!manifest.contains("version") || manifest["version"].get<int>() != kVersion) {
        throw DataError("load_checkpoint: unsupported checkpoint version in " + path);
    }
    const std::uint64_t payload_start = header + mlen;
    const std::uint64_t payload_size = bytes.size() - payload_start;

    Checkpoint ckpt;
    ckpt.meta = manifest.value("meta", json::object());
    if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
        throw DataError("load_checkpoint: manifest has no tensor list in " + path);
    }
    for (const json& e : manifest["tensors"]) {
        std::string name;
        std::vector<std::int64_t> shape;
        std::uint64_t offset = 0;
        try {
            name = e.at("name").get<std::string>();
            shape = e.at("shape").get<std::vector<std::int64_t>>();
            offset = e.at("offset").get<std::uint64_t>();
        } catch (const json::exception& ex) {
            throw DataError("load_checkpoint: bad manifest entry in " + path + ": " + ex.what());
        }
        std::int64_t n = 1;
        for (std::int64_t d : shape) {
            if (d < 0) throw DataError("load_checkpoint: negative dim for '" + name + "'");
            n *= d;
        }
        const std::uint64_t need = static_cast<std::uint64_t>(n) * sizeof(double);
        if (offset > payload_size || offset + need > payload_size) {
            throw DataError("load_checkpoint: tensor '" + name + "' exceeds file bounds");
        }
        Tensor t = make_tensor(shape);
        std::memcpy(t.mdata(), bytes.data() + payload_start + offset, need);
        if (!ckpt.tensors.emplace(name, std::move(t)).second) {
            throw DataError("load_checkpoint: duplicate tensor '" + name + "'");
        }
    }
    return ckpt;
}

namespace {

Tensor take(const Checkpoint& ckpt, const std::string& name, std::vector<std::int64_t> shape) {
    const Tensor& t = ckpt.require(name);
    if (t.shape != shape) {
        throw DataError("checkpoint: tensor '" + name + "' has shape " + format_shape(t.shape) +
                        ", expected " + format_shape(shape));
    }
    Tensor out = t;  // handles share the loaded buffer
    return out;
}

}  // namespace

ModelParams model_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg) {
    const std::int64_t c = cfg.model_dim();
    const std::int64_t f = cfg.ffn_hidden;
    ModelParams p;
    p.embedding = take(ckpt, "model.embedding", {cfg.vocab_size, c});
    p.layers.resize(cfg.n_layers);
    for (std::int64_t i = 0; i < cfg.n_layers; ++i) {
        const std::string base = "model.layers." + std::to_string(i) + ".";
        LayerParams& l = p.layers[i];
        l.wq = take(ckpt, base + "wq", {c, c});
        l.wk = take(ckpt, base + "wk", {c, c});
        l.wv = take(ckpt, base + "wv", {c, c});
        l.wo = take(ckpt, base + "wo", {c, c});
        l.w_gate = take(ckpt, base + "w_gate", {c, f});
        l.w_up = take(ckpt, base + "w_up", {c, f});
        l.w_down = take(ckpt, base + "w_down", {f, c});
        l.attn_norm = take(ckpt, base + "attn_norm", {c});
        l.mlp_norm = take(ckpt, base + "mlp_norm", {c});
    }
    p.final_norm = take(ckpt, "model.final_norm", {c});
    p.out_head = take(ckpt, "model.out_head", {c, cfg.vocab_size});
    return p;
}

AdapterParams adapters_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg) {
    const std::int64_t c = cfg.model_dim();
    AdapterParams a;
    a.first_layer = cfg.n_layers - cfg.adapter_layers;
    a.layers.resize(cfg.adapter_layers);
    for (std::int64_t i = 0; i < cfg.adapter_layers; ++i) {
        const std::string base = "adapter." + std::to_string(i) + ".";
        a.layers[i].t1 = take(ckpt, base + "t1", {cfg.general_len, c});
        a.layers[i].t2 = take(ckpt, base + "t2", {cfg.adapter_len - cfg.general_len, c});
        a.layers[i].gate = take(ckpt, base + "gate", {cfg.n_heads});
    }
    return a;
}

bool checkpoint_has_adapters(const Checkpoint& ckpt) {
    return ckpt.has("adapter.0.t1");
}

void save_training_checkpoint(const std::string& path, const ModelConfig& mc,
                              const TrainConfig& tc, const ModelParams& model,
                              const AdapterParams& adapters, const TrainState& state) {
    std::vector<std::pair<std::string, Tensor>> tensors = named_params(model);
    const auto anamed = named_params(adapters);
    tensors.insert(tensors.end(), anamed.begin(), anamed.end());

    const auto& trained = tc.trainable == TrainConfig::Trainable::adapters
                              ? named_params(adapters)
                              : named_params(model);
    for (std::size_t i = 0; i < state.adam.m.size() && i < trained.size(); ++i) {
        tensors.emplace_back("optim.m." + trained[i].first,
                             from_values(trained[i].second.shape, state.adam.m[i]));
        tensors.emplace_back("optim.v." + trained[i].first,
                             from_values(trained[i].second.shape, state.adam.v[i]));
    }

    json meta;
    meta["model_config"] = model_config_to_json(mc);
    meta["train_config"] = train_config_to_json(tc);
    meta["adam_t"] = state.adam.t;
    meta["next_step"] = state.next_step;
    save_checkpoint(path, meta, tensors);
}

TrainState training_state_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& mc,
                                          const TrainConfig& tc, const ModelParams& model,
                                          const AdapterParams& adapters) {
    (void)mc;
    TrainState state;
    const auto& trained = tc.trainable == TrainConfig::Trainable::adapters
                              ? named_params(adapters)
                              : named_params(model);
    for (const auto& [name, t] : trained) {
        const Tensor& m = ckpt.require("optim.m." + name);
        const Tensor& v = ckpt.require("optim.v." + name);
        if (m.shape != t.shape || v.shape != t.shape) {
            throw DataError("checkpoint: optimizer state for '" + name + "' has wrong shape");
        }
        state.adam.m.push_back(*m.data);
        state.adam.v.push_back(*v.data);
    }
    state.adam.t = ckpt.meta.value("adam_t", std::int64_t{0});
    state.next_step = ckpt.meta.value("next_step", std::int64_t{0});
    return state;
}

json step_record_to_json(const StepRecord& rec) {
    return json{{"step", rec.step},
                {"ce", rec.loss.ce},
                {"causal", rec.loss.causal},
                {"total", rec.loss.total},
                {"per_layer_var", rec.loss.per_layer_var},
                {"grad_norm", rec.grad_norm},
                {"wall_ms", rec.wall_ms}};
}

}  // namespace dca
