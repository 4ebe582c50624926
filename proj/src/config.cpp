#include "dca/config.hpp"

namespace dca {

namespace {

void require(bool ok, const std::string& field, const std::string& msg) {
    if (!ok) throw ConfigError(field + ": " + msg);
}

}  // namespace

void ModelConfig::validate() const {
    require(n_layers >= 1, "model.n_layers", "must be >= 1");
    require(n_heads >= 1, "model.n_heads", "must be >= 1");
    require(head_dim >= 2 && head_dim % 2 == 0, "model.head_dim",
            "must be even and >= 2 (rotary pairs)");
    require(vocab_size >= 2, "model.vocab_size", "must be >= 2");
    require(max_seq_len >= 2, "model.max_seq_len", "must be >= 2");
    require(adapter_len >= 2, "model.adapter_len",
            "must be >= 2 (got M=" + std::to_string(adapter_len) + ")");
    require(general_len > 0 && general_len < adapter_len, "model.general_len",
            "must satisfy 0 < H < M (got H=" + std::to_string(general_len) +
                ", M=" + std::to_string(adapter_len) + ")");
    require(causal_layers > 0 && causal_layers <= adapter_layers, "model.causal_layers",
            "must satisfy 0 < L' <= L (got L'=" + std::to_string(causal_layers) +
                ", L=" + std::to_string(adapter_layers) + ")");
    require(adapter_layers <= n_layers, "model.adapter_layers",
            "must satisfy L <= N (got L=" + std::to_string(adapter_layers) +
                ", N=" + std::to_string(n_layers) + ")");
    require(alpha >= 0.0, "model.alpha", "must be >= 0");
    require(rope_base > 0.0, "model.rope_base", "must be > 0");
    require(rms_eps > 0.0, "model.rms_eps", "must be > 0");
    require(ffn_hidden >= 1, "model.ffn_hidden", "must be >= 1");
}

void TrainConfig::validate() const {
    require(lr > 0.0, "train.lr", "must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0, "train.beta1", "must be in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "train.beta2", "must be in [0, 1)");
    require(eps > 0.0, "train.eps", "must be > 0");
    require(weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
    require(epochs >= 1, "train.epochs", "must be >= 1");
    require(batch_size >= 1, "train.batch_size", "must be >= 1");
    require(max_steps >= 0, "train.max_steps", "must be >= 0");
    require(alpha >= 0.0, "train.alpha", "must be >= 0");
    require(grad_clip >= 0.0, "train.grad_clip", "must be >= 0");
}

std::string schedule_name(TrainConfig::Schedule s) {
    return s == TrainConfig::Schedule::constant ? "constant" : "cosine";
}

TrainConfig::Schedule schedule_from_name(const std::string& name) {
    if (name == "constant") return TrainConfig::Schedule::constant;
    if (name == "cosine") return TrainConfig::Schedule::cosine;
    throw ConfigError("train.schedule: unknown value '" + name + "' (constant|cosine)");
}

std::string trainable_name(TrainConfig::Trainable t) {
    return t == TrainConfig::Trainable::adapters ? "adapters" : "base";
}

TrainConfig::Trainable trainable_from_name(const std::string& name) {
    if (name == "adapters") return TrainConfig::Trainable::adapters;
    if (name == "base") return TrainConfig::Trainable::base;
    throw ConfigError("train.trainable: unknown value '" + name + "' (adapters|base)");
}

}  // namespace dca
