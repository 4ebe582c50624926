#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dca/config.hpp"
#include "dca/model.hpp"
#include "dca/tensor.hpp"
#include "dca/train.hpp"
#include "json.hpp"

namespace dca {

// Config <-> JSON. Parsing is strict: unknown or ill-typed fields raise
// ConfigError naming the field; missing fields keep their defaults.
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Checkpoint file: 8-byte magic, u64 manifest length, JSON manifest with
// (name, shape, byte offset) entries, then the raw little-endian fp64
// buffers. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;

    const Tensor& require(const std::string& name) const;  // DataError when absent
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

Checkpoint load_checkpoint(const std::string& path);  // DataError on any corruption

ModelParams model_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg);
AdapterParams adapters_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg);
bool checkpoint_has_adapters(const Checkpoint& ckpt);

// Full training snapshot: parameters plus optimizer moments and step counts,
// enough to resume a run bit-exactly.
void save_training_checkpoint(const std::string& path, const ModelConfig& mc,
                              const TrainConfig& tc, const ModelParams& model,
                              const AdapterParams& adapters, const TrainState& state);

// Rebuilds the optimizer state aligned with the trainable set of tc.
TrainState training_state_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& mc,
                                          const TrainConfig& tc, const ModelParams& model,
                                          const AdapterParams& adapters);

// One metrics-log line per training step.
nlohmann::json step_record_to_json(const StepRecord& rec);

}  // namespace dca
