#pragma once

#include <filesystem>
#include <json.hpp>

#include "trackrank/data.hpp"
#include "trackrank/losses.hpp"
#include "trackrank/retrieval.hpp"

namespace trackrank {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    int64_t step = 0;                       // completed updates
    std::vector<std::vector<double>> m, v;  // per-parameter moments
};

/// One bias-corrected Adam update from the gradients stored on params.
/// Moments are allocated on first use and must keep matching shapes after.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& config = {});

/// 1e-4 for recurrent heads, 3e-4 otherwise.
double default_learning_rate(HeadKind kind);

struct TrainConfig {
    HeadConfig head;
    EmbedConfig embed;
    TripletConfig triplet;
    SamplerConfig sampler;  // its seed field is overridden by `seed` below
    AdamConfig adam;
    double learning_rate = -1.0;  // < 0 selects the per-head default
    double clip_norm = 10.0;      // global-norm gradient clip, recurrent heads only
    int64_t steps = 500;
    int64_t eval_interval = 100;
    std::vector<int> eval_ranks{1, 5, 10, 20};
    bool eval_drop_padded = false;
    uint64_t seed = 0;
};

/// Canonical json of every semantic field; its FNV-1a hash keys checkpoints.
nlohmann::json train_config_json(const TrainConfig& config);
std::string config_hash(const TrainConfig& config);

struct TrainState {
    ClipEncoder encoder;
    Classifier classifier;
    AdamState adam;
    int64_t step = 0;  // next step to run
};

TrainState init_train_state(const TrainConfig& config, const Dataset& train_data);

/// Encodes every tracklet (clip-cut at T, clip embeddings averaged),
/// reporting original manifest identities so splits stay comparable.
std::vector<VideoEmbedding> encode_dataset(const Dataset& dataset, const ClipEncoder& encoder, int64_t T,
                                           bool drop_padded = false);

struct EvalData {
    const Dataset* query = nullptr;
    const Dataset* gallery = nullptr;
};

/// Runs steps [state.step, config.steps): sample -> encode -> loss ->
/// backward -> (clip) -> Adam. Appends one record per step and an eval
/// record at every interval boundary and the final step. Deterministic
/// given config; a non-finite loss aborts naming step and component.
void train(TrainState& state, const Dataset& train_data, const TrainConfig& config, const EvalData& eval,
           std::vector<nlohmann::json>& log);

/// One TRKF file per parameter and per Adam moment, plus checkpoint.json
/// (step counters, config hash, frame layout, classifier width, parameter
/// order).
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& config);

/// Rebuilds the state for `config` from the sidecar's layout and identity
/// count, restoring parameters, moments, and step counters; refuses
/// checkpoints written under a different config.
TrainState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& config);

}  // namespace trackrank
