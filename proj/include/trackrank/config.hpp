#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trackrank/data.hpp"
#include "trackrank/retrieval.hpp"
#include "trackrank/trainer.hpp"

namespace trackrank {

/// Manifest paths; train may be empty for eval-only runs.
struct DataPaths {
    std::string train, query, gallery;
};

struct CompareConfig {
    std::vector<std::string> heads;  // empty -> all ten
    bool baseline = true;            // include the T=1 avg-pool image baseline row
    std::vector<uint64_t> seeds;     // empty -> {top-level seed}
    int64_t steps = -1;              // <0 -> train.steps
};

/// One JSON document drives every command; flags override its keys.
/// Unknown keys are rejected at every level.
struct RunConfig {
    uint64_t seed = 0;
    std::string output_dir;
    std::string checkpoint;  // eval: checkpoint dir; empty -> output_dir/checkpoint
    std::optional<SynthConfig> synth;
    std::optional<DataPaths> data;
    TrainConfig train;
    bool resume = false;
    RerankConfig rerank;
    CompareConfig compare;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_json(const RunConfig& rc);

/// Accepts the ten canonical head names plus the shorthands
/// pool -> pool_avg, att -> att_fc_softmax, rnn -> rnn_lstm_final.
std::string expand_head_name(const std::string& name);

/// Pushes the top-level seed into the synth and train sections.
void apply_seed(RunConfig& rc);

}  // namespace trackrank
