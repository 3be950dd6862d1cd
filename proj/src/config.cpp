#include "trackrank/config.hpp"

#include <fstream>

namespace trackrank {
namespace {

using nlohmann::json;

void allow_keys(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
    if (!obj.is_object()) throw IoError("config: " + where + " must be an object");
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : keys) known |= item.key() == k;
        if (!known) throw IoError("config: unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_synth(const json& j, SynthConfig& c) {
    allow_keys(j,
               {"num_identities", "tracklets_per_identity", "frames_per_tracklet", "layout", "num_cameras",
                "sigma_within", "sigma_between", "drift_rate"},
               "synth");
    get_if(j, "num_identities", c.num_identities);
    get_if(j, "tracklets_per_identity", c.tracklets_per_identity);
    get_if(j, "frames_per_tracklet", c.frames_per_tracklet);
    if (j.contains("layout")) c.layout = layout_from_json(j.at("layout"));
    get_if(j, "num_cameras", c.num_cameras);
    get_if(j, "sigma_within", c.sigma_within);
    get_if(j, "sigma_between", c.sigma_between);
    get_if(j, "drift_rate", c.drift_rate);
}

void parse_head(const json& j, HeadConfig& head) {
    allow_keys(j, {"name", "d_t", "temporal_kernel", "literal_eq1", "hidden"}, "head");
    if (j.contains("name")) head = head_config_from_name(expand_head_name(j.at("name").get<std::string>()));
    get_if(j, "d_t", head.attention.d_t);
    get_if(j, "temporal_kernel", head.attention.temporal_kernel);
    get_if(j, "literal_eq1", head.attention.literal_eq1);
    get_if(j, "hidden", head.rnn.hidden);
}

void parse_embed(const json& j, EmbedConfig& c) {
    allow_keys(j, {"enabled", "dim", "init"}, "embed");
    get_if(j, "enabled", c.enabled);
    get_if(j, "dim", c.dim);
    if (j.contains("init")) {
        const std::string init = j.at("init").get<std::string>();
        if (init == "zero_final")
            c.init = EmbedInit::zero_final;
        else if (init == "random")
            c.init = EmbedInit::random;
        else
            throw IoError("config: embed.init must be 'zero_final' or 'random', got '" + init + "'");
    }
}

void parse_triplet(const json& j, TripletConfig& c) {
    allow_keys(j, {"margin", "reduction"}, "triplet");
    get_if(j, "margin", c.margin);
    if (j.contains("reduction")) {
        const std::string r = j.at("reduction").get<std::string>();
        if (r == "mean")
            c.reduction = Reduction::mean;
        else if (r == "sum")
            c.reduction = Reduction::sum;
        else
            throw IoError("config: triplet.reduction must be 'mean' or 'sum', got '" + r + "'");
    }
}

void parse_sampler(const json& j, SamplerConfig& c) {
    allow_keys(j, {"P", "K", "T"}, "sampler");
    get_if(j, "P", c.P);
    get_if(j, "K", c.K);
    get_if(j, "T", c.T);
}

void parse_train(const json& j, TrainConfig& c, bool& resume) {
    allow_keys(j, {"learning_rate", "clip_norm", "steps", "eval_interval", "beta1", "beta2", "epsilon", "resume"},
               "train");
    get_if(j, "learning_rate", c.learning_rate);
    get_if(j, "clip_norm", c.clip_norm);
    get_if(j, "steps", c.steps);
    get_if(j, "eval_interval", c.eval_interval);
    get_if(j, "beta1", c.adam.beta1);
    get_if(j, "beta2", c.adam.beta2);
    get_if(j, "epsilon", c.adam.epsilon);
    get_if(j, "resume", resume);
}

void parse_eval(const json& j, TrainConfig& c) {
    allow_keys(j, {"ranks", "drop_padded"}, "eval");
    get_if(j, "ranks", c.eval_ranks);
    get_if(j, "drop_padded", c.eval_drop_padded);
    for (int r : c.eval_ranks)
        if (r < 1) throw IoError("config: eval.ranks entries must be >= 1");
}

void parse_rerank(const json& j, RerankConfig& c) {
    allow_keys(j, {"k1", "k2", "lambda"}, "rerank");
    get_if(j, "k1", c.k1);
    get_if(j, "k2", c.k2);
    get_if(j, "lambda", c.lambda);
}

void parse_compare(const json& j, CompareConfig& c) {
    allow_keys(j, {"heads", "baseline", "seeds", "steps"}, "compare");
    get_if(j, "heads", c.heads);
    get_if(j, "baseline", c.baseline);
    get_if(j, "seeds", c.seeds);
    get_if(j, "steps", c.steps);
    for (auto& h : c.heads) h = expand_head_name(h);
}

}  // namespace

std::string expand_head_name(const std::string& name) {
    if (name == "pool") return "pool_avg";
    if (name == "att") return "att_fc_softmax";
    if (name == "rnn") return "rnn_lstm_final";
    for (const auto& n : all_head_names())
        if (n == name) return name;
    std::string known = "pool, att, rnn";
    for (const auto& n : all_head_names()) known += ", " + n;
    throw IoError("config: unknown head '" + name + "' (expected one of: " + known + ")");
}

void apply_seed(RunConfig& rc) {
    rc.train.seed = rc.seed;
    rc.train.sampler.seed = rc.seed;
    if (rc.synth) rc.synth->seed = rc.seed;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig rc;
    try {
        allow_keys(j,
                   {"seed", "output_dir", "checkpoint", "synth", "data", "head", "embed", "triplet", "sampler",
                    "train", "eval", "rerank", "compare"},
                   "the top level");
        get_if(j, "seed", rc.seed);
        get_if(j, "output_dir", rc.output_dir);
        get_if(j, "checkpoint", rc.checkpoint);
        if (j.contains("synth")) {
            rc.synth.emplace();
            parse_synth(j.at("synth"), *rc.synth);
        }
        if (j.contains("data")) {
            allow_keys(j.at("data"), {"train", "query", "gallery"}, "data");
            rc.data.emplace();
            get_if(j.at("data"), "train", rc.data->train);
            get_if(j.at("data"), "query", rc.data->query);
            get_if(j.at("data"), "gallery", rc.data->gallery);
        }
        if (j.contains("head")) parse_head(j.at("head"), rc.train.head);
        if (j.contains("embed")) parse_embed(j.at("embed"), rc.train.embed);
        if (j.contains("triplet")) parse_triplet(j.at("triplet"), rc.train.triplet);
        if (j.contains("sampler")) parse_sampler(j.at("sampler"), rc.train.sampler);
        if (j.contains("train")) parse_train(j.at("train"), rc.train, rc.resume);
        if (j.contains("eval")) parse_eval(j.at("eval"), rc.train);
        if (j.contains("rerank")) parse_rerank(j.at("rerank"), rc.rerank);
        if (j.contains("compare")) parse_compare(j.at("compare"), rc.compare);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("config: ") + e.what());
    }
    apply_seed(rc);
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("config: " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

nlohmann::json run_config_json(const RunConfig& rc) {
    nlohmann::json j = {{"seed", rc.seed},
                        {"output_dir", rc.output_dir},
                        {"checkpoint", rc.checkpoint},
                        {"resume", rc.resume},
                        {"train", train_config_json(rc.train)},
                        {"rerank", {{"k1", rc.rerank.k1}, {"k2", rc.rerank.k2}, {"lambda", rc.rerank.lambda}}}};
    if (rc.synth) {
        const SynthConfig& s = *rc.synth;
        j["synth"] = {{"num_identities", s.num_identities},
                      {"tracklets_per_identity", s.tracklets_per_identity},
                      {"frames_per_tracklet", s.frames_per_tracklet},
                      {"layout", layout_to_json(s.layout)},
                      {"num_cameras", s.num_cameras},
                      {"sigma_within", s.sigma_within},
                      {"sigma_between", s.sigma_between},
                      {"drift_rate", s.drift_rate},
                      {"seed", s.seed}};
    }
    if (rc.data) j["data"] = {{"train", rc.data->train}, {"query", rc.data->query}, {"gallery", rc.data->gallery}};
    if (!rc.compare.heads.empty() || !rc.compare.seeds.empty())
        j["compare"] = {{"heads", rc.compare.heads},
                        {"baseline", rc.compare.baseline},
                        {"seeds", rc.compare.seeds},
                        {"steps", rc.compare.steps}};
    return j;
}

}  // namespace trackrank
