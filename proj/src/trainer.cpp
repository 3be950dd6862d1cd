#include "trackrank/trainer.hpp"

#include <cmath>
#include <fstream>

#include "trackrank/parallel.hpp"

namespace trackrank {

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& config) {
    if (config.epsilon <= 0) throw ShapeError("adam_step: epsilon must be > 0");
    if (lr < 0) throw ShapeError("adam_step: learning rate must be >= 0");
    if (config.beta1 < 0 || config.beta1 >= 1 || config.beta2 < 0 || config.beta2 >= 1)
        throw ShapeError("adam_step: betas must lie in [0, 1)");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value().size(), 0.0);
            state.v.emplace_back(p.value().size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
    ++state.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi].mutable_value();
        const auto& g = params[pi].node()->grad;
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != p.size() || g.size() != p.size())
            throw ShapeError("adam_step: size mismatch for parameter '" + params[pi].name() + "'");
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
        }
    }
}

double default_learning_rate(HeadKind kind) { return kind == HeadKind::rnn ? 1e-4 : 3e-4; }

namespace {

double resolved_lr(const TrainConfig& c) {
    return c.learning_rate < 0 ? default_learning_rate(c.head.kind) : c.learning_rate;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

nlohmann::json train_config_json(const TrainConfig& c) {
    return {{"head", head_name(c.head)},
            {"attention_dt", c.head.attention.d_t},
            {"attention_kernel", c.head.attention.temporal_kernel},
            {"attention_literal_eq1", c.head.attention.literal_eq1},
            {"rnn_hidden", c.head.rnn.hidden},
            {"embed_enabled", c.embed.enabled},
            {"embed_dim", c.embed.dim},
            {"embed_init", c.embed.init == EmbedInit::zero_final ? "zero_final" : "random"},
            {"margin", c.triplet.margin},
            {"triplet_reduction", c.triplet.reduction == Reduction::mean ? "mean" : "sum"},
            {"P", c.sampler.P},
            {"K", c.sampler.K},
            {"T", c.sampler.T},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon},
            {"learning_rate", resolved_lr(c)},
            {"clip_norm", c.clip_norm},
            {"steps", c.steps},
            {"eval_interval", c.eval_interval},
            {"eval_ranks", c.eval_ranks},
            {"eval_drop_padded", c.eval_drop_padded},
            {"seed", c.seed}};
}

std::string config_hash(const TrainConfig& config) {
    // hash only what determines the parameter trajectory, so a run may be
    // resumed with a larger step budget but never under different dynamics
    nlohmann::json j = train_config_json(config);
    for (const char* k : {"steps", "eval_interval", "eval_ranks", "eval_drop_padded"}) j.erase(k);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

namespace {

TrainState make_state(const TrainConfig& config, const FrameLayout& layout, int64_t num_identities) {
    if (config.steps < 1) throw ShapeError("train: steps must be >= 1");
    if (config.eval_interval < 1) throw ShapeError("train: eval_interval must be >= 1");
    if (resolved_lr(config) < 0) throw ShapeError("train: learning rate must be >= 0");
    if (num_identities < 2) throw ShapeError("train: dataset must hold at least 2 identities");
    auto rng = seeded_engine(config.seed, 999);
    ClipEncoder encoder(config.head, config.embed, layout, rng);
    Classifier classifier(encoder.out_dim, num_identities, rng);
    return TrainState{std::move(encoder), std::move(classifier), AdamState{}, 0};
}

}  // namespace

TrainState init_train_state(const TrainConfig& config, const Dataset& train_data) {
    return make_state(config, train_data.layout, train_data.num_identities());
}

std::vector<VideoEmbedding> encode_dataset(const Dataset& dataset, const ClipEncoder& encoder, int64_t T,
                                           bool drop_padded) {
    std::vector<VideoEmbedding> out(dataset.tracklets.size());
    parallel_for(static_cast<int64_t>(dataset.tracklets.size()), [&](int64_t i) {
        const Tracklet& t = dataset.tracklets[static_cast<size_t>(i)];
        std::vector<ClipEmbedding> clips;
        for (const auto& clip : cut_clips(t, T)) clips.push_back({encoder.encode(clip), clip.padded});
        out[static_cast<size_t>(i)] =
            video_embedding(clips, dataset.original_identity(t.identity), t.camera, drop_padded);
    });
    return out;
}

void train(TrainState& state, const Dataset& train_data, const TrainConfig& config, const EvalData& eval,
           std::vector<nlohmann::json>& log) {
    if ((eval.query == nullptr) != (eval.gallery == nullptr))
        throw ShapeError("train: query and gallery datasets must be provided together");
    SamplerConfig scfg = config.sampler;
    scfg.seed = config.seed;
    PKSampler sampler(train_data.tracklets, scfg);

    std::vector<Tensor> params = state.encoder.params();
    for (auto& p : state.classifier.params()) params.push_back(p);
    const double lr = resolved_lr(config);
    const bool recurrent = config.head.kind == HeadKind::rnn;

    for (int64_t step = state.step; step < config.steps; ++step) {
        const auto batch = sampler.sample(static_cast<uint64_t>(step));
        LabeledBatch lb;
        LossBreakdown loss;
        try {
            std::vector<Tensor> rows;
            rows.reserve(batch.size());
            for (const auto& item : batch) {
                rows.push_back(reshape(state.encoder.encode(item.clip), {1, state.encoder.out_dim}));
                lb.identities.push_back(item.identity);
            }
            lb.embeddings = concat(rows, 0);
            lb.logits = state.classifier.logits(lb.embeddings);
            loss = total_loss(lb, config.triplet);
        } catch (const NumericError& e) {
            throw NumericError("train step " + std::to_string(step) + " (forward): " + e.what());
        }
        for (const auto& [tensor, tag] :
             {std::pair<const Tensor&, const char*>{loss.triplet, "triplet"},
              std::pair<const Tensor&, const char*>{loss.cross_entropy, "cross_entropy"}}) {
            if (!std::isfinite(tensor.item()))
                throw NumericError("train step " + std::to_string(step) + ": " + tag + " loss is non-finite");
        }

        for (auto& p : params) p.node()->grad.assign(p.value().size(), 0.0);
        try {
            backward(loss.total);
        } catch (const NumericError& e) {
            throw NumericError("train step " + std::to_string(step) + " (backward): " + e.what());
        }

        nlohmann::json rec{{"step", step},
                           {"triplet", loss.triplet.item()},
                           {"cross_entropy", loss.cross_entropy.item()},
                           {"total", loss.total.item()}};
        if (recurrent && config.clip_norm > 0) {
            double ss = 0.0;
            for (const auto& p : params)
                for (double g : p.node()->grad) ss += g * g;
            const double norm = std::sqrt(ss);
            const bool clipped = norm > config.clip_norm;
            if (clipped) {
                const double scale = config.clip_norm / norm;
                for (auto& p : params)
                    for (double& g : p.node()->grad) g *= scale;
            }
            rec["grad_norm"] = norm;
            rec["clipped"] = clipped;
        }
        adam_step(params, state.adam, lr, config.adam);
        for (const auto& p : params)
            for (double v : p.value())
                if (!std::isfinite(v))
                    throw NumericError("train step " + std::to_string(step) + ": parameter '" + p.name() +
                                       "' became non-finite");
        log.push_back(std::move(rec));
        state.step = step + 1;

        const bool at_interval = (step + 1) % config.eval_interval == 0 || step + 1 == config.steps;
        if (eval.query && at_interval) {
            auto q = encode_dataset(*eval.query, state.encoder, config.sampler.T, config.eval_drop_padded);
            auto g = encode_dataset(*eval.gallery, state.encoder, config.sampler.T, config.eval_drop_padded);
            const RetrievalResult res = evaluate(distance_matrix(q, g), q, g);
            nlohmann::json cmc = nlohmann::json::object();
            const int64_t G = static_cast<int64_t>(res.cmc.size());
            for (int r : config.eval_ranks)
                cmc[std::to_string(r)] = res.cmc[static_cast<size_t>(std::min<int64_t>(r, G) - 1)];
            log.push_back({{"step", step},
                           {"eval", {{"map", res.map},
                                     {"cmc", cmc},
                                     {"num_valid_queries", res.num_valid_queries},
                                     {"num_skipped_queries", res.num_skipped_queries}}}});
        }
    }
}

namespace {

std::filesystem::path moment_path(const std::filesystem::path& dir, const char* which, const std::string& name) {
    return dir / ("adam_" + std::string(which) + "." + name + ".trkf");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& config) {
    std::filesystem::create_directories(dir);
    std::vector<Tensor> params = state.encoder.params();
    for (auto& p : state.classifier.params()) params.push_back(p);
    nlohmann::json names = nlohmann::json::array();
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params[i].name();
        names.push_back(name);
        write_trkf(dir / (name + ".trkf"), params[i]);
        if (!state.adam.m.empty()) {
            write_trkf(moment_path(dir, "m", name), Tensor::from(params[i].shape(), state.adam.m[i]));
            write_trkf(moment_path(dir, "v", name), Tensor::from(params[i].shape(), state.adam.v[i]));
        }
    }
    const nlohmann::json sidecar = {{"step", state.step},
                                    {"adam_step", state.adam.step},
                                    {"has_moments", !state.adam.m.empty()},
                                    {"config_hash", config_hash(config)},
                                    {"layout", layout_to_json(state.encoder.input)},
                                    {"num_identities", state.classifier.w.dim(1)},
                                    {"params", names}};
    std::ofstream f(dir / "checkpoint.json", std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + (dir / "checkpoint.json").string());
    f << sidecar.dump(2) << "\n";
}

TrainState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& config) {
    std::ifstream f(dir / "checkpoint.json");
    if (!f) throw IoError("load_checkpoint: cannot open " + (dir / "checkpoint.json").string());
    nlohmann::json sidecar;
    try {
        sidecar = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("load_checkpoint: " + (dir / "checkpoint.json").string() + ": " + e.what());
    }
    const std::string want_hash = config_hash(config);
    const std::string have_hash = sidecar.at("config_hash").get<std::string>();
    if (want_hash != have_hash)
        throw IoError("load_checkpoint: checkpoint was written under config hash " + have_hash +
                      ", current config hashes to " + want_hash);

    TrainState state = make_state(config, layout_from_json(sidecar.at("layout")),
                                  sidecar.at("num_identities").get<int64_t>());
    std::vector<Tensor> params = state.encoder.params();
    for (auto& p : state.classifier.params()) params.push_back(p);
    const auto names = sidecar.at("params").get<std::vector<std::string>>();
    if (names.size() != params.size())
        throw IoError("load_checkpoint: checkpoint stores " + std::to_string(names.size()) + " parameters, config builds " +
                      std::to_string(params.size()));
    const bool has_moments = sidecar.at("has_moments").get<bool>();
    for (size_t i = 0; i < params.size(); ++i) {
        if (names[i] != params[i].name())
            throw IoError("load_checkpoint: parameter order mismatch: checkpoint '" + names[i] + "' vs config '" +
                          params[i].name() + "'");
        Tensor stored = read_trkf(dir / (names[i] + ".trkf"));
        if (stored.shape() != params[i].shape())
            throw IoError("load_checkpoint: parameter '" + names[i] + "' has shape " + shape_str(stored.shape()) +
                          ", config builds " + shape_str(params[i].shape()));
        params[i].mutable_value() = stored.value();
        if (has_moments) {
            Tensor m = read_trkf(moment_path(dir, "m", names[i]));
            Tensor v = read_trkf(moment_path(dir, "v", names[i]));
            if (m.shape() != params[i].shape() || v.shape() != params[i].shape())
                throw IoError("load_checkpoint: moment shape mismatch for '" + names[i] + "'");
            state.adam.m.push_back(m.value());
            state.adam.v.push_back(v.value());
        }
    }
    state.adam.step = sidecar.at("adam_step").get<int64_t>();
    state.step = sidecar.at("step").get<int64_t>();
    return state;
}

}  // namespace trackrank
