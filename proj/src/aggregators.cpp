#include "trackrank/aggregators.hpp"

#include <cmath>

namespace trackrank {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ShapeError(msg); }

void check_nonempty(const FeatureClip& clip) {
    if (!clip.frames.defined() || clip.frames.numel() == 0 || clip.frames.dim(0) == 0)
        fail("clip: empty clip");
}

FeatureClip as_map_form(const FeatureClip& clip, const FrameLayout& layout) {
    if (clip.map_form()) return clip;
    if (clip.frames.rank() != 2 || layout.is_map())
        fail("attention: vector-form clip " + shape_str(clip.frames.shape()) +
             " cannot serve a map-form head");
    return {reshape(clip.frames, {clip.frames.dim(0), 1, 1, clip.frames.dim(1)}), clip.padded};
}

}  // namespace

FeatureClip to_vector_form(const FeatureClip& clip) {
    check_nonempty(clip);
    if (clip.frames.rank() == 2) return clip;
    if (clip.frames.rank() != 4)
        fail("to_vector_form: expected [T x D] or [T x w x h x C]; got " + shape_str(clip.frames.shape()));
    const int64_t T = clip.frames.dim(0), wh = clip.frames.dim(1) * clip.frames.dim(2), C = clip.frames.dim(3);
    return {reduce_mean(reshape(clip.frames, {T, wh, C}), 1), clip.padded};
}

Tensor temporal_pool(PoolMode mode, const FeatureClip& clip) {
    const Tensor frames = to_vector_form(clip).frames;
    return mode == PoolMode::avg ? reduce_mean(frames, 0) : reduce_max(frames, 0);
}

Tensor normalize_scores(ScoreNorm mode, const Tensor& scores) {
    if (scores.rank() != 1) fail("normalize_scores: expected [T]; got " + shape_str(scores.shape()));
    if (mode == ScoreNorm::softmax) return softmax(scores, 0);
    const Tensor s = sigmoid(scores);
    return scale_by(s, recip(reduce_sum(s, 0)));
}

Tensor attention_aggregate(const Tensor& frames, const Tensor& weights, bool literal_eq1) {
    if (frames.rank() != 2 || weights.rank() != 1 || weights.dim(0) != frames.dim(0))
        fail("attention_aggregate: weights " + shape_str(weights.shape()) + " do not match frames " +
             shape_str(frames.shape()));
    const int64_t T = frames.dim(0), D = frames.dim(1);
    Tensor out = reshape(matmul(reshape(weights, {1, T}), frames), {D});
    return literal_eq1 ? scale(out, 1.0 / static_cast<double>(T)) : out;
}

// ---- AttentionHead ----------------------------------------------------------

AttentionHead::AttentionHead(AttentionConfig cfg, FrameLayout layout, std::mt19937_64& rng)
    : config(cfg), input(layout) {
    if (cfg.d_t < 1) fail("attention: d_t must be >= 1");
    if (cfg.temporal_kernel < 1 || cfg.temporal_kernel % 2 == 0)
        fail("attention: temporal_kernel must be odd and positive");
    const int64_t fan_in = layout.frame_dim();
    const double k1 = 1.0 / std::sqrt(static_cast<double>(fan_in));
    ws = Tensor::uniform({fan_in, cfg.d_t}, rng, -k1, k1, "att.ws");
    bs = Tensor::uniform({cfg.d_t}, rng, -k1, k1, "att.bs");
    if (cfg.network == AttentionNetwork::spatial_fc) {
        const double k2 = 1.0 / std::sqrt(static_cast<double>(cfg.d_t));
        wt = Tensor::uniform({cfg.d_t, 1}, rng, -k2, k2, "att.wt");
        bt = Tensor::uniform({1}, rng, -k2, k2, "att.bt");
    } else {
        const double k2 = 1.0 / std::sqrt(static_cast<double>(cfg.d_t * cfg.temporal_kernel));
        wt = Tensor::uniform({1, cfg.d_t, cfg.temporal_kernel}, rng, -k2, k2, "att.wt");
        bt = Tensor::uniform({1}, rng, -k2, k2, "att.bt");
    }
}

Tensor AttentionHead::scores(const FeatureClip& clip) const {
    check_nonempty(clip);
    const FeatureClip maps = as_map_form(clip, input);
    if (maps.frames.dim(1) != input.w || maps.frames.dim(2) != input.h || maps.frames.dim(3) != input.c)
        fail("attention: clip extent " + shape_str(maps.frames.shape()) + " does not match configured layout [" +
             std::to_string(input.w) + " x " + std::to_string(input.h) + " x " + std::to_string(input.c) + "]");
    const int64_t T = maps.frames.dim(0);
    const Tensor u = spatial_conv_full(maps.frames, ws, bs);  // [T x d_t]
    const Tensor s = config.network == AttentionNetwork::spatial_fc ? affine(u, wt, bt) : time_conv1d(u, wt, bt);
    return reshape(s, {T});
}

Tensor AttentionHead::aggregate(const FeatureClip& clip) const {
    const Tensor w = normalize_scores(config.normalization, scores(clip));
    return attention_aggregate(to_vector_form(clip).frames, w, config.literal_eq1);
}

std::vector<Tensor> AttentionHead::params() const { return {ws, bs, wt, bt}; }

// ---- RnnHead -----------------------------------------------------------------

RnnHead::RnnHead(RnnConfig cfg, int64_t input_dim_, std::mt19937_64& rng)
    : config(cfg), input_dim(input_dim_) {
    if (cfg.hidden < 1) fail("rnn: hidden size must be >= 1");
    const int64_t H = cfg.hidden;
    const double k = 1.0 / std::sqrt(static_cast<double>(H));
    if (cfg.cell == RnnCell::lstm) {
        wx = Tensor::uniform({input_dim, 4 * H}, rng, -k, k, "rnn.wx");
        wh = Tensor::uniform({H, 4 * H}, rng, -k, k, "rnn.wh");
        b = Tensor::uniform({4 * H}, rng, -k, k, "rnn.b");
        for (int64_t j = 0; j < H; ++j) b.mutable_value()[static_cast<size_t>(H + j)] = 1.0;  // forget gate
    } else {
        wx = Tensor::uniform({input_dim, 3 * H}, rng, -k, k, "rnn.wx");
        wh = Tensor::uniform({H, 3 * H}, rng, -k, k, "rnn.wh");
        bx = Tensor::uniform({3 * H}, rng, -k, k, "rnn.bx");
        bh = Tensor::uniform({3 * H}, rng, -k, k, "rnn.bh");
    }
}

Tensor RnnHead::aggregate(const FeatureClip& clip) const {
    const Tensor frames = to_vector_form(clip).frames;
    if (frames.dim(1) != input_dim)
        fail("rnn: frame dim " + std::to_string(frames.dim(1)) + " does not match configured input dim " +
             std::to_string(input_dim));
    const int64_t T = frames.dim(0), H = config.hidden;
    Tensor h = Tensor::zeros({1, H});
    Tensor c = Tensor::zeros({1, H});
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(T));
    for (int64_t t = 0; t < T; ++t) {
        const Tensor xt = slice(frames, 0, t, 1);
        if (config.cell == RnnCell::lstm) {
            const Tensor z = add(affine(xt, wx, b), matmul(h, wh));
            const Tensor i_g = sigmoid(slice(z, 1, 0, H));
            const Tensor f_g = sigmoid(slice(z, 1, H, H));
            const Tensor g_g = tanh(slice(z, 1, 2 * H, H));
            const Tensor o_g = sigmoid(slice(z, 1, 3 * H, H));
            c = add(mul(f_g, c), mul(i_g, g_g));
            h = mul(o_g, tanh(c));
        } else {
            const Tensor gi = affine(xt, wx, bx);
            const Tensor gh = affine(h, wh, bh);
            const Tensor r = sigmoid(add(slice(gi, 1, 0, H), slice(gh, 1, 0, H)));
            const Tensor z = sigmoid(add(slice(gi, 1, H, H), slice(gh, 1, H, H)));
            const Tensor n = tanh(add(slice(gi, 1, 2 * H, H), mul(r, slice(gh, 1, 2 * H, H))));
            h = add(mul(sub(Tensor::full({1, H}, 1.0), z), n), mul(z, h));
        }
        outs.push_back(h);
    }
    if (config.readout == RnnReadout::final_state) return reshape(h, {H});
    return reduce_mean(concat(outs, 0), 0);
}

std::vector<Tensor> RnnHead::params() const {
    return config.cell == RnnCell::lstm ? std::vector<Tensor>{wx, wh, b} : std::vector<Tensor>{wx, wh, bx, bh};
}

// ---- head naming ---------------------------------------------------------------

const std::vector<std::string>& all_head_names() {
    static const std::vector<std::string> names = {
        "pool_avg",        "pool_max",         "att_fc_softmax", "att_fc_sigmoid", "att_conv_softmax",
        "att_conv_sigmoid", "rnn_lstm_final",  "rnn_lstm_avg",   "rnn_gru_final",  "rnn_gru_avg"};
    return names;
}

HeadConfig head_config_from_name(const std::string& name) {
    HeadConfig cfg;
    if (name == "pool_avg") {
        cfg.kind = HeadKind::pool_avg;
    } else if (name == "pool_max") {
        cfg.kind = HeadKind::pool_max;
    } else if (name.rfind("att_", 0) == 0) {
        cfg.kind = HeadKind::attention;
        if (name == "att_fc_softmax") {
            cfg.attention.network = AttentionNetwork::spatial_fc;
            cfg.attention.normalization = ScoreNorm::softmax;
        } else if (name == "att_fc_sigmoid") {
            cfg.attention.network = AttentionNetwork::spatial_fc;
            cfg.attention.normalization = ScoreNorm::sigmoid_l1;
        } else if (name == "att_conv_softmax") {
            cfg.attention.network = AttentionNetwork::spatial_temporal_conv;
            cfg.attention.normalization = ScoreNorm::softmax;
        } else if (name == "att_conv_sigmoid") {
            cfg.attention.network = AttentionNetwork::spatial_temporal_conv;
            cfg.attention.normalization = ScoreNorm::sigmoid_l1;
        } else {
            fail("unknown head name: " + name);
        }
    } else if (name.rfind("rnn_", 0) == 0) {
        cfg.kind = HeadKind::rnn;
        if (name == "rnn_lstm_final") {
            cfg.rnn.cell = RnnCell::lstm;
            cfg.rnn.readout = RnnReadout::final_state;
        } else if (name == "rnn_lstm_avg") {
            cfg.rnn.cell = RnnCell::lstm;
            cfg.rnn.readout = RnnReadout::output_average;
        } else if (name == "rnn_gru_final") {
            cfg.rnn.cell = RnnCell::gru;
            cfg.rnn.readout = RnnReadout::final_state;
        } else if (name == "rnn_gru_avg") {
            cfg.rnn.cell = RnnCell::gru;
            cfg.rnn.readout = RnnReadout::output_average;
        } else {
            fail("unknown head name: " + name);
        }
    } else {
        fail("unknown head name: " + name);
    }
    return cfg;
}

std::string head_name(const HeadConfig& cfg) {
    switch (cfg.kind) {
        case HeadKind::pool_avg:
            return "pool_avg";
        case HeadKind::pool_max:
            return "pool_max";
        case HeadKind::attention: {
            std::string n = cfg.attention.network == AttentionNetwork::spatial_fc ? "att_fc_" : "att_conv_";
            return n + (cfg.attention.normalization == ScoreNorm::softmax ? "softmax" : "sigmoid");
        }
        case HeadKind::rnn: {
            std::string n = cfg.rnn.cell == RnnCell::lstm ? "rnn_lstm_" : "rnn_gru_";
            return n + (cfg.rnn.readout == RnnReadout::final_state ? "final" : "avg");
        }
    }
    fail("unreachable head kind");
}

// ---- ClipEncoder -----------------------------------------------------------------

ClipEncoder::ClipEncoder(HeadConfig head_, EmbedConfig embed_, FrameLayout input_, std::mt19937_64& rng)
    : head(head_), embed(embed_), input(input_) {
    if (input.c < 1 || input.w < 1 || input.h < 1) fail("encoder: invalid frame layout");
    // heads consume the spatially averaged vector form, so the working frame
    // dimension is the channel count
    const int64_t D0 = input.c;
    int64_t head_in = D0;
    FrameLayout score_layout = input;
    if (embed.enabled) {
        if (embed.dim < 1) fail("encoder: embed dim must be >= 1");
        const double k1 = 1.0 / std::sqrt(static_cast<double>(D0));
        w1 = Tensor::uniform({D0, embed.dim}, rng, -k1, k1, "embed.w1");
        b1 = Tensor::uniform({embed.dim}, rng, -k1, k1, "embed.b1");
        if (embed.init == EmbedInit::zero_final) {
            w2 = Tensor::zeros({embed.dim, embed.dim}, true);
            b2 = Tensor::zeros({embed.dim}, true);
        } else {
            const double k2 = 1.0 / std::sqrt(static_cast<double>(embed.dim));
            w2 = Tensor::uniform({embed.dim, embed.dim}, rng, -k2, k2);
            b2 = Tensor::uniform({embed.dim}, rng, -k2, k2);
        }
        w2.set_name("embed.w2");
        b2.set_name("embed.b2");
        head_in = embed.dim;
        score_layout = {1, 1, embed.dim};
    }
    switch (head.kind) {
        case HeadKind::pool_avg:
        case HeadKind::pool_max:
            out_dim = head_in;
            break;
        case HeadKind::attention:
            att.emplace(head.attention, score_layout, rng);
            out_dim = head_in;
            break;
        case HeadKind::rnn:
            rnn.emplace(head.rnn, head_in, rng);
            out_dim = head.rnn.hidden;
            break;
    }
}

Tensor ClipEncoder::embed_frames(const Tensor& frames) const {
    if (!embed.enabled) return frames;
    return affine(tanh(affine(frames, w1, b1)), w2, b2);
}

Tensor ClipEncoder::encode(const FeatureClip& clip) const {
    check_nonempty(clip);
    const FeatureClip vec = to_vector_form(clip);
    if (vec.frames.dim(1) != input.c)
        fail("encoder: clip frame dim " + std::to_string(vec.frames.dim(1)) +
             " does not match configured channel count " + std::to_string(input.c));
    const Tensor E = embed_frames(vec.frames);
    const FeatureClip embedded{E, clip.padded};
    switch (head.kind) {
        case HeadKind::pool_avg:
            return temporal_pool(PoolMode::avg, embedded);
        case HeadKind::pool_max:
            return temporal_pool(PoolMode::max, embedded);
        case HeadKind::attention: {
            const FeatureClip score_clip = embed.enabled ? embedded : clip;
            const Tensor w = normalize_scores(head.attention.normalization, att->scores(score_clip));
            return attention_aggregate(E, w, head.attention.literal_eq1);
        }
        case HeadKind::rnn:
            return rnn->aggregate(embedded);
    }
    fail("unreachable head kind");
}

std::vector<Tensor> ClipEncoder::params() const {
    std::vector<Tensor> out;
    if (embed.enabled) out = {w1, b1, w2, b2};
    if (att) {
        auto hp = att->params();
        out.insert(out.end(), hp.begin(), hp.end());
    }
    if (rnn) {
        auto hp = rnn->params();
        out.insert(out.end(), hp.begin(), hp.end());
    }
    return out;
}

}  // namespace trackrank
