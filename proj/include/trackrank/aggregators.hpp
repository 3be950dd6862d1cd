#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trackrank/tensor.hpp"

namespace trackrank {

/// Per-frame feature geometry: vector features are w = h = 1 with c = D.
struct FrameLayout {
    int64_t w = 1, h = 1, c = 0;
    bool is_map() const { return w != 1 || h != 1; }
    int64_t frame_dim() const { return w * h * c; }
};

/// A fixed-length run of frame features: [T x D] vector form or
/// [T x w x h x C] map form.
struct FeatureClip {
    Tensor frames;
    bool padded = false;  // tail was filled by repeating the last frame
    bool map_form() const { return frames.rank() == 4; }
    int64_t length() const { return frames.dim(0); }
};

/// Global spatial average over w x h; identity for vector-form clips.
FeatureClip to_vector_form(const FeatureClip& clip);

enum class PoolMode { avg, max };
enum class AttentionNetwork { spatial_fc, spatial_temporal_conv };
enum class ScoreNorm { softmax, sigmoid_l1 };
enum class RnnCell { lstm, gru };
enum class RnnReadout { final_state, output_average };

struct AttentionConfig {
    AttentionNetwork network = AttentionNetwork::spatial_fc;
    ScoreNorm normalization = ScoreNorm::softmax;
    int64_t d_t = 256;
    int64_t temporal_kernel = 3;
    bool literal_eq1 = false;  // keep the redundant 1/T factor
};

struct RnnConfig {
    RnnCell cell = RnnCell::lstm;
    int64_t hidden = 128;
    RnnReadout readout = RnnReadout::final_state;
};

/// Elementwise mean/max over the time axis of a vector-form clip.
Tensor temporal_pool(PoolMode mode, const FeatureClip& clip);

/// Attention weights from raw scores: softmax, or sigmoid followed by L1
/// normalization. Output sums to 1.
Tensor normalize_scores(ScoreNorm mode, const Tensor& scores);

/// Weighted sum over frames: sum_t a_t f_t ([T] weights, [T x D] frames).
/// With literal_eq1 the redundant leading 1/T is kept.
Tensor attention_aggregate(const Tensor& frames, const Tensor& weights, bool literal_eq1 = false);

/// Two-layer attention score network over a map-form clip.
struct AttentionHead {
    AttentionConfig config;
    FrameLayout input;
    Tensor ws, bs;  // full-extent spatial conv: [(w*h*C) x d_t], [d_t]
    Tensor wt, bt;  // spatial_fc: [d_t x 1], [1]; spatial_temporal_conv: [1 x d_t x K], [1]

    AttentionHead(AttentionConfig cfg, FrameLayout layout, std::mt19937_64& rng);
    /// Raw per-frame scores s_t, shape [T]; input must be map-form with
    /// this head's spatial extent.
    Tensor scores(const FeatureClip& clip) const;
    /// normalize(scores) applied to the spatially averaged frames.
    Tensor aggregate(const FeatureClip& clip) const;
    std::vector<Tensor> params() const;
};

/// Single-layer recurrent aggregator (LSTM or GRU) over a vector-form clip.
struct RnnHead {
    RnnConfig config;
    int64_t input_dim = 0;
    Tensor wx, wh, b;   // lstm: [D x 4H], [H x 4H], [4H], gate order i|f|g|o
    Tensor bx, bh;      // gru: wx [D x 3H], wh [H x 3H], biases [3H], gate order r|z|n

    RnnHead(RnnConfig cfg, int64_t input_dim, std::mt19937_64& rng);
    Tensor aggregate(const FeatureClip& clip) const;
    std::vector<Tensor> params() const;
};

// ---- full clip encoder -----------------------------------------------------

enum class HeadKind { pool_avg, pool_max, attention, rnn };

struct HeadConfig {
    HeadKind kind = HeadKind::pool_avg;
    AttentionConfig attention;
    RnnConfig rnn;
};

/// Canonical head names: pool_avg, pool_max, att_{fc|conv}_{softmax|sigmoid},
/// rnn_{lstm|gru}_{final|avg}.
HeadConfig head_config_from_name(const std::string& name);
std::string head_name(const HeadConfig& cfg);
const std::vector<std::string>& all_head_names();

enum class EmbedInit { zero_final, random };

/// Trainable per-frame embedder standing in for the CNN backbone:
/// affine -> tanh -> affine. With zero_final init the second layer starts
/// at zero, so an untrained encoder maps every frame to the origin.
struct EmbedConfig {
    bool enabled = true;
    int64_t dim = 64;
    EmbedInit init = EmbedInit::zero_final;
};

/// Frame embedder + temporal head; the trainable unit producing one
/// fixed-size embedding per clip.
struct ClipEncoder {
    HeadConfig head;
    EmbedConfig embed;
    FrameLayout input;
    int64_t out_dim = 0;
    Tensor w1, b1, w2, b2;  // embedder, present iff embed.enabled
    std::optional<AttentionHead> att;
    std::optional<RnnHead> rnn;

    ClipEncoder(HeadConfig head, EmbedConfig embed, FrameLayout input, std::mt19937_64& rng);
    /// [T x D] frames -> [T x embed.dim]; identity when the embedder is off.
    Tensor embed_frames(const Tensor& frames) const;
    Tensor encode(const FeatureClip& clip) const;
    /// All trainable tensors in a fixed, named order.
    std::vector<Tensor> params() const;
};

}  // namespace trackrank
