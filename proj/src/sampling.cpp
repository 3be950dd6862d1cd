#include "trackrank/sampling.hpp"

#include <algorithm>

namespace trackrank {

std::vector<FeatureClip> cut_clips(const Tracklet& tracklet, int64_t T) {
    if (T < 1) throw ShapeError("cut_clips: T must be >= 1");
    const int64_t len = tracklet.length();
    if (len == 0) throw ShapeError("cut_clips: empty tracklet");
    const int64_t frame_elems = tracklet.frames.numel() / len;
    Shape clip_shape = tracklet.frames.shape();
    clip_shape[0] = T;
    const auto& src = tracklet.frames.value();

    std::vector<FeatureClip> out;
    const int64_t full = len / T, rem = len % T;
    for (int64_t c = 0; c < full; ++c) {
        std::vector<double> data(src.begin() + static_cast<int64_t>(c * T * frame_elems),
                                 src.begin() + static_cast<int64_t>((c + 1) * T * frame_elems));
        out.push_back({Tensor::from(clip_shape, std::move(data)), false});
    }
    if (rem > 0) {
        std::vector<double> data(src.begin() + static_cast<int64_t>(full * T * frame_elems), src.end());
        data.reserve(static_cast<size_t>(T * frame_elems));
        for (int64_t p = rem; p < T; ++p)  // repeat the last real frame
            data.insert(data.end(), src.end() - frame_elems, src.end());
        out.push_back({Tensor::from(clip_shape, std::move(data)), true});
    }
    return out;
}

PKSampler::PKSampler(const std::vector<Tracklet>& dataset, SamplerConfig config) : config_(config) {
    if (config.P < 2 || config.K < 1 || config.T < 1)
        throw ShapeError("sampler: require P >= 2, K >= 1, T >= 1");
    for (const auto& t : dataset) {
        auto clips = cut_clips(t, config.T);
        auto& bucket = clips_by_id_[t.identity];
        bucket.insert(bucket.end(), clips.begin(), clips.end());
    }
    for (const auto& [id, clips] : clips_by_id_) ids_.push_back(id);
    if (static_cast<int64_t>(ids_.size()) < config.P)
        throw ShapeError("sampler: dataset has " + std::to_string(ids_.size()) + " identities, need P = " +
                         std::to_string(config.P));
}

std::vector<BatchItem> PKSampler::sample(uint64_t step) const {
    auto rng = seeded_engine(config_.seed, step);
    // partial Fisher-Yates: first P entries are a uniform distinct draw
    std::vector<int> pool = ids_;
    for (int64_t i = 0; i < config_.P; ++i) {
        std::uniform_int_distribution<size_t> pick(static_cast<size_t>(i), pool.size() - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[pick(rng)]);
    }
    std::vector<BatchItem> batch;
    batch.reserve(static_cast<size_t>(config_.P * config_.K));
    for (int64_t i = 0; i < config_.P; ++i) {
        const int id = pool[static_cast<size_t>(i)];
        const auto& clips = clips_by_id_.at(id);
        if (static_cast<int64_t>(clips.size()) < config_.K) {
            // too few clips: draw uniformly with replacement
            std::uniform_int_distribution<size_t> pick(0, clips.size() - 1);
            for (int64_t k = 0; k < config_.K; ++k) batch.push_back({clips[pick(rng)], id});
        } else {
            std::vector<size_t> idx(clips.size());
            for (size_t j = 0; j < idx.size(); ++j) idx[j] = j;
            for (int64_t k = 0; k < config_.K; ++k) {
                std::uniform_int_distribution<size_t> pick(static_cast<size_t>(k), idx.size() - 1);
                std::swap(idx[static_cast<size_t>(k)], idx[pick(rng)]);
                batch.push_back({clips[idx[static_cast<size_t>(k)]], id});
            }
        }
    }
    return batch;
}

}  // namespace trackrank
