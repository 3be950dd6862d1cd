#pragma once

#include <map>
#include <vector>

#include "trackrank/aggregators.hpp"

namespace trackrank {

/// A time-ordered sequence of frames of one person from one camera.
struct Tracklet {
    int identity = 0;
    int camera = 0;
    Tensor frames;  // [len x D] or [len x w x h x C]
    int64_t length() const { return frames.defined() ? frames.dim(0) : 0; }
};

struct SamplerConfig {
    int64_t P = 4;  // identities per batch
    int64_t K = 8;  // clips per identity
    int64_t T = 4;  // frames per clip
    uint64_t seed = 0;
};

/// Consecutive non-overlapping T-frame clips from the start; a trailing
/// remainder is padded by repeating its last frame and flagged.
std::vector<FeatureClip> cut_clips(const Tracklet& tracklet, int64_t T);

struct BatchItem {
    FeatureClip clip;
    int identity = 0;
};

/// Identity-balanced batch sampler: P distinct identities x K clips each.
/// Each step draws from an independent stream derived from (seed, step), so
/// resuming at step s reproduces the uninterrupted sequence.
class PKSampler {
  public:
    PKSampler(const std::vector<Tracklet>& dataset, SamplerConfig config);
    std::vector<BatchItem> sample(uint64_t step) const;
    int64_t num_identities() const { return static_cast<int64_t>(ids_.size()); }

  private:
    SamplerConfig config_;
    std::vector<int> ids_;
    std::map<int, std::vector<FeatureClip>> clips_by_id_;
};

}  // namespace trackrank
