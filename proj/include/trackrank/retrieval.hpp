#pragma once

#include <json.hpp>
#include <vector>

#include "trackrank/tensor.hpp"

namespace trackrank {

/// One encoded clip plus the padding flag carried over from cut_clips.
struct ClipEmbedding {
    Tensor vector;  // [D]
    bool padded = false;
};

struct VideoEmbedding {
    std::vector<double> vector;
    int identity = 0;
    int camera = 0;
};

/// Arithmetic mean of the clip vectors. Padded clips are averaged in by
/// default; drop_padded excludes them, falling back to the full set when a
/// tracklet is shorter than one clip (all of its clips are padded).
VideoEmbedding video_embedding(const std::vector<ClipEmbedding>& clips, int identity, int camera,
                               bool drop_padded = false);

/// Euclidean distances, entry (i,j) = |queries[i] - gallery[j]|.
Tensor distance_matrix(const std::vector<VideoEmbedding>& queries, const std::vector<VideoEmbedding>& gallery);

struct RetrievalResult {
    Tensor distances;                          // [Q x G], as given
    std::vector<std::vector<int64_t>> ranked;  // per query: post-exclusion gallery indices, best first
    std::vector<double> ap;                    // per query; meaningful where valid[q]
    std::vector<bool> valid;                   // query has >= 1 cross-camera match
    double map = 0.0;
    std::vector<double> cmc;                   // full curve, cmc[r-1] = CMC at rank r, r = 1..G
    int64_t num_valid_queries = 0;
    int64_t num_skipped_queries = 0;
};

/// mAP/CMC under the cross-camera protocol: gallery entries sharing both
/// identity and camera with the query are excluded from its ranking; ties in
/// distance break by gallery index. Queries without any valid match are
/// skipped and counted; all queries invalid is an error.
RetrievalResult evaluate(const Tensor& distances, const std::vector<int>& query_ids,
                         const std::vector<int>& query_cams, const std::vector<int>& gallery_ids,
                         const std::vector<int>& gallery_cams);
RetrievalResult evaluate(const Tensor& distances, const std::vector<VideoEmbedding>& queries,
                         const std::vector<VideoEmbedding>& gallery);

/// {"map", "cmc" (keyed by requested rank, clamped to the gallery size),
///  "num_valid_queries", "num_skipped_queries", "runtime_seconds"}
nlohmann::json metrics_json(const RetrievalResult& result, const std::vector<int>& ranks, double runtime_seconds);

struct RerankConfig {
    int64_t k1 = 20;      // reciprocal neighborhood size
    int64_t k2 = 6;       // local query expansion size
    double lambda = 0.3;  // weight of the original distance
};

/// k-reciprocal re-ranking over the query+gallery union: mutual k1-NN sets
/// with half-set expansion, exp(-d) weights L1-normalized per row, k2 local
/// query expansion, then final = lambda * original + (1-lambda) * Jaccard.
Tensor rerank(const Tensor& query_gallery, const Tensor& gallery_gallery, const Tensor& query_query,
              const RerankConfig& config = {});

}  // namespace trackrank
