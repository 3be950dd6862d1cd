#include "trackrank/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "trackrank/parallel.hpp"

namespace trackrank {

VideoEmbedding video_embedding(const std::vector<ClipEmbedding>& clips, int identity, int camera,
                               bool drop_padded) {
    if (clips.empty()) throw ShapeError("video_embedding: no clips");
    std::vector<const ClipEmbedding*> kept;
    for (const auto& c : clips)
        if (!(drop_padded && c.padded)) kept.push_back(&c);
    if (kept.empty())  // tracklet shorter than one clip: keep the padded clips
        for (const auto& c : clips) kept.push_back(&c);

    const int64_t D = kept[0]->vector.numel();
    for (const auto* c : kept)
        if (c->vector.numel() != D)
            throw ShapeError("video_embedding: clip dimensions disagree, " + shape_str(c->vector.shape()) +
                             " vs " + shape_str(kept[0]->vector.shape()));
    VideoEmbedding out;
    out.identity = identity;
    out.camera = camera;
    out.vector.assign(static_cast<size_t>(D), 0.0);
    for (const auto* c : kept) {
        const auto& v = c->vector.value();
        for (int64_t d = 0; d < D; ++d) out.vector[static_cast<size_t>(d)] += v[static_cast<size_t>(d)];
    }
    for (auto& v : out.vector) v /= static_cast<double>(kept.size());
    return out;
}

Tensor distance_matrix(const std::vector<VideoEmbedding>& queries, const std::vector<VideoEmbedding>& gallery) {
    if (queries.empty() || gallery.empty()) throw ShapeError("distance_matrix: empty input");
    const size_t D = queries[0].vector.size();
    for (const auto& e : queries)
        if (e.vector.size() != D) throw ShapeError("distance_matrix: query dimensions disagree");
    for (const auto& e : gallery)
        if (e.vector.size() != D)
            throw ShapeError("distance_matrix: gallery dimension " + std::to_string(e.vector.size()) +
                             " does not match query dimension " + std::to_string(D));
    const int64_t Q = static_cast<int64_t>(queries.size()), G = static_cast<int64_t>(gallery.size());
    std::vector<double> out(static_cast<size_t>(Q * G));
    parallel_for(Q, [&](int64_t i) {
        for (int64_t j = 0; j < G; ++j) {
            double ss = 0.0;
            for (size_t d = 0; d < D; ++d) {
                const double diff = queries[static_cast<size_t>(i)].vector[d] - gallery[static_cast<size_t>(j)].vector[d];
                ss += diff * diff;
            }
            out[static_cast<size_t>(i * G + j)] = std::sqrt(ss);
        }
    });
    return Tensor::from({Q, G}, std::move(out));
}

RetrievalResult evaluate(const Tensor& distances, const std::vector<int>& query_ids,
                         const std::vector<int>& query_cams, const std::vector<int>& gallery_ids,
                         const std::vector<int>& gallery_cams) {
    if (!distances.defined() || distances.rank() != 2)
        throw ShapeError("evaluate: distances must be [Q x G]");
    const int64_t Q = distances.dim(0), G = distances.dim(1);
    if (static_cast<int64_t>(query_ids.size()) != Q || static_cast<int64_t>(query_cams.size()) != Q)
        throw ShapeError("evaluate: query metadata length does not match " + std::to_string(Q) + " rows");
    if (static_cast<int64_t>(gallery_ids.size()) != G || static_cast<int64_t>(gallery_cams.size()) != G)
        throw ShapeError("evaluate: gallery metadata length does not match " + std::to_string(G) + " columns");

    RetrievalResult res;
    res.distances = distances;
    res.ranked.resize(static_cast<size_t>(Q));
    res.ap.assign(static_cast<size_t>(Q), 0.0);
    res.valid.assign(static_cast<size_t>(Q), false);
    std::vector<int64_t> first_hit(static_cast<size_t>(Q), -1);

    const auto& d = distances.value();
    parallel_for(Q, [&](int64_t q) {
        std::vector<std::pair<double, int64_t>> order;
        order.reserve(static_cast<size_t>(G));
        bool any_rel = false;
        for (int64_t g = 0; g < G; ++g) {
            // cross-camera protocol: same identity AND same camera is junk
            if (gallery_ids[static_cast<size_t>(g)] == query_ids[static_cast<size_t>(q)] &&
                gallery_cams[static_cast<size_t>(g)] == query_cams[static_cast<size_t>(q)])
                continue;
            order.emplace_back(d[static_cast<size_t>(q * G + g)], g);
            if (gallery_ids[static_cast<size_t>(g)] == query_ids[static_cast<size_t>(q)]) any_rel = true;
        }
        std::sort(order.begin(), order.end());  // ties break by gallery index
        auto& ranked = res.ranked[static_cast<size_t>(q)];
        ranked.reserve(order.size());
        for (const auto& entry : order) ranked.push_back(entry.second);
        if (!any_rel) return;

        int64_t hits = 0;
        double prec_sum = 0.0;
        for (size_t r = 0; r < order.size(); ++r) {
            if (gallery_ids[static_cast<size_t>(order[r].second)] == query_ids[static_cast<size_t>(q)]) {
                ++hits;
                prec_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
                if (first_hit[static_cast<size_t>(q)] < 0) first_hit[static_cast<size_t>(q)] = static_cast<int64_t>(r);
            }
        }
        res.ap[static_cast<size_t>(q)] = prec_sum / static_cast<double>(hits);
        res.valid[static_cast<size_t>(q)] = true;
    });

    std::vector<double> hit_counts(static_cast<size_t>(G), 0.0);
    double ap_sum = 0.0;
    for (int64_t q = 0; q < Q; ++q) {
        if (!res.valid[static_cast<size_t>(q)]) {
            ++res.num_skipped_queries;
            continue;
        }
        ++res.num_valid_queries;
        ap_sum += res.ap[static_cast<size_t>(q)];
        hit_counts[static_cast<size_t>(std::min(first_hit[static_cast<size_t>(q)], G - 1))] += 1.0;
    }
    if (res.num_valid_queries == 0)
        throw ShapeError("evaluate: no valid queries (no query has a cross-camera match)");
    res.map = ap_sum / static_cast<double>(res.num_valid_queries);
    res.cmc.resize(static_cast<size_t>(G));
    double acc = 0.0;
    for (int64_t k = 0; k < G; ++k) {
        acc += hit_counts[static_cast<size_t>(k)];
        res.cmc[static_cast<size_t>(k)] = acc / static_cast<double>(res.num_valid_queries);
    }
    return res;
}

RetrievalResult evaluate(const Tensor& distances, const std::vector<VideoEmbedding>& queries,
                         const std::vector<VideoEmbedding>& gallery) {
    std::vector<int> qid, qcam, gid, gcam;
    for (const auto& e : queries) {
        qid.push_back(e.identity);
        qcam.push_back(e.camera);
    }
    for (const auto& e : gallery) {
        gid.push_back(e.identity);
        gcam.push_back(e.camera);
    }
    return evaluate(distances, qid, qcam, gid, gcam);
}

nlohmann::json metrics_json(const RetrievalResult& result, const std::vector<int>& ranks,
                            double runtime_seconds) {
    const int64_t G = static_cast<int64_t>(result.cmc.size());
    nlohmann::json cmc = nlohmann::json::object();
    for (int r : ranks) {
        if (r < 1) throw ShapeError("metrics_json: rank " + std::to_string(r) + " < 1");
        const int64_t clamped = std::min<int64_t>(r, G);
        cmc[std::to_string(r)] = result.cmc[static_cast<size_t>(clamped - 1)];
    }
    return {{"map", result.map},
            {"cmc", cmc},
            {"num_valid_queries", result.num_valid_queries},
            {"num_skipped_queries", result.num_skipped_queries},
            {"runtime_seconds", runtime_seconds}};
}

namespace {

// positions 0..k-1 of row i's (distance, index)-sorted ranking
struct UnionRanking {
    int64_t N = 0;
    std::vector<int64_t> order;  // [N x N] sorted indices per row
    std::vector<int32_t> pos;    // pos[i*N+j] = rank of j in row i
};

UnionRanking rank_union(const std::vector<double>& D, int64_t N) {
    UnionRanking r;
    r.N = N;
    r.order.resize(static_cast<size_t>(N * N));
    r.pos.resize(static_cast<size_t>(N * N));
    parallel_for(N, [&](int64_t i) {
        std::vector<std::pair<double, int64_t>> row(static_cast<size_t>(N));
        for (int64_t j = 0; j < N; ++j) row[static_cast<size_t>(j)] = {D[static_cast<size_t>(i * N + j)], j};
        std::sort(row.begin(), row.end());
        for (int64_t k = 0; k < N; ++k) {
            r.order[static_cast<size_t>(i * N + k)] = row[static_cast<size_t>(k)].second;
            r.pos[static_cast<size_t>(i * N + row[static_cast<size_t>(k)].second)] = static_cast<int32_t>(k);
        }
    });
    return r;
}

// mutual k-NN of i, self included via the k+1 window
std::vector<int64_t> reciprocal_set(const UnionRanking& r, int64_t i, int64_t k) {
    std::vector<int64_t> out;
    const int64_t take = std::min(k + 1, r.N);
    for (int64_t t = 0; t < take; ++t) {
        const int64_t j = r.order[static_cast<size_t>(i * r.N + t)];
        if (r.pos[static_cast<size_t>(j * r.N + i)] < k + 1) out.push_back(j);
    }
    return out;
}

}  // namespace

Tensor rerank(const Tensor& query_gallery, const Tensor& gallery_gallery, const Tensor& query_query,
              const RerankConfig& config) {
    if (!query_gallery.defined() || query_gallery.rank() != 2)
        throw ShapeError("rerank: query-gallery distances must be [Q x G]");
    const int64_t Q = query_gallery.dim(0), G = query_gallery.dim(1);
    if (!gallery_gallery.defined() || gallery_gallery.shape() != Shape{G, G})
        throw ShapeError("rerank: gallery-gallery block must be [" + std::to_string(G) + " x " + std::to_string(G) +
                         "], got " + shape_str(gallery_gallery.shape()));
    if (!query_query.defined() || query_query.shape() != Shape{Q, Q})
        throw ShapeError("rerank: query-query block must be [" + std::to_string(Q) + " x " + std::to_string(Q) +
                         "], got " + shape_str(query_query.shape()));
    if (config.k1 < 1 || config.k2 < 1) throw ShapeError("rerank: k1 and k2 must be >= 1");
    if (config.k1 > G || config.k2 > G)
        throw ShapeError("rerank: k1 = " + std::to_string(config.k1) + ", k2 = " + std::to_string(config.k2) +
                         " must not exceed gallery size " + std::to_string(G));
    if (config.lambda < 0.0 || config.lambda > 1.0) throw ShapeError("rerank: lambda must be in [0, 1]");

    const int64_t N = Q + G;
    const auto& qg = query_gallery.value();
    const auto& gg = gallery_gallery.value();
    const auto& qq = query_query.value();
    std::vector<double> D(static_cast<size_t>(N * N));
    for (int64_t i = 0; i < Q; ++i)
        for (int64_t j = 0; j < Q; ++j) D[static_cast<size_t>(i * N + j)] = qq[static_cast<size_t>(i * Q + j)];
    for (int64_t i = 0; i < Q; ++i)
        for (int64_t j = 0; j < G; ++j) {
            D[static_cast<size_t>(i * N + Q + j)] = qg[static_cast<size_t>(i * G + j)];
            D[static_cast<size_t>((Q + j) * N + i)] = qg[static_cast<size_t>(i * G + j)];
        }
    for (int64_t i = 0; i < G; ++i)
        for (int64_t j = 0; j < G; ++j)
            D[static_cast<size_t>((Q + i) * N + Q + j)] = gg[static_cast<size_t>(i * G + j)];

    const UnionRanking ranking = rank_union(D, N);
    const int64_t khalf = std::lround(static_cast<double>(config.k1) / 2.0);

    // exp(-d) memberships over expanded reciprocal sets, L1-normalized rows
    std::vector<double> V(static_cast<size_t>(N * N), 0.0);
    parallel_for(N, [&](int64_t i) {
        const std::vector<int64_t> rset = reciprocal_set(ranking, i, config.k1);
        std::vector<char> in_rset(static_cast<size_t>(N), 0), in_exp(static_cast<size_t>(N), 0);
        for (int64_t j : rset) in_rset[static_cast<size_t>(j)] = 1;
        std::vector<int64_t> expanded = rset;
        for (int64_t j : expanded) in_exp[static_cast<size_t>(j)] = 1;
        for (int64_t j : rset) {
            const std::vector<int64_t> sub = reciprocal_set(ranking, j, khalf);
            int64_t overlap = 0;
            for (int64_t c : sub) overlap += in_rset[static_cast<size_t>(c)];
            if (3 * overlap >= 2 * static_cast<int64_t>(sub.size()))
                for (int64_t c : sub)
                    if (!in_exp[static_cast<size_t>(c)]) {
                        in_exp[static_cast<size_t>(c)] = 1;
                        expanded.push_back(c);
                    }
        }
        double wsum = 0.0;
        for (int64_t j : expanded) {
            const double w = std::exp(-D[static_cast<size_t>(i * N + j)]);
            V[static_cast<size_t>(i * N + j)] = w;
            wsum += w;
        }
        if (wsum == 0.0) throw NumericError("rerank: empty reciprocal set for item " + std::to_string(i));
        for (int64_t j : expanded) V[static_cast<size_t>(i * N + j)] /= wsum;
    });

    if (config.k2 > 1) {  // local query expansion: average V rows over the k2-NN
        std::vector<double> Vqe(static_cast<size_t>(N * N), 0.0);
        parallel_for(N, [&](int64_t i) {
            const int64_t take = std::min(config.k2, N);
            for (int64_t t = 0; t < take; ++t) {
                const int64_t j = ranking.order[static_cast<size_t>(i * N + t)];
                for (int64_t c = 0; c < N; ++c)
                    Vqe[static_cast<size_t>(i * N + c)] +=
                        V[static_cast<size_t>(j * N + c)] / static_cast<double>(take);
            }
        });
        V = std::move(Vqe);
    }

    std::vector<double> out(static_cast<size_t>(Q * G));
    parallel_for(Q, [&](int64_t i) {
        for (int64_t j = 0; j < G; ++j) {
            double smin = 0.0;
            for (int64_t c = 0; c < N; ++c)
                smin += std::min(V[static_cast<size_t>(i * N + c)], V[static_cast<size_t>((Q + j) * N + c)]);
            // rounding can land one ulp below zero when the rows coincide
            const double jaccard = std::max(0.0, 1.0 - smin / (2.0 - smin));
            out[static_cast<size_t>(i * G + j)] =
                config.lambda * qg[static_cast<size_t>(i * G + j)] + (1.0 - config.lambda) * jaccard;
        }
    });
    return Tensor::from({Q, G}, std::move(out));
}

}  // namespace trackrank
