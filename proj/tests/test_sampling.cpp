#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "trackrank/sampling.hpp"

using namespace trackrank;

namespace {
Tracklet make_tracklet(int identity, int camera, int64_t len, int64_t D, double base) {
    Tracklet t;
    t.identity = identity;
    t.camera = camera;
    std::vector<double> data(static_cast<size_t>(len * D));
    for (int64_t f = 0; f < len; ++f)
        for (int64_t d = 0; d < D; ++d) data[static_cast<size_t>(f * D + d)] = base + static_cast<double>(f);
    t.frames = Tensor::from({len, 1, 1, D}, std::move(data));
    return t;
}
}  // namespace

TEST_CASE("a 9-frame tracklet cut at T=4 yields two full clips and one padded") {
    Tracklet t = make_tracklet(0, 0, 9, 2, 100.0);
    auto clips = cut_clips(t, 4);
    REQUIRE(clips.size() == 3);
    CHECK_FALSE(clips[0].padded);
    CHECK_FALSE(clips[1].padded);
    CHECK(clips[2].padded);
    for (const auto& c : clips) CHECK(c.length() == 4);
    // clip 0 = frames 0..3, clip 1 = frames 4..7, clip 2 = frame 8 repeated
    const auto& v0 = clips[0].frames.value();
    const auto& v1 = clips[1].frames.value();
    const auto& v2 = clips[2].frames.value();
    for (int64_t f = 0; f < 4; ++f) {
        CHECK(v0[static_cast<size_t>(f * 2)] == 100.0 + static_cast<double>(f));
        CHECK(v1[static_cast<size_t>(f * 2)] == 100.0 + static_cast<double>(f + 4));
        CHECK(v2[static_cast<size_t>(f * 2)] == 108.0);
    }
}

TEST_CASE("exact-length and single-frame cuts") {
    auto exact = cut_clips(make_tracklet(0, 0, 4, 3, 0.0), 4);
    REQUIRE(exact.size() == 1);
    CHECK_FALSE(exact[0].padded);

    auto singles = cut_clips(make_tracklet(0, 0, 5, 3, 0.0), 1);
    REQUIRE(singles.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
        CHECK_FALSE(singles[i].padded);
        CHECK(singles[i].frames.value()[0] == static_cast<double>(i));
    }
}

TEST_CASE("concatenating clips minus padding reconstructs the tracklet") {
    for (int64_t len : {3, 7, 8, 13}) {
        const int64_t T = 4, D = 2;
        Tracklet t = make_tracklet(1, 0, len, D, 50.0);
        auto clips = cut_clips(t, T);
        std::vector<double> rebuilt;
        for (size_t ci = 0; ci < clips.size(); ++ci) {
            const auto& v = clips[ci].frames.value();
            int64_t keep = T;
            if (clips[ci].padded) {
                const int64_t r = len % T;
                keep = (r == 0) ? T : r;
            }
            rebuilt.insert(rebuilt.end(), v.begin(), v.begin() + keep * D);
        }
        CHECK(rebuilt == t.frames.value());
    }
}

TEST_CASE("cut_clips validates inputs") {
    Tracklet t = make_tracklet(0, 0, 3, 2, 0.0);
    CHECK_THROWS_AS((void)cut_clips(t, 0), ShapeError);
    Tracklet empty;
    empty.frames = Tensor::zeros({0, 1, 1, 2});
    CHECK_THROWS_AS((void)cut_clips(empty, 4), ShapeError);
}

TEST_CASE("PK batches hold exactly P identities with K clips each") {
    std::vector<Tracklet> pool;
    for (int id = 0; id < 7; ++id)
        for (int cam = 0; cam < 2; ++cam) pool.push_back(make_tracklet(id, cam, 12, 2, id * 10.0));
    SamplerConfig cfg;
    cfg.P = 4;
    cfg.K = 2;
    cfg.T = 4;
    cfg.seed = 11;
    PKSampler sampler(pool, cfg);
    CHECK(sampler.num_identities() == 7);
    for (uint64_t step = 0; step < 5; ++step) {
        auto batch = sampler.sample(step);
        REQUIRE(batch.size() == 8);
        std::map<int, int> counts;
        for (const auto& item : batch) {
            counts[item.identity]++;
            CHECK(item.clip.length() == 4);
        }
        CHECK(counts.size() == 4);
        for (const auto& [id, n] : counts) CHECK(n == 2);
    }
}

TEST_CASE("an identity with a single clip is repeated to fill K") {
    std::vector<Tracklet> pool;
    pool.push_back(make_tracklet(0, 0, 4, 2, 0.0));   // exactly one clip
    pool.push_back(make_tracklet(1, 0, 40, 2, 9.0));  // ten clips
    SamplerConfig cfg;
    cfg.P = 2;
    cfg.K = 4;
    cfg.T = 4;
    PKSampler sampler(pool, cfg);
    auto batch = sampler.sample(0);
    REQUIRE(batch.size() == 8);
    std::vector<const FeatureClip*> id0;
    std::set<const detail::Node*> id1_nodes;
    for (const auto& item : batch) {
        if (item.identity == 0)
            id0.push_back(&item.clip);
        else
            id1_nodes.insert(item.clip.frames.node().get());
    }
    REQUIRE(id0.size() == 4);
    for (const auto* c : id0) CHECK(c->frames.value() == id0[0]->frames.value());
    // identity 1 has enough material for a distinct draw
    CHECK(id1_nodes.size() == 4);
}

TEST_CASE("sampling is deterministic per (seed, step) and independent of call order") {
    std::vector<Tracklet> pool;
    for (int id = 0; id < 5; ++id) pool.push_back(make_tracklet(id, id % 2, 16, 2, id * 5.0));
    SamplerConfig cfg;
    cfg.P = 3;
    cfg.K = 2;
    cfg.T = 4;
    cfg.seed = 42;
    PKSampler a(pool, cfg);
    PKSampler b(pool, cfg);
    auto batch3 = a.sample(3);
    (void)b.sample(9);  // different step first: must not disturb step 3
    auto batch3b = b.sample(3);
    REQUIRE(batch3.size() == batch3b.size());
    for (size_t i = 0; i < batch3.size(); ++i) {
        CHECK(batch3[i].identity == batch3b[i].identity);
        CHECK(batch3[i].clip.frames.value() == batch3b[i].clip.frames.value());
    }
    // a different seed changes the draw
    SamplerConfig other = cfg;
    other.seed = 43;
    PKSampler c(pool, other);
    auto alt = c.sample(3);
    bool same = true;
    for (size_t i = 0; i < batch3.size() && same; ++i)
        same = batch3[i].identity == alt[i].identity && batch3[i].clip.frames.value() == alt[i].clip.frames.value();
    CHECK_FALSE(same);
}

TEST_CASE("sampler rejects pools with fewer than P identities and bad configs") {
    std::vector<Tracklet> pool;
    pool.push_back(make_tracklet(0, 0, 8, 2, 0.0));
    pool.push_back(make_tracklet(1, 0, 8, 2, 1.0));
    SamplerConfig cfg;
    cfg.P = 3;
    cfg.K = 1;
    cfg.T = 4;
    CHECK_THROWS_WITH_AS(PKSampler(pool, cfg), doctest::Contains("2 identities"), ShapeError);
    SamplerConfig bad = cfg;
    bad.P = 1;
    CHECK_THROWS_AS(PKSampler(pool, bad), ShapeError);
}

TEST_CASE("identity frequencies over many batches stay within 5 sigma of uniform") {
    const int n_ids = 10;
    std::vector<Tracklet> pool;
    for (int id = 0; id < n_ids; ++id) pool.push_back(make_tracklet(id, 0, 8, 1, id * 1.0));
    SamplerConfig cfg;
    cfg.P = 4;
    cfg.K = 1;
    cfg.T = 4;
    cfg.seed = 7;
    PKSampler sampler(pool, cfg);
    const int n_batches = 10000;
    std::vector<int64_t> counts(n_ids, 0);
    for (int step = 0; step < n_batches; ++step)
        for (const auto& item : sampler.sample(static_cast<uint64_t>(step)))
            counts[static_cast<size_t>(item.identity)]++;
    // each batch draws P of n_ids without replacement: per-identity count is
    // Binomial(n_batches, P/n_ids)
    const double p = static_cast<double>(cfg.P) / n_ids;
    const double mean = n_batches * p;
    const double sigma = std::sqrt(n_batches * p * (1.0 - p));
    for (int id = 0; id < n_ids; ++id) {
        INFO("identity ", id, " count ", counts[static_cast<size_t>(id)]);
        CHECK(std::abs(static_cast<double>(counts[static_cast<size_t>(id)]) - mean) < 5.0 * sigma);
    }
}
