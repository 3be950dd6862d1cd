#include "trackrank/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "trackrank/aggregators.hpp"

namespace trackrank {
namespace {

constexpr int64_t kP = 2, kK = 2, kT = 3, kD = 6;

struct Instance {
    ClipEncoder encoder;
    Classifier classifier;
    std::vector<Tensor> clips;  // leaf tensors [T x D]
    std::vector<int> ids;
};

Instance make_instance(HeadConfig head, std::mt19937_64& rng) {
    head.attention.d_t = 5;
    head.rnn.hidden = 5;
    EmbedConfig embed;
    embed.dim = 5;
    embed.init = EmbedInit::random;  // a zero-init final layer would pin every anchor at the hinge kink
    ClipEncoder encoder(head, embed, FrameLayout{1, 1, kD}, rng);
    Classifier classifier(encoder.out_dim, kP, rng);
    Instance inst{std::move(encoder), std::move(classifier), {}, {}};
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int64_t i = 0; i < kP * kK; ++i) {
        std::vector<double> vals(kT * kD);
        for (auto& v : vals) v = n01(rng);
        inst.clips.push_back(Tensor::from({kT, kD}, vals, true));
        inst.ids.push_back(static_cast<int>(i / kK));
    }
    return inst;
}

LabeledBatch forward(const Instance& inst) {
    std::vector<Tensor> rows;
    rows.reserve(inst.clips.size());
    for (const auto& c : inst.clips)
        rows.push_back(reshape(inst.encoder.encode(FeatureClip{c, false}), {1, inst.encoder.out_dim}));
    LabeledBatch b;
    b.embeddings = concat(rows, 0);
    b.identities = inst.ids;
    b.logits = inst.classifier.logits(b.embeddings);
    return b;
}

// central differences need margins: no anchor near the hinge, no near-tie in
// hardest-positive/negative selection
bool mining_safe(const Instance& inst, double margin) {
    const LabeledBatch b = forward(inst);
    const auto& e = b.embeddings.value();
    const int64_t N = kP * kK, D = b.embeddings.dim(1);
    auto dist = [&](int64_t i, int64_t j) {
        double ss = 0.0;
        for (int64_t k = 0; k < D; ++k) {
            const double d = e[i * D + k] - e[j * D + k];
            ss += d * d;
        }
        return std::sqrt(std::max(ss, 1e-16));
    };
    for (int64_t a = 0; a < N; ++a) {
        std::vector<double> pos, neg;
        for (int64_t j = 0; j < N; ++j) (inst.ids[a] == inst.ids[j] ? pos : neg).push_back(dist(a, j));
        std::sort(pos.begin(), pos.end());
        std::sort(neg.begin(), neg.end());
        if (std::abs(pos.back() - neg.front() + margin) < 1e-3) return false;
        if (pos.size() > 1 && pos.back() - pos[pos.size() - 2] < 1e-4) return false;
        if (neg.size() > 1 && neg[1] - neg[0] < 1e-4) return false;
    }
    return true;
}

// max pooling picks one frame per dimension; a near-tie flips under FD wiggle
bool maxpool_safe(const Instance& inst) {
    for (const auto& c : inst.clips) {
        const auto& v = c.value();
        for (int64_t d = 0; d < kD; ++d) {
            double top = -1e300, second = -1e300;
            for (int64_t t = 0; t < kT; ++t) {
                const double x = v[t * kD + d];
                if (x > top) {
                    second = top;
                    top = x;
                } else if (x > second) {
                    second = x;
                }
            }
            if (top - second < 1e-4) return false;
        }
    }
    return true;
}

double run_trial(const std::string& head_name, const std::string& loss, uint64_t seed, double tol) {
    const HeadConfig head = head_config_from_name(head_name);
    const TripletConfig tcfg;
    for (uint64_t attempt = 0; attempt < 50; ++attempt) {
        auto rng = seeded_engine(seed + 10007ULL * attempt, 7100);
        Instance inst = make_instance(head, rng);
        if (head.kind == HeadKind::pool_max && !maxpool_safe(inst)) continue;
        if (loss == "triplet" && !mining_safe(inst, tcfg.margin)) continue;

        std::vector<Tensor> leaves = inst.clips;
        for (auto& p : inst.encoder.params()) leaves.push_back(p);
        if (loss == "cross_entropy")
            for (auto& p : inst.classifier.params()) leaves.push_back(p);
        const auto build = [&]() {
            const LabeledBatch b = forward(inst);
            return loss == "triplet" ? batch_hard_triplet(b, tcfg) : softmax_cross_entropy(b);
        };
        const GradCheckReport rep = grad_check(leaves, build, tol);
        if (!rep.failure.empty())
            throw NumericError("gradsuite: " + head_name + "/" + loss + ": " + rep.failure);
        return rep.max_rel_err;
    }
    throw NumericError("gradsuite: could not draw a kink-free instance for " + head_name + "/" + loss);
}

}  // namespace

std::vector<GradSuiteRow> run_gradsuite(const std::vector<std::string>& heads, int seeds, double tolerance) {
    if (seeds < 1) throw ShapeError("gradsuite: seeds must be >= 1");
    if (tolerance <= 0) throw ShapeError("gradsuite: tolerance must be > 0");
    std::vector<GradSuiteRow> rows;
    for (const auto& head : heads) {
        (void)head_config_from_name(head);  // validate every name before any work
    }
    for (const auto& head : heads) {
        for (const char* loss : {"triplet", "cross_entropy"}) {
            GradSuiteRow row{head, loss, seeds, 0.0, false};
            for (int s = 0; s < seeds; ++s)
                row.max_rel_err =
                    std::max(row.max_rel_err, run_trial(head, loss, static_cast<uint64_t>(s), tolerance));
            row.pass = row.max_rel_err <= tolerance;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace trackrank
