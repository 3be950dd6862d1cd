#include "trackrank/losses.hpp"

#include <cmath>
#include <set>

namespace trackrank {

namespace {

void check_batch(const LabeledBatch& batch) {
    if (!batch.embeddings.defined() || batch.embeddings.rank() != 2)
        throw ShapeError("loss: embeddings must be [N x D]");
    if (static_cast<int64_t>(batch.identities.size()) != batch.embeddings.dim(0))
        throw ShapeError("loss: " + std::to_string(batch.identities.size()) + " labels for " +
                         std::to_string(batch.embeddings.dim(0)) + " embeddings");
}

}  // namespace

Tensor batch_hard_triplet(const LabeledBatch& batch, const TripletConfig& config) {
    check_batch(batch);
    if (config.margin < 0) throw ShapeError("batch_hard_triplet: margin must be non-negative");
    const int64_t N = batch.embeddings.dim(0);
    std::set<int> distinct(batch.identities.begin(), batch.identities.end());
    if (distinct.size() < 2)
        throw ShapeError("batch_hard_triplet: fewer than 2 identities in batch, no negatives exist");

    std::vector<double> pos(static_cast<size_t>(N * N), 0.0), neg(static_cast<size_t>(N * N), 0.0);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j) {
            const bool same = batch.identities[static_cast<size_t>(i)] == batch.identities[static_cast<size_t>(j)];
            (same ? pos : neg)[static_cast<size_t>(i * N + j)] = 1.0;
        }
    const Tensor d = pairwise_distance(batch.embeddings, batch.embeddings);
    const Tensor hardest_pos = masked_max(d, Tensor::from({N, N}, std::move(pos)), 1);
    const Tensor hardest_neg = masked_min(d, Tensor::from({N, N}, std::move(neg)), 1);
    const Tensor hinge = relu(add_const(sub(hardest_pos, hardest_neg), config.margin));
    return config.reduction == Reduction::mean ? reduce_mean(hinge, 0) : reduce_sum(hinge, 0);
}

Tensor softmax_cross_entropy(const LabeledBatch& batch) {
    check_batch(batch);
    if (!batch.logits.defined()) throw ShapeError("softmax_cross_entropy: batch has no logits");
    if (batch.logits.rank() != 2 || batch.logits.dim(0) != batch.embeddings.dim(0))
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(batch.logits.shape()) +
                         " do not match batch size " + std::to_string(batch.embeddings.dim(0)));
    const int64_t N = batch.logits.dim(0), C = batch.logits.dim(1);
    std::vector<double> onehot(static_cast<size_t>(N * C), 0.0);
    for (int64_t i = 0; i < N; ++i) {
        const int label = batch.identities[static_cast<size_t>(i)];
        if (label < 0 || label >= C)
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                             std::to_string(C) + ")");
        onehot[static_cast<size_t>(i * C + label)] = 1.0;
    }
    const Tensor lse = logsumexp(batch.logits, 1);
    const Tensor true_logit = reduce_sum(mul(batch.logits, Tensor::from({N, C}, std::move(onehot))), 1);
    return reduce_mean(sub(lse, true_logit), 0);
}

LossBreakdown total_loss(const LabeledBatch& batch, const TripletConfig& config) {
    LossBreakdown out;
    out.triplet = batch_hard_triplet(batch, config);
    out.cross_entropy = softmax_cross_entropy(batch);
    out.total = add(out.cross_entropy, out.triplet);
    return out;
}

Classifier::Classifier(int64_t dim, int64_t classes, std::mt19937_64& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(dim));
    w = Tensor::uniform({dim, classes}, rng, -k, k, "cls.w");
    b = Tensor::zeros({classes}, true);
    b.set_name("cls.b");
}

}  // namespace trackrank
