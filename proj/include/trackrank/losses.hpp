#pragma once

#include <vector>

#include "trackrank/tensor.hpp"

namespace trackrank {

/// One training batch: P identities x K clips, already encoded.
struct LabeledBatch {
    Tensor embeddings;            // [N x D], N = P*K
    std::vector<int> identities;  // length N
    Tensor logits;                // optional, [N x num_identities]
};

enum class Reduction { mean, sum };

struct TripletConfig {
    double margin = 0.3;
    Reduction reduction = Reduction::mean;  // sum reproduces the formulation literally
};

/// Per-anchor hinge over (margin + hardest positive - hardest negative)
/// with Euclidean distances; positives include the anchor itself (its zero
/// self-distance is never maximal).
Tensor batch_hard_triplet(const LabeledBatch& batch, const TripletConfig& config);

/// Mean over the batch of -log softmax(logits) at the true identity.
Tensor softmax_cross_entropy(const LabeledBatch& batch);

struct LossBreakdown {
    Tensor triplet;
    Tensor cross_entropy;
    Tensor total;  // unweighted sum
};

LossBreakdown total_loss(const LabeledBatch& batch, const TripletConfig& config);

/// Identity classifier head: single affine embedding_dim -> num_identities,
/// zero-initialized bias.
struct Classifier {
    Tensor w, b;
    Classifier() = default;
    Classifier(int64_t dim, int64_t classes, std::mt19937_64& rng);
    Tensor logits(const Tensor& embeddings) const { return affine(embeddings, w, b); }
    std::vector<Tensor> params() const { return {w, b}; }
};

}  // namespace trackrank
