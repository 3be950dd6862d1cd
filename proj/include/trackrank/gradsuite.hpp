#pragma once

#include <string>
#include <vector>

#include "trackrank/losses.hpp"

namespace trackrank {

struct GradSuiteRow {
    std::string head;
    std::string loss;  // "triplet" | "cross_entropy"
    int seeds = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Finite-difference checks of every requested (head, loss) pair on small
/// random clip batches, `seeds` instances per row. Instances that land near
/// a hinge kink or a pooling/mining tie are redrawn so central differences
/// stay valid; rows keep head order, triplet before cross-entropy.
std::vector<GradSuiteRow> run_gradsuite(const std::vector<std::string>& heads, int seeds, double tolerance);

}  // namespace trackrank
