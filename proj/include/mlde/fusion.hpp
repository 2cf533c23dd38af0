#pragma once

#include <array>

namespace mlde {

inline constexpr int kBranches = 4;

using BranchProbabilities = std::array<double, kBranches>;
using FusionWeights = std::array<double, kBranches>;

/// Learnable fusion logits; the normalized weights softmax(alpha) form a
/// convex combination of the branch probabilities.
struct FusionParameters {
  std::array<double, kBranches> alpha{};  // zeros: equal weighting

  FusionWeights normalized_weights() const;
};

/// sum_i softmax(alpha)_i * p_i. The result is clamped to [min p, max p], the
/// exact-arithmetic range, so rounding never leaves the convex hull.
double fuse(const BranchProbabilities& p, const FusionParameters& params);

struct FusionGradients {
  std::array<double, kBranches> alpha{};
  std::array<double, kBranches> p{};
};

/// Given upstream = d(loss)/d(fused):
///   d/dp_i     = upstream * w_i
///   d/dalpha_j = upstream * w_j * (p_j - fused)
FusionGradients fuse_gradients(const BranchProbabilities& p, const FusionParameters& params,
                               double upstream);

/// alpha + c; leaves the normalized weights unchanged.
FusionParameters shift_alpha(const FusionParameters& params, double c);

/// Shift so that sum(alpha) = 0.
FusionParameters canonicalize(const FusionParameters& params);

}  // namespace mlde
