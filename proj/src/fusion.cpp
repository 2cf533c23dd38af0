#include "mlde/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "mlde/errors.hpp"

namespace mlde {

namespace {

void require_finite(const FusionParameters& params) {
  for (double a : params.alpha) {
    if (!std::isfinite(a)) throw TrainingError("fusion parameters contain non-finite values");
  }
}

void require_valid(const BranchProbabilities& p) {
  for (double v : p) {
    if (!std::isfinite(v)) throw TrainingError("branch probability is not finite");
    if (v < 0.0 || v > 1.0) throw TrainingError("branch probability outside [0, 1]");
  }
}

double combine(const BranchProbabilities& p, const FusionWeights& w) {
  double fused = 0.0;
  for (int i = 0; i < kBranches; ++i) fused += w[i] * p[i];
  const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
  return std::clamp(fused, *lo, *hi);
}

}  // namespace

FusionWeights FusionParameters::normalized_weights() const {
  require_finite(*this);
  const double peak = *std::max_element(alpha.begin(), alpha.end());
  FusionWeights w;
  double total = 0.0;
  for (int i = 0; i < kBranches; ++i) {
    w[i] = std::exp(alpha[i] - peak);
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

double fuse(const BranchProbabilities& p, const FusionParameters& params) {
  require_valid(p);
  return combine(p, params.normalized_weights());
}

FusionGradients fuse_gradients(const BranchProbabilities& p, const FusionParameters& params,
                               double upstream) {
  require_valid(p);
  if (!std::isfinite(upstream)) throw TrainingError("upstream gradient is not finite");
  const auto w = params.normalized_weights();
  const double fused = combine(p, w);
  FusionGradients g;
  for (int i = 0; i < kBranches; ++i) {
    g.p[i] = upstream * w[i];
    g.alpha[i] = upstream * w[i] * (p[i] - fused);
  }
  return g;
}

FusionParameters shift_alpha(const FusionParameters& params, double c) {
  if (!std::isfinite(c)) throw TrainingError("alpha shift must be finite");
  FusionParameters out = params;
  for (auto& a : out.alpha) a += c;
  return out;
}

FusionParameters canonicalize(const FusionParameters& params) {
  double mean = 0.0;
  for (double a : params.alpha) mean += a;
  return shift_alpha(params, -mean / kBranches);
}

}  // namespace mlde
