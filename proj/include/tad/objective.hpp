#pragma once

#include "tad/autograd.hpp"
#include "tad/data.hpp"

#include <vector>

namespace tad {

struct FlowLoss {
    double l_motion = 0.0;
    double l_recon = 0.0;
};

// l_motion: mean over pixels of the endpoint error |(du, dv)|.
// l_recon:  mean over pixels and both channels of |d|.
FlowLoss flow_loss(const FlowFrame& target, const FlowFrame& predicted);

// Sum over future steps of the mean over objects of the Euclidean distance
// between 4-d boxes. Outer index is the object, inner the step.
double box_loss(const std::vector<std::vector<Box>>& target, const std::vector<std::vector<Box>>& predicted);

struct LossParts {
    double l_motion = 0.0;
    double l_recon = 0.0;
    double l_mse = 0.0;
    double l_s = 0.0;
};

struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 0.0002;
};

struct LossBreakdown {
    double l_motion = 0.0;
    double l_recon = 0.0;
    double l_f = 0.0;
    double l_mse = 0.0;
    double l_s = 0.0;
    double l_total = 0.0;
    LossWeights weights;
};

// l_total = lambda1 (l_motion + l_recon) + lambda2 l_mse + lambda3 l_s.
// Throws std::invalid_argument on non-finite or negative parts.
LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights = {});

// Differentiable batch versions.
inline constexpr double kMotionEps = 1e-8;

// predicted and target [B, 2, H, W]; mean over B*H*W of sqrt(du^2 + dv^2 + 1e-8).
ag::Var motion_loss(ag::Var predicted, const Tensor& target);
// Mean over all elements of |predicted - target|.
ag::Var recon_loss(ag::Var predicted, const Tensor& target);
// predicted and target [N, T*4]; row r belongs to sample sample_of_row[r].
// Per sample: sum over steps of the mean over its objects of the Euclidean
// distance; then the mean over all samples (object-free samples count as 0).
ag::Var box_loss(ag::Var predicted, const Tensor& target, const std::vector<int>& sample_of_row, int samples);

} // namespace tad
