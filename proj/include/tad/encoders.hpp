#pragma once

#include "tad/config.hpp"
#include "tad/data.hpp"
#include "tad/layers.hpp"

#include <vector>

namespace tad {

// Whole-frame motion summary plus the bottleneck activations kept for the
// flow decoder's skip path.
struct GlobalMotion {
    Tensor token;      // [D]
    Tensor skip_state; // [conv3, H/8, W/8]
};

// One row per object, in input order. Zero rows is legal.
struct ObjectMotion {
    Tensor tokens; // [N, D]
};

// Packs flow frames into a [B, 2, H, W] tensor (u plane, then v plane).
Tensor flow_batch(const std::vector<const FlowFrame*>& flows, int height, int width);

// Bilinear samples of (u, v) on a k x k grid spanning the box corners
// inclusively. Normalized coordinate x maps to pixel x * (W - 1). Returns
// [2, k, k]. Throws std::invalid_argument for zero-area boxes.
Tensor roi_pool(const FlowFrame& flow, const Box& box, int k);

// Strided convolutional encoder 2 -> conv1 -> conv2 -> conv3, each stage
// halving the resolution, then global average pooling and a projection to D.
class FlowEncoder {
public:
    struct Output {
        ag::Var tokens; // [B, D]
        ag::Var skip;   // [B, conv3, H/8, W/8]
    };

    FlowEncoder() = default;
    FlowEncoder(ParamStore& store, Initializer& init, const TrainConfig& cfg);

    Output forward(ag::Tape& tape, ag::Var flows) const;
    GlobalMotion encode(const FlowFrame& flow) const;

private:
    int height_ = 0;
    int width_ = 0;
    Conv2d c1_, c2_, c3_;
    Linear proj_;
};

// Per-object inputs stacked across a batch.
struct ObjectBatch {
    std::vector<Tensor> steps; // obs_len entries of [N, kBoxFeatures]
    Tensor roi;                // [N, 2*k*k]
    int count() const { return roi.rows(); }
};

inline constexpr int kBoxFeatures = 8;

// Box features for one observation step: the box itself and its displacement
// from the previous step (scaled so typical motion is O(0.1)).
void box_features(const Box& box, const Box* previous, double* out);

ObjectBatch object_batch(const std::vector<const TrainingSample*>& samples, int obs_len, int roi_size);

// Linear embedding + GRU over the box history, plus MLP(RoIPool(flow))
// added on top of the final hidden state.
class ObjectEncoder {
public:
    ObjectEncoder() = default;
    ObjectEncoder(ParamStore& store, Initializer& init, const TrainConfig& cfg);

    // Returns [N, D]; N may be zero.
    ag::Var forward(ag::Tape& tape, const ObjectBatch& batch) const;
    // History part only (before the RoI residual); exposed for tests.
    ag::Var history(ag::Tape& tape, const ObjectBatch& batch) const;
    ag::Var roi_embedding(ag::Tape& tape, const Tensor& roi) const;

    ObjectMotion encode(const TrainingSample& sample) const;

private:
    int dim_ = 0;
    int obs_len_ = 0;
    int roi_size_ = 0;
    Linear embed_;
    GruCell gru_;
    Mlp2 roi_mlp_;
};

} // namespace tad
