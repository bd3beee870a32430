#pragma once

#include "tad/config.hpp"
#include "tad/data.hpp"
#include "tad/mamr.hpp"

#include <vector>

namespace tad {

struct SplitTokens {
    ag::Var global;  // [B, D], one row per sample
    ag::Var objects; // [N_total, D], samples in order
};

SplitTokens split_tokens(const MotionTokens& tokens);

// Adds bias [B, C] to every spatial position of x [B, C, H, W].
ag::Var add_channel_bias(ag::Var x, ag::Var bias);

// Transposed-convolution stack conv3 -> conv2 -> conv1 -> 2, doubling the
// resolution at each stage. The global token is projected to conv3 channels
// and broadcast-added to the lowest-resolution state, which is the encoder's
// bottleneck activation when the skip path is enabled and zeros otherwise.
class FlowDecoder {
public:
    FlowDecoder() = default;
    FlowDecoder(ParamStore& store, Initializer& init, const TrainConfig& cfg);

    // global [B, D], skip [B, conv3, H/8, W/8] -> [B, 2, H, W].
    ag::Var forward(ag::Tape& tape, ag::Var global, ag::Var skip) const;
    FlowFrame decode(const Tensor& global, const Tensor& skip, int t = 0) const;

    bool uses_skip() const { return skip_; }

private:
    int height_ = 0;
    int width_ = 0;
    int bottleneck_ = 0;
    bool skip_ = true;
    Linear inject_;
    Conv2d d1_, d2_;
    Conv2d d3_; // plain convolution where a self-supervised predictive block could sit
};

// Recurrent rollout of future boxes from per-object tokens:
//   h_0 = relu(W_g x + b_g), e_0 = 0
//   h_{k+1} = GRU(e_k, h_k), e_{k+1} = MLP_e(h_{k+1}), dy_{k+1} = MLP_y(h_{k+1})
// and box_{k} = last_box + sum_{i<=k} dy_i.
class BoxDecoder {
public:
    BoxDecoder() = default;
    BoxDecoder(ParamStore& store, Initializer& init, const TrainConfig& cfg);

    // objects [N, D], last [N, 4] -> [N, horizon * 4], step-major per row.
    ag::Var forward(ag::Tape& tape, ag::Var objects, const Tensor& last) const;
    // Convenience: [N, horizon, 4] as nested vectors.
    std::vector<std::vector<Box>> rollout(const Tensor& objects, const std::vector<Box>& last) const;

    int horizon() const { return horizon_; }
    const Mlp2& box_head() const { return y_head_; }

private:
    int horizon_ = 0;
    int step_dim_ = 0;
    Linear g_;
    GruCell cell_;
    Mlp2 e_head_;
    Mlp2 y_head_;
};

inline constexpr double kBoxOffsetScale = 0.1;

} // namespace tad
