#include "tad/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tad {

Tensor flow_batch(const std::vector<const FlowFrame*>& flows, int height, int width)
{
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    Tensor out({static_cast<int>(flows.size()), 2, height, width});
    for (std::size_t b = 0; b < flows.size(); ++b) {
        const FlowFrame& f = *flows[b];
        if (f.height != height || f.width != width)
            throw std::invalid_argument("flow frame is " + std::to_string(f.height) + "x" + std::to_string(f.width) +
                                        ", model expects " + std::to_string(height) + "x" + std::to_string(width));
        double* dst = out.data() + b * 2 * plane;
        std::copy(f.u.begin(), f.u.end(), dst);
        std::copy(f.v.begin(), f.v.end(), dst + plane);
    }
    return out;
}

namespace {

double bilinear(const std::vector<float>& plane, int height, int width, double px, double py)
{
    px = std::clamp(px, 0.0, static_cast<double>(width - 1));
    py = std::clamp(py, 0.0, static_cast<double>(height - 1));
    const int x0 = std::min(static_cast<int>(std::floor(px)), std::max(width - 2, 0));
    const int y0 = std::min(static_cast<int>(std::floor(py)), std::max(height - 2, 0));
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const double fx = px - x0, fy = py - y0;
    const auto at = [&](int y, int x) { return static_cast<double>(plane[static_cast<std::size_t>(y) * width + x]); };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

} // namespace

Tensor roi_pool(const FlowFrame& flow, const Box& box, int k)
{
    if (k < 2)
        throw std::invalid_argument("roi_pool needs k >= 2");
    if (!(box.x_max > box.x_min) || !(box.y_max > box.y_min))
        throw std::invalid_argument("roi_pool: degenerate box");
    Tensor out({2, k, k});
    const double sx = flow.width - 1, sy = flow.height - 1;
    const std::size_t kk = static_cast<std::size_t>(k) * k;
    for (int i = 0; i < k; ++i) {
        const double y = box.y_min + (box.y_max - box.y_min) * i / (k - 1);
        for (int j = 0; j < k; ++j) {
            const double x = box.x_min + (box.x_max - box.x_min) * j / (k - 1);
            const std::size_t idx = static_cast<std::size_t>(i) * k + j;
            out[idx] = bilinear(flow.u, flow.height, flow.width, x * sx, y * sy);
            out[kk + idx] = bilinear(flow.v, flow.height, flow.width, x * sx, y * sy);
        }
    }
    return out;
}

FlowEncoder::FlowEncoder(ParamStore& store, Initializer& init, const TrainConfig& cfg)
    : height_(cfg.H),
      width_(cfg.W),
      c1_(store, init, "flow_enc.conv1", "encoder.flow", 2, cfg.conv1, 3, 2, 1, false),
      c2_(store, init, "flow_enc.conv2", "encoder.flow", cfg.conv1, cfg.conv2, 3, 2, 1, false),
      c3_(store, init, "flow_enc.conv3", "encoder.flow", cfg.conv2, cfg.conv3, 3, 2, 1, false),
      proj_(store, init, "flow_enc.proj", "encoder.flow", cfg.conv3, cfg.D)
{
}

FlowEncoder::Output FlowEncoder::forward(ag::Tape& tape, ag::Var flows) const
{
    const Tensor& fv = flows.value();
    if (fv.rank() != 4 || fv.dim(1) != 2 || fv.dim(2) != height_ || fv.dim(3) != width_)
        throw std::invalid_argument("flow encoder expects [B, 2, " + std::to_string(height_) + ", " +
                                    std::to_string(width_) + "], got " + shape_string(fv.shape()));
    ag::Var x = ag::relu(c1_(tape, flows));
    x = ag::relu(c2_(tape, x));
    x = ag::relu(c3_(tape, x));
    return Output{proj_(tape, ag::global_avg_pool(x)), x};
}

GlobalMotion FlowEncoder::encode(const FlowFrame& flow) const
{
    ag::Tape tape(false);
    const Output out = forward(tape, tape.constant(flow_batch({&flow}, height_, width_)));
    const Tensor& skip = out.skip.value();
    return GlobalMotion{out.tokens.value().reshaped({out.tokens.value().dim(1)}),
                        skip.reshaped({skip.dim(1), skip.dim(2), skip.dim(3)})};
}

void box_features(const Box& box, const Box* previous, double* out)
{
    constexpr double kMotionScale = 10.0;
    for (int c = 0; c < 4; ++c) {
        out[c] = box.coord(c);
        out[4 + c] = previous ? kMotionScale * (box.coord(c) - previous->coord(c)) : 0.0;
    }
}

ObjectBatch object_batch(const std::vector<const TrainingSample*>& samples, int obs_len, int roi_size)
{
    int total = 0;
    for (const TrainingSample* s : samples)
        total += static_cast<int>(s->objects.size());
    ObjectBatch batch;
    batch.steps.assign(static_cast<std::size_t>(obs_len), Tensor::matrix(total, kBoxFeatures));
    batch.roi = Tensor::matrix(total, 2 * roi_size * roi_size);
    int row = 0;
    for (const TrainingSample* s : samples)
        for (const ObjectWindow& ob : s->objects) {
            if (static_cast<int>(ob.past.size()) != obs_len)
                throw std::invalid_argument("object window length differs from obs_len");
            for (int k = 0; k < obs_len; ++k) {
                const Box* prev = k > 0 ? &ob.past[static_cast<std::size_t>(k - 1)] : nullptr;
                box_features(ob.past[static_cast<std::size_t>(k)], prev,
                             batch.steps[static_cast<std::size_t>(k)].data() + static_cast<std::size_t>(row) * kBoxFeatures);
            }
            const Tensor patch = roi_pool(s->flow, ob.past.back(), roi_size);
            std::copy(patch.data(), patch.data() + patch.size(), batch.roi.data() + static_cast<std::size_t>(row) * patch.size());
            ++row;
        }
    return batch;
}

ObjectEncoder::ObjectEncoder(ParamStore& store, Initializer& init, const TrainConfig& cfg)
    : dim_(cfg.D),
      obs_len_(cfg.obs_len),
      roi_size_(cfg.roi_size),
      embed_(store, init, "obj_enc.embed", "encoder.object", kBoxFeatures, cfg.D),
      gru_(store, init, "obj_enc.gru", "encoder.object", cfg.D, cfg.D),
      roi_mlp_(store, init, "obj_enc.roi_mlp", "encoder.object", 2 * cfg.roi_size * cfg.roi_size, cfg.D, cfg.D)
{
}

ag::Var ObjectEncoder::history(ag::Tape& tape, const ObjectBatch& batch) const
{
    if (static_cast<int>(batch.steps.size()) != obs_len_)
        throw std::invalid_argument("object batch has the wrong number of steps");
    ag::Var h = tape.constant(Tensor::matrix(batch.count(), dim_));
    for (const Tensor& step : batch.steps)
        h = gru_(tape, embed_(tape, tape.constant(step)), h);
    return h;
}

ag::Var ObjectEncoder::roi_embedding(ag::Tape& tape, const Tensor& roi) const
{
    return roi_mlp_(tape, tape.constant(roi));
}

ag::Var ObjectEncoder::forward(ag::Tape& tape, const ObjectBatch& batch) const
{
    return ag::add(history(tape, batch), roi_embedding(tape, batch.roi));
}

ObjectMotion ObjectEncoder::encode(const TrainingSample& sample) const
{
    ag::Tape tape(false);
    const ObjectBatch batch = object_batch({&sample}, obs_len_, roi_size_);
    return ObjectMotion{forward(tape, batch).value()};
}

} // namespace tad
