#include "tad/decoders.hpp"

#include <algorithm>
#include <stdexcept>

namespace tad {

SplitTokens split_tokens(const MotionTokens& tokens)
{
    std::vector<int> global, objects;
    for (int s = 0; s < tokens.samples(); ++s) {
        const int begin = tokens.offsets[static_cast<std::size_t>(s)];
        const int end = tokens.offsets[static_cast<std::size_t>(s) + 1];
        global.push_back(begin);
        for (int r = begin + 1; r < end; ++r)
            objects.push_back(r);
    }
    return SplitTokens{ag::gather_rows(tokens.seq, std::move(global)), ag::gather_rows(tokens.seq, std::move(objects))};
}

ag::Var add_channel_bias(ag::Var x, ag::Var bias)
{
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 4 || bv.rank() != 2 || bv.dim(0) != xv.dim(0) || bv.dim(1) != xv.dim(1))
        throw std::invalid_argument("add_channel_bias shape mismatch: " + shape_string(xv.shape()) + " vs " +
                                    shape_string(bv.shape()));
    const std::size_t planes = static_cast<std::size_t>(xv.dim(0)) * xv.dim(1);
    const std::size_t area = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    Tensor out = xv;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < area; ++i)
            out[p * area + i] += bv[p];
    return x.tape->op(std::move(out), {x, bias}, [=](ag::Tape& t, const Tensor& g) {
        if (t.needs_grad(x))
            t.grad(x).mat() += g.mat();
        if (t.needs_grad(bias)) {
            Tensor& gb = t.grad(bias);
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t i = 0; i < area; ++i)
                    gb[p] += g[p * area + i];
        }
    });
}

FlowDecoder::FlowDecoder(ParamStore& store, Initializer& init, const TrainConfig& cfg)
    : height_(cfg.H),
      width_(cfg.W),
      bottleneck_(cfg.conv3),
      skip_(cfg.skip),
      inject_(store, init, "flow_dec.inject", "decoder.flow", cfg.D, cfg.conv3),
      d1_(store, init, "flow_dec.deconv1", "decoder.flow", cfg.conv3, cfg.conv2, 4, 2, 1, true),
      d2_(store, init, "flow_dec.deconv2", "decoder.flow", cfg.conv2, cfg.conv1, 4, 2, 1, true),
      d3_(store, init, "flow_dec.deconv3", "decoder.flow", cfg.conv1, 2, 4, 2, 1, true)
{
}

ag::Var FlowDecoder::forward(ag::Tape& tape, ag::Var global, ag::Var skip) const
{
    const int batch = global.value().dim(0);
    const std::vector<int> low{batch, bottleneck_, height_ / 8, width_ / 8};
    ag::Var base = skip;
    if (!skip_)
        base = tape.constant(Tensor(low));
    else if (skip.value().shape() != low)
        throw std::invalid_argument("skip state is " + shape_string(skip.value().shape()) + ", decoder expects " +
                                    shape_string(low));
    ag::Var x = add_channel_bias(base, inject_(tape, global));
    x = ag::relu(d1_(tape, x));
    x = ag::relu(d2_(tape, x));
    return d3_(tape, x);
}

FlowFrame FlowDecoder::decode(const Tensor& global, const Tensor& skip, int t) const
{
    ag::Tape tape(false);
    const ag::Var g = tape.constant(global.reshaped({1, static_cast<int>(global.size())}));
    const ag::Var s = tape.constant(skip.reshaped({1, bottleneck_, height_ / 8, width_ / 8}));
    const Tensor& out = forward(tape, g, s).value();
    FlowFrame f = FlowFrame::zeros(t, height_, width_);
    const std::size_t plane = static_cast<std::size_t>(height_) * width_;
    for (std::size_t i = 0; i < plane; ++i) {
        f.u[i] = static_cast<float>(out[i]);
        f.v[i] = static_cast<float>(out[plane + i]);
    }
    return f;
}

BoxDecoder::BoxDecoder(ParamStore& store, Initializer& init, const TrainConfig& cfg)
    : horizon_(cfg.pred_len),
      step_dim_(std::max(cfg.D / 4, 1)),
      g_(store, init, "box_dec.g", "decoder.box", cfg.D, cfg.D),
      cell_(store, init, "box_dec.gru", "decoder.box", std::max(cfg.D / 4, 1), cfg.D),
      e_head_(store, init, "box_dec.e_head", "decoder.box", cfg.D, cfg.D, std::max(cfg.D / 4, 1)),
      y_head_(store, init, "box_dec.y_head", "decoder.box", cfg.D, cfg.D, 4)
{
    if (horizon_ < 1)
        throw std::invalid_argument("rollout horizon must be at least 1");
}

ag::Var BoxDecoder::forward(ag::Tape& tape, ag::Var objects, const Tensor& last) const
{
    const int n = objects.value().dim(0);
    if (last.rank() != 2 || last.dim(0) != n || last.dim(1) != 4)
        throw std::invalid_argument("last boxes must be [" + std::to_string(n) + ", 4]");
    ag::Var h = ag::relu(g_(tape, objects));
    ag::Var e = tape.constant(Tensor::matrix(n, step_dim_));
    ag::Var box = tape.constant(last);
    std::vector<ag::Var> steps;
    for (int k = 0; k < horizon_; ++k) {
        h = cell_(tape, e, h);
        e = e_head_(tape, h);
        box = ag::add(box, ag::scale(y_head_(tape, h), kBoxOffsetScale));
        steps.push_back(box);
    }
    return ag::concat_cols(steps);
}

std::vector<std::vector<Box>> BoxDecoder::rollout(const Tensor& objects, const std::vector<Box>& last) const
{
    Tensor lastv = Tensor::matrix(static_cast<int>(last.size()), 4);
    for (std::size_t n = 0; n < last.size(); ++n)
        for (int c = 0; c < 4; ++c)
            lastv.at(static_cast<int>(n), c) = last[n].coord(c);
    ag::Tape tape(false);
    const Tensor& out = forward(tape, tape.constant(objects), lastv).value();
    std::vector<std::vector<Box>> boxes(last.size());
    for (std::size_t n = 0; n < last.size(); ++n)
        for (int k = 0; k < horizon_; ++k) {
            const int r = static_cast<int>(n);
            boxes[n].push_back(Box{out.at(r, 4 * k), out.at(r, 4 * k + 1), out.at(r, 4 * k + 2), out.at(r, 4 * k + 3)});
        }
    return boxes;
}

} // namespace tad
