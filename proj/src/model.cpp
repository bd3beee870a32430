#include "tad/model.hpp"

#include <stdexcept>

namespace tad {

ModelInput make_input(const std::vector<const TrainingSample*>& samples, const TrainConfig& cfg, bool with_future)
{
    ModelInput in;
    in.samples = static_cast<int>(samples.size());
    std::vector<const FlowFrame*> flows;
    in.offsets.push_back(0);
    for (std::size_t s = 0; s < samples.size(); ++s) {
        flows.push_back(&samples[s]->flow);
        const int n = static_cast<int>(samples[s]->objects.size());
        in.offsets.push_back(in.offsets.back() + 1 + n);
        in.sample_of_object.insert(in.sample_of_object.end(), static_cast<std::size_t>(n), static_cast<int>(s));
    }
    in.flows = flow_batch(flows, cfg.H, cfg.W);
    in.objects = object_batch(samples, cfg.obs_len, cfg.roi_size);
    const int total = in.objects.count();
    in.last_boxes = Tensor::matrix(total, 4);
    if (with_future)
        in.future = Tensor::matrix(total, 4 * cfg.pred_len);
    int row = 0;
    for (const TrainingSample* s : samples)
        for (const ObjectWindow& ob : s->objects) {
            for (int c = 0; c < 4; ++c)
                in.last_boxes.at(row, c) = ob.past.back().coord(c);
            if (with_future) {
                if (static_cast<int>(ob.future.size()) != cfg.pred_len)
                    throw std::invalid_argument("object future window differs from pred_len");
                for (int k = 0; k < cfg.pred_len; ++k)
                    for (int c = 0; c < 4; ++c)
                        in.future.at(row, 4 * k + c) = ob.future[static_cast<std::size_t>(k)].coord(c);
            }
            ++row;
        }
    return in;
}

TadModel::TadModel(const TrainConfig& cfg) : cfg_(cfg)
{
    cfg_.validate();
    Initializer init(cfg_.seed);
    flow_enc_ = FlowEncoder(store_, init, cfg_);
    obj_enc_ = ObjectEncoder(store_, init, cfg_);
    if (cfg_.variant == Variant::concat_only)
        concat_ = ConcatMixer(store_, init, cfg_.D);
    else
        mamr_ = MamrStack(store_, init, cfg_, cfg_.variant != Variant::no_memory);
    flow_dec_ = FlowDecoder(store_, init, cfg_);
    box_dec_ = BoxDecoder(store_, init, cfg_);
}

bool TadModel::has_memory() const
{
    return cfg_.variant != Variant::concat_only && cfg_.variant != Variant::no_memory;
}

ForwardResult TadModel::forward(ag::Tape& tape, const ModelInput& input, bool decode_all,
                                std::vector<AttentionTrace>* traces) const
{
    const FlowEncoder::Output flow = flow_enc_.forward(tape, tape.constant(input.flows));
    const ag::Var objects = obj_enc_.forward(tape, input.objects);

    // Stacked rows are [globals; objects]; reorder to per-sample blocks.
    std::vector<int> order;
    int obj = 0;
    for (int s = 0; s < input.samples; ++s) {
        order.push_back(s);
        const int n = input.offsets[static_cast<std::size_t>(s) + 1] - input.offsets[static_cast<std::size_t>(s)] - 1;
        for (int k = 0; k < n; ++k)
            order.push_back(input.samples + obj++);
    }
    MotionTokens tokens{ag::gather_rows(ag::concat_rows({flow.tokens, objects}), std::move(order)), input.offsets};

    ForwardResult out;
    if (cfg_.variant == Variant::concat_only) {
        out.fused = concat_.forward(tape, tokens);
    } else {
        MamrStack::Output m = mamr_.forward(tape, tokens, traces);
        out.fused = m.tokens;
        if (mamr_.with_memory())
            out.sparsity = m.sparsity;
    }
    const SplitTokens split = split_tokens(out.fused);
    if (decode_all || decodes_flow())
        out.flow = flow_dec_.forward(tape, split.global, flow.skip);
    if (decode_all || decodes_boxes())
        out.boxes = box_dec_.forward(tape, split.objects, input.last_boxes);
    return out;
}

TadModel::Loss TadModel::loss(ag::Tape& tape, const ModelInput& input) const
{
    if (input.samples < 1)
        throw std::invalid_argument("loss needs at least one sample");
    const ForwardResult f = forward(tape, input);
    LossParts parts;
    LossWeights w{cfg_.lambda1, cfg_.lambda2, cfg_.lambda3};
    std::vector<ag::Var> terms;
    if (f.flow.valid()) {
        const ag::Var lm = motion_loss(f.flow, input.flows);
        const ag::Var lr = recon_loss(f.flow, input.flows);
        parts.l_motion = lm.value().item();
        parts.l_recon = lr.value().item();
        terms.push_back(ag::scale(ag::add(lm, lr), w.lambda1));
    }
    if (f.boxes.valid()) {
        if (input.future.empty())
            throw std::invalid_argument("training input lacks future boxes");
        const ag::Var lb = box_loss(f.boxes, input.future, input.sample_of_object, input.samples);
        parts.l_mse = lb.value().item();
        terms.push_back(ag::scale(lb, w.lambda2));
    }
    if (f.sparsity.valid()) {
        parts.l_s = f.sparsity.value().item();
        terms.push_back(ag::scale(f.sparsity, w.lambda3));
    }
    ag::Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i)
        total = ag::add(total, terms[i]);
    LossBreakdown b = total_loss(parts, w);
    b.l_total = total.value().item();
    return Loss{total, b};
}

std::vector<FrameOutput> TadModel::infer(const std::vector<const TrainingSample*>& samples) const
{
    std::vector<FrameOutput> out;
    if (samples.empty())
        return out;
    const ModelInput input = make_input(samples, cfg_, false);
    ag::Tape tape(false);
    const ForwardResult f = forward(tape, input, true);
    const Tensor& flow = f.flow.value();
    const Tensor& boxes = f.boxes.value();
    const std::size_t plane = static_cast<std::size_t>(cfg_.H) * cfg_.W;
    int row = 0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        FrameOutput fo;
        fo.reconstruction = FlowFrame::zeros(samples[s]->t, cfg_.H, cfg_.W);
        const double* src = flow.data() + s * 2 * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            fo.reconstruction.u[i] = static_cast<float>(src[i]);
            fo.reconstruction.v[i] = static_cast<float>(src[plane + i]);
        }
        for (std::size_t n = 0; n < samples[s]->objects.size(); ++n, ++row) {
            std::vector<Box> r;
            for (int k = 0; k < cfg_.pred_len; ++k)
                r.push_back(Box{boxes.at(row, 4 * k), boxes.at(row, 4 * k + 1), boxes.at(row, 4 * k + 2),
                                boxes.at(row, 4 * k + 3)});
            fo.rollouts.push_back(std::move(r));
        }
        out.push_back(std::move(fo));
    }
    return out;
}

} // namespace tad
