#pragma once

#include "tad/decoders.hpp"
#include "tad/encoders.hpp"
#include "tad/mamr.hpp"
#include "tad/objective.hpp"

#include <memory>
#include <vector>

namespace tad {

// A batch of samples packed for one forward pass. Token rows are ordered
// sample by sample: the global token, then that sample's objects.
struct ModelInput {
    int samples = 0;
    Tensor flows;                      // [B, 2, H, W]
    ObjectBatch objects;               // N_total objects
    std::vector<int> offsets;          // B + 1 token offsets
    std::vector<int> sample_of_object; // N_total
    Tensor last_boxes;                 // [N_total, 4]
    Tensor future;                     // [N_total, pred_len * 4], empty at inference
};

ModelInput make_input(const std::vector<const TrainingSample*>& samples, const TrainConfig& cfg, bool with_future);

struct ForwardResult {
    MotionTokens fused;
    ag::Var flow;     // [B, 2, H, W], invalid when not decoded
    ag::Var boxes;    // [N_total, pred_len * 4], invalid when not decoded
    ag::Var sparsity; // invalid without memory
};

struct FrameOutput {
    FlowFrame reconstruction;
    std::vector<std::vector<Box>> rollouts; // aligned with the sample's objects
};

class TadModel {
public:
    explicit TadModel(const TrainConfig& cfg);
    TadModel(const TadModel&) = delete;
    TadModel& operator=(const TadModel&) = delete;

    const TrainConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    bool decodes_flow() const { return cfg_.variant != Variant::fol_only; }
    bool decodes_boxes() const { return cfg_.variant != Variant::flow_only; }
    bool has_memory() const;

    ForwardResult forward(ag::Tape& tape, const ModelInput& input, bool decode_all = false,
                          std::vector<AttentionTrace>* traces = nullptr) const;

    struct Loss {
        ag::Var total;
        LossBreakdown parts;
    };
    Loss loss(ag::Tape& tape, const ModelInput& input) const;

    std::vector<FrameOutput> infer(const std::vector<const TrainingSample*>& samples) const;

    const FlowEncoder& flow_encoder() const { return flow_enc_; }
    const ObjectEncoder& object_encoder() const { return obj_enc_; }
    const MamrStack& mamr() const { return mamr_; }
    const FlowDecoder& flow_decoder() const { return flow_dec_; }
    const BoxDecoder& box_decoder() const { return box_dec_; }

private:
    TrainConfig cfg_;
    ParamStore store_;
    FlowEncoder flow_enc_;
    ObjectEncoder obj_enc_;
    MamrStack mamr_;
    ConcatMixer concat_;
    FlowDecoder flow_dec_;
    BoxDecoder box_dec_;
};

} // namespace tad
