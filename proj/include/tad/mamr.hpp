#pragma once

#include "tad/config.hpp"
#include "tad/layers.hpp"

#include <vector>

namespace tad {

// Token rows for a batch: sample s owns rows [offsets[s], offsets[s+1]);
// its first row is the global-motion token, the rest are object tokens.
struct MotionTokens {
    ag::Var seq;
    std::vector<int> offsets;

    int samples() const { return static_cast<int>(offsets.size()) - 1; }
};

struct AttentionTrace {
    std::vector<Tensor> self_attn; // per (sample, head): [len, len]
    Tensor mem_addr;               // [heads * rows, M], head-major
    std::vector<char> fallback;    // per addressing row: shrinkage zeroed the row
    int fallback_rows() const;
};

// Sinusoidal table: PE(pos, 2i) = sin(pos / 10000^(2i/D)), PE(pos, 2i+1) = cos(.).
Tensor positional_table(int rows, int dim);
// Adds the table to each sample's rows, restarting at position 0 per sample.
MotionTokens positional_encode(ag::Tape& tape, const MotionTokens& tokens);

// ReLU(a - lambda) * a / (|a - lambda| + eps); exactly zero for a <= lambda.
double hard_shrink(double a, double lambda, double eps);
double hard_shrink_derivative(double a, double lambda, double eps);

struct MemoryBank {
    Parameter* slots = nullptr; // [M, C]
    double shrink = 0.0;
    double eps = 1e-12;

    int size() const { return slots->value.dim(0); }
};

// Multi-head addressing of memory keys by queries. Per head and query row:
// softmax over slots, hard shrinkage, then L1 renormalization. A row that
// shrinks to all zeros falls back to its softmax weights and is flagged.
// Returns [heads * rows, M], head-major.
ag::Var memory_addressing(ag::Var queries, ag::Var keys, int heads, double lambda, double eps,
                          std::vector<char>* fallback = nullptr);
// Weighted read of values [M, D] with addressing [heads * rows, M] -> [rows, D].
ag::Var memory_attend(ag::Var addressing, ag::Var values, int heads);

// Mean over addressing rows of -sum_i a_i log a_i (0 log 0 = 0).
ag::Var sparsity_loss(ag::Var addressing);
double sparsity_loss(const Tensor& addressing);

// tokens + LN(MHSA(tokens)), attention restricted to each sample's rows.
class InterMotionLayer {
public:
    InterMotionLayer() = default;
    InterMotionLayer(ParamStore& store, Initializer& init, const std::string& name, int dim, int heads);

    MotionTokens forward(ag::Tape& tape, const MotionTokens& tokens, AttentionTrace* trace = nullptr) const;

    const Linear& query() const { return q_; }
    const Linear& key() const { return k_; }
    const Linear& value() const { return v_; }

private:
    int heads_ = 1;
    Linear q_, k_, v_;
    LayerNorm ln_;
};

// tokens + LN(HardShrinkage(A) V) with keys/values projected from memory.
class MemoryReadLayer {
public:
    MemoryReadLayer() = default;
    MemoryReadLayer(ParamStore& store, Initializer& init, const std::string& name, int dim, int heads);

    struct Output {
        MotionTokens tokens;
        ag::Var addressing;
    };
    Output forward(ag::Tape& tape, const MotionTokens& tokens, const MemoryBank& bank,
                   AttentionTrace* trace = nullptr) const;

    // Same read with a plain softmax in place of shrinkage; the reference
    // route for the lambda = 0 equivalence.
    MotionTokens forward_softmax(ag::Tape& tape, const MotionTokens& tokens, const MemoryBank& bank) const;

private:
    int heads_ = 1;
    Linear q_, k_, v_;
    LayerNorm ln_;
};

// tokens + LN(W2 relu(W1 tokens)), hidden width 4D.
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(ParamStore& store, Initializer& init, const std::string& name, int dim);

    MotionTokens forward(ag::Tape& tape, const MotionTokens& tokens) const;

private:
    Mlp2 ffn_;
    LayerNorm ln_;
};

class MamrStack {
public:
    struct Output {
        MotionTokens tokens;
        ag::Var sparsity; // sum over layers of the per-layer sparsity loss
        std::vector<ag::Var> layer_sparsity;
    };

    MamrStack() = default;
    // with_memory = false drops the memory read from every block.
    MamrStack(ParamStore& store, Initializer& init, const TrainConfig& cfg, bool with_memory);

    Output forward(ag::Tape& tape, const MotionTokens& tokens, std::vector<AttentionTrace>* traces = nullptr) const;

    int layers() const { return static_cast<int>(blocks_.size()); }
    const MemoryBank& bank(int layer) const;
    const InterMotionLayer& inter(int layer) const { return blocks_.at(static_cast<std::size_t>(layer)).inter; }
    const MemoryReadLayer& memory(int layer) const { return blocks_.at(static_cast<std::size_t>(layer)).memory; }
    const FeedForward& feedforward(int layer) const { return blocks_.at(static_cast<std::size_t>(layer)).ffn; }
    bool with_memory() const { return with_memory_; }

private:
    struct Block {
        InterMotionLayer inter;
        MemoryReadLayer memory;
        FeedForward ffn;
    };
    std::vector<Block> blocks_;
    std::vector<MemoryBank> banks_;
    bool with_memory_ = true;
    bool shared_ = false;
};

// Concatenation baseline: each token is mixed with a context vector by one
// linear layer. The global token's context is the mean object token (zero
// when there are none); an object token's context is its global token.
class ConcatMixer {
public:
    ConcatMixer() = default;
    ConcatMixer(ParamStore& store, Initializer& init, int dim);

    MotionTokens forward(ag::Tape& tape, const MotionTokens& tokens) const;

private:
    int dim_ = 0;
    Linear mix_;
};

} // namespace tad
