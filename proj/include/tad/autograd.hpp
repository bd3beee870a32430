#pragma once

#include "tad/params.hpp"
#include "tad/tensor.hpp"

#include <deque>
#include <functional>
#include <vector>

// Tape-based reverse-mode differentiation over double tensors. A Tape is
// built fresh for every forward pass; ops push nodes in evaluation order and
// backward() replays their adjoints in reverse.
namespace tad::ag {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
};

using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

class Tape {
public:
    // A non-recording tape evaluates values only; no adjoints are kept.
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    Var constant(Tensor value);
    Var param(const Parameter& p);
    Var op(Tensor value, std::initializer_list<Var> inputs, Backward backward);
    Var op(Tensor value, const std::vector<Var>& inputs, Backward backward);

    const Tensor& value(Var v) const { return node(v).val(); }
    bool needs_grad(Var v) const { return node(v).needs_grad; }
    // Adjoint buffer of v, zero-allocated on first access.
    Tensor& grad(Var v);
    // Adjoint of v if it was reached by backward(), else an empty tensor.
    const Tensor& grad_or_empty(Var v) const { return node(v).grad; }

    // Seeds d(root)/d(root) = 1. Root must hold exactly one element.
    void backward(Var root);
    // Adds parameter adjoints into grads (indexed by Parameter::index).
    void accumulate(Gradients& grads) const;

    std::size_t size() const { return nodes_.size(); }
    // Handle the next pushed node will receive; lets a backward closure
    // refer to its own output.
    Var next() { return Var{this, static_cast<int>(nodes_.size())}; }

private:
    struct Node {
        Tensor value;
        const Tensor* ref = nullptr;
        Tensor grad;
        Backward backward;
        bool needs_grad = false;
        const Parameter* param = nullptr;

        const Tensor& val() const { return ref ? *ref : value; }
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    bool record_;
    std::deque<Node> nodes_;
    std::vector<int> param_nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// Elementwise and matrix primitives. Matrices are rank-2 [rows, cols].
Var matmul(Var a, Var b);
Var matmul_bt(Var a, Var b); // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row); // broadcast a [R,C] + row [C]
Var linear(Var x, Var weight, Var bias); // x [R,in] * weight [in,out] + bias [out]
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, std::vector<int> shape);
Var slice_cols(Var a, int begin, int count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(Var a, std::vector<int> index);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Multi-head scaled dot-product self-attention restricted to row segments
// [offsets[s], offsets[s+1]). When weights is non-null it receives one
// [len, len] matrix per (segment, head), segment-major.
Var segmented_attention(Var q, Var k, Var v, const std::vector<int>& offsets, int heads,
                        std::vector<Tensor>* weights = nullptr);

// Convolutions on [B, C, H, W]. conv2d weight is [Cout, Cin, k, k];
// conv_transpose2d weight is [Cin, Cout, k, k]. Bias is [Cout].
Var conv2d(Var x, Var weight, Var bias, int stride, int pad);
Var conv_transpose2d(Var x, Var weight, Var bias, int stride, int pad);
Var global_avg_pool(Var x); // [B, C, H, W] -> [B, C]

} // namespace tad::ag
