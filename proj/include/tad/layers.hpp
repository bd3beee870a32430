#pragma once

#include "tad/autograd.hpp"
#include "tad/params.hpp"

#include <string>

namespace tad {

// Affine map x [R,in] -> [R,out]; weight stored [in,out].
class Linear {
public:
    Linear() = default;
    Linear(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in, int out);

    ag::Var operator()(ag::Tape& tape, ag::Var x) const;

    Parameter& weight() const { return *weight_; }
    Parameter& bias() const { return *bias_; }
    int in() const { return in_; }
    int out() const { return out_; }

private:
    Parameter* weight_ = nullptr;
    Parameter* bias_ = nullptr;
    int in_ = 0;
    int out_ = 0;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& store, const std::string& name, const std::string& group, int width);

    ag::Var operator()(ag::Tape& tape, ag::Var x) const;

private:
    Parameter* gamma_ = nullptr;
    Parameter* beta_ = nullptr;
};

// Gated recurrent cell:
//   r = sigmoid(x Wr + h Ur + br), z = sigmoid(x Wz + h Uz + bz)
//   n = tanh(x Wn + bn + r * (h Un + cn)), h' = (1 - z) * n + z * h
class GruCell {
public:
    GruCell() = default;
    GruCell(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in, int hidden);

    ag::Var operator()(ag::Tape& tape, ag::Var x, ag::Var h) const;
    int hidden() const { return hidden_; }

private:
    Linear input_;
    Linear state_;
    int hidden_ = 0;
};

// Two-layer perceptron with a ReLU between the layers.
class Mlp2 {
public:
    Mlp2() = default;
    Mlp2(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in, int hidden,
         int out);

    ag::Var operator()(ag::Tape& tape, ag::Var x) const;
    const Linear& last() const { return second_; }

private:
    Linear first_;
    Linear second_;
};

class Conv2d {
public:
    Conv2d() = default;
    // transposed selects a [Cin, Cout, k, k] transposed convolution.
    Conv2d(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in, int out,
           int kernel, int stride, int pad, bool transposed);

    ag::Var operator()(ag::Tape& tape, ag::Var x) const;

private:
    Parameter* weight_ = nullptr;
    Parameter* bias_ = nullptr;
    int stride_ = 1;
    int pad_ = 0;
    bool transposed_ = false;
};

} // namespace tad
