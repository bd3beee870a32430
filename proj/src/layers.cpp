#include "tad/layers.hpp"

namespace tad {

Linear::Linear(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in, int out)
    : in_(in), out_(out)
{
    weight_ = &store.add(name + ".weight", group, init.fan_in({in, out}, in));
    bias_ = &store.add(name + ".bias", group, init.fan_in({out}, in));
}

ag::Var Linear::operator()(ag::Tape& tape, ag::Var x) const
{
    return ag::linear(x, tape.param(*weight_), tape.param(*bias_));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, const std::string& group, int width)
{
    gamma_ = &store.add(name + ".gamma", group, Tensor({width}, 1.0));
    beta_ = &store.add(name + ".beta", group, Tensor({width}, 0.0));
}

ag::Var LayerNorm::operator()(ag::Tape& tape, ag::Var x) const
{
    return ag::layer_norm(x, tape.param(*gamma_), tape.param(*beta_));
}

GruCell::GruCell(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in,
                 int hidden)
    : input_(store, init, name + ".input", group, in, 3 * hidden),
      state_(store, init, name + ".state", group, hidden, 3 * hidden),
      hidden_(hidden)
{
}

ag::Var GruCell::operator()(ag::Tape& tape, ag::Var x, ag::Var h) const
{
    const ag::Var gx = input_(tape, x);
    const ag::Var gh = state_(tape, h);
    const int n = hidden_;
    const ag::Var r = ag::sigmoid(ag::add(ag::slice_cols(gx, 0, n), ag::slice_cols(gh, 0, n)));
    const ag::Var z = ag::sigmoid(ag::add(ag::slice_cols(gx, n, n), ag::slice_cols(gh, n, n)));
    const ag::Var cand = ag::tanh(ag::add(ag::slice_cols(gx, 2 * n, n), ag::mul(r, ag::slice_cols(gh, 2 * n, n))));
    // (1 - z) * n + z * h  ==  n + z * (h - n)
    return ag::add(cand, ag::mul(z, ag::sub(h, cand)));
}

Mlp2::Mlp2(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in, int hidden,
           int out)
    : first_(store, init, name + ".0", group, in, hidden), second_(store, init, name + ".1", group, hidden, out)
{
}

ag::Var Mlp2::operator()(ag::Tape& tape, ag::Var x) const
{
    return second_(tape, ag::relu(first_(tape, x)));
}

Conv2d::Conv2d(ParamStore& store, Initializer& init, const std::string& name, const std::string& group, int in, int out,
               int kernel, int stride, int pad, bool transposed)
    : stride_(stride), pad_(pad), transposed_(transposed)
{
    const int fan = (transposed ? out : in) * kernel * kernel;
    std::vector<int> shape = transposed ? std::vector<int>{in, out, kernel, kernel} : std::vector<int>{out, in, kernel, kernel};
    weight_ = &store.add(name + ".weight", group, init.fan_in(std::move(shape), fan));
    bias_ = &store.add(name + ".bias", group, init.fan_in({out}, fan));
}

ag::Var Conv2d::operator()(ag::Tape& tape, ag::Var x) const
{
    const ag::Var w = tape.param(*weight_);
    const ag::Var b = tape.param(*bias_);
    return transposed_ ? ag::conv_transpose2d(x, w, b, stride_, pad_) : ag::conv2d(x, w, b, stride_, pad_);
}

} // namespace tad
