#include "tad/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tad {

Parameter& ParamStore::add(std::string name, std::string group, Tensor init)
{
    if (find(name))
        throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->group = std::move(group);
    p->value = std::move(init);
    p->index = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter* ParamStore::find(const std::string& name)
{
    for (auto& p : params_)
        if (p->name == name)
            return p.get();
    return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const
{
    for (const auto& p : params_)
        if (p->name == name)
            return p.get();
    return nullptr;
}

std::size_t ParamStore::element_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_)
        n += p->value.size();
    return n;
}

std::vector<std::string> ParamStore::groups() const
{
    std::vector<std::string> out;
    for (const auto& p : params_)
        if (std::find(out.begin(), out.end(), p->group) == out.end())
            out.push_back(p->group);
    return out;
}

void ParamStore::copy_values_from(const ParamStore& other)
{
    if (other.size() != size())
        throw std::invalid_argument("parameter stores differ in size");
    for (std::size_t i = 0; i < size(); ++i) {
        if (other[i].name != params_[i]->name || !other[i].value.same_shape(params_[i]->value))
            throw std::invalid_argument("parameter mismatch at " + params_[i]->name);
        params_[i]->value = other[i].value;
    }
}

Gradients::Gradients(const ParamStore& store)
{
    grads_.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
        grads_.emplace_back(store[i].value.shape(), 0.0);
}

void Gradients::zero()
{
    for (auto& g : grads_)
        g.fill(0.0);
}

double Gradients::global_norm() const
{
    double sq = 0.0;
    for (const auto& g : grads_)
        for (double v : g.values())
            sq += v * v;
    return std::sqrt(sq);
}

void Gradients::scale(double factor)
{
    for (auto& g : grads_)
        for (double& v : g.values())
            v *= factor;
}

Tensor Initializer::uniform(std::vector<int> shape, double bound)
{
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values())
        v = dist(engine_);
    return t;
}

Tensor Initializer::fan_in(std::vector<int> shape, int fan_in)
{
    return uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1))));
}

} // namespace tad
