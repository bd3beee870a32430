#pragma once

#include "tad/tensor.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace tad {

struct Parameter {
    std::string name;
    std::string group;
    Tensor value;
    std::size_t index = 0;
};

// Owns every learned tensor of a model. Parameter addresses are stable for
// the lifetime of the store, so layers keep plain pointers into it.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    Parameter& add(std::string name, std::string group, Tensor init);

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    std::size_t element_count() const;
    std::vector<std::string> groups() const;

    // Copies values from a store with identical names and shapes.
    void copy_values_from(const ParamStore& other);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

// Gradient buffers aligned with a ParamStore.
class Gradients {
public:
    explicit Gradients(const ParamStore& store);

    Tensor& operator[](std::size_t i) { return grads_[i]; }
    const Tensor& operator[](std::size_t i) const { return grads_[i]; }
    std::size_t size() const { return grads_.size(); }

    void zero();
    double global_norm() const;
    void scale(double factor);

private:
    std::vector<Tensor> grads_;
};

// Seeded initializers. All randomness in model construction flows through
// one engine so a seed fixes every parameter bit.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : engine_(seed) {}

    Tensor uniform(std::vector<int> shape, double bound);
    // Uniform in +-1/sqrt(fan_in).
    Tensor fan_in(std::vector<int> shape, int fan_in);

private:
    std::mt19937_64 engine_;
};

} // namespace tad
