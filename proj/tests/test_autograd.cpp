#include "support.hpp"

#include <doctest.h>

#include <functional>

using namespace tad;
using namespace tad::ag;

namespace {

// Checks d(sum(w * f(inputs)))/d(inputs) for a fixed random w.
void check_op(std::vector<Tensor> inputs, const std::function<Var(Tape&, const std::vector<Var>&)>& f,
              double tol = 1e-6)
{
    ParamStore store;
    Initializer init(11);
    for (std::size_t i = 0; i < inputs.size(); ++i)
        store.add("x" + std::to_string(i), "op", std::move(inputs[i]));
    Tensor weights;
    const auto run = [&](Tape& tape) {
        std::vector<Var> vars;
        for (std::size_t i = 0; i < store.size(); ++i)
            vars.push_back(tape.param(store[i]));
        const Var out = f(tape, vars);
        if (weights.empty())
            weights = init.uniform(out.value().shape(), 1.0);
        return sum(mul(out, tape.constant(weights)));
    };
    Tape tape;
    const Var loss = run(tape);
    tape.backward(loss);
    Gradients g(store);
    tape.accumulate(g);
    const auto res = testing::check_gradients(store, g, [&] {
        Tape t(false);
        return run(t).value().item();
    });
    for (const auto& [name, r] : res) {
        CHECK(r.norm_rel < tol);
    }
}

Tensor rand(std::vector<int> shape, std::uint64_t seed, double bound = 1.0)
{
    Initializer init(seed);
    return init.uniform(std::move(shape), bound);
}

} // namespace

TEST_CASE("matrix primitives have exact adjoints")
{
    check_op({rand({3, 4}, 1), rand({4, 2}, 2)}, [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); });
    check_op({rand({3, 4}, 1), rand({5, 4}, 2)}, [](Tape&, const std::vector<Var>& v) { return matmul_bt(v[0], v[1]); });
    check_op({rand({3, 4}, 1)}, [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); });
    check_op({rand({3, 4}, 1), rand({3, 4}, 2)},
             [](Tape&, const std::vector<Var>& v) { return sub(mul(v[0], v[1]), add(v[0], v[1])); });
    check_op({rand({3, 4}, 1), rand({4}, 2)}, [](Tape&, const std::vector<Var>& v) { return add_row(v[0], v[1]); });
    check_op({rand({3, 4}, 1), rand({4, 2}, 2), rand({2}, 3)},
             [](Tape&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); });
    check_op({rand({2, 6}, 1)}, [](Tape&, const std::vector<Var>& v) {
        return concat_rows({slice_cols(v[0], 1, 3), reshape(slice_cols(v[0], 0, 3), {2, 3})});
    });
    check_op({rand({4, 3}, 1)}, [](Tape&, const std::vector<Var>& v) {
        return concat_cols({gather_rows(v[0], {3, 0, 0}), gather_rows(v[0], {1, 2, 1})});
    });
    check_op({rand({3, 4}, 1)}, [](Tape&, const std::vector<Var>& v) { return scale(add_scalar(v[0], 2.0), -3.0); });
    check_op({rand({3, 4}, 1)}, [](Tape&, const std::vector<Var>& v) { return mean(v[0]); });
}

TEST_CASE("pointwise nonlinearities")
{
    check_op({rand({3, 5}, 4)}, [](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); });
    check_op({rand({3, 5}, 4)}, [](Tape&, const std::vector<Var>& v) { return tanh(v[0]); });
    check_op({rand({3, 5}, 4)}, [](Tape&, const std::vector<Var>& v) { return relu(v[0]); });
    check_op({rand({3, 5}, 4, 3.0)}, [](Tape&, const std::vector<Var>& v) { return softmax_rows(v[0]); });
}

TEST_CASE("layer norm")
{
    check_op({rand({4, 6}, 5), rand({6}, 6), rand({6}, 7)},
             [](Tape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); });
}

TEST_CASE("segmented attention: adjoint and per-segment rows")
{
    const std::vector<int> offsets{0, 1, 4, 6};
    check_op({rand({6, 4}, 8), rand({6, 4}, 9), rand({6, 4}, 10)}, [&](Tape&, const std::vector<Var>& v) {
        return segmented_attention(v[0], v[1], v[2], offsets, 2);
    });
    Tape tape(false);
    std::vector<Tensor> w;
    segmented_attention(tape.constant(rand({6, 4}, 8)), tape.constant(rand({6, 4}, 9)), tape.constant(rand({6, 4}, 10)),
                        offsets, 2, &w);
    REQUIRE(w.size() == 6);
    CHECK(w[0].shape() == std::vector<int>{1, 1});
    CHECK(w[0][0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(w[2].shape() == std::vector<int>{3, 3});
    for (const Tensor& m : w)
        for (int r = 0; r < m.dim(0); ++r)
            CHECK(m.mat().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("segmented attention matches the two-token closed form")
{
    // One head, width 2, tokens e1 and e2: logits are I / sqrt(2).
    Tape tape(false);
    const Var x = tape.constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    std::vector<Tensor> w;
    const Var out = segmented_attention(x, x, x, {0, 2}, 1, &w);
    const double a = std::exp(1.0 / std::sqrt(2.0)) / (std::exp(1.0 / std::sqrt(2.0)) + 1.0);
    CHECK(w[0].at(0, 0) == doctest::Approx(a).epsilon(1e-12));
    CHECK(w[0].at(0, 1) == doctest::Approx(1.0 - a).epsilon(1e-12));
    CHECK(out.value().at(1, 1) == doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("convolutions")
{
    check_op({rand({2, 2, 6, 6}, 12), rand({3, 2, 3, 3}, 13), rand({3}, 14)},
             [](Tape&, const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 2, 1); });
    check_op({rand({2, 3, 3, 3}, 15), rand({3, 2, 4, 4}, 16), rand({2}, 17)},
             [](Tape&, const std::vector<Var>& v) { return conv_transpose2d(v[0], v[1], v[2], 2, 1); });
    check_op({rand({2, 3, 4, 4}, 18)}, [](Tape&, const std::vector<Var>& v) { return global_avg_pool(v[0]); });

    Tape tape(false);
    const Var y = conv_transpose2d(tape.constant(rand({1, 4, 4, 4}, 1)), tape.constant(rand({4, 2, 4, 4}, 2)),
                                   tape.constant(rand({2}, 3)), 2, 1);
    CHECK(y.value().shape() == std::vector<int>{1, 2, 8, 8});
}

TEST_CASE("conv2d agrees with a direct sum")
{
    const Tensor x = rand({1, 2, 5, 5}, 21), w = rand({1, 2, 3, 3}, 22);
    Tape tape(false);
    const Tensor& y = conv2d(tape.constant(x), tape.constant(w), tape.constant(Tensor({1}, 0.5)), 2, 1).value();
    REQUIRE(y.shape() == std::vector<int>{1, 1, 3, 3});
    for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
            double s = 0.5;
            for (int c = 0; c < 2; ++c)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const int iy = 2 * oy - 1 + ky, ix = 2 * ox - 1 + kx;
                        if (iy >= 0 && iy < 5 && ix >= 0 && ix < 5)
                            s += x[static_cast<std::size_t>((c * 5 + iy) * 5 + ix)] *
                                 w[static_cast<std::size_t>((c * 3 + ky) * 3 + kx)];
                    }
            CHECK(y[static_cast<std::size_t>(oy * 3 + ox)] == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("non-recording tape keeps no adjoints and reuses parameter nodes")
{
    ParamStore store;
    Parameter& p = store.add("p", "g", Tensor({2, 2}, 1.0));
    Tape tape(false);
    const Var a = tape.param(p);
    const Var b = tape.param(p);
    CHECK(a.id == b.id);
    CHECK_FALSE(tape.needs_grad(a));
}
