#include "support.hpp"

#include <doctest.h>

using namespace tad;

namespace {

MotionTokens tokens(ag::Tape& tape, const Tensor& seq, std::vector<int> offsets)
{
    return MotionTokens{tape.constant(seq), std::move(offsets)};
}

Tensor rand(std::vector<int> shape, std::uint64_t seed, double bound = 1.0)
{
    Initializer init(seed);
    return init.uniform(std::move(shape), bound);
}

int nonzeros(const Tensor& t)
{
    int n = 0;
    for (std::size_t i = 0; i < t.size(); ++i)
        n += t[i] != 0.0;
    return n;
}

} // namespace

TEST_CASE("positional table values")
{
    const Tensor pe = positional_table(3, 4);
    CHECK(pe.at(0, 0) == 0.0);
    CHECK(pe.at(0, 1) == 1.0);
    CHECK(pe.at(0, 2) == 0.0);
    CHECK(pe.at(0, 3) == 1.0);
    CHECK(pe.at(1, 0) == doctest::Approx(0.8414709848).epsilon(1e-10));
    CHECK(pe.at(1, 2) == doctest::Approx(std::sin(1.0 / 100.0)).epsilon(1e-12));
    CHECK_THROWS(positional_table(2, 3));

    ag::Tape tape(false);
    const MotionTokens z = positional_encode(tape, tokens(tape, Tensor::matrix(5, 4), {0, 2, 5}));
    CHECK(z.seq.value().at(1, 0) == pe.at(1, 0));
    CHECK(z.seq.value().at(2, 0) == 0.0); // second sample restarts at position 0
    CHECK(z.seq.value().at(4, 1) == doctest::Approx(std::cos(2.0)));
}

TEST_CASE("hard shrinkage")
{
    CHECK(hard_shrink(0.05, 0.1, 1e-12) == 0.0);
    CHECK(hard_shrink(0.1, 0.1, 1e-12) == 0.0);
    CHECK(hard_shrink(0.3, 0.1, 1e-12) == doctest::Approx(0.3).epsilon(1e-10));
    CHECK(std::abs(hard_shrink(0.3, 0.1, 1e-12) - 0.3) < 1e-10);
    for (double a = 0.0; a <= 1.0; a += 0.01)
        for (double lambda : {0.0, 0.03, 0.2}) {
            const double s = hard_shrink(a, lambda, 1e-12);
            if (a <= lambda) {
                REQUIRE(s == 0.0);
            } else {
                REQUIRE(std::abs(s - a) <= lambda + 1e-12 * a / (a - lambda) + 1e-15);
                const double h = 1e-7;
                const double fd = (hard_shrink(a + h, lambda, 1e-12) - hard_shrink(a - h, lambda, 1e-12)) / (2 * h);
                if (a - lambda > 1e-5)
                    REQUIRE(hard_shrink_derivative(a, lambda, 1e-12) == doctest::Approx(fd).epsilon(1e-5));
            }
        }
}

TEST_CASE("addressing rows are distributions and sparsify monotonically")
{
    ag::Tape tape(false);
    const ag::Var q = tape.constant(rand({7, 8}, 1, 3.0));
    const ag::Var k = tape.constant(rand({12, 8}, 2, 3.0));
    int previous = -1;
    for (double lambda : {0.0, 0.02, 0.05, 0.08, 0.1, 0.2}) {
        std::vector<char> fb;
        const Tensor a = memory_addressing(q, k, 2, lambda, 1e-12, &fb).value();
        REQUIRE(a.shape() == std::vector<int>{14, 12});
        for (int r = 0; r < 14; ++r) {
            double s = 0.0;
            for (int c = 0; c < 12; ++c) {
                REQUIRE(a.at(r, c) >= 0.0);
                REQUIRE(a.at(r, c) <= 1.0);
                s += a.at(r, c);
            }
            REQUIRE(std::abs(s - 1.0) < 1e-6);
        }
        // Count support on rows that did not fall back.
        int nz = 0;
        for (int r = 0; r < 14; ++r)
            if (!fb[static_cast<std::size_t>(r)])
                for (int c = 0; c < 12; ++c)
                    nz += a.at(r, c) != 0.0;
        (void)nz;
        const int support = nonzeros(a);
        if (previous >= 0 && std::count(fb.begin(), fb.end(), 1) == 0)
            CHECK(support <= previous);
        previous = support;
    }
}

TEST_CASE("shrinkage support is monotone in lambda on random logits")
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_real_distribution<double> u(0.0, 0.3);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> p(10);
        double z = 0.0;
        for (double& x : p)
            z += x = std::exp(n(rng));
        for (double& x : p)
            x /= z;
        double l1 = u(rng), l2 = u(rng);
        if (l1 > l2)
            std::swap(l1, l2);
        int c1 = 0, c2 = 0;
        for (double x : p) {
            c1 += hard_shrink(x, l1, 1e-12) > 0.0;
            c2 += hard_shrink(x, l2, 1e-12) > 0.0;
        }
        REQUIRE(c2 <= c1);
    }
}

TEST_CASE("fallback when shrinkage removes every weight")
{
    ag::Tape tape(false);
    // Identical keys: every softmax weight is 1/4, below lambda = 0.5.
    const ag::Var q = tape.constant(rand({3, 4}, 3));
    const ag::Var k = tape.constant(Tensor({4, 4}, 0.2));
    std::vector<char> fb;
    const Tensor a = memory_addressing(q, k, 1, 0.5, 1e-12, &fb).value();
    CHECK(std::count(fb.begin(), fb.end(), 1) == 3);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i] == doctest::Approx(0.25));

    const ag::Var one = tape.constant(rand({1, 4}, 5));
    const Tensor single = memory_addressing(q, one, 2, 0.0033, 1e-12).value();
    for (std::size_t i = 0; i < single.size(); ++i)
        CHECK(single[i] == 1.0);
}

TEST_CASE("sparsity loss is the mean row entropy")
{
    Tensor onehot = Tensor::matrix(2, 4);
    onehot.at(0, 1) = 1.0;
    onehot.at(1, 3) = 1.0;
    CHECK(sparsity_loss(onehot) == 0.0);
    const Tensor uniform = Tensor::matrix(3, 4, 0.25);
    CHECK(sparsity_loss(uniform) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(std::abs(sparsity_loss(uniform) - 1.3862943611198906) < 1e-9);

    ag::Tape tape(false);
    const Tensor a = memory_addressing(tape.constant(rand({20, 6}, 6, 4.0)), tape.constant(rand({9, 6}, 7, 4.0)), 3, 0.05,
                                       1e-12)
                         .value();
    const double l = sparsity_loss(a);
    CHECK(l >= 0.0);
    CHECK(l <= std::log(9.0));
    double mean = 0.0;
    for (int r = 0; r < a.dim(0); ++r) {
        std::vector<double> row(a.data() + r * 9, a.data() + (r + 1) * 9);
        mean += testing::entropy(row);
    }
    CHECK(l == doctest::Approx(mean / a.dim(0)).epsilon(1e-12));
}

TEST_CASE("addressing and read have exact adjoints")
{
    for (double lambda : {0.0, 0.04}) {
        ParamStore store;
        store.add("q", "q", rand({5, 6}, 8, 2.0));
        store.add("k", "k", rand({7, 6}, 9, 2.0));
        store.add("v", "v", rand({7, 6}, 10));
        const Tensor w = rand({5, 6}, 11);
        const auto run = [&](ag::Tape& tape) {
            const ag::Var a = memory_addressing(tape.param(store[0]), tape.param(store[1]), 2, lambda, 1e-12);
            const ag::Var r = memory_attend(a, tape.param(store[2]), 2);
            return ag::add(ag::sum(ag::mul(r, tape.constant(w))), sparsity_loss(a));
        };
        ag::Tape tape;
        const ag::Var l = run(tape);
        tape.backward(l);
        Gradients g(store);
        tape.accumulate(g);
        for (const auto& [name, r] : testing::check_gradients(store, g, [&] {
                 ag::Tape t(false);
                 return run(t).value().item();
             })) {
            INFO(name, " lambda=", lambda);
            CHECK(r.max_rel < 1e-5);
        }
    }
}

TEST_CASE("lambda = 0 matches plain softmax cross-attention")
{
    TrainConfig cfg = testing::tiny_config();
    cfg.shrink = 0.0;
    ParamStore store;
    Initializer init(12);
    const MamrStack stack(store, init, cfg, true);
    ag::Tape tape(false);
    const MotionTokens in = tokens(tape, rand({6, cfg.D}, 13), {0, 1, 6});
    const auto shrunk = stack.memory(0).forward(tape, in, stack.bank(0));
    const MotionTokens plain = stack.memory(0).forward_softmax(tape, in, stack.bank(0));
    const Tensor& a = shrunk.tokens.seq.value();
    const Tensor& b = plain.seq.value();
    for (std::size_t i = 0; i < a.size(); ++i)
        REQUIRE(std::abs(a[i] - b[i]) < 1e-6);
}

TEST_CASE("stack preserves shape, composes its sublayers and sums sparsity")
{
    TrainConfig cfg = testing::tiny_config();
    cfg.shrink = 0.05;
    for (int n : {0, 1, 5}) {
        ParamStore store;
        Initializer init(14);
        const MamrStack stack(store, init, cfg, true);
        ag::Tape tape(false);
        const MotionTokens in = tokens(tape, rand({1 + n, cfg.D}, 15), {0, 1 + n});
        std::vector<AttentionTrace> traces;
        const MamrStack::Output out = stack.forward(tape, in, &traces);
        CHECK(out.tokens.seq.value().shape() == std::vector<int>{1 + n, cfg.D});
        CHECK(out.tokens.seq.value().all_finite());
        REQUIRE(traces.size() == 1);
        CHECK(traces[0].self_attn.size() == static_cast<std::size_t>(cfg.heads));
        if (n == 0)
            CHECK(traces[0].self_attn[0][0] == doctest::Approx(1.0));

        const MotionTokens pe = positional_encode(tape, in);
        const MotionTokens a = stack.inter(0).forward(tape, pe);
        const MotionTokens b = stack.memory(0).forward(tape, a, stack.bank(0)).tokens;
        const MotionTokens c = stack.feedforward(0).forward(tape, b);
        CHECK(c.seq.value() == out.tokens.seq.value());
        CHECK(out.sparsity.value().item() == out.layer_sparsity.at(0).value().item());
    }

    cfg.L = 3;
    ParamStore store;
    Initializer init(16);
    const MamrStack stack(store, init, cfg, true);
    ag::Tape tape(false);
    const MamrStack::Output out = stack.forward(tape, tokens(tape, rand({4, cfg.D}, 17), {0, 4}));
    double sum = 0.0;
    for (const ag::Var& v : out.layer_sparsity)
        sum += v.value().item();
    CHECK(out.sparsity.value().item() == doctest::Approx(sum).epsilon(1e-15));
    CHECK(&stack.bank(0) != &stack.bank(1));

    cfg.shared_memory = true;
    ParamStore shared_store;
    Initializer init2(16);
    const MamrStack shared(shared_store, init2, cfg, true);
    CHECK(shared.bank(0).slots == shared.bank(2).slots);
}

TEST_CASE("memory initialization stays in the fan-in range")
{
    TrainConfig cfg = testing::tiny_config();
    cfg.M = 50;
    cfg.D = 16;
    ParamStore store;
    Initializer init(18);
    const MamrStack stack(store, init, cfg, true);
    const Tensor& slots = stack.bank(0).slots->value;
    CHECK(slots.shape() == std::vector<int>{50, 16});
    for (std::size_t i = 0; i < slots.size(); ++i)
        REQUIRE(std::abs(slots[i]) <= 0.25);
    CHECK(stack.bank(0).shrink == doctest::Approx(3.0 / 50));
}

TEST_CASE("post-encoding stack is equivariant to object permutation")
{
    TrainConfig cfg = testing::tiny_config();
    cfg.shrink = 0.05;
    ParamStore store;
    Initializer init(19);
    const MamrStack stack(store, init, cfg, true);
    const Tensor x = rand({4, cfg.D}, 20);
    const std::vector<int> perm{0, 3, 1, 2};
    Tensor xp = x;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < cfg.D; ++c)
            xp.at(r, c) = x.at(perm[static_cast<std::size_t>(r)], c);
    ag::Tape tape(false);
    const auto run = [&](const Tensor& t) {
        MotionTokens m = tokens(tape, t, {0, 4});
        m = stack.inter(0).forward(tape, m);
        m = stack.memory(0).forward(tape, m, stack.bank(0)).tokens;
        return stack.feedforward(0).forward(tape, m).seq.value();
    };
    const Tensor y = run(x), yp = run(xp);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < cfg.D; ++c)
            REQUIRE(std::abs(yp.at(r, c) - y.at(perm[static_cast<std::size_t>(r)], c)) < 1e-12);
}

TEST_CASE("concatenation mixer uses sample-local context")
{
    ParamStore store;
    Initializer init(21);
    const ConcatMixer mix(store, init, 4);
    ag::Tape tape(false);
    const Tensor x = rand({5, 4}, 22);
    const Tensor joint = mix.forward(tape, tokens(tape, x, {0, 3, 5})).seq.value();
    Tensor first = Tensor::matrix(3, 4);
    std::copy(x.data(), x.data() + 12, first.data());
    const Tensor alone = mix.forward(tape, tokens(tape, first, {0, 3})).seq.value();
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(joint[i] == doctest::Approx(alone[i]).epsilon(1e-14));
}
