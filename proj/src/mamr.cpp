#include "tad/mamr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tad {

int AttentionTrace::fallback_rows() const
{
    return static_cast<int>(std::count(fallback.begin(), fallback.end(), 1));
}

Tensor positional_table(int rows, int dim)
{
    if (dim % 2 != 0)
        throw std::invalid_argument("positional encoding needs an even width");
    Tensor pe = Tensor::matrix(rows, dim);
    for (int pos = 0; pos < rows; ++pos)
        for (int i = 0; i < dim / 2; ++i) {
            const double angle = pos / std::pow(10000.0, 2.0 * i / dim);
            pe.at(pos, 2 * i) = std::sin(angle);
            pe.at(pos, 2 * i + 1) = std::cos(angle);
        }
    return pe;
}

MotionTokens positional_encode(ag::Tape& tape, const MotionTokens& tokens)
{
    const Tensor& v = tokens.seq.value();
    const int dim = v.dim(1);
    int longest = 0;
    for (std::size_t s = 0; s + 1 < tokens.offsets.size(); ++s)
        longest = std::max(longest, tokens.offsets[s + 1] - tokens.offsets[s]);
    const Tensor table = positional_table(longest, dim);
    Tensor pe = Tensor::matrix(v.dim(0), dim);
    for (std::size_t s = 0; s + 1 < tokens.offsets.size(); ++s)
        for (int r = tokens.offsets[s]; r < tokens.offsets[s + 1]; ++r)
            for (int c = 0; c < dim; ++c)
                pe.at(r, c) = table.at(r - tokens.offsets[s], c);
    return MotionTokens{ag::add(tokens.seq, tape.constant(std::move(pe))), tokens.offsets};
}

double hard_shrink(double a, double lambda, double eps)
{
    const double d = a - lambda;
    if (d <= 0.0)
        return 0.0;
    return d * a / (std::abs(d) + eps);
}

double hard_shrink_derivative(double a, double lambda, double eps)
{
    const double d = a - lambda;
    if (d <= 0.0)
        return 0.0;
    const double den = d + eps;
    return ((a + d) * den - d * a) / (den * den);
}

ag::Var memory_addressing(ag::Var queries, ag::Var keys, int heads, double lambda, double eps,
                          std::vector<char>* fallback)
{
    const Tensor& qv = queries.value();
    const Tensor& kv = keys.value();
    if (qv.rank() != 2 || kv.rank() != 2 || qv.dim(1) != kv.dim(1))
        throw std::invalid_argument("memory_addressing shape mismatch");
    if (heads < 1 || qv.dim(1) % heads != 0)
        throw std::invalid_argument("head count must divide the query width");
    if (!(eps > 0.0) || lambda < 0.0)
        throw std::invalid_argument("memory_addressing needs lambda >= 0 and eps > 0");
    const int rows = qv.dim(0), slots = kv.dim(0), dh = qv.dim(1) / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out = Tensor::matrix(heads * rows, slots);
    RowMatrix probs(heads * rows, slots);
    std::vector<double> sums(static_cast<std::size_t>(heads * rows));
    std::vector<char> flags(static_cast<std::size_t>(heads * rows), 0);
    for (int h = 0; h < heads; ++h) {
        if (rows == 0)
            break;
        probs.middleRows(h * rows, rows) =
            (qv.mat().middleCols(h * dh, dh) * kv.mat().middleCols(h * dh, dh).transpose()) * inv_sqrt;
    }
    for (int r = 0; r < heads * rows; ++r) {
        auto p = probs.row(r);
        const double mx = p.maxCoeff();
        p = (p.array() - mx).exp();
        p /= p.sum();
        double total = 0.0;
        for (int j = 0; j < slots; ++j)
            total += out.at(r, j) = hard_shrink(p(j), lambda, eps);
        sums[static_cast<std::size_t>(r)] = total;
        if (total > 0.0) {
            for (int j = 0; j < slots; ++j)
                out.at(r, j) /= total;
        } else {
            flags[static_cast<std::size_t>(r)] = 1;
            for (int j = 0; j < slots; ++j)
                out.at(r, j) = p(j);
        }
    }
    if (fallback)
        *fallback = flags;

    const ag::Var self = queries.tape->next();
    return queries.tape->op(
        std::move(out), {queries, keys},
        [=, probs = std::move(probs), sums = std::move(sums), flags = std::move(flags)](ag::Tape& t, const Tensor& g) {
            const Tensor& a = t.value(self);
            RowMatrix dz(heads * rows, slots);
            for (int r = 0; r < heads * rows; ++r) {
                const auto p = probs.row(r);
                Eigen::RowVectorXd dp(slots);
                if (flags[static_cast<std::size_t>(r)]) {
                    for (int j = 0; j < slots; ++j)
                        dp(j) = g.at(r, j);
                } else {
                    double dot = 0.0;
                    for (int j = 0; j < slots; ++j)
                        dot += g.at(r, j) * a.at(r, j);
                    const double s = sums[static_cast<std::size_t>(r)];
                    for (int j = 0; j < slots; ++j)
                        dp(j) = (g.at(r, j) - dot) / s * hard_shrink_derivative(p(j), lambda, eps);
                }
                const double dot = (dp.array() * p.array()).sum();
                dz.row(r) = p.array() * (dp.array() - dot) * inv_sqrt;
            }
            const Tensor& qv = t.value(queries);
            const Tensor& kv = t.value(keys);
            Tensor* gq = t.needs_grad(queries) ? &t.grad(queries) : nullptr;
            Tensor* gk = t.needs_grad(keys) ? &t.grad(keys) : nullptr;
            for (int h = 0; h < heads && rows > 0; ++h) {
                const auto dzh = dz.middleRows(h * rows, rows);
                if (gq)
                    gq->mat().middleCols(h * dh, dh) += dzh * kv.mat().middleCols(h * dh, dh);
                if (gk)
                    gk->mat().middleCols(h * dh, dh) += dzh.transpose() * qv.mat().middleCols(h * dh, dh);
            }
        });
}

ag::Var memory_attend(ag::Var addressing, ag::Var values, int heads)
{
    const Tensor& av = addressing.value();
    const Tensor& vv = values.value();
    if (av.rank() != 2 || vv.rank() != 2 || av.dim(1) != vv.dim(0) || av.dim(0) % heads != 0 || vv.dim(1) % heads != 0)
        throw std::invalid_argument("memory_attend shape mismatch");
    const int rows = av.dim(0) / heads, dh = vv.dim(1) / heads;
    Tensor out = Tensor::matrix(rows, vv.dim(1));
    for (int h = 0; h < heads && rows > 0; ++h)
        out.mat().middleCols(h * dh, dh) = av.mat().middleRows(h * rows, rows) * vv.mat().middleCols(h * dh, dh);
    return addressing.tape->op(std::move(out), {addressing, values}, [=](ag::Tape& t, const Tensor& g) {
        if (rows == 0)
            return;
        const Tensor& av = t.value(addressing);
        const Tensor& vv = t.value(values);
        for (int h = 0; h < heads; ++h) {
            const auto gh = g.mat().middleCols(h * dh, dh);
            if (t.needs_grad(addressing))
                t.grad(addressing).mat().middleRows(h * rows, rows) += gh * vv.mat().middleCols(h * dh, dh).transpose();
            if (t.needs_grad(values))
                t.grad(values).mat().middleCols(h * dh, dh) += av.mat().middleRows(h * rows, rows).transpose() * gh;
        }
    });
}

double sparsity_loss(const Tensor& addressing)
{
    const int rows = addressing.dim(0), cols = addressing.dim(1);
    if (rows == 0)
        return 0.0;
    double total = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double a = addressing.at(r, c);
            if (a > 0.0)
                total -= a * std::log(a);
        }
    return total / rows;
}

ag::Var sparsity_loss(ag::Var addressing)
{
    const Tensor& av = addressing.value();
    return addressing.tape->op(Tensor::scalar(sparsity_loss(av)), {addressing}, [addressing](ag::Tape& t, const Tensor& g) {
        const Tensor& a = t.value(addressing);
        if (a.dim(0) == 0)
            return;
        Tensor& ga = t.grad(addressing);
        const double scale = g[0] / a.dim(0);
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] > 0.0)
                ga[i] -= scale * (std::log(a[i]) + 1.0);
    });
}

InterMotionLayer::InterMotionLayer(ParamStore& store, Initializer& init, const std::string& name, int dim, int heads)
    : heads_(heads),
      q_(store, init, name + ".q", "mamr.inter", dim, dim),
      k_(store, init, name + ".k", "mamr.inter", dim, dim),
      v_(store, init, name + ".v", "mamr.inter", dim, dim),
      ln_(store, name + ".ln", "mamr.inter", dim)
{
    if (heads < 1 || dim % heads != 0)
        throw std::invalid_argument("head count must divide the model width");
}

MotionTokens InterMotionLayer::forward(ag::Tape& tape, const MotionTokens& tokens, AttentionTrace* trace) const
{
    const ag::Var attn = ag::segmented_attention(q_(tape, tokens.seq), k_(tape, tokens.seq), v_(tape, tokens.seq),
                                                 tokens.offsets, heads_, trace ? &trace->self_attn : nullptr);
    return MotionTokens{ag::add(tokens.seq, ln_(tape, attn)), tokens.offsets};
}

MemoryReadLayer::MemoryReadLayer(ParamStore& store, Initializer& init, const std::string& name, int dim, int heads)
    : heads_(heads),
      q_(store, init, name + ".q", "mamr.memory_read", dim, dim),
      k_(store, init, name + ".k", "mamr.memory_read", dim, dim),
      v_(store, init, name + ".v", "mamr.memory_read", dim, dim),
      ln_(store, name + ".ln", "mamr.memory_read", dim)
{
    if (heads < 1 || dim % heads != 0)
        throw std::invalid_argument("head count must divide the model width");
}

MemoryReadLayer::Output MemoryReadLayer::forward(ag::Tape& tape, const MotionTokens& tokens, const MemoryBank& bank,
                                                 AttentionTrace* trace) const
{
    const ag::Var slots = tape.param(*bank.slots);
    const ag::Var addressing = memory_addressing(q_(tape, tokens.seq), k_(tape, slots), heads_, bank.shrink, bank.eps,
                                                 trace ? &trace->fallback : nullptr);
    if (trace)
        trace->mem_addr = addressing.value();
    const ag::Var read = memory_attend(addressing, v_(tape, slots), heads_);
    return Output{MotionTokens{ag::add(tokens.seq, ln_(tape, read)), tokens.offsets}, addressing};
}

MotionTokens MemoryReadLayer::forward_softmax(ag::Tape& tape, const MotionTokens& tokens, const MemoryBank& bank) const
{
    const ag::Var slots = tape.param(*bank.slots);
    const ag::Var q = q_(tape, tokens.seq);
    const ag::Var k = k_(tape, slots);
    const ag::Var v = v_(tape, slots);
    const int dim = q.value().dim(1), dh = dim / heads_;
    std::vector<ag::Var> parts;
    for (int h = 0; h < heads_; ++h) {
        const ag::Var logits = ag::scale(ag::matmul_bt(ag::slice_cols(q, h * dh, dh), ag::slice_cols(k, h * dh, dh)),
                                         1.0 / std::sqrt(static_cast<double>(dh)));
        parts.push_back(ag::matmul(ag::softmax_rows(logits), ag::slice_cols(v, h * dh, dh)));
    }
    return MotionTokens{ag::add(tokens.seq, ln_(tape, ag::concat_cols(parts))), tokens.offsets};
}

FeedForward::FeedForward(ParamStore& store, Initializer& init, const std::string& name, int dim)
    : ffn_(store, init, name + ".ffn", "mamr.ffn", dim, 4 * dim, dim), ln_(store, name + ".ln", "mamr.ffn", dim)
{
}

MotionTokens FeedForward::forward(ag::Tape& tape, const MotionTokens& tokens) const
{
    return MotionTokens{ag::add(tokens.seq, ln_(tape, ffn_(tape, tokens.seq))), tokens.offsets};
}

MamrStack::MamrStack(ParamStore& store, Initializer& init, const TrainConfig& cfg, bool with_memory)
    : with_memory_(with_memory), shared_(cfg.shared_memory)
{
    if (cfg.L < 1)
        throw std::invalid_argument("MAMR stack needs at least one layer");
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.D));
    for (int l = 0; l < cfg.L; ++l) {
        const std::string name = "mamr" + std::to_string(l);
        Block b{InterMotionLayer(store, init, name + ".inter", cfg.D, cfg.heads),
                with_memory ? MemoryReadLayer(store, init, name + ".memory", cfg.D, cfg.heads) : MemoryReadLayer{},
                FeedForward(store, init, name + ".ff", cfg.D)};
        blocks_.push_back(std::move(b));
        if (with_memory && (!shared_ || l == 0)) {
            Parameter& slots = store.add(name + ".slots", "mamr.memory_slots", init.uniform({cfg.M, cfg.D}, bound));
            banks_.push_back(MemoryBank{&slots, cfg.shrink_threshold(), cfg.eps});
        }
    }
}

const MemoryBank& MamrStack::bank(int layer) const
{
    if (banks_.empty())
        throw std::logic_error("stack has no memory");
    return shared_ ? banks_.front() : banks_.at(static_cast<std::size_t>(layer));
}

MamrStack::Output MamrStack::forward(ag::Tape& tape, const MotionTokens& tokens, std::vector<AttentionTrace>* traces) const
{
    Output out;
    out.tokens = positional_encode(tape, tokens);
    out.sparsity = tape.constant(Tensor::scalar(0.0));
    for (int l = 0; l < layers(); ++l) {
        const Block& b = blocks_[static_cast<std::size_t>(l)];
        AttentionTrace* trace = nullptr;
        if (traces)
            trace = &traces->emplace_back();
        out.tokens = b.inter.forward(tape, out.tokens, trace);
        if (with_memory_) {
            auto read = b.memory.forward(tape, out.tokens, bank(l), trace);
            out.tokens = read.tokens;
            const ag::Var ls = sparsity_loss(read.addressing);
            out.layer_sparsity.push_back(ls);
            out.sparsity = ag::add(out.sparsity, ls);
        }
        out.tokens = b.ffn.forward(tape, out.tokens);
    }
    return out;
}

ConcatMixer::ConcatMixer(ParamStore& store, Initializer& init, int dim)
    : dim_(dim), mix_(store, init, "concat.mix", "concat", 2 * dim, dim)
{
}

MotionTokens ConcatMixer::forward(ag::Tape& tape, const MotionTokens& tokens) const
{
    const int rows = tokens.seq.value().dim(0);
    Tensor context = Tensor::matrix(rows, rows);
    for (std::size_t s = 0; s + 1 < tokens.offsets.size(); ++s) {
        const int g = tokens.offsets[s], end = tokens.offsets[s + 1], n = end - g - 1;
        for (int r = g + 1; r < end; ++r) {
            context.at(g, r) = 1.0 / n;
            context.at(r, g) = 1.0;
        }
    }
    const ag::Var ctx = ag::matmul(tape.constant(std::move(context)), tokens.seq);
    return MotionTokens{ag::add(tokens.seq, mix_(tape, ag::concat_cols({tokens.seq, ctx}))), tokens.offsets};
}

} // namespace tad
