#include "tad/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tad::ag {

Tape::Node& Tape::node(Var v)
{
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw std::logic_error("variable does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const
{
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw std::logic_error("variable does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::constant(Tensor value)
{
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const Parameter& p)
{
    for (int id : param_nodes_)
        if (nodes_[static_cast<std::size_t>(id)].param == &p)
            return Var{this, id};
    Node& n = nodes_.emplace_back();
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = record_;
    const int id = static_cast<int>(nodes_.size() - 1);
    param_nodes_.push_back(id);
    return Var{this, id};
}

Var Tape::op(Tensor value, std::initializer_list<Var> inputs, Backward backward)
{
    bool needs = false;
    if (record_)
        for (Var in : inputs)
            needs = needs || node(in).needs_grad;
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs)
        n.backward = std::move(backward);
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::op(Tensor value, const std::vector<Var>& inputs, Backward backward)
{
    bool needs = false;
    if (record_)
        for (Var in : inputs)
            needs = needs || node(in).needs_grad;
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs)
        n.backward = std::move(backward);
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad(Var v)
{
    Node& n = node(v);
    if (n.grad.empty())
        n.grad = Tensor(n.val().shape(), 0.0);
    return n.grad;
}

void Tape::backward(Var root)
{
    if (!record_)
        throw std::logic_error("backward on a non-recording tape");
    if (value(root).size() != 1)
        throw std::invalid_argument("backward root must be a scalar");
    grad(root).fill(1.0);
    for (std::size_t i = static_cast<std::size_t>(root.id) + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty())
            continue;
        n.backward(*this, n.grad);
    }
}

void Tape::accumulate(Gradients& grads) const
{
    for (int id : param_nodes_) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty())
            continue;
        Tensor& g = grads[n.param->index];
        const double* src = n.grad.data();
        double* dst = g.data();
        for (std::size_t k = 0; k < g.size(); ++k)
            dst[k] += src[k];
    }
}

namespace {

void require(bool cond, const char* what)
{
    if (!cond)
        throw std::invalid_argument(what);
}

void add_into(Tensor& dst, const Tensor& src)
{
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i)
        d[i] += s[i];
}

// dfdx receives the input and the op's own output.
template <typename F, typename G>
Var unary(Var a, F f, G dfdx)
{
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i)
        out[i] = f(av[i]);
    const Var self = a.tape->next();
    return a.tape->op(std::move(out), {a}, [a, self, dfdx](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(a);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < x.size(); ++i)
            ga[i] += g[i] * dfdx(x[i], y[i]);
    });
}

} // namespace

Var matmul(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul shape mismatch");
    Tensor out = Tensor::matrix(av.dim(0), bv.dim(1));
    if (out.size() && av.dim(1))
        out.mat().noalias() = av.mat() * bv.mat();
    return a.tape->op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (g.size() == 0)
            return;
        if (t.needs_grad(a) && t.value(a).size())
            t.grad(a).mat().noalias() += g.mat() * t.value(b).mat().transpose();
        if (t.needs_grad(b) && t.value(b).size())
            t.grad(b).mat().noalias() += t.value(a).mat().transpose() * g.mat();
    });
}

Var matmul_bt(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1), "matmul_bt shape mismatch");
    Tensor out = Tensor::matrix(av.dim(0), bv.dim(0));
    if (out.size() && av.dim(1))
        out.mat().noalias() = av.mat() * bv.mat().transpose();
    return a.tape->op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (g.size() == 0)
            return;
        if (t.needs_grad(a) && t.value(a).size())
            t.grad(a).mat().noalias() += g.mat() * t.value(b).mat();
        if (t.needs_grad(b) && t.value(b).size())
            t.grad(b).mat().noalias() += g.mat().transpose() * t.value(a).mat();
    });
}

Var transpose(Var a)
{
    const Tensor& av = a.value();
    require(av.rank() == 2, "transpose expects a matrix");
    Tensor out = Tensor::matrix(av.dim(1), av.dim(0));
    if (out.size())
        out.mat() = av.mat().transpose();
    return a.tape->op(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        if (g.size())
            t.grad(a).mat() += g.mat().transpose();
    });
}

Var add(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.same_shape(bv), "add shape mismatch");
    Tensor out = av;
    add_into(out, bv);
    return a.tape->op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.needs_grad(a))
            add_into(t.grad(a), g);
        if (t.needs_grad(b))
            add_into(t.grad(b), g);
    });
}

Var sub(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.same_shape(bv), "sub shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] -= bv[i];
    return a.tape->op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.needs_grad(a))
            add_into(t.grad(a), g);
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b)
{
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.same_shape(bv), "mul shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] *= bv[i];
    return a.tape->op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(a);
        const Tensor& y = t.value(b);
        if (t.needs_grad(a)) {
            Tensor& ga = t.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * y[i];
        }
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i)
                gb[i] += g[i] * x[i];
        }
    });
}

Var scale(Var a, double s)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v *= s;
    return a.tape->op(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += s * g[i];
    });
}

Var add_scalar(Var a, double s)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v += s;
    return a.tape->op(std::move(out), {a}, [a](Tape& t, const Tensor& g) { add_into(t.grad(a), g); });
}

Var add_row(Var a, Var row)
{
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    require(av.rank() == 2 && rv.size() == static_cast<std::size_t>(av.dim(1)), "add_row shape mismatch");
    Tensor out = av;
    const int rows = av.dim(0), cols = av.dim(1);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out.at(r, c) += rv[static_cast<std::size_t>(c)];
    return a.tape->op(std::move(out), {a, row}, [a, row](Tape& t, const Tensor& g) {
        if (t.needs_grad(a))
            add_into(t.grad(a), g);
        if (t.needs_grad(row)) {
            Tensor& gr = t.grad(row);
            const int rows = g.dim(0), cols = g.dim(1);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    gr[static_cast<std::size_t>(c)] += g.at(r, c);
        }
    });
}

Var linear(Var x, Var weight, Var bias)
{
    return add_row(matmul(x, weight), bias);
}

Var relu(Var a)
{
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a)
{
    return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a)
{
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sum(Var a)
{
    double s = 0.0;
    for (double v : a.value().values())
        s += v;
    return a.tape->op(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
        for (double& v : t.grad(a).values())
            v += g[0];
    });
}

Var mean(Var a)
{
    const std::size_t n = a.value().size();
    require(n > 0, "mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, std::vector<int> shape)
{
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape->op(std::move(out), {a}, [a](Tape& t, const Tensor& g) { add_into(t.grad(a), g); });
}

Var slice_cols(Var a, int begin, int count)
{
    const Tensor& av = a.value();
    require(av.rank() == 2 && begin >= 0 && count >= 0 && begin + count <= av.dim(1), "slice_cols out of range");
    const int rows = av.dim(0);
    Tensor out = Tensor::matrix(rows, count);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c)
            out.at(r, c) = av.at(r, begin + c);
    return a.tape->op(std::move(out), {a}, [a, begin, count](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad(a);
        for (int r = 0; r < g.dim(0); ++r)
            for (int c = 0; c < count; ++c)
                ga.at(r, begin + c) += g.at(r, c);
    });
}

Var concat_cols(const std::vector<Var>& parts)
{
    require(!parts.empty(), "concat_cols of nothing");
    const int rows = parts[0].value().dim(0);
    int total = 0;
    for (Var p : parts) {
        require(p.value().rank() == 2 && p.value().dim(0) == rows, "concat_cols row mismatch");
        total += p.value().dim(1);
    }
    Tensor out = Tensor::matrix(rows, total);
    int off = 0;
    for (Var p : parts) {
        const Tensor& pv = p.value();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < pv.dim(1); ++c)
                out.at(r, off + c) = pv.at(r, c);
        off += pv.dim(1);
    }
    return parts[0].tape->op(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
        int off = 0;
        for (Var p : parts) {
            const int w = t.value(p).dim(1);
            if (t.needs_grad(p)) {
                Tensor& gp = t.grad(p);
                for (int r = 0; r < g.dim(0); ++r)
                    for (int c = 0; c < w; ++c)
                        gp.at(r, c) += g.at(r, off + c);
            }
            off += w;
        }
    });
}

Var concat_rows(const std::vector<Var>& parts)
{
    require(!parts.empty(), "concat_rows of nothing");
    const int cols = parts[0].value().dim(1);
    int total = 0;
    for (Var p : parts) {
        require(p.value().rank() == 2 && p.value().dim(1) == cols, "concat_rows column mismatch");
        total += p.value().dim(0);
    }
    Tensor out = Tensor::matrix(total, cols);
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& pv = p.value();
        std::copy(pv.data(), pv.data() + pv.size(), out.data() + off);
        off += pv.size();
    }
    return parts[0].tape->op(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (Var p : parts) {
            const std::size_t n = t.value(p).size();
            if (t.needs_grad(p)) {
                Tensor& gp = t.grad(p);
                for (std::size_t i = 0; i < n; ++i)
                    gp[i] += g[off + i];
            }
            off += n;
        }
    });
}

Var gather_rows(Var a, std::vector<int> index)
{
    const Tensor& av = a.value();
    require(av.rank() == 2, "gather_rows expects a matrix");
    const int cols = av.dim(1);
    Tensor out = Tensor::matrix(static_cast<int>(index.size()), cols);
    for (std::size_t r = 0; r < index.size(); ++r) {
        require(index[r] >= 0 && index[r] < av.dim(0), "gather_rows index out of range");
        std::copy_n(av.data() + static_cast<std::size_t>(index[r]) * cols, cols,
                    out.data() + r * static_cast<std::size_t>(cols));
    }
    return a.tape->op(std::move(out), {a}, [a, index = std::move(index), cols](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad(a);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (int c = 0; c < cols; ++c)
                ga.at(index[r], c) += g.at(static_cast<int>(r), c);
    });
}

Var softmax_rows(Var a)
{
    const Tensor& av = a.value();
    require(av.rank() == 2, "softmax_rows expects a matrix");
    Tensor out = av;
    const int rows = av.dim(0), cols = av.dim(1);
    for (int r = 0; r < rows; ++r) {
        double mx = -INFINITY;
        for (int c = 0; c < cols; ++c)
            mx = std::max(mx, out.at(r, c));
        double s = 0.0;
        for (int c = 0; c < cols; ++c)
            s += out.at(r, c) = std::exp(out.at(r, c) - mx);
        for (int c = 0; c < cols; ++c)
            out.at(r, c) /= s;
    }
    const Var self = a.tape->next();
    return a.tape->op(std::move(out), {a}, [a, self](Tape& t, const Tensor& g) {
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad(a);
        for (int r = 0; r < y.dim(0); ++r) {
            double dot = 0.0;
            for (int c = 0; c < y.dim(1); ++c)
                dot += g.at(r, c) * y.at(r, c);
            for (int c = 0; c < y.dim(1); ++c)
                ga.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps)
{
    const Tensor& xv = x.value();
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    require(xv.rank() == 2 && gv.size() == static_cast<std::size_t>(xv.dim(1)) && bv.size() == gv.size(),
            "layer_norm shape mismatch");
    const int rows = xv.dim(0), cols = xv.dim(1);
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (int c = 0; c < cols; ++c)
            mu += xv.at(r, c);
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = xv.at(r, c) - mu;
            var += d * d;
        }
        var /= cols;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        for (int c = 0; c < cols; ++c) {
            xhat.at(r, c) = (xv.at(r, c) - mu) * is;
            out.at(r, c) = xhat.at(r, c) * gv[static_cast<std::size_t>(c)] + bv[static_cast<std::size_t>(c)];
        }
    }
    return x.tape->op(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
                          const Tensor& gv = t.value(gamma);
                          const int rows = xhat.dim(0), cols = xhat.dim(1);
                          if (t.needs_grad(gamma)) {
                              Tensor& gg = t.grad(gamma);
                              for (int r = 0; r < rows; ++r)
                                  for (int c = 0; c < cols; ++c)
                                      gg[static_cast<std::size_t>(c)] += g.at(r, c) * xhat.at(r, c);
                          }
                          if (t.needs_grad(beta)) {
                              Tensor& gb = t.grad(beta);
                              for (int r = 0; r < rows; ++r)
                                  for (int c = 0; c < cols; ++c)
                                      gb[static_cast<std::size_t>(c)] += g.at(r, c);
                          }
                          if (t.needs_grad(x)) {
                              Tensor& gx = t.grad(x);
                              for (int r = 0; r < rows; ++r) {
                                  double sum_d = 0.0, sum_dx = 0.0;
                                  for (int c = 0; c < cols; ++c) {
                                      const double d = g.at(r, c) * gv[static_cast<std::size_t>(c)];
                                      sum_d += d;
                                      sum_dx += d * xhat.at(r, c);
                                  }
                                  const double is = inv_std[static_cast<std::size_t>(r)];
                                  for (int c = 0; c < cols; ++c) {
                                      const double d = g.at(r, c) * gv[static_cast<std::size_t>(c)];
                                      gx.at(r, c) += is * (d - sum_d / cols - xhat.at(r, c) * sum_dx / cols);
                                  }
                              }
                          }
                      });
}

Var segmented_attention(Var q, Var k, Var v, const std::vector<int>& offsets, int heads,
                        std::vector<Tensor>* weights)
{
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    require(qv.rank() == 2 && qv.same_shape(kv) && qv.same_shape(vv), "attention shape mismatch");
    const int dim = qv.dim(1);
    require(heads >= 1 && dim % heads == 0, "head count must divide the model width");
    require(!offsets.empty() && offsets.front() == 0 && offsets.back() == qv.dim(0), "attention segments do not cover rows");
    const int dh = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out(qv.shape());
    std::vector<RowMatrix> probs;
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const int r0 = offsets[s], len = offsets[s + 1] - offsets[s];
        for (int h = 0; h < heads; ++h) {
            const auto qb = qv.mat().block(r0, h * dh, len, dh);
            const auto kb = kv.mat().block(r0, h * dh, len, dh);
            const auto vb = vv.mat().block(r0, h * dh, len, dh);
            RowMatrix p = (qb * kb.transpose()) * inv_sqrt;
            for (int r = 0; r < len; ++r) {
                const double mx = p.row(r).maxCoeff();
                p.row(r) = (p.row(r).array() - mx).exp();
                p.row(r) /= p.row(r).sum();
            }
            out.mat().block(r0, h * dh, len, dh) = p * vb;
            if (weights)
                weights->emplace_back(std::vector<int>{len, len},
                                      std::vector<double>(p.data(), p.data() + p.size()));
            probs.push_back(std::move(p));
        }
    }
    return q.tape->op(std::move(out), {q, k, v},
                      [q, k, v, offsets, heads, dh, inv_sqrt, probs = std::move(probs)](Tape& t, const Tensor& g) {
                          const Tensor& qv = t.value(q);
                          const Tensor& kv = t.value(k);
                          const Tensor& vv = t.value(v);
                          Tensor* gq = t.needs_grad(q) ? &t.grad(q) : nullptr;
                          Tensor* gk = t.needs_grad(k) ? &t.grad(k) : nullptr;
                          Tensor* gvv = t.needs_grad(v) ? &t.grad(v) : nullptr;
                          std::size_t idx = 0;
                          for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
                              const int r0 = offsets[s], len = offsets[s + 1] - offsets[s];
                              for (int h = 0; h < heads; ++h, ++idx) {
                                  const RowMatrix& p = probs[idx];
                                  const auto go = g.mat().block(r0, h * dh, len, dh);
                                  const auto vb = vv.mat().block(r0, h * dh, len, dh);
                                  if (gvv)
                                      gvv->mat().block(r0, h * dh, len, dh) += p.transpose() * go;
                                  RowMatrix dp = go * vb.transpose();
                                  RowMatrix ds(len, len);
                                  for (int r = 0; r < len; ++r) {
                                      const double dot = (dp.row(r).array() * p.row(r).array()).sum();
                                      ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
                                  }
                                  ds *= inv_sqrt;
                                  if (gq)
                                      gq->mat().block(r0, h * dh, len, dh) += ds * kv.mat().block(r0, h * dh, len, dh);
                                  if (gk)
                                      gk->mat().block(r0, h * dh, len, dh) += ds.transpose() * qv.mat().block(r0, h * dh, len, dh);
                              }
                          }
                      });
}

namespace {

// Unfolds one [C, H, W] image into [C*k*k, Ho*Wo] patch columns.
void im2col(const double* src, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, double* cols)
{
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        row[oy * out_w + ox] = (iy >= 0 && iy < height && ix >= 0 && ix < width)
                                                   ? src[(static_cast<std::size_t>(c) * height + iy) * width + ix]
                                                   : 0.0;
                    }
                }
            }
}

// Adjoint of im2col: scatters patch columns back onto the image (accumulating).
void col2im(const double* cols, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, double* dst)
{
    const int plane = out_h * out_w;
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= height)
                        continue;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < width)
                            dst[(static_cast<std::size_t>(c) * height + iy) * width + ix] += row[oy * out_w + ox];
                    }
                }
            }
}

} // namespace

Var conv2d(Var x, Var weight, Var bias, int stride, int pad)
{
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require(xv.rank() == 4 && wv.rank() == 4 && wv.dim(1) == xv.dim(1) && wv.dim(2) == wv.dim(3),
            "conv2d shape mismatch");
    const int batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int cout = wv.dim(0), k = wv.dim(2);
    require(bias.value().size() == static_cast<std::size_t>(cout), "conv2d bias mismatch");
    const int oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
    require(oh > 0 && ow > 0, "conv2d output would be empty");
    const int patch = cin * k * k, plane = oh * ow;

    Tensor out({batch, cout, oh, ow});
    RowMatrix cols(patch, plane);
    const ConstMatrixMap wm(wv.data(), cout, patch);
    const Tensor& bv = bias.value();
    for (int b = 0; b < batch; ++b) {
        im2col(xv.data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, k, stride, pad, oh, ow, cols.data());
        MatrixMap om(out.data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
        om.noalias() = wm * cols;
        for (int c = 0; c < cout; ++c)
            om.row(c).array() += bv[static_cast<std::size_t>(c)];
    }
    return x.tape->op(std::move(out), {x, weight, bias},
                      [=](Tape& t, const Tensor& g) {
                          const Tensor& xv = t.value(x);
                          const ConstMatrixMap wm(t.value(weight).data(), cout, patch);
                          RowMatrix cols(patch, plane);
                          RowMatrix dcols(patch, plane);
                          Tensor* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
                          Tensor* gw = t.needs_grad(weight) ? &t.grad(weight) : nullptr;
                          Tensor* gb = t.needs_grad(bias) ? &t.grad(bias) : nullptr;
                          for (int b = 0; b < batch; ++b) {
                              const ConstMatrixMap gm(g.data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
                              if (gb)
                                  for (int c = 0; c < cout; ++c)
                                      (*gb)[static_cast<std::size_t>(c)] += gm.row(c).sum();
                              if (gw) {
                                  im2col(xv.data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, k, stride, pad,
                                         oh, ow, cols.data());
                                  MatrixMap(gw->data(), cout, patch).noalias() += gm * cols.transpose();
                              }
                              if (gx) {
                                  dcols.noalias() = wm.transpose() * gm;
                                  col2im(dcols.data(), cin, h, w, k, stride, pad, oh, ow,
                                         gx->data() + static_cast<std::size_t>(b) * cin * h * w);
                              }
                          }
                      });
}

Var conv_transpose2d(Var x, Var weight, Var bias, int stride, int pad)
{
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require(xv.rank() == 4 && wv.rank() == 4 && wv.dim(0) == xv.dim(1) && wv.dim(2) == wv.dim(3),
            "conv_transpose2d shape mismatch");
    const int batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int cout = wv.dim(1), k = wv.dim(2);
    require(bias.value().size() == static_cast<std::size_t>(cout), "conv_transpose2d bias mismatch");
    const int oh = (h - 1) * stride - 2 * pad + k, ow = (w - 1) * stride - 2 * pad + k;
    require(oh > 0 && ow > 0, "conv_transpose2d output would be empty");
    const int patch = cout * k * k, plane = h * w, out_plane = oh * ow;

    Tensor out({batch, cout, oh, ow});
    RowMatrix cols(patch, plane);
    const ConstMatrixMap wm(wv.data(), cin, patch);
    const Tensor& bv = bias.value();
    for (int b = 0; b < batch; ++b) {
        const ConstMatrixMap xm(xv.data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
        cols.noalias() = wm.transpose() * xm;
        double* dst = out.data() + static_cast<std::size_t>(b) * cout * out_plane;
        col2im(cols.data(), cout, oh, ow, k, stride, pad, h, w, dst);
        for (int c = 0; c < cout; ++c)
            for (int i = 0; i < out_plane; ++i)
                dst[static_cast<std::size_t>(c) * out_plane + i] += bv[static_cast<std::size_t>(c)];
    }
    return x.tape->op(std::move(out), {x, weight, bias},
                      [=](Tape& t, const Tensor& g) {
                          const Tensor& xv = t.value(x);
                          const ConstMatrixMap wm(t.value(weight).data(), cin, patch);
                          RowMatrix dcols(patch, plane);
                          Tensor* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
                          Tensor* gw = t.needs_grad(weight) ? &t.grad(weight) : nullptr;
                          Tensor* gb = t.needs_grad(bias) ? &t.grad(bias) : nullptr;
                          for (int b = 0; b < batch; ++b) {
                              const double* gsrc = g.data() + static_cast<std::size_t>(b) * cout * out_plane;
                              if (gb)
                                  for (int c = 0; c < cout; ++c) {
                                      double s = 0.0;
                                      for (int i = 0; i < out_plane; ++i)
                                          s += gsrc[static_cast<std::size_t>(c) * out_plane + i];
                                      (*gb)[static_cast<std::size_t>(c)] += s;
                                  }
                              if (!gx && !gw)
                                  continue;
                              im2col(gsrc, cout, oh, ow, k, stride, pad, h, w, dcols.data());
                              if (gx)
                                  MatrixMap(gx->data() + static_cast<std::size_t>(b) * cin * plane, cin, plane).noalias() +=
                                      wm * dcols;
                              if (gw) {
                                  const ConstMatrixMap xm(xv.data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
                                  MatrixMap(gw->data(), cin, patch).noalias() += xm * dcols.transpose();
                              }
                          }
                      });
}

Var global_avg_pool(Var x)
{
    const Tensor& xv = x.value();
    require(xv.rank() == 4, "global_avg_pool expects [B, C, H, W]");
    const int batch = xv.dim(0), ch = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    Tensor out = Tensor::matrix(batch, ch);
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c) {
            const double* src = xv.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
            double s = 0.0;
            for (int i = 0; i < plane; ++i)
                s += src[i];
            out.at(b, c) = s / plane;
        }
    return x.tape->op(std::move(out), {x}, [x, batch, ch, plane](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad(x);
        for (int b = 0; b < batch; ++b)
            for (int c = 0; c < ch; ++c) {
                double* dst = gx.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
                const double d = g.at(b, c) / plane;
                for (int i = 0; i < plane; ++i)
                    dst[i] += d;
            }
    });
}

} // namespace tad::ag
