#include "tad/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tad {

FlowLoss flow_loss(const FlowFrame& target, const FlowFrame& predicted)
{
    if (target.height != predicted.height || target.width != predicted.width || target.u.size() != predicted.u.size())
        throw std::invalid_argument("flow_loss: shape mismatch");
    const std::size_t n = target.u.size();
    if (n == 0)
        return {};
    double motion = 0.0, recon = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double du = static_cast<double>(target.u[i]) - predicted.u[i];
        const double dv = static_cast<double>(target.v[i]) - predicted.v[i];
        motion += std::sqrt(du * du + dv * dv);
        recon += std::abs(du) + std::abs(dv);
    }
    return FlowLoss{motion / n, recon / (2.0 * n)};
}

double box_loss(const std::vector<std::vector<Box>>& target, const std::vector<std::vector<Box>>& predicted)
{
    if (target.size() != predicted.size())
        throw std::invalid_argument("box_loss: object count mismatch");
    if (target.empty())
        return 0.0;
    const std::size_t steps = target.front().size();
    double total = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        double step = 0.0;
        for (std::size_t n = 0; n < target.size(); ++n) {
            if (target[n].size() != steps || predicted[n].size() != steps)
                throw std::invalid_argument("box_loss: horizon mismatch");
            double sq = 0.0;
            for (int c = 0; c < 4; ++c) {
                const double d = target[n][k].coord(c) - predicted[n][k].coord(c);
                sq += d * d;
            }
            step += std::sqrt(sq);
        }
        total += step / static_cast<double>(target.size());
    }
    return total;
}

LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights)
{
    for (const double v : {parts.l_motion, parts.l_recon, parts.l_mse, parts.l_s})
        if (!std::isfinite(v) || v < 0.0)
            throw std::invalid_argument("loss part is not a finite non-negative number: " + std::to_string(v));
    LossBreakdown b;
    b.l_motion = parts.l_motion;
    b.l_recon = parts.l_recon;
    b.l_f = parts.l_motion + parts.l_recon;
    b.l_mse = parts.l_mse;
    b.l_s = parts.l_s;
    b.weights = weights;
    b.l_total = weights.lambda1 * b.l_f + weights.lambda2 * b.l_mse + weights.lambda3 * b.l_s;
    return b;
}

ag::Var motion_loss(ag::Var predicted, const Tensor& target)
{
    const Tensor& p = predicted.value();
    if (!p.same_shape(target) || p.rank() != 4 || p.dim(1) != 2)
        throw std::invalid_argument("motion_loss: shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(p.dim(2)) * p.dim(3);
    const std::size_t batch = static_cast<std::size_t>(p.dim(0));
    const double count = static_cast<double>(batch * plane);
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t iu = b * 2 * plane + i, iv = iu + plane;
            const double du = p[iu] - target[iu], dv = p[iv] - target[iv];
            total += std::sqrt(du * du + dv * dv + kMotionEps);
        }
    return predicted.tape->op(Tensor::scalar(count > 0 ? total / count : 0.0), {predicted},
                              [=](ag::Tape& t, const Tensor& g) {
                                  const Tensor& p = t.value(predicted);
                                  Tensor& gp = t.grad(predicted);
                                  const double s = g[0] / count;
                                  for (std::size_t b = 0; b < batch; ++b)
                                      for (std::size_t i = 0; i < plane; ++i) {
                                          const std::size_t iu = b * 2 * plane + i, iv = iu + plane;
                                          const double du = p[iu] - target[iu], dv = p[iv] - target[iv];
                                          const double r = std::sqrt(du * du + dv * dv + kMotionEps);
                                          gp[iu] += s * du / r;
                                          gp[iv] += s * dv / r;
                                      }
                              });
}

ag::Var recon_loss(ag::Var predicted, const Tensor& target)
{
    const Tensor& p = predicted.value();
    if (!p.same_shape(target))
        throw std::invalid_argument("recon_loss: shape mismatch");
    const double count = static_cast<double>(p.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        total += std::abs(p[i] - target[i]);
    return predicted.tape->op(Tensor::scalar(count > 0 ? total / count : 0.0), {predicted},
                              [=](ag::Tape& t, const Tensor& g) {
                                  const Tensor& p = t.value(predicted);
                                  Tensor& gp = t.grad(predicted);
                                  const double s = g[0] / count;
                                  for (std::size_t i = 0; i < p.size(); ++i) {
                                      const double d = p[i] - target[i];
                                      gp[i] += d > 0.0 ? s : (d < 0.0 ? -s : 0.0);
                                  }
                              });
}

ag::Var box_loss(ag::Var predicted, const Tensor& target, const std::vector<int>& sample_of_row, int samples)
{
    const Tensor& p = predicted.value();
    if (!p.same_shape(target) || p.rank() != 2 || p.dim(1) % 4 != 0 ||
        static_cast<int>(sample_of_row.size()) != p.dim(0))
        throw std::invalid_argument("box_loss: shape mismatch");
    if (samples < 1)
        throw std::invalid_argument("box_loss: need at least one sample");
    const int rows = p.dim(0), steps = p.dim(1) / 4;
    std::vector<int> per_sample(static_cast<std::size_t>(samples), 0);
    for (const int s : sample_of_row)
        ++per_sample.at(static_cast<std::size_t>(s));
    // weight of one object distance in the batch mean
    std::vector<double> w(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r)
        w[static_cast<std::size_t>(r)] =
            1.0 / (static_cast<double>(samples) * per_sample[static_cast<std::size_t>(sample_of_row[static_cast<std::size_t>(r)])]);
    Tensor dist = Tensor::matrix(rows, steps);
    double total = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int k = 0; k < steps; ++k) {
            double sq = 0.0;
            for (int c = 0; c < 4; ++c) {
                const double d = p.at(r, 4 * k + c) - target.at(r, 4 * k + c);
                sq += d * d;
            }
            dist.at(r, k) = std::sqrt(sq);
            total += w[static_cast<std::size_t>(r)] * dist.at(r, k);
        }
    return predicted.tape->op(Tensor::scalar(total), {predicted}, [=](ag::Tape& t, const Tensor& g) {
        const Tensor& p = t.value(predicted);
        Tensor& gp = t.grad(predicted);
        for (int r = 0; r < rows; ++r)
            for (int k = 0; k < steps; ++k) {
                const double d = dist.at(r, k);
                if (d == 0.0)
                    continue;
                const double s = g[0] * w[static_cast<std::size_t>(r)] / d;
                for (int c = 0; c < 4; ++c)
                    gp.at(r, 4 * k + c) += s * (p.at(r, 4 * k + c) - target.at(r, 4 * k + c));
            }
    });
}

} // namespace tad
