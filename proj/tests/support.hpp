#pragma once

#include "tad/training.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace tad::testing {

// Counts every (positive, negative) pair directly.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels)
{
    std::int64_t twice = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1)
            continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0)
                continue;
            ++pairs;
            if (scores[i] > scores[j])
                twice += 2;
            else if (scores[i] == scores[j])
                twice += 1;
        }
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
}

inline double entropy(const std::vector<double>& p)
{
    double h = 0.0;
    for (double x : p)
        if (x > 0.0)
            h -= x * std::log(x);
    return h;
}

// Smallest config that still touches every module.
inline TrainConfig tiny_config()
{
    TrainConfig cfg;
    cfg.D = 8;
    cfg.M = 6;
    cfg.L = 1;
    cfg.heads = 2;
    cfg.H = 8;
    cfg.W = 8;
    cfg.conv1 = 3;
    cfg.conv2 = 3;
    cfg.conv3 = 4;
    cfg.roi_size = 2;
    cfg.obs_len = 3;
    cfg.pred_len = 3;
    cfg.delta = 2;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.lr = 1e-2;
    cfg.seed = 3;
    return cfg;
}

// A clip whose first n objects stay fully in view for all frames.
inline Clip scene(int height, int width, int frames, int n_objects, std::uint64_t seed,
                  AnomalyType anomaly = AnomalyType::none)
{
    SyntheticWorldConfig w;
    w.clip_id = "scene_" + std::to_string(seed);
    w.height = height;
    w.width = width;
    w.frames = frames;
    w.ego = {EgoSegment{0, 0.6, -0.2, 0.004}};
    w.n_objects = n_objects;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < n_objects; ++i)
        w.objects.push_back(ObjectSpec{0.5 + 0.15 * u(rng), 0.5 + 0.15 * u(rng), 0.22 + 0.05 * u(rng),
                                       0.2 + 0.05 * u(rng), 0.004 * u(rng), 0.004 * u(rng), 0});
    w.flow_noise = 0.05;
    w.rng_seed = seed;
    if (anomaly != AnomalyType::none)
        w.anomaly = AnomalySpec{anomaly, frames / 2, frames / 4, 0, 3.0};
    return generate_clip(w);
}

struct GroupCheck {
    std::string group;
    double max_rel = 0.0;   // worst elementwise relative error
    double norm_rel = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    std::size_t checked = 0;
    double analytic_norm = 0.0;
};

// Central differences of loss() against analytic parameter gradients.
// Elementwise errors use |a - n| / max(|a|, |n|, floor) so that entries
// which are numerically zero on both sides are not judged on noise.
inline std::map<std::string, GroupCheck> check_gradients(ParamStore& store, const Gradients& analytic,
                                                         const std::function<double()>& loss, double h = 1e-5,
                                                         double floor = 1e-6)
{
    std::map<std::string, GroupCheck> out;
    std::map<std::string, double> sq;
    std::map<std::string, std::pair<double, double>> norms;
    for (std::size_t i = 0; i < store.size(); ++i) {
        Parameter& p = store[i];
        GroupCheck& g = out[p.group];
        g.group = p.group;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double saved = p.value[k];
            p.value[k] = saved + h;
            const double up = loss();
            p.value[k] = saved - h;
            const double down = loss();
            p.value[k] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i][k];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            g.max_rel = std::max(g.max_rel, rel);
            ++g.checked;
            sq[p.group] += (a - numeric) * (a - numeric);
            norms[p.group].first += a * a;
            norms[p.group].second += numeric * numeric;
        }
    }
    for (auto& [name, g] : out) {
        const double na = std::sqrt(norms[name].first), nn = std::sqrt(norms[name].second);
        g.analytic_norm = na;
        g.norm_rel = std::sqrt(sq[name]) / std::max({na, nn, 1e-300});
    }
    return out;
}

// l_total of the model on fixed samples, and its analytic gradient.
struct LossProbe {
    const TadModel* model;
    ModelInput input;

    double value() const
    {
        ag::Tape tape(false);
        return model->loss(tape, input).parts.l_total;
    }

    Gradients gradient(ParamStore& store) const
    {
        ag::Tape tape;
        const TadModel::Loss l = model->loss(tape, input);
        tape.backward(l.total);
        Gradients g(store);
        tape.accumulate(g);
        return g;
    }
};

} // namespace tad::testing
