#pragma once

#include "tad/config.hpp"
#include "tad/model.hpp"
#include "tad/scoring.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace tad {

// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    Adam() = default;
    Adam(const TrainConfig& cfg, const ParamStore& store);

    void step(ParamStore& store, const Gradients& grads);

    std::int64_t steps() const { return t_; }
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, decay_ = 0.0;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Throws ValidationError naming the first clip that holds a label-1 frame.
void require_normal_clips(const std::vector<Clip>& clips);

using LogFn = std::function<void(const std::string&)>;

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);

    // Builds the training windows; every frame must be labelled normal.
    void set_data(const std::vector<Clip>& clips);
    std::size_t sample_count() const { return samples_.size(); }

    // One pass over the shuffled windows; returns the sample-weighted mean
    // loss of the epoch and appends it to history().
    LossBreakdown run_epoch();
    // One optimizer step on the given windows; returns their loss.
    LossBreakdown step(const std::vector<const TrainingSample*>& batch);
    // Loss on a batch without updating anything.
    LossBreakdown peek(const std::vector<const TrainingSample*>& batch) const;

    int epoch() const { return epoch_; }
    const std::vector<LossBreakdown>& history() const { return history_; }
    const TadModel& model() const { return *model_; }
    TadModel& model() { return *model_; }
    std::shared_ptr<TadModel> share_model() const { return model_; }
    const TrainConfig& config() const { return model_->config(); }

    // Parameters, optimizer moments, epoch, history and the shuffle state.
    void save(const std::filesystem::path& path) const;
    static Trainer load(const std::filesystem::path& path);

private:
    std::shared_ptr<TadModel> model_;
    Adam adam_;
    std::mt19937_64 rng_;
    int epoch_ = 0;
    std::vector<LossBreakdown> history_;
    std::vector<TrainingSample> samples_;
};

struct TrainOptions {
    LogFn log;
    std::filesystem::path checkpoint; // written after every epoch when set
};

struct TrainResult {
    std::shared_ptr<TadModel> model;
    std::vector<LossBreakdown> history;
};

TrainResult train(const TrainConfig& cfg, const std::vector<Clip>& clips, const TrainOptions& options = {});

// Loads only the model from a checkpoint.
std::shared_ptr<TadModel> load_model(const std::filesystem::path& checkpoint);

// Raw s_e and s_l for every frame of one clip (s_f left empty).
ScoreSeries score_clip(const TadModel& model, const Clip& clip);

struct EvalReport {
    std::vector<ScoreSeries> series;
    double auc = 0.0;
    ClassAucTable per_class;
};

// Scores every clip, fuses with the variant's weighting (s_l only for
// fol_only, s_e only for flow_only) and computes the AUC tables.
EvalReport evaluate(const TadModel& model, const std::vector<Clip>& clips);
double fusion_alpha(const TrainConfig& cfg);

void write_report(const EvalReport& report, const std::filesystem::path& dir);

// Synthetic train/test split of normal and anomalous clips.
struct BenchmarkSpec {
    int train_clips = 200;
    int test_normal = 50;
    int test_ego = 25;
    int test_object = 25; // alternating swerve and stop
    int train_frames = 20;
    int test_frames = 40;
    std::uint64_t seed = 7;
    WorldSampler sampler;
};

struct Benchmark {
    std::vector<Clip> train;
    std::vector<Clip> test;
};

Benchmark build_benchmark(const BenchmarkSpec& spec, int height, int width);

// Cartesian product over the keys of grid (each key a TrainConfig field
// with a list of values). A grid without keys has no cells.
struct AblationCell {
    std::vector<std::pair<std::string, std::string>> settings;
    TrainConfig cfg;
};
std::vector<AblationCell> expand_grid(const TrainConfig& base, const KeyValues& grid);

struct AblationRow {
    std::vector<std::pair<std::string, std::string>> settings;
    double auc = 0.0;
    LossBreakdown final_loss;
    double seconds = 0.0;
};

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const std::vector<Clip>& train_clips,
                                      const std::vector<Clip>& test_clips, const LogFn& log = {});
void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& dir);

} // namespace tad
