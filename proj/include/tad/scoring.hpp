#pragma once

#include "tad/data.hpp"

#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tad {

// Endpoint error between observed and reconstructed flow, averaged over pixels.
double score_flow(const FlowFrame& observed, const FlowFrame& reconstructed);

// Rollouts issued for each object over the last `depth` frames. A rollout
// made at frame t0 covers frames t0+1 .. t0+horizon.
class PredictionBuffer {
public:
    explicit PredictionBuffer(int depth = 5);

    void push(int object_id, int origin, std::vector<Box> rollout);
    // Boxes predicted for frame t from origins t-1 .. t-depth, nearest first.
    std::vector<Box> predictions(int object_id, int t) const;
    int depth() const { return depth_; }
    void clear() { entries_.clear(); }

private:
    struct Entry {
        int origin;
        std::vector<Box> boxes;
    };
    int depth_;
    std::map<int, std::deque<Entry>> entries_;
};

struct ObservedBox {
    int id = 0;
    Box box;
};

struct BoxScore {
    double value = 0.0;
    bool warmup = true; // no object had two or more predictions
};

// Max over objects of the mean over the four coordinates of the population
// standard deviation of |Y_t - Yhat_{t,t-j}| over the buffered j.
BoxScore score_boxes(const PredictionBuffer& buffer, const std::vector<ObservedBox>& observed, int t);

// (x - min) / (max - min); a constant sequence maps to zeros.
std::vector<double> minmax_normalize(const std::vector<double>& xs);

// Norm(alpha Norm(s_e) + (1 - alpha) Norm(s_l)).
std::vector<double> fuse_scores(const std::vector<double>& s_e, const std::vector<double>& s_l, double alpha = 0.4);

// Mann-Whitney statistic P(pos > neg) + P(tie)/2, exact. Labels are 0/1.
double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ScoreSeries {
    std::string clip_id;
    std::string category = "normal";
    bool ego = false;
    std::vector<int> frames;
    std::vector<double> s_e;
    std::vector<double> s_l;
    std::vector<double> s_f;
    std::vector<int> labels;
    std::vector<char> warmup;
};

struct ClassAuc {
    std::string category;
    bool ego = false;
    int clips = 0;
    double auc = 0.0;
};

struct ClassAucTable {
    std::vector<ClassAuc> rows;
    double average = 0.0;
    double average_ego = 0.0;
    double average_non_ego = 0.0;
    std::vector<std::string> warnings;
};

// Pools frames of every clip in a (category, ego) bucket and computes the
// s_f AUC; buckets without both classes are skipped with a warning.
ClassAucTable per_class_auc(const std::vector<ScoreSeries>& series);

// Concatenates s_f and labels over all clips.
double overall_auc(const std::vector<ScoreSeries>& series);

// Normalizes and fuses s_e, s_l into s_f, over the concatenated series or
// per clip.
void fuse_series(std::vector<ScoreSeries>& series, double alpha, bool per_clip);

void write_scores_csv(const ScoreSeries& series, const std::filesystem::path& path);
// Score curves with label-1 spans shaded red.
void write_score_plot(const ScoreSeries& series, const std::filesystem::path& path);

} // namespace tad
