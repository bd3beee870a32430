#include "tad/scoring.hpp"

#include "tad/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tad {

double score_flow(const FlowFrame& observed, const FlowFrame& reconstructed)
{
    return flow_loss(observed, reconstructed).l_motion;
}

PredictionBuffer::PredictionBuffer(int depth) : depth_(depth)
{
    if (depth < 1)
        throw std::invalid_argument("prediction buffer depth must be at least 1");
}

void PredictionBuffer::push(int object_id, int origin, std::vector<Box> rollout)
{
    auto& q = entries_[object_id];
    if (!q.empty() && q.back().origin >= origin)
        throw std::invalid_argument("rollouts must be pushed in increasing frame order");
    q.push_back(Entry{origin, std::move(rollout)});
    while (!q.empty() && q.front().origin < origin - depth_ + 1)
        q.pop_front();
}

std::vector<Box> PredictionBuffer::predictions(int object_id, int t) const
{
    std::vector<Box> out;
    const auto it = entries_.find(object_id);
    if (it == entries_.end())
        return out;
    for (auto e = it->second.rbegin(); e != it->second.rend(); ++e) {
        const int j = t - e->origin;
        if (j < 1 || j > depth_)
            continue;
        if (j <= static_cast<int>(e->boxes.size()))
            out.push_back(e->boxes[static_cast<std::size_t>(j - 1)]);
    }
    return out;
}

BoxScore score_boxes(const PredictionBuffer& buffer, const std::vector<ObservedBox>& observed, int t)
{
    BoxScore score;
    for (const ObservedBox& ob : observed) {
        const std::vector<Box> preds = buffer.predictions(ob.id, t);
        if (preds.size() < 2)
            continue;
        score.warmup = false;
        double mean_std = 0.0;
        for (int c = 0; c < 4; ++c) {
            double sum = 0.0;
            for (const Box& p : preds) {
                sum += std::abs(ob.box.coord(c) - p.coord(c));
            }
            const double n = static_cast<double>(preds.size());
            const double mean = sum / n;
            double var = 0.0;
            for (const Box& p : preds) {
                const double e = std::abs(ob.box.coord(c) - p.coord(c)) - mean;
                var += e * e;
            }
            mean_std += std::sqrt(var / n);
        }
        score.value = std::max(score.value, mean_std / 4.0);
    }
    return score;
}

std::vector<double> minmax_normalize(const std::vector<double>& xs)
{
    if (xs.empty())
        return {};
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    const double min = *lo, range = *hi - *lo;
    std::vector<double> out(xs.size(), 0.0);
    if (range > 0.0)
        for (std::size_t i = 0; i < xs.size(); ++i)
            out[i] = (xs[i] - min) / range;
    return out;
}

std::vector<double> fuse_scores(const std::vector<double>& s_e, const std::vector<double>& s_l, double alpha)
{
    if (s_e.size() != s_l.size())
        throw std::invalid_argument("fuse_scores: series lengths differ");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("fuse_scores: alpha must lie in [0, 1]");
    const std::vector<double> ne = minmax_normalize(s_e), nl = minmax_normalize(s_l);
    std::vector<double> mixed(s_e.size());
    for (std::size_t i = 0; i < mixed.size(); ++i)
        mixed[i] = alpha * ne[i] + (1.0 - alpha) * nl[i];
    return minmax_normalize(mixed);
}

double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels)
{
    if (scores.size() != labels.size())
        throw std::invalid_argument("frame_auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::int64_t pos = 0, neg = 0, twice_wins = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::int64_t p = 0, q = 0;
        for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
            const int l = labels[order[j]];
            if (l != 0 && l != 1)
                throw std::invalid_argument("frame_auc: labels must be 0 or 1");
            (l == 1 ? p : q) += 1;
        }
        twice_wins += 2 * p * neg + p * q;
        pos += p;
        neg += q;
        i = j;
    }
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("frame_auc: labels contain a single class");
    return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double overall_auc(const std::vector<ScoreSeries>& series)
{
    std::vector<double> scores;
    std::vector<int> labels;
    for (const ScoreSeries& s : series) {
        scores.insert(scores.end(), s.s_f.begin(), s.s_f.end());
        labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    }
    return frame_auc(scores, labels);
}

ClassAucTable per_class_auc(const std::vector<ScoreSeries>& series)
{
    std::map<std::pair<std::string, bool>, std::vector<const ScoreSeries*>> buckets;
    for (const ScoreSeries& s : series)
        buckets[{s.category, s.ego}].push_back(&s);
    ClassAucTable table;
    double sum = 0.0, sum_ego = 0.0, sum_other = 0.0;
    int n_ego = 0, n_other = 0;
    for (const auto& [key, clips] : buckets) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const ScoreSeries* s : clips) {
            scores.insert(scores.end(), s->s_f.begin(), s->s_f.end());
            labels.insert(labels.end(), s->labels.begin(), s->labels.end());
        }
        const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
        const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
        const std::string name = (key.second ? "ego:" : "other:") + key.first;
        if (!has_pos || !has_neg) {
            table.warnings.push_back("bucket " + name + " omitted: " + (has_pos ? "no normal frames" : "no anomalous frames"));
            continue;
        }
        const double auc = frame_auc(scores, labels);
        table.rows.push_back(ClassAuc{key.first, key.second, static_cast<int>(clips.size()), auc});
        sum += auc;
        (key.second ? sum_ego : sum_other) += auc;
        ++(key.second ? n_ego : n_other);
    }
    if (!table.rows.empty())
        table.average = sum / static_cast<double>(table.rows.size());
    table.average_ego = n_ego ? sum_ego / n_ego : 0.0;
    table.average_non_ego = n_other ? sum_other / n_other : 0.0;
    return table;
}

void fuse_series(std::vector<ScoreSeries>& series, double alpha, bool per_clip)
{
    if (per_clip) {
        for (ScoreSeries& s : series)
            s.s_f = fuse_scores(s.s_e, s.s_l, alpha);
        return;
    }
    std::vector<double> e, l;
    for (const ScoreSeries& s : series) {
        e.insert(e.end(), s.s_e.begin(), s.s_e.end());
        l.insert(l.end(), s.s_l.begin(), s.s_l.end());
    }
    const std::vector<double> f = fuse_scores(e, l, alpha);
    std::size_t at = 0;
    for (ScoreSeries& s : series) {
        s.s_f.assign(f.begin() + static_cast<std::ptrdiff_t>(at), f.begin() + static_cast<std::ptrdiff_t>(at + s.s_e.size()));
        at += s.s_e.size();
    }
}

void write_scores_csv(const ScoreSeries& series, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "frame,s_e,s_l,s_f,label\n";
    for (std::size_t i = 0; i < series.s_e.size(); ++i) {
        const int frame = i < series.frames.size() ? series.frames[i] : static_cast<int>(i);
        out << frame << ',' << series.s_e[i] << ',' << series.s_l[i] << ',' << (i < series.s_f.size() ? series.s_f[i] : 0.0)
            << ',' << (i < series.labels.size() ? series.labels[i] : 0) << '\n';
    }
}

namespace {

std::string polyline(const std::vector<double>& ys, double x0, double dx, double y0, double height)
{
    std::ostringstream pts;
    const std::vector<double> n = minmax_normalize(ys);
    for (std::size_t i = 0; i < n.size(); ++i)
        pts << (i ? " " : "") << x0 + dx * static_cast<double>(i) << ',' << y0 + height * (1.0 - n[i]);
    return pts.str();
}

} // namespace

void write_score_plot(const ScoreSeries& series, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    const double width = 640, height = 240, margin = 30;
    const std::size_t n = series.s_f.size();
    const double dx = n > 1 ? (width - 2 * margin) / static_cast<double>(n - 1) : 0.0;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < n && i < series.labels.size();) {
        if (series.labels[i] != 1) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && series.labels[j] == 1)
            ++j;
        const double x = margin + dx * (static_cast<double>(i) - 0.5);
        out << "<rect x=\"" << x << "\" y=\"" << margin << "\" width=\"" << dx * static_cast<double>(j - i)
            << "\" height=\"" << height - 2 * margin << "\" fill=\"red\" fill-opacity=\"0.2\"/>\n";
        i = j;
    }
    out << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\""
        << polyline(series.s_f, margin, dx, margin, height - 2 * margin) << "\"/>\n";
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-dasharray=\"4 3\" points=\""
        << polyline(series.s_e, margin, dx, margin, height - 2 * margin) << "\"/>\n";
    out << "<polyline fill=\"none\" stroke=\"darkorange\" stroke-dasharray=\"2 2\" points=\""
        << polyline(series.s_l, margin, dx, margin, height - 2 * margin) << "\"/>\n";
    out << "<text x=\"" << margin << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">" << series.clip_id
        << " (" << series.category << ")  s_f black, s_e blue, s_l orange</text>\n";
    out << "</svg>\n";
}

} // namespace tad
