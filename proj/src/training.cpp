#include "tad/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tad {

using nlohmann::json;

Adam::Adam(const TrainConfig& cfg, const ParamStore& store)
    : lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), decay_(cfg.weight_decay)
{
    for (std::size_t i = 0; i < store.size(); ++i) {
        m_.emplace_back(store[i].value.shape());
        v_.emplace_back(store[i].value.shape());
    }
}

void Adam::step(ParamStore& store, const Gradients& grads)
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
        Tensor& w = store[i].value;
        const Tensor& g = grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k] + decay_ * w[k];
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
            w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

void require_normal_clips(const std::vector<Clip>& clips)
{
    for (const Clip& c : clips)
        for (std::size_t t = 0; t < c.labels.size(); ++t)
            if (c.labels[t] != 0)
                throw ValidationError("training clip " + c.meta.id + " has an anomalous frame at t=" + std::to_string(t));
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5deece66dULL;

std::vector<const TrainingSample*> pointers(const std::vector<TrainingSample>& samples, const std::vector<std::size_t>& idx,
                                            std::size_t begin, std::size_t end)
{
    std::vector<const TrainingSample*> out;
    for (std::size_t i = begin; i < end; ++i)
        out.push_back(&samples[idx[i]]);
    return out;
}

json loss_json(const LossBreakdown& b)
{
    return json{{"l_motion", b.l_motion}, {"l_recon", b.l_recon}, {"l_f", b.l_f}, {"l_mse", b.l_mse},
                {"l_s", b.l_s},           {"l_total", b.l_total}};
}

LossBreakdown loss_from_json(const json& j, const LossWeights& w)
{
    LossBreakdown b;
    b.l_motion = j.at("l_motion").get<double>();
    b.l_recon = j.at("l_recon").get<double>();
    b.l_f = j.at("l_f").get<double>();
    b.l_mse = j.at("l_mse").get<double>();
    b.l_s = j.at("l_s").get<double>();
    b.l_total = j.at("l_total").get<double>();
    b.weights = w;
    return b;
}

void write_doubles(std::ostream& out, const Tensor& t)
{
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_doubles(std::istream& in, Tensor& t)
{
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in)
        throw std::runtime_error("checkpoint is truncated");
}

const char kMagic[] = "TADCKPT1";

} // namespace

Trainer::Trainer(const TrainConfig& cfg)
    : model_(std::make_shared<TadModel>(cfg)), adam_(cfg, model_->params()), rng_(cfg.seed ^ kShuffleSalt)
{
}

void Trainer::set_data(const std::vector<Clip>& clips)
{
    require_normal_clips(clips);
    samples_.clear();
    const TrainConfig& cfg = config();
    for (const Clip& c : clips) {
        if (!c.flows.empty() && (c.flows.front().height != cfg.H || c.flows.front().width != cfg.W))
            throw std::invalid_argument("clip " + c.meta.id + " has flow size " + std::to_string(c.flows.front().height) +
                                        "x" + std::to_string(c.flows.front().width) + ", config expects " +
                                        std::to_string(cfg.H) + "x" + std::to_string(cfg.W));
        for (TrainingSample& s : make_samples(c, cfg.obs_len, cfg.pred_len))
            samples_.push_back(std::move(s));
    }
}

LossBreakdown Trainer::step(const std::vector<const TrainingSample*>& batch)
{
    TadModel& model = *model_;
    const ModelInput input = make_input(batch, model.config(), true);
    ag::Tape tape;
    const TadModel::Loss loss = model.loss(tape, input);
    if (!std::isfinite(loss.parts.l_total))
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch_));
    tape.backward(loss.total);
    Gradients grads(model.params());
    tape.accumulate(grads);
    const double norm = grads.global_norm();
    if (model.config().grad_clip > 0.0 && norm > model.config().grad_clip)
        grads.scale(model.config().grad_clip / norm);
    adam_.step(model.params(), grads);
    return loss.parts;
}

LossBreakdown Trainer::peek(const std::vector<const TrainingSample*>& batch) const
{
    const ModelInput input = make_input(batch, config(), true);
    ag::Tape tape(false);
    return model_->loss(tape, input).parts;
}

LossBreakdown Trainer::run_epoch()
{
    if (samples_.empty())
        throw std::invalid_argument("no training windows; clips are shorter than obs_len + pred_len");
    std::vector<std::size_t> order(samples_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    const std::size_t bs = static_cast<std::size_t>(std::max(config().batch_size, 1));
    LossBreakdown mean;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
        const std::size_t end = std::min(begin + bs, order.size());
        const LossBreakdown b = step(pointers(samples_, order, begin, end));
        const double w = static_cast<double>(end - begin) / static_cast<double>(order.size());
        mean.l_motion += w * b.l_motion;
        mean.l_recon += w * b.l_recon;
        mean.l_f += w * b.l_f;
        mean.l_mse += w * b.l_mse;
        mean.l_s += w * b.l_s;
        mean.l_total += w * b.l_total;
        mean.weights = b.weights;
    }
    ++epoch_;
    history_.push_back(mean);
    return mean;
}

void Trainer::save(const std::filesystem::path& path) const
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    const ParamStore& store = model_->params();
    json header;
    header["config"] = json::parse(config().to_json());
    header["architecture_hash"] = config().architecture_hash();
    header["epoch"] = epoch_;
    header["adam_steps"] = adam_.steps();
    std::ostringstream rng;
    rng << rng_;
    header["rng"] = rng.str();
    header["history"] = json::array();
    for (const LossBreakdown& b : history_)
        header["history"].push_back(loss_json(b));
    header["params"] = json::array();
    for (std::size_t i = 0; i < store.size(); ++i)
        header["params"].push_back({{"name", store[i].name}, {"shape", store[i].value.shape()}});
    const std::string text = header.dump();

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw std::runtime_error("cannot write checkpoint " + path.string());
        out.write(kMagic, 8);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(len));
        for (std::size_t i = 0; i < store.size(); ++i) {
            write_doubles(out, store[i].value);
            write_doubles(out, adam_.first_moments()[i]);
            write_doubles(out, adam_.second_moments()[i]);
        }
        if (!out)
            throw std::runtime_error("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

namespace {

json read_header(std::istream& in, const std::filesystem::path& path)
{
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kMagic, 8))
        throw std::runtime_error(path.string() + " is not a checkpoint");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in)
        throw std::runtime_error("checkpoint header is truncated");
    return json::parse(text);
}

} // namespace

Trainer Trainer::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open checkpoint " + path.string());
    const json header = read_header(in, path);
    Trainer tr(TrainConfig::from_json(header.at("config").dump()));
    if (header.at("architecture_hash").get<std::uint64_t>() != tr.config().architecture_hash())
        throw std::runtime_error("checkpoint architecture hash does not match its config");
    ParamStore& store = tr.model_->params();
    const json& params = header.at("params");
    if (params.size() != store.size())
        throw std::runtime_error("checkpoint parameter count differs from the model");
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (params[i].at("name").get<std::string>() != store[i].name ||
            params[i].at("shape").get<std::vector<int>>() != store[i].value.shape())
            throw std::runtime_error("checkpoint parameter " + params[i].at("name").get<std::string>() +
                                     " does not match the model");
        read_doubles(in, store[i].value);
        read_doubles(in, tr.adam_.first_moments()[i]);
        read_doubles(in, tr.adam_.second_moments()[i]);
    }
    tr.adam_.set_steps(header.at("adam_steps").get<std::int64_t>());
    tr.epoch_ = header.at("epoch").get<int>();
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> tr.rng_;
    const TrainConfig& cfg = tr.config();
    for (const json& h : header.at("history"))
        tr.history_.push_back(loss_from_json(h, LossWeights{cfg.lambda1, cfg.lambda2, cfg.lambda3}));
    return tr;
}

std::shared_ptr<TadModel> load_model(const std::filesystem::path& checkpoint)
{
    return Trainer::load(checkpoint).share_model();
}

TrainResult train(const TrainConfig& cfg, const std::vector<Clip>& clips, const TrainOptions& options)
{
    Trainer tr(cfg);
    tr.set_data(clips);
    for (int e = 0; e < cfg.epochs; ++e) {
        const auto start = std::chrono::steady_clock::now();
        const LossBreakdown b = tr.run_epoch();
        if (options.log) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::ostringstream msg;
            msg << "epoch " << tr.epoch() << "/" << cfg.epochs << " l_total=" << b.l_total << " l_motion=" << b.l_motion
                << " l_recon=" << b.l_recon << " l_mse=" << b.l_mse << " l_s=" << b.l_s << " (" << secs << " s)";
            options.log(msg.str());
        }
        if (!options.checkpoint.empty())
            tr.save(options.checkpoint);
    }
    return TrainResult{tr.share_model(), tr.history()};
}

ScoreSeries score_clip(const TadModel& model, const Clip& clip)
{
    const TrainConfig& cfg = model.config();
    ScoreSeries s;
    s.clip_id = clip.meta.id;
    s.category = clip.meta.category;
    s.ego = clip.meta.ego;
    std::vector<TrainingSample> samples;
    for (int t = 0; t < clip.frames(); ++t)
        samples.push_back(make_inference_sample(clip, t, cfg.obs_len));
    std::vector<FrameOutput> outputs;
    constexpr std::size_t kChunk = 64;
    for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
        std::vector<const TrainingSample*> chunk;
        for (std::size_t i = begin; i < std::min(begin + kChunk, samples.size()); ++i)
            chunk.push_back(&samples[i]);
        for (FrameOutput& o : model.infer(chunk))
            outputs.push_back(std::move(o));
    }

    PredictionBuffer buffer(cfg.delta);
    for (int t = 0; t < clip.frames(); ++t) {
        const std::size_t ti = static_cast<std::size_t>(t);
        std::vector<ObservedBox> observed;
        for (const Track& tr : clip.tracks.tracks)
            if (tr.visible(t))
                observed.push_back(ObservedBox{tr.id, tr.at(t)});
        const BoxScore bs = score_boxes(buffer, observed, t);
        s.frames.push_back(t);
        s.s_e.push_back(score_flow(clip.flows[ti], outputs[ti].reconstruction));
        s.s_l.push_back(bs.value);
        s.warmup.push_back(bs.warmup ? 1 : 0);
        s.labels.push_back(ti < clip.labels.size() ? clip.labels[ti] : 0);
        const TrainingSample& sample = samples[ti];
        for (std::size_t n = 0; n < sample.objects.size(); ++n)
            buffer.push(sample.objects[n].id, t, outputs[ti].rollouts[n]);
    }
    return s;
}

double fusion_alpha(const TrainConfig& cfg)
{
    switch (cfg.variant) {
    case Variant::fol_only:
        return 0.0;
    case Variant::flow_only:
        return 1.0;
    default:
        return cfg.alpha;
    }
}

EvalReport evaluate(const TadModel& model, const std::vector<Clip>& clips)
{
    const TrainConfig& cfg = model.config();
    EvalReport report;
    for (const Clip& c : clips) {
        if (!c.flows.empty() && (c.flows.front().height != cfg.H || c.flows.front().width != cfg.W))
            throw std::invalid_argument("clip " + c.meta.id + " does not match the model's flow size " +
                                        std::to_string(cfg.H) + "x" + std::to_string(cfg.W));
        report.series.push_back(score_clip(model, c));
    }
    fuse_series(report.series, fusion_alpha(cfg), cfg.per_clip_norm);
    report.auc = overall_auc(report.series);
    report.per_class = per_class_auc(report.series);
    return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    json j;
    j["auc"] = report.auc;
    j["per_class"] = json::array();
    for (const ClassAuc& r : report.per_class.rows)
        j["per_class"].push_back({{"category", r.category}, {"ego", r.ego}, {"clips", r.clips}, {"auc", r.auc}});
    j["average"] = report.per_class.average;
    j["average_ego"] = report.per_class.average_ego;
    j["average_non_ego"] = report.per_class.average_non_ego;
    j["warnings"] = report.per_class.warnings;
    std::ofstream(dir / "report.json") << j.dump(2) << '\n';
    for (const ScoreSeries& s : report.series)
        write_scores_csv(s, dir / "scores" / (s.clip_id + ".csv"));
}

Benchmark build_benchmark(const BenchmarkSpec& spec, int height, int width)
{
    WorldSampler train = spec.sampler;
    train.height = height;
    train.width = width;
    train.frames = spec.train_frames;
    WorldSampler test = train;
    test.frames = spec.test_frames;

    std::mt19937_64 seeds(spec.seed);
    Benchmark b;
    // Normal worlds are drawn once and split by a seeded shuffle.
    std::vector<std::uint64_t> normal(static_cast<std::size_t>(spec.train_clips + spec.test_normal));
    for (auto& s : normal)
        s = seeds();
    std::vector<std::size_t> order(normal.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), seeds);
    char id[32];
    for (std::size_t i = 0; i < order.size(); ++i) {
        const bool is_train = i < static_cast<std::size_t>(spec.train_clips);
        std::snprintf(id, sizeof id, "%s_normal_%04zu", is_train ? "train" : "test", order[i]);
        Clip c = generate_clip(sample_world(is_train ? train : test, AnomalyType::none, normal[order[i]], id));
        (is_train ? b.train : b.test).push_back(std::move(c));
    }
    for (int i = 0; i < spec.test_ego; ++i) {
        std::snprintf(id, sizeof id, "test_ego_jolt_%04d", i);
        b.test.push_back(generate_clip(sample_world(test, AnomalyType::ego_jolt, seeds(), id)));
    }
    for (int i = 0; i < spec.test_object; ++i) {
        const AnomalyType type = i % 2 == 0 ? AnomalyType::object_swerve : AnomalyType::object_stop;
        std::snprintf(id, sizeof id, "test_%s_%04d", to_string(type).c_str(), i);
        b.test.push_back(generate_clip(sample_world(test, type, seeds(), id)));
    }
    return b;
}

std::vector<AblationCell> expand_grid(const TrainConfig& base, const KeyValues& grid)
{
    std::vector<AblationCell> cells;
    if (grid.empty())
        return cells;
    cells.push_back(AblationCell{{}, base});
    for (const auto& [key, values] : grid) {
        std::vector<AblationCell> next;
        for (const AblationCell& c : cells)
            for (const std::string& v : values) {
                AblationCell n = c;
                n.cfg.set(key, v);
                n.settings.emplace_back(key, v);
                next.push_back(std::move(n));
            }
        cells = std::move(next);
    }
    for (const AblationCell& c : cells)
        c.cfg.validate();
    return cells;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& cells, const std::vector<Clip>& train_clips,
                                      const std::vector<Clip>& test_clips, const LogFn& log)
{
    std::vector<AblationRow> rows;
    for (const AblationCell& cell : cells) {
        const auto start = std::chrono::steady_clock::now();
        TrainOptions opts;
        opts.log = log;
        const TrainResult r = train(cell.cfg, train_clips, opts);
        const EvalReport report = evaluate(*r.model, test_clips);
        AblationRow row;
        row.settings = cell.settings;
        row.auc = report.auc;
        if (!r.history.empty())
            row.final_loss = r.history.back();
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (log) {
            std::ostringstream msg;
            for (const auto& [k, v] : row.settings)
                msg << k << "=" << v << " ";
            msg << "auc=" << row.auc;
            log(msg.str());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "ablation.csv");
    csv.precision(10);
    std::vector<std::string> keys;
    if (!rows.empty())
        for (const auto& kv : rows.front().settings)
            keys.push_back(kv.first);
    for (const std::string& k : keys)
        csv << k << ',';
    csv << "auc,l_total,seconds\n";
    for (const AblationRow& r : rows) {
        for (const auto& kv : r.settings)
            csv << kv.second << ',';
        csv << r.auc << ',' << r.final_loss.l_total << ',' << r.seconds << '\n';
    }
}

} // namespace tad
