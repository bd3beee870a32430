#include "tad/training.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

using namespace tad;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

// Profile, then config file, then TAD_<FIELD>, then --set key=value.
TrainConfig resolve_config(const std::string& profile, const std::string& path, const std::vector<std::string>& sets)
{
    TrainConfig cfg;
    if (profile == "desk")
        cfg = TrainConfig::desk();
    else if (profile == "published")
        cfg = TrainConfig::published();
    else
        throw std::invalid_argument("unknown profile " + profile + " (desk or published)");
    if (!path.empty()) {
        const std::vector<std::string> unknown = apply_key_values(cfg, read_key_values(path));
        if (!unknown.empty())
            throw std::invalid_argument(path + ": unknown key " + unknown.front());
    }
    apply_env_overrides(cfg);
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got " + kv);
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void print_report(const EvalReport& r)
{
    std::cout << "frame AUC " << r.auc << "\n";
    for (const ClassAuc& row : r.per_class.rows)
        std::cout << "  " << (row.ego ? "ego:" : "other:") << row.category << "  clips=" << row.clips
                  << "  auc=" << row.auc << "\n";
    if (!r.per_class.rows.empty())
        std::cout << "  average=" << r.per_class.average << " ego=" << r.per_class.average_ego
                  << " non-ego=" << r.per_class.average_non_ego << "\n";
    for (const std::string& w : r.per_class.warnings)
        std::cerr << "warning: " << w << "\n";
}

struct SynthSettings {
    WorldSampler sampler;
    std::string anomaly = "none";
    std::uint64_t seed = 1;
    bool benchmark = false;
    BenchmarkSpec spec;
};

void apply_world(SynthSettings& s, const KeyValues& doc)
{
    const auto one = [&](const std::string& key, const std::vector<std::string>& v) {
        if (v.size() != 1)
            throw std::invalid_argument(key + ": expected a single value");
        return v.front();
    };
    for (const auto& [key, v] : doc) {
        const std::string x = one(key, v);
        WorldSampler& w = s.sampler;
        if (key == "height") w.height = std::stoi(x);
        else if (key == "width") w.width = std::stoi(x);
        else if (key == "frames") w.frames = std::stoi(x);
        else if (key == "min_objects") w.min_objects = std::stoi(x);
        else if (key == "max_objects") w.max_objects = std::stoi(x);
        else if (key == "max_ego_translation") w.max_ego_translation = std::stod(x);
        else if (key == "max_ego_rotation") w.max_ego_rotation = std::stod(x);
        else if (key == "min_object_speed") w.min_object_speed = std::stod(x);
        else if (key == "max_object_speed") w.max_object_speed = std::stod(x);
        else if (key == "flow_noise") w.flow_noise = std::stod(x);
        else if (key == "min_anomaly_duration") w.min_anomaly_duration = std::stoi(x);
        else if (key == "max_anomaly_duration") w.max_anomaly_duration = std::stoi(x);
        else if (key == "jolt_magnitude") w.jolt_magnitude = std::stod(x);
        else if (key == "swerve_magnitude") w.swerve_magnitude = std::stod(x);
        else if (key == "anomaly") s.anomaly = x;
        else if (key == "seed") s.seed = std::stoull(x);
        else if (key == "train_clips") s.spec.train_clips = std::stoi(x);
        else if (key == "test_normal") s.spec.test_normal = std::stoi(x);
        else if (key == "test_ego") s.spec.test_ego = std::stoi(x);
        else if (key == "test_object") s.spec.test_object = std::stoi(x);
        else if (key == "train_frames") s.spec.train_frames = std::stoi(x);
        else if (key == "test_frames") s.spec.test_frames = std::stoi(x);
        else throw std::invalid_argument("unknown world key " + key);
    }
}

void save_clips(const std::vector<Clip>& clips, const std::filesystem::path& dir)
{
    for (const Clip& c : clips)
        save_clip(c, dir / c.meta.id);
}

// A data directory is either a set of clip folders or holds train/ and test/.
std::vector<Clip> load_split(const std::filesystem::path& dir, const char* split)
{
    const std::filesystem::path sub = dir / split;
    return load_clip_dir(std::filesystem::is_directory(sub) ? sub : dir);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"tad: memory-augmented traffic accident detection"};
    app.require_subcommand(1);

    std::string profile = "desk", config_path, data_dir, out_path, ckpt, report_dir, clip_dir, csv_path, plot_dir,
                grid_path;
    std::vector<std::string> sets;
    int clips = 10;
    bool benchmark = false;

    const auto config_flags = [&](CLI::App* sub) {
        sub->add_option("--profile", profile, "desk or published")->envname("TAD_PROFILE");
        sub->add_option("--config", config_path, "key = value config file")->envname("TAD_CONFIG");
        sub->add_option("--set", sets, "override a config field, key=value");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train on normal clips");
    config_flags(train_cmd);
    train_cmd->add_option("--data", data_dir, "clip directory (uses train/ when present)")->required()->envname("TAD_DATA");
    train_cmd->add_option("--out", out_path, "checkpoint path")->required()->envname("TAD_OUT");

    CLI::App* eval_cmd = app.add_subcommand("eval", "score clips and report frame AUC");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required()->envname("TAD_CKPT");
    eval_cmd->add_option("--data", data_dir, "clip directory (uses test/ when present)")->required()->envname("TAD_DATA");
    eval_cmd->add_option("--report", report_dir, "report directory")->required()->envname("TAD_REPORT");

    CLI::App* score_cmd = app.add_subcommand("score", "score one clip");
    score_cmd->add_option("--ckpt", ckpt, "checkpoint")->required()->envname("TAD_CKPT");
    score_cmd->add_option("--clip", clip_dir, "clip directory")->required()->envname("TAD_CLIP");
    score_cmd->add_option("--csv", csv_path, "output CSV")->envname("TAD_CSV");
    score_cmd->add_option("--plot", plot_dir, "directory for the score curve (SVG)")->envname("TAD_PLOT");

    CLI::App* synth_cmd = app.add_subcommand("synth", "generate synthetic clips");
    synth_cmd->add_option("--config", config_path, "world config file")->envname("TAD_CONFIG");
    synth_cmd->add_option("--out", out_path, "output directory")->required()->envname("TAD_OUT");
    synth_cmd->add_option("--clips", clips, "number of clips")->envname("TAD_CLIPS");
    synth_cmd->add_flag("--benchmark", benchmark, "write a train/ and test/ benchmark split")->envname("TAD_BENCHMARK");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and evaluate every cell of a grid");
    config_flags(ablate_cmd);
    ablate_cmd->add_option("--grid", grid_path, "grid file: field = [v1, v2, ...]")->required()->envname("TAD_GRID");
    ablate_cmd->add_option("--out", out_path, "report directory")->required()->envname("TAD_OUT");
    ablate_cmd->add_option("--data", data_dir, "directory with train/ and test/; synthetic benchmark if omitted")
        ->envname("TAD_DATA");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            const TrainConfig cfg = resolve_config(profile, config_path, sets);
            const std::vector<Clip> data = load_split(data_dir, "train");
            log_line("training " + to_string(cfg.variant) + " on " + std::to_string(data.size()) + " clips");
            TrainOptions opts;
            opts.log = log_line;
            opts.checkpoint = out_path;
            train(cfg, data, opts);
        } else if (*eval_cmd) {
            const auto model = load_model(ckpt);
            const EvalReport report = evaluate(*model, load_split(data_dir, "test"));
            write_report(report, report_dir);
            print_report(report);
        } else if (*score_cmd) {
            const auto model = load_model(ckpt);
            const Clip clip = load_clip(clip_dir);
            ScoreSeries s = score_clip(*model, clip);
            std::vector<ScoreSeries> one{s};
            fuse_series(one, fusion_alpha(model->config()), true);
            if (!csv_path.empty())
                write_scores_csv(one.front(), csv_path);
            if (!plot_dir.empty())
                write_score_plot(one.front(), std::filesystem::path(plot_dir) / (clip.meta.id + ".svg"));
            if (csv_path.empty() && plot_dir.empty()) {
                std::cout << "frame,s_e,s_l,s_f,label\n";
                for (std::size_t i = 0; i < one.front().s_f.size(); ++i)
                    std::cout << i << ',' << one.front().s_e[i] << ',' << one.front().s_l[i] << ','
                              << one.front().s_f[i] << ',' << one.front().labels[i] << '\n';
            }
        } else if (*synth_cmd) {
            SynthSettings s;
            if (!config_path.empty())
                apply_world(s, read_key_values(config_path));
            if (benchmark) {
                s.spec.sampler = s.sampler;
                s.spec.seed = s.seed;
                const Benchmark b = build_benchmark(s.spec, s.sampler.height, s.sampler.width);
                save_clips(b.train, std::filesystem::path(out_path) / "train");
                save_clips(b.test, std::filesystem::path(out_path) / "test");
                log_line("wrote " + std::to_string(b.train.size()) + " train and " + std::to_string(b.test.size()) +
                         " test clips to " + out_path);
            } else {
                const AnomalyType type = parse_anomaly_type(s.anomaly);
                for (int i = 0; i < clips; ++i) {
                    char id[64];
                    std::snprintf(id, sizeof id, "%s_%04d", to_string(type).c_str(), i);
                    const Clip c = generate_clip(sample_world(s.sampler, type, s.seed + static_cast<std::uint64_t>(i), id));
                    save_clip(c, std::filesystem::path(out_path) / id);
                }
                log_line("wrote " + std::to_string(clips) + " clips to " + out_path);
            }
        } else if (*ablate_cmd) {
            const TrainConfig base = resolve_config(profile, config_path, sets);
            const std::vector<AblationCell> cells = expand_grid(base, read_key_values(grid_path));
            std::vector<Clip> train_clips, test_clips;
            if (data_dir.empty()) {
                const Benchmark b = build_benchmark(BenchmarkSpec{}, base.H, base.W);
                train_clips = b.train;
                test_clips = b.test;
            } else {
                train_clips = load_split(data_dir, "train");
                test_clips = load_split(data_dir, "test");
            }
            const std::vector<AblationRow> rows = run_ablation(cells, train_clips, test_clips, log_line);
            write_ablation(rows, out_path);
            for (const AblationRow& r : rows) {
                for (const auto& [k, v] : r.settings)
                    std::cout << k << '=' << v << ' ';
                std::cout << "auc=" << r.auc << '\n';
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
