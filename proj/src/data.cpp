#include "tad/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

namespace tad {

namespace fs = std::filesystem;
using nlohmann::json;

FlowFrame FlowFrame::zeros(int t, int height, int width)
{
    FlowFrame f;
    f.t = t;
    f.height = height;
    f.width = width;
    f.u.assign(static_cast<std::size_t>(height) * width, 0.0f);
    f.v.assign(static_cast<std::size_t>(height) * width, 0.0f);
    return f;
}

double Box::coord(int c) const
{
    switch (c) {
    case 0: return x_min;
    case 1: return y_min;
    case 2: return x_max;
    case 3: return y_max;
    default: throw std::out_of_range("box coordinate index");
    }
}

const Track* TrackSet::find(int id) const
{
    for (const auto& tr : tracks)
        if (tr.id == id)
            return &tr;
    return nullptr;
}

const std::vector<std::string>& category_codes()
{
    static const std::vector<std::string> codes = {"ST", "AH", "LA", "OC", "TC", "VP", "VO", "OO", "UK", "normal"};
    return codes;
}

bool is_category_code(const std::string& code)
{
    const auto& c = category_codes();
    return std::find(c.begin(), c.end(), code) != c.end();
}

bool Clip::has_anomaly() const
{
    return std::any_of(labels.begin(), labels.end(), [](int l) { return l != 0; });
}

void validate_clip(const Clip& clip)
{
    const int frames = clip.frames();
    if (static_cast<int>(clip.labels.size()) != frames)
        throw ValidationError("labels: expected " + std::to_string(frames) + " entries, found " +
                              std::to_string(clip.labels.size()));
    for (std::size_t i = 0; i < clip.labels.size(); ++i)
        if (clip.labels[i] != 0 && clip.labels[i] != 1)
            throw ValidationError("labels: entry " + std::to_string(i) + " is not 0/1");
    if (!is_category_code(clip.meta.category))
        throw ValidationError("meta: unknown category '" + clip.meta.category + "'");
    for (int t = 0; t < frames; ++t) {
        const FlowFrame& f = clip.flows[static_cast<std::size_t>(t)];
        if (f.t != t)
            throw ValidationError("flow: frame index " + std::to_string(f.t) + " at position " + std::to_string(t));
        const std::size_t n = static_cast<std::size_t>(f.height) * f.width;
        if (f.height <= 0 || f.width <= 0 || f.u.size() != n || f.v.size() != n)
            throw ValidationError("flow: frame " + std::to_string(t) + " has inconsistent u/v shape");
        if (t > 0 && (f.height != clip.flows[0].height || f.width != clip.flows[0].width))
            throw ValidationError("flow: frame " + std::to_string(t) + " differs in shape from frame 0");
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(f.u[i]) || !std::isfinite(f.v[i]))
                throw ValidationError("flow: non-finite value in frame " + std::to_string(t));
    }
    std::vector<int> seen;
    for (const Track& tr : clip.tracks.tracks) {
        if (std::find(seen.begin(), seen.end(), tr.id) != seen.end())
            throw ValidationError("tracks: duplicate object id " + std::to_string(tr.id));
        seen.push_back(tr.id);
        if (tr.boxes.empty())
            throw ValidationError("tracks: object " + std::to_string(tr.id) + " has no boxes");
        if (tr.first_frame < 0 || tr.last_frame() >= frames)
            throw ValidationError("tracks: object " + std::to_string(tr.id) + " lies outside the clip");
        for (std::size_t k = 0; k < tr.boxes.size(); ++k) {
            const Box& b = tr.boxes[k];
            const bool ok = std::isfinite(b.x_min) && std::isfinite(b.y_min) && std::isfinite(b.x_max) &&
                            std::isfinite(b.y_max) && b.x_min < b.x_max && b.y_min < b.y_max && b.x_min >= 0.0 &&
                            b.y_min >= 0.0 && b.x_max <= 1.0 && b.y_max <= 1.0;
            if (!ok)
                throw ValidationError("tracks: invalid box for object " + std::to_string(tr.id) + " at frame " +
                                      std::to_string(tr.first_frame + static_cast<int>(k)));
        }
    }
}

Clip precursor(const Clip& clip)
{
    const auto first = std::find(clip.labels.begin(), clip.labels.end(), 1);
    const int keep = static_cast<int>(first - clip.labels.begin());
    Clip out;
    out.meta = clip.meta;
    out.flows.assign(clip.flows.begin(), clip.flows.begin() + keep);
    out.labels.assign(static_cast<std::size_t>(keep), 0);
    out.tracks.first_frame = 0;
    out.tracks.last_frame = keep - 1;
    for (const Track& tr : clip.tracks.tracks) {
        if (tr.first_frame >= keep)
            continue;
        Track cut = tr;
        cut.boxes.resize(static_cast<std::size_t>(std::min(tr.last_frame(), keep - 1) - tr.first_frame + 1));
        out.tracks.tracks.push_back(std::move(cut));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string to_string(AnomalyType type)
{
    switch (type) {
    case AnomalyType::none: return "none";
    case AnomalyType::ego_jolt: return "ego_jolt";
    case AnomalyType::object_swerve: return "object_swerve";
    case AnomalyType::object_stop: return "object_stop";
    }
    return "none";
}

AnomalyType parse_anomaly_type(const std::string& name)
{
    for (AnomalyType t : {AnomalyType::none, AnomalyType::ego_jolt, AnomalyType::object_swerve, AnomalyType::object_stop})
        if (to_string(t) == name)
            return t;
    throw std::invalid_argument("unknown anomaly type: " + name);
}

namespace {

struct ObjectState {
    ObjectSpec spec;
    double cx, cy;
    bool alive = true;
    std::optional<int> track_index;
};

Box clamp_box(double cx, double cy, double w, double h)
{
    Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    b.x_min = std::clamp(b.x_min, 0.0, 1.0);
    b.y_min = std::clamp(b.y_min, 0.0, 1.0);
    b.x_max = std::clamp(b.x_max, 0.0, 1.0);
    b.y_max = std::clamp(b.y_max, 0.0, 1.0);
    return b;
}

constexpr double kMinExtent = 0.01;

std::pair<std::string, bool> synthetic_category(AnomalyType type)
{
    switch (type) {
    case AnomalyType::ego_jolt: return {"OO", true};
    case AnomalyType::object_swerve: return {"LA", false};
    case AnomalyType::object_stop: return {"ST", false};
    case AnomalyType::none: break;
    }
    return {"normal", false};
}

} // namespace

Clip generate_clip(const SyntheticWorldConfig& cfg)
{
    if (cfg.frames < 1 || cfg.height < 1 || cfg.width < 1)
        throw std::invalid_argument("synthetic world needs positive frames and resolution");
    if (cfg.n_objects < 0)
        throw std::invalid_argument("n_objects must be non-negative");
    const AnomalySpec& an = cfg.anomaly;
    if (an.type != AnomalyType::none) {
        if (an.onset < 0 || an.onset >= cfg.frames || an.duration < 1 || an.onset + an.duration > cfg.frames)
            throw std::invalid_argument("anomaly onset/duration outside the clip");
        if ((an.type == AnomalyType::object_swerve || an.type == AnomalyType::object_stop) &&
            (an.object < 0 || an.object >= cfg.n_objects))
            throw std::invalid_argument("object anomaly refers to a missing object");
    }

    std::mt19937_64 rng(cfg.rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<ObjectState> objects;
    for (int i = 0; i < cfg.n_objects; ++i) {
        ObjectSpec s;
        if (static_cast<std::size_t>(i) < cfg.objects.size()) {
            s = cfg.objects[static_cast<std::size_t>(i)];
        } else {
            s.cx = 0.2 + 0.6 * unit(rng);
            s.cy = 0.3 + 0.4 * unit(rng);
            s.w = 0.08 + 0.12 * unit(rng);
            s.h = 0.08 + 0.12 * unit(rng);
            const double speed = 0.004 + 0.011 * unit(rng);
            const double angle = 2.0 * M_PI * unit(rng);
            s.vx = speed * std::cos(angle);
            s.vy = speed * std::sin(angle);
        }
        objects.push_back(ObjectState{s, s.cx, s.cy, true, std::nullopt});
    }

    Clip clip;
    clip.meta.id = cfg.clip_id;
    std::tie(clip.meta.category, clip.meta.ego) = synthetic_category(an.type);
    clip.meta.resolution_w = cfg.width;
    clip.meta.resolution_h = cfg.height;
    clip.labels.assign(static_cast<std::size_t>(cfg.frames), 0);
    clip.tracks.first_frame = 0;
    clip.tracks.last_frame = cfg.frames - 1;

    const auto active = [&](int t) { return an.type != AnomalyType::none && t >= an.onset && t < an.onset + an.duration; };
    const double cx_px = (cfg.width - 1) / 2.0, cy_px = (cfg.height - 1) / 2.0;
    const double sx = std::max(cfg.width - 1, 1), sy = std::max(cfg.height - 1, 1);

    for (int t = 0; t < cfg.frames; ++t) {
        if (active(t))
            clip.labels[static_cast<std::size_t>(t)] = 1;

        EgoSegment ego;
        for (const EgoSegment& seg : cfg.ego)
            if (seg.start_frame <= t)
                ego = seg;
        double tx = ego.tx, ty = ego.ty, omega = ego.omega;
        if (an.type == AnomalyType::ego_jolt && active(t)) {
            const double angle = 2.0 * M_PI * unit(rng);
            tx += an.magnitude * std::cos(angle);
            ty += an.magnitude * std::sin(angle);
            omega += an.magnitude * 0.01 * (unit(rng) < 0.5 ? -1.0 : 1.0);
        }

        FlowFrame f = FlowFrame::zeros(t, cfg.height, cfg.width);
        std::vector<double> u(f.u.size()), v(f.v.size());
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * cfg.width + x;
                u[i] = tx - omega * (y - cy_px);
                v[i] = ty + omega * (x - cx_px);
            }

        for (std::size_t k = 0; k < objects.size(); ++k) {
            ObjectState& ob = objects[k];
            if (!ob.alive || t < ob.spec.appear)
                continue;
            const Box box = clamp_box(ob.cx, ob.cy, ob.spec.w, ob.spec.h);
            if (box.width() < kMinExtent || box.height() < kMinExtent) {
                ob.alive = false;
                continue;
            }
            if (!ob.track_index) {
                ob.track_index = static_cast<int>(clip.tracks.tracks.size());
                clip.tracks.tracks.push_back(Track{static_cast<int>(k), t, {}});
            }
            clip.tracks.tracks[static_cast<std::size_t>(*ob.track_index)].boxes.push_back(box);

            double vx = ob.spec.vx, vy = ob.spec.vy;
            const bool target = static_cast<int>(k) == an.object;
            if (target && an.type == AnomalyType::object_stop && t >= an.onset) {
                vx = 0.0;
                vy = 0.0;
            } else if (target && an.type == AnomalyType::object_swerve && active(t)) {
                // Lateral zigzag perpendicular to the heading, flipping every two frames.
                const double speed = std::hypot(vx, vy);
                const double px = speed > 0 ? -vy / speed : 0.0, py = speed > 0 ? vx / speed : 1.0;
                const double sign = ((t - an.onset) / 2) % 2 == 0 ? 1.0 : -1.0;
                vx += sign * an.magnitude * 0.02 * px;
                vy += sign * an.magnitude * 0.02 * py;
            }

            const int x0 = static_cast<int>(std::ceil(box.x_min * sx)), x1 = static_cast<int>(std::floor(box.x_max * sx));
            const int y0 = static_cast<int>(std::ceil(box.y_min * sy)), y1 = static_cast<int>(std::floor(box.y_max * sy));
            for (int y = std::max(y0, 0); y <= std::min(y1, cfg.height - 1); ++y)
                for (int x = std::max(x0, 0); x <= std::min(x1, cfg.width - 1); ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * cfg.width + x;
                    u[i] += vx * sx;
                    v[i] += vy * sy;
                }
            ob.cx += vx;
            ob.cy += vy;
        }

        if (cfg.flow_noise > 0.0)
            for (std::size_t i = 0; i < u.size(); ++i) {
                u[i] += cfg.flow_noise * gauss(rng);
                v[i] += cfg.flow_noise * gauss(rng);
            }
        for (std::size_t i = 0; i < u.size(); ++i) {
            f.u[i] = static_cast<float>(u[i]);
            f.v[i] = static_cast<float>(v[i]);
        }
        clip.flows.push_back(std::move(f));
    }
    return clip;
}

SyntheticWorldConfig sample_world(const WorldSampler& s, AnomalyType anomaly, std::uint64_t seed,
                                  const std::string& clip_id)
{
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    SyntheticWorldConfig cfg;
    cfg.clip_id = clip_id;
    cfg.height = s.height;
    cfg.width = s.width;
    cfg.frames = s.frames;
    cfg.flow_noise = s.flow_noise;
    cfg.rng_seed = seed;

    // Mostly forward driving with an occasional change of heading.
    EgoSegment first{0, uniform(-s.max_ego_translation, s.max_ego_translation),
                     uniform(-0.3 * s.max_ego_translation, 0.3 * s.max_ego_translation),
                     uniform(-s.max_ego_rotation, s.max_ego_rotation)};
    cfg.ego.push_back(first);
    if (unit(rng) < 0.5) {
        EgoSegment second = first;
        second.start_frame = uniform_int(1, std::max(1, s.frames - 1));
        second.tx = std::clamp(first.tx + uniform(-0.5, 0.5), -s.max_ego_translation, s.max_ego_translation);
        second.omega = uniform(-s.max_ego_rotation, s.max_ego_rotation);
        cfg.ego.push_back(second);
    }

    const bool object_anomaly = anomaly == AnomalyType::object_swerve || anomaly == AnomalyType::object_stop;
    cfg.n_objects = uniform_int(std::max(s.min_objects, object_anomaly ? 1 : 0), std::max(s.max_objects, 1));
    for (int i = 0; i < cfg.n_objects; ++i) {
        ObjectSpec o;
        // Object 0 starts central so it stays in view for the whole clip.
        const double spread = i == 0 ? 0.1 : 0.3;
        o.cx = 0.5 + uniform(-spread, spread);
        o.cy = 0.5 + uniform(-spread, spread);
        o.w = uniform(0.08, 0.2);
        o.h = uniform(0.08, 0.2);
        const double speed = uniform(s.min_object_speed, s.max_object_speed);
        const double angle = uniform(0.0, 2.0 * M_PI);
        o.vx = speed * std::cos(angle);
        o.vy = speed * std::sin(angle);
        o.appear = i == 0 ? 0 : (unit(rng) < 0.7 ? 0 : uniform_int(0, std::max(0, s.frames / 2)));
        cfg.objects.push_back(o);
    }

    cfg.anomaly.type = anomaly;
    if (anomaly != AnomalyType::none) {
        const int dur = std::min(uniform_int(s.min_anomaly_duration, s.max_anomaly_duration), s.frames / 2);
        cfg.anomaly.duration = std::max(dur, 1);
        const int lo = std::min(s.frames / 3, s.frames - cfg.anomaly.duration);
        cfg.anomaly.onset = uniform_int(lo, s.frames - cfg.anomaly.duration);
        cfg.anomaly.object = 0;
        cfg.anomaly.magnitude = anomaly == AnomalyType::ego_jolt ? s.jolt_magnitude : s.swerve_magnitude;
    }
    return cfg;
}

// ---------------------------------------------------------------------------

namespace {

std::string flow_file_name(int t)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "flow_%05d.bin", t);
    return buf;
}

void write_le_floats(std::ofstream& os, const std::vector<float>& values)
{
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    } else {
        for (float f : values) {
            auto bits = std::bit_cast<std::uint32_t>(f);
            const std::array<char, 4> b{static_cast<char>(bits), static_cast<char>(bits >> 8),
                                        static_cast<char>(bits >> 16), static_cast<char>(bits >> 24)};
            os.write(b.data(), 4);
        }
    }
}

float le_float(const unsigned char* p)
{
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

json read_json(const fs::path& p)
{
    std::ifstream is(p);
    if (!is)
        throw ValidationError("missing file: " + p.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(p.filename().string() + ": " + e.what());
    }
}

FlowFrame read_flow(const fs::path& file, int t, int height, int width)
{
    std::ifstream is(file, std::ios::binary);
    if (!is)
        throw ValidationError("missing file: " + file.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::size_t n = static_cast<std::size_t>(height) * width;
    if (bytes.size() != 2 * n * 4)
        throw ValidationError(file.filename().string() + ": payload is " + std::to_string(bytes.size()) +
                              " bytes, header implies " + std::to_string(2 * n * 4));
    FlowFrame f = FlowFrame::zeros(t, height, width);
    for (std::size_t i = 0; i < n; ++i) {
        f.u[i] = le_float(bytes.data() + 4 * i);
        f.v[i] = le_float(bytes.data() + 4 * (n + i));
    }
    return f;
}

struct FeatureHeader {
    int height = 0;
    int width = 0;
    int frames = 0;
    json meta;
};

FeatureHeader read_header(const fs::path& dir)
{
    FeatureHeader h;
    h.meta = read_json(dir / "meta.json");
    try {
        h.height = h.meta.at("H").get<int>();
        h.width = h.meta.at("W").get<int>();
        h.frames = h.meta.at("frames").get<int>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("meta.json: ") + e.what());
    }
    if (h.height <= 0 || h.width <= 0 || h.frames < 0)
        throw ValidationError("meta.json: non-positive shape");
    return h;
}

std::vector<FlowFrame> read_flows(const fs::path& dir, const FeatureHeader& h)
{
    std::vector<FlowFrame> flows;
    flows.reserve(static_cast<std::size_t>(h.frames));
    for (int t = 0; t < h.frames; ++t)
        flows.push_back(read_flow(dir / flow_file_name(t), t, h.height, h.width));
    return flows;
}

// Groups per-frame observations into tracks; each id must be seen on
// consecutive frames.
struct TrackBuilder {
    std::map<int, Track> by_id;
    std::vector<int> order;

    void add(int t, int id, const Box& box, bool drop_gaps)
    {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            by_id.emplace(id, Track{id, t, {box}});
            order.push_back(id);
            return;
        }
        Track& tr = it->second;
        if (t == tr.last_frame() + 1) {
            tr.boxes.push_back(box);
        } else if (t <= tr.last_frame()) {
            throw ValidationError("tracks: object " + std::to_string(id) + " repeated at frame " + std::to_string(t));
        } else if (!drop_gaps) {
            throw ValidationError("tracks: object " + std::to_string(id) + " reappears after a gap at frame " +
                                  std::to_string(t));
        }
    }

    TrackSet finish(int frames) const
    {
        TrackSet ts;
        ts.first_frame = 0;
        ts.last_frame = frames - 1;
        for (int id : order)
            ts.tracks.push_back(by_id.at(id));
        return ts;
    }
};

Box parse_box(const json& arr)
{
    if (!arr.is_array() || arr.size() != 4)
        throw ValidationError("tracks: box must have four coordinates");
    return Box{arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>(), arr[3].get<double>()};
}

} // namespace

void save_clip(const Clip& clip, const fs::path& dir)
{
    validate_clip(clip);
    fs::create_directories(dir);
    const int height = clip.flows.empty() ? 0 : clip.flows[0].height;
    const int width = clip.flows.empty() ? 0 : clip.flows[0].width;

    for (const FlowFrame& f : clip.flows) {
        std::ofstream os(dir / flow_file_name(f.t), std::ios::binary);
        write_le_floats(os, f.u);
        write_le_floats(os, f.v);
        if (!os)
            throw std::runtime_error("failed writing " + (dir / flow_file_name(f.t)).string());
    }

    json meta = {{"H", height},
                 {"W", width},
                 {"frames", clip.frames()},
                 {"category", clip.meta.category},
                 {"ego", clip.meta.ego},
                 {"id", clip.meta.id},
                 {"resolution", {clip.meta.resolution_w, clip.meta.resolution_h}}};
    std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

    std::ofstream tracks(dir / "tracks.jsonl");
    for (int t = 0; t < clip.frames(); ++t)
        for (const Track& tr : clip.tracks.tracks)
            if (tr.visible(t)) {
                const Box& b = tr.at(t);
                tracks << json{{"t", t}, {"id", tr.id}, {"box", {b.x_min, b.y_min, b.x_max, b.y_max}}}.dump() << '\n';
            }

    std::ofstream(dir / "labels.json") << json(clip.labels).dump() << '\n';
}

Clip load_clip(const fs::path& dir)
{
    const FeatureHeader h = read_header(dir);
    Clip clip;
    clip.meta.id = h.meta.value("id", dir.filename().string());
    clip.meta.category = h.meta.value("category", std::string("normal"));
    clip.meta.ego = h.meta.value("ego", false);
    if (h.meta.contains("resolution")) {
        const auto& r = h.meta["resolution"];
        if (!r.is_array() || r.size() != 2)
            throw ValidationError("meta.json: resolution must be [w_px, h_px]");
        clip.meta.resolution_w = r[0].get<int>();
        clip.meta.resolution_h = r[1].get<int>();
    }
    clip.flows = read_flows(dir, h);

    std::ifstream ts(dir / "tracks.jsonl");
    if (!ts)
        throw ValidationError("missing file: " + (dir / "tracks.jsonl").string());
    TrackBuilder builder;
    std::string line;
    int last_t = -1;
    int line_no = 0;
    while (std::getline(ts, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json rec;
        try {
            rec = json::parse(line);
            const int t = rec.at("t").get<int>();
            if (t < last_t)
                throw ValidationError("tracks.jsonl: non-monotone frame index at line " + std::to_string(line_no));
            if (t < 0 || t >= h.frames)
                throw ValidationError("tracks.jsonl: frame index " + std::to_string(t) + " outside the clip");
            last_t = t;
            builder.add(t, rec.at("id").get<int>(), parse_box(rec.at("box")), false);
        } catch (const json::exception& e) {
            throw ValidationError("tracks.jsonl line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    clip.tracks = builder.finish(h.frames);

    const json labels = read_json(dir / "labels.json");
    if (!labels.is_array())
        throw ValidationError("labels: expected a JSON array");
    for (const auto& l : labels)
        clip.labels.push_back(l.get<int>());

    validate_clip(clip);
    return clip;
}

std::vector<Clip> load_clip_dir(const fs::path& root)
{
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<Clip> clips;
    clips.reserve(dirs.size());
    for (const auto& d : dirs)
        clips.push_back(load_clip(d));
    return clips;
}

CategoryTag parse_category(const std::string& text)
{
    static const std::map<std::string, std::string> long_names = {
        {"start_stop_or_stationary", "ST"}, {"moving_ahead_or_waiting", "AH"}, {"lateral", "LA"},
        {"oncoming", "OC"},                 {"turning", "TC"},                 {"pedestrian", "VP"},
        {"obstacle", "VO"},                 {"leave_to_left", "OO"},           {"leave_to_right", "OO"},
        {"unknown", "UK"}};
    std::string rest = text;
    CategoryTag tag;
    const auto colon = rest.find(':');
    if (colon != std::string::npos) {
        std::string prefix = rest.substr(0, colon);
        rest = rest.substr(colon + 1);
        prefix.erase(std::remove_if(prefix.begin(), prefix.end(), ::isspace), prefix.end());
        if (prefix == "ego")
            tag.ego = true;
        else if (prefix == "other")
            tag.ego = false;
        else
            throw ValidationError("annotation: unknown category prefix '" + prefix + "'");
    }
    rest.erase(std::remove_if(rest.begin(), rest.end(), ::isspace), rest.end());
    std::string upper = rest;
    std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
    if (is_category_code(upper) && upper != "NORMAL") {
        tag.code = upper;
    } else if (auto it = long_names.find(rest); it != long_names.end()) {
        tag.code = it->second;
    } else {
        throw ValidationError("annotation: unknown anomaly class '" + text + "'");
    }
    return tag;
}

Clip import_dota_annotations(const fs::path& annotation_file, const fs::path& feature_dir)
{
    const json ann = read_json(annotation_file);
    const FeatureHeader h = read_header(feature_dir);

    Clip clip;
    try {
        clip.meta.id = ann.value("video_name", annotation_file.stem().string());
        const int start = ann.at("anomaly_start").get<int>();
        const int end = ann.at("anomaly_end").get<int>();
        if (end <= start)
            throw ValidationError("annotation: anomaly_end must exceed anomaly_start");
        const int frames = ann.value("num_frames", h.frames);
        if (frames != h.frames)
            throw ValidationError("annotation: num_frames " + std::to_string(frames) + " but feature dir has " +
                                  std::to_string(h.frames));
        if (start < 0 || end > frames)
            throw ValidationError("annotation: anomaly window outside the clip");

        const CategoryTag tag = parse_category(ann.at("anomaly_class").get<std::string>());
        clip.meta.category = tag.code;
        clip.meta.ego = tag.ego.value_or(ann.value("ego_involve", false));
        if (ann.contains("ego_involve"))
            clip.meta.ego = ann["ego_involve"].get<bool>();

        const json& res = ann.contains("resolution") ? ann["resolution"]
                                                     : h.meta.value("resolution", json::array({1280, 720}));
        clip.meta.resolution_w = res.at(0).get<int>();
        clip.meta.resolution_h = res.at(1).get<int>();
        if (clip.meta.resolution_w <= 0 || clip.meta.resolution_h <= 0)
            throw ValidationError("annotation: resolution must be positive");

        clip.labels.assign(static_cast<std::size_t>(frames), 0);
        for (int f = start; f < end; ++f)
            clip.labels[static_cast<std::size_t>(f)] = 1;

        TrackBuilder builder;
        int last_t = -1;
        for (const json& fr : ann.value("labels", json::array())) {
            const int t = fr.at("frame_id").get<int>();
            if (t < last_t || t < 0 || t >= frames)
                throw ValidationError("annotation: bad frame_id " + std::to_string(t));
            last_t = t;
            for (const json& ob : fr.value("objects", json::array())) {
                const json& bb = ob.at("bbox");
                Box b{bb.at(0).get<double>() / clip.meta.resolution_w, bb.at(1).get<double>() / clip.meta.resolution_h,
                      bb.at(2).get<double>() / clip.meta.resolution_w, bb.at(3).get<double>() / clip.meta.resolution_h};
                if (b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > 1.0 || b.y_max > 1.0)
                    throw ValidationError("annotation: box outside [0,1] after normalization at frame " +
                                          std::to_string(t));
                if (!(b.x_min < b.x_max && b.y_min < b.y_max))
                    throw ValidationError("annotation: degenerate box at frame " + std::to_string(t));
                // Spans after an occlusion gap are dropped; only the first
                // contiguous appearance of an id is kept.
                builder.add(t, ob.at("obj_id").get<int>(), b, true);
            }
        }
        clip.tracks = builder.finish(frames);
    } catch (const json::exception& e) {
        throw ValidationError(annotation_file.filename().string() + ": " + e.what());
    }

    clip.flows = read_flows(feature_dir, h);
    validate_clip(clip);
    return clip;
}

// ---------------------------------------------------------------------------

std::vector<TrainingSample> make_samples(const Clip& clip, int obs_len, int pred_len)
{
    if (obs_len < 1 || pred_len < 1)
        throw std::invalid_argument("obs_len and pred_len must be at least 1");
    std::vector<TrainingSample> out;
    for (int t = obs_len - 1; t + pred_len < clip.frames(); ++t) {
        TrainingSample s;
        s.t = t;
        s.flow = clip.flows[static_cast<std::size_t>(t)];
        for (const Track& tr : clip.tracks.tracks) {
            if (!tr.visible_over(t - obs_len + 1, t + pred_len))
                continue;
            ObjectWindow w;
            w.id = tr.id;
            for (int k = t - obs_len + 1; k <= t; ++k)
                w.past.push_back(tr.at(k));
            for (int k = t + 1; k <= t + pred_len; ++k)
                w.future.push_back(tr.at(k));
            s.objects.push_back(std::move(w));
        }
        out.push_back(std::move(s));
    }
    return out;
}

TrainingSample make_inference_sample(const Clip& clip, int t, int obs_len)
{
    if (t < 0 || t >= clip.frames())
        throw std::out_of_range("inference frame outside the clip");
    TrainingSample s;
    s.t = t;
    s.flow = clip.flows[static_cast<std::size_t>(t)];
    if (t < obs_len - 1)
        return s;
    for (const Track& tr : clip.tracks.tracks) {
        if (!tr.visible_over(t - obs_len + 1, t))
            continue;
        ObjectWindow w;
        w.id = tr.id;
        for (int k = t - obs_len + 1; k <= t; ++k)
            w.past.push_back(tr.at(k));
        s.objects.push_back(std::move(w));
    }
    return s;
}

} // namespace tad
