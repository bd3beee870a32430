#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tad {

// Raised when a clip on disk or in memory breaks a structural invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense optical flow from frame t to t+1, in pixels per frame.
struct FlowFrame {
    int t = 0;
    int height = 0;
    int width = 0;
    std::vector<float> u;
    std::vector<float> v;

    static FlowFrame zeros(int t, int height, int width);
    float u_at(int y, int x) const { return u[static_cast<std::size_t>(y) * width + x]; }
    float v_at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const FlowFrame&, const FlowFrame&) = default;
};

// Normalized [0,1] image coordinates.
struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double coord(int c) const;

    friend bool operator==(const Box&, const Box&) = default;
};

// One object's boxes over a contiguous visibility span.
struct Track {
    int id = 0;
    int first_frame = 0;
    std::vector<Box> boxes;

    int last_frame() const { return first_frame + static_cast<int>(boxes.size()) - 1; }
    bool visible(int t) const { return t >= first_frame && t <= last_frame(); }
    bool visible_over(int from, int to) const { return from >= first_frame && to <= last_frame(); }
    const Box& at(int t) const { return boxes.at(static_cast<std::size_t>(t - first_frame)); }

    friend bool operator==(const Track&, const Track&) = default;
};

struct TrackSet {
    std::vector<Track> tracks;
    int first_frame = 0;
    int last_frame = -1;

    const Track* find(int id) const;

    friend bool operator==(const TrackSet&, const TrackSet&) = default;
};

// The nine accident codes of the DoTA taxonomy plus "normal".
const std::vector<std::string>& category_codes();
bool is_category_code(const std::string& code);

struct ClipMeta {
    std::string id;
    std::string category = "normal";
    bool ego = false;
    int resolution_w = 1280;
    int resolution_h = 720;

    friend bool operator==(const ClipMeta&, const ClipMeta&) = default;
};

struct Clip {
    std::vector<FlowFrame> flows;
    TrackSet tracks;
    std::vector<int> labels;
    ClipMeta meta;

    int frames() const { return static_cast<int>(flows.size()); }
    bool has_anomaly() const;

    friend bool operator==(const Clip&, const Clip&) = default;
};

// Throws ValidationError describing the first violated invariant.
void validate_clip(const Clip& clip);

// Leading normal segment of a clip (frames before the first label-1 frame).
Clip precursor(const Clip& clip);

// ---------------------------------------------------------------------------
// Synthetic driving world.

enum class AnomalyType { none, ego_jolt, object_swerve, object_stop };

std::string to_string(AnomalyType type);
AnomalyType parse_anomaly_type(const std::string& name);

// Ego motion from start_frame until the next segment: translation (tx, ty)
// in px/frame and in-plane rotation omega in rad/frame about the image center.
struct EgoSegment {
    int start_frame = 0;
    double tx = 0.0;
    double ty = 0.0;
    double omega = 0.0;
};

// Normalized center, size and per-frame velocity.
struct ObjectSpec {
    double cx = 0.5;
    double cy = 0.5;
    double w = 0.1;
    double h = 0.1;
    double vx = 0.0;
    double vy = 0.0;
    int appear = 0;
};

struct AnomalySpec {
    AnomalyType type = AnomalyType::none;
    int onset = 0;
    int duration = 0;
    int object = 0;
    double magnitude = 1.0;
};

struct SyntheticWorldConfig {
    std::string clip_id = "synthetic";
    int height = 64;
    int width = 64;
    int frames = 20;
    std::vector<EgoSegment> ego;
    int n_objects = 0;
    // Explicit kinematics for the first objects; the rest are drawn from rng_seed.
    std::vector<ObjectSpec> objects;
    AnomalySpec anomaly;
    double flow_noise = 0.0;
    std::uint64_t rng_seed = 0;
};

Clip generate_clip(const SyntheticWorldConfig& cfg);

// Ranges for drawing random worlds; used to build whole synthetic suites.
struct WorldSampler {
    int height = 64;
    int width = 64;
    int frames = 20;
    int min_objects = 1;
    int max_objects = 4;
    double max_ego_translation = 2.0;
    double max_ego_rotation = 0.01;
    double min_object_speed = 0.004;
    double max_object_speed = 0.015;
    double flow_noise = 0.05;
    int min_anomaly_duration = 6;
    int max_anomaly_duration = 10;
    double jolt_magnitude = 6.0;
    double swerve_magnitude = 1.0;
};

SyntheticWorldConfig sample_world(const WorldSampler& sampler, AnomalyType anomaly, std::uint64_t seed,
                                  const std::string& clip_id);

// ---------------------------------------------------------------------------
// On-disk clip directories.

void save_clip(const Clip& clip, const std::filesystem::path& dir);
Clip load_clip(const std::filesystem::path& dir);
// Every subdirectory holding a meta.json, sorted by name.
std::vector<Clip> load_clip_dir(const std::filesystem::path& root);

// Builds a clip from a DoTA-style annotation JSON and a directory of
// precomputed flow frames (flow_%05d.bin + meta.json).
Clip import_dota_annotations(const std::filesystem::path& annotation_file,
                             const std::filesystem::path& feature_dir);

// Maps a DoTA class string ("OO", "ego: turning", "other: pedestrian",
// "leave_to_left", ...) to its two-letter code and ego flag. The flag is
// nullopt when the string does not carry one.
struct CategoryTag {
    std::string code;
    std::optional<bool> ego;
};
CategoryTag parse_category(const std::string& text);

// ---------------------------------------------------------------------------
// Observation / prediction windows.

struct ObjectWindow {
    int id = 0;
    std::vector<Box> past;   // obs_len boxes ending at t
    std::vector<Box> future; // pred_len boxes for t+1..t+pred_len (training only)
};

struct TrainingSample {
    int t = 0;
    FlowFrame flow;
    std::vector<ObjectWindow> objects;
};

// One sample per t with t >= obs_len-1 and t+pred_len < frames. Objects not
// visible over [t-obs_len+1, t+pred_len] are dropped.
std::vector<TrainingSample> make_samples(const Clip& clip, int obs_len, int pred_len);

// Inference input at frame t: only the observation window is required.
TrainingSample make_inference_sample(const Clip& clip, int t, int obs_len);

} // namespace tad
