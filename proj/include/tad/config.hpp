#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tad {

// Which Table-IV style model/score combination to build.
//   full        - memory-augmented stack, fused score
//   no_memory   - attention + feedforward only (plain transformer fusion)
//   concat_only - concatenation + linear mix instead of the attention stack
//   fol_only    - trained on box prediction only, scored with s_l
//   flow_only   - trained on flow reconstruction only, scored with s_e
enum class Variant { full, no_memory, concat_only, fol_only, flow_only };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct TrainConfig {
    // Model width, flow resolution and memory.
    int D = 64;
    int H = 64;
    int W = 64;
    int M = 100;
    double shrink = -1.0; // negative means 3/M
    double eps = 1e-12;
    int L = 3;
    int heads = 8;
    int conv1 = 32;
    int conv2 = 64;
    int conv3 = 128;
    int roi_size = 5;
    bool skip = true;
    bool shared_memory = false;

    // Windows and scoring.
    int obs_len = 5;
    int pred_len = 10;
    int delta = 5;
    double alpha = 0.4;
    bool per_clip_norm = false;

    // Objective and optimizer.
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 0.0002;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 5e-4;
    double grad_clip = 5.0;
    int batch_size = 32;
    int epochs = 30;
    std::uint64_t seed = 0;
    Variant variant = Variant::full;

    double shrink_threshold() const { return shrink < 0.0 ? 3.0 / M : shrink; }

    // Hyperparameters of the published setup.
    static TrainConfig published();
    // Scaled for a single CPU core.
    static TrainConfig desk();

    // Throws std::invalid_argument on inconsistent settings.
    void validate() const;

    // Field names accepted by set(), the config files and TAD_<FIELD>.
    static const std::vector<std::string>& field_names();
    void set(const std::string& field, const std::string& value);
    std::string get(const std::string& field) const;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);

    // Hash over fields that determine parameter shapes.
    std::uint64_t architecture_hash() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Flat declarative key/value documents ("key = value", '#' comments,
// quoted strings, [a, b] arrays). Section headers are accepted and ignored.
using KeyValues = std::map<std::string, std::vector<std::string>>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);

// Applies every key of doc that names a TrainConfig field; returns the keys
// it did not recognise.
std::vector<std::string> apply_key_values(TrainConfig& cfg, const KeyValues& doc);
// Applies TAD_<FIELD> environment variables.
void apply_env_overrides(TrainConfig& cfg);

} // namespace tad
