#include "tad/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace tad {

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_memory: return "no_memory";
    case Variant::concat_only: return "concat_only";
    case Variant::fol_only: return "fol_only";
    case Variant::flow_only: return "flow_only";
    }
    return "full";
}

Variant parse_variant(const std::string& name)
{
    for (Variant v : {Variant::full, Variant::no_memory, Variant::concat_only, Variant::fol_only, Variant::flow_only})
        if (to_string(v) == name)
            return v;
    throw std::invalid_argument("unknown variant: " + name);
}

TrainConfig TrainConfig::published()
{
    TrainConfig c;
    c.D = 512;
    c.M = 1000;
    c.shrink = -1.0;
    c.L = 3;
    c.heads = 8;
    c.batch_size = 128;
    c.epochs = 100;
    c.lr = 1e-4;
    return c;
}

TrainConfig TrainConfig::desk()
{
    TrainConfig c;
    c.D = 64;
    c.M = 100;
    c.H = 32;
    c.W = 32;
    c.conv1 = 8;
    c.conv2 = 16;
    c.conv3 = 32;
    c.batch_size = 32;
    c.epochs = 30;
    c.lr = 1e-3;
    return c;
}

void TrainConfig::validate() const
{
    const auto need = [](bool ok, const std::string& what) {
        if (!ok)
            throw std::invalid_argument("config: " + what);
    };
    need(D > 0 && D % 2 == 0, "D must be positive and even");
    need(heads >= 1 && D % heads == 0, "heads must divide D");
    need(H > 0 && W > 0 && H % 8 == 0 && W % 8 == 0, "H and W must be positive multiples of 8");
    need(M >= 1, "M must be at least 1");
    need(eps > 0.0, "eps must be positive");
    need(L >= 1, "L must be at least 1");
    need(conv1 > 0 && conv2 > 0 && conv3 > 0, "conv widths must be positive");
    need(roi_size >= 2, "roi_size must be at least 2");
    need(obs_len >= 1 && pred_len >= 1, "obs_len and pred_len must be at least 1");
    need(delta >= 1 && delta <= pred_len, "delta must lie in [1, pred_len]");
    need(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    need(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0, "loss coefficients must be non-negative");
    need(lr > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "bad optimizer settings");
    need(weight_decay >= 0.0 && grad_clip >= 0.0, "weight_decay and grad_clip must be non-negative");
    need(batch_size >= 1 && epochs >= 0, "batch_size >= 1 and epochs >= 0 required");
}

namespace {

struct Field {
    std::string name;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

std::string fmt_double(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

bool parse_bool(const std::string& s)
{
    if (s == "true" || s == "1")
        return true;
    if (s == "false" || s == "0")
        return false;
    throw std::invalid_argument("expected a boolean, got '" + s + "'");
}

template <typename T>
T parse_number(const std::string& s)
{
    std::size_t used = 0;
    T v{};
    try {
        if constexpr (std::is_same_v<T, int>)
            v = std::stoi(s, &used);
        else if constexpr (std::is_same_v<T, std::uint64_t>)
            v = std::stoull(s, &used);
        else
            v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("expected a number, got '" + s + "'");
    }
    if (used != s.size())
        throw std::invalid_argument("expected a number, got '" + s + "'");
    return v;
}

#define TAD_INT(f) Field{#f, [](TrainConfig& c, const std::string& s) { c.f = parse_number<int>(s); }, [](const TrainConfig& c) { return std::to_string(c.f); }}
#define TAD_DBL(f) Field{#f, [](TrainConfig& c, const std::string& s) { c.f = parse_number<double>(s); }, [](const TrainConfig& c) { return fmt_double(c.f); }}
#define TAD_BOOL(f) Field{#f, [](TrainConfig& c, const std::string& s) { c.f = parse_bool(s); }, [](const TrainConfig& c) { return std::string(c.f ? "true" : "false"); }}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = {
        TAD_INT(D), TAD_INT(H), TAD_INT(W), TAD_INT(M), TAD_DBL(shrink), TAD_DBL(eps), TAD_INT(L), TAD_INT(heads),
        TAD_INT(conv1), TAD_INT(conv2), TAD_INT(conv3), TAD_INT(roi_size), TAD_BOOL(skip), TAD_BOOL(shared_memory),
        TAD_INT(obs_len), TAD_INT(pred_len), TAD_INT(delta), TAD_DBL(alpha), TAD_BOOL(per_clip_norm),
        TAD_DBL(lambda1), TAD_DBL(lambda2), TAD_DBL(lambda3), TAD_DBL(lr), TAD_DBL(beta1), TAD_DBL(beta2),
        TAD_DBL(weight_decay), TAD_DBL(grad_clip), TAD_INT(batch_size), TAD_INT(epochs),
        Field{"seed", [](TrainConfig& c, const std::string& s) { c.seed = parse_number<std::uint64_t>(s); },
              [](const TrainConfig& c) { return std::to_string(c.seed); }},
        Field{"variant", [](TrainConfig& c, const std::string& s) { c.variant = parse_variant(s); },
              [](const TrainConfig& c) { return to_string(c.variant); }},
    };
    return table;
}

#undef TAD_INT
#undef TAD_DBL
#undef TAD_BOOL

const Field& field(const std::string& name)
{
    for (const Field& f : fields())
        if (f.name == name)
            return f;
    throw std::invalid_argument("unknown config field: " + name);
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s)
{
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        return s.substr(1, s.size() - 2);
    return s;
}

std::string strip_comment(const std::string& line)
{
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == quote)
                quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

} // namespace

const std::vector<std::string>& TrainConfig::field_names()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const Field& f : fields())
            n.push_back(f.name);
        return n;
    }();
    return names;
}

void TrainConfig::set(const std::string& name, const std::string& value)
{
    try {
        field(name).set(*this, value);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(name + ": " + e.what());
    }
}

std::string TrainConfig::get(const std::string& name) const
{
    return field(name).get(*this);
}

std::string TrainConfig::to_json() const
{
    nlohmann::ordered_json j;
    for (const Field& f : fields())
        j[f.name] = f.get(*this);
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text)
{
    const auto j = nlohmann::json::parse(text);
    TrainConfig c;
    for (const auto& [k, v] : j.items())
        c.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    return c;
}

std::uint64_t TrainConfig::architecture_hash() const
{
    std::string key;
    for (const char* name : {"D", "H", "W", "M", "L", "heads", "conv1", "conv2", "conv3", "roi_size", "skip",
                             "shared_memory", "obs_len", "pred_len", "variant"})
        key += std::string(name) + "=" + get(name) + ";";
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

KeyValues parse_key_values(const std::string& text)
{
    KeyValues out;
    std::istringstream is(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty() || line.front() == '[')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        std::vector<std::string> items;
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']')
                throw std::invalid_argument("line " + std::to_string(line_no) + ": unterminated array");
            std::string body = value.substr(1, value.size() - 2);
            std::string cur;
            char quote = 0;
            for (char c : body) {
                if (quote) {
                    cur += c;
                    if (c == quote)
                        quote = 0;
                } else if (c == '"' || c == '\'') {
                    quote = c;
                    cur += c;
                } else if (c == ',') {
                    items.push_back(unquote(trim(cur)));
                    cur.clear();
                } else {
                    cur += c;
                }
            }
            if (!trim(cur).empty())
                items.push_back(unquote(trim(cur)));
        } else {
            items.push_back(unquote(value));
        }
        out[key] = std::move(items);
    }
    return out;
}

KeyValues read_key_values(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_key_values(ss.str());
}

std::vector<std::string> apply_key_values(TrainConfig& cfg, const KeyValues& doc)
{
    std::vector<std::string> unknown;
    const auto& names = TrainConfig::field_names();
    for (const auto& [k, v] : doc) {
        if (std::find(names.begin(), names.end(), k) == names.end()) {
            unknown.push_back(k);
            continue;
        }
        if (v.size() != 1)
            throw std::invalid_argument(k + ": expected a single value");
        cfg.set(k, v.front());
    }
    return unknown;
}

void apply_env_overrides(TrainConfig& cfg)
{
    for (const std::string& name : TrainConfig::field_names()) {
        std::string env = "TAD_" + name;
        std::transform(env.begin(), env.end(), env.begin(), [](unsigned char c) { return std::toupper(c); });
        if (const char* v = std::getenv(env.c_str()))
            cfg.set(name, v);
    }
}

} // namespace tad
