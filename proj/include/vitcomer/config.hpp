// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vitcomer/errors.hpp"

namespace vitcomer {

enum class Dtype : int { f32 = 0, f64 = 1 };

inline std::string dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

inline Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    throw ConfigError("unknown dtype '" + s + "' (expected f32 or f64)");
}

struct ViTConfig {
    int depth = 4;       // L
    int dim = 16;        // D
    int heads = 2;
    double mlp_ratio = 2.0;
    int patch = 16;
    int img_h = 64;
    int img_w = 64;
};

struct MrfpConfig {
    std::vector<int> kernels{3, 5}; // one depthwise kernel size per channel group
    double reduce = 0.5;            // D' = round(D * reduce)
    int groups() const { return static_cast<int>(kernels.size()); }
};

struct CtiConfig {
    int heads = 4;
    int points = 4;          // K sampling points per head per level
    double ffn_ratio = 0.25;
    double value_ratio = 0.5; // deformable value width = round(D * value_ratio)
};

struct CoMerConfig {
    std::string variant = "toy";
    ViTConfig vit;
    int stages = 2;     // N
    int stem_width = 16;
    MrfpConfig mrfp;
    CtiConfig cti;
    bool mrfp_enabled = true;
    bool cti_to_vit_enabled = true;
    bool cti_to_cnn_enabled = true;
    bool extra_quarter_level = false;
    int toy_classes = 4;

    int mrfp_dim() const { return static_cast<int>(std::lround(vit.dim * mrfp.reduce)); }
    int cti_value_dim() const { return static_cast<int>(std::lround(vit.dim * cti.value_ratio)); }

    void validate() const {
        if (vit.depth <= 0 || vit.dim <= 0 || vit.heads <= 0) throw ConfigError("vit dims must be positive");
        if (stages <= 0) throw ConfigError("stages must be positive");
        if (vit.depth % stages != 0)
            throw ConfigError("vit depth " + std::to_string(vit.depth) + " must be divisible by stages " +
                              std::to_string(stages));
        if (vit.dim % vit.heads != 0) throw ConfigError("vit dim must be divisible by vit heads");
        if (vit.patch != 16) throw ConfigError("patch size must be 16");
        if (vit.img_h % 32 != 0 || vit.img_w % 32 != 0)
            throw ConfigError("image extents must be divisible by 32, got " + std::to_string(vit.img_h) + "x" +
                              std::to_string(vit.img_w));
        if (stem_width < 2 || stem_width % 2 != 0) throw ConfigError("stem width must be even and >= 2");
        if (mrfp.kernels.empty()) throw ConfigError("mrfp kernel list must not be empty");
        for (int k : mrfp.kernels)
            if (k < 1 || k % 2 == 0) throw ConfigError("mrfp kernel sizes must be odd");
        if (mrfp.reduce <= 0) throw ConfigError("mrfp reduce ratio must be positive");
        if (mrfp_dim() < 1) throw ConfigError("mrfp reduced dim must be >= 1");
        if (mrfp_dim() % mrfp.groups() != 0)
            throw ConfigError("mrfp reduced dim " + std::to_string(mrfp_dim()) +
                              " must be divisible by group count " + std::to_string(mrfp.groups()));
        if (cti.heads <= 0 || cti.points <= 0) throw ConfigError("cti heads/points must be positive");
        if (cti.value_ratio <= 0) throw ConfigError("cti value ratio must be positive");
        if (cti_value_dim() < 1 || cti_value_dim() % cti.heads != 0)
            throw ConfigError("cti value dim " + std::to_string(cti_value_dim()) +
                              " must be divisible by cti heads " + std::to_string(cti.heads));
        if (cti.ffn_ratio <= 0) throw ConfigError("cti ffn ratio must be positive");
        if (toy_classes < 2) throw ConfigError("toy task needs at least 2 classes");
    }
};

// Named presets. T/S/B/L pin (depth, dim, heads) with 4 interaction stages;
// toy is the small verification model.
inline CoMerConfig variant_config(const std::string& name) {
    CoMerConfig c;
    c.variant = name;
    if (name == "toy") {
        c.vit = ViTConfig{4, 16, 2, 2.0, 16, 64, 64};
        c.stages = 2;
        c.stem_width = 16;
        c.cti.heads = 4;
        return c;
    }
    c.stages = 4;
    c.stem_width = 192;
    c.cti.heads = 8;
    if (name == "T") {
        c.vit = ViTConfig{12, 192, 3, 4.0, 16, 224, 224};
    } else if (name == "S") {
        c.vit = ViTConfig{12, 384, 6, 4.0, 16, 224, 224};
    } else if (name == "B") {
        c.vit = ViTConfig{12, 768, 12, 4.0, 16, 224, 224};
    } else if (name == "L") {
        c.vit = ViTConfig{24, 1024, 16, 4.0, 16, 224, 224};
    } else {
        throw ConfigError("unknown variant '" + name + "' (expected toy, T, S, B or L)");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Run configuration: the model config plus run-level knobs, parsed from
// `key = value` text. Unknown keys are hard errors.
// ---------------------------------------------------------------------------

struct RunConfig {
    CoMerConfig model;
    std::uint64_t seed = 1;
    Dtype dtype = Dtype::f64;
    bool dtype_explicit = false; // set when a config key or flag chose it
    std::string out_dir = ".";
    // toy training
    int train_images = 50;
    int train_steps = 500;
    int train_batch = 4;
    double train_lr = 0.05;
    double train_momentum = 0.9;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return static_cast<std::uint64_t>(x);
    } catch (...) {
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    }
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("key '" + key + "': empty list element");
        out.push_back(parse_int(key, item));
    }
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

} // namespace detail

// Parses `key = value` lines ('#' starts a comment). Model-structure keys
// conflict with a named non-toy variant, which pins them.
inline RunConfig parse_run_config(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::vector<std::string> order;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        if (kv.count(key)) throw ConfigError("duplicate config key '" + key + "'");
        kv[key] = val;
        order.push_back(key);
    }

    RunConfig rc;
    bool named_variant = false;
    if (kv.count("variant")) {
        rc.model = variant_config(kv.at("variant"));
        named_variant = rc.model.variant != "toy";
    }

    static const char* model_keys[] = {"vit_depth", "vit_dim",      "vit_heads", "mlp_ratio", "img_h",
                                       "img_w",     "stages",       "stem_width", "mrfp_kernels",
                                       "mrfp_reduce", "cti_heads",  "cti_points", "cti_ffn_ratio",
                                       "cti_value_ratio"};
    for (const auto& k : order) {
        const std::string& v = kv.at(k);
        const bool is_model_key =
            std::find_if(std::begin(model_keys), std::end(model_keys), [&](const char* mk) { return k == mk; }) !=
            std::end(model_keys);
        if (is_model_key && named_variant)
            throw ConfigError("key '" + k + "' conflicts with named variant '" + rc.model.variant +
                              "', which fixes the model structure");
        if (k == "variant") continue;
        else if (k == "vit_depth") rc.model.vit.depth = detail::parse_int(k, v);
        else if (k == "vit_dim") rc.model.vit.dim = detail::parse_int(k, v);
        else if (k == "vit_heads") rc.model.vit.heads = detail::parse_int(k, v);
        else if (k == "mlp_ratio") rc.model.vit.mlp_ratio = detail::parse_double(k, v);
        else if (k == "img_h") rc.model.vit.img_h = detail::parse_int(k, v);
        else if (k == "img_w") rc.model.vit.img_w = detail::parse_int(k, v);
        else if (k == "stages") rc.model.stages = detail::parse_int(k, v);
        else if (k == "stem_width") rc.model.stem_width = detail::parse_int(k, v);
        else if (k == "mrfp_kernels") rc.model.mrfp.kernels = detail::parse_int_list(k, v);
        else if (k == "mrfp_reduce") rc.model.mrfp.reduce = detail::parse_double(k, v);
        else if (k == "cti_heads") rc.model.cti.heads = detail::parse_int(k, v);
        else if (k == "cti_points") rc.model.cti.points = detail::parse_int(k, v);
        else if (k == "cti_ffn_ratio") rc.model.cti.ffn_ratio = detail::parse_double(k, v);
        else if (k == "cti_value_ratio") rc.model.cti.value_ratio = detail::parse_double(k, v);
        else if (k == "mrfp_enabled") rc.model.mrfp_enabled = detail::parse_bool(k, v);
        else if (k == "cti_to_vit_enabled") rc.model.cti_to_vit_enabled = detail::parse_bool(k, v);
        else if (k == "cti_to_cnn_enabled") rc.model.cti_to_cnn_enabled = detail::parse_bool(k, v);
        else if (k == "extra_quarter_level") rc.model.extra_quarter_level = detail::parse_bool(k, v);
        else if (k == "toy_classes") rc.model.toy_classes = detail::parse_int(k, v);
        else if (k == "seed") rc.seed = detail::parse_u64(k, v);
        else if (k == "dtype") {
            rc.dtype = dtype_from_name(v);
            rc.dtype_explicit = true;
        }
        else if (k == "out_dir") rc.out_dir = v;
        else if (k == "train_images") rc.train_images = detail::parse_int(k, v);
        else if (k == "train_steps") rc.train_steps = detail::parse_int(k, v);
        else if (k == "train_batch") rc.train_batch = detail::parse_int(k, v);
        else if (k == "train_lr") rc.train_lr = detail::parse_double(k, v);
        else if (k == "train_momentum") rc.train_momentum = detail::parse_double(k, v);
        else throw ConfigError("unknown config key '" + k + "'");
    }
    if (kv.count("variant") && !kv.count("stem_width") && rc.model.variant == "toy") {
        // toy preset already set stem width
    }
    rc.model.validate();
    if (rc.train_images < 1 || rc.train_steps < 0 || rc.train_batch < 1)
        throw ConfigError("training keys must be positive");
    return rc;
}

inline RunConfig parse_run_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_run_config(in);
}

// Canonical text form, round-trips through parse_run_config. Used as the
// checkpoint's embedded config block so ordering must stay deterministic.
inline std::string serialize_model_config(const CoMerConfig& c) {
    std::ostringstream os;
    os << "vit_depth = " << c.vit.depth << "\n";
    os << "vit_dim = " << c.vit.dim << "\n";
    os << "vit_heads = " << c.vit.heads << "\n";
    os << "mlp_ratio = " << c.vit.mlp_ratio << "\n";
    os << "img_h = " << c.vit.img_h << "\n";
    os << "img_w = " << c.vit.img_w << "\n";
    os << "stages = " << c.stages << "\n";
    os << "stem_width = " << c.stem_width << "\n";
    os << "mrfp_kernels = ";
    for (std::size_t i = 0; i < c.mrfp.kernels.size(); ++i) os << (i ? "," : "") << c.mrfp.kernels[i];
    os << "\n";
    os << "mrfp_reduce = " << c.mrfp.reduce << "\n";
    os << "cti_heads = " << c.cti.heads << "\n";
    os << "cti_points = " << c.cti.points << "\n";
    os << "cti_ffn_ratio = " << c.cti.ffn_ratio << "\n";
    os << "cti_value_ratio = " << c.cti.value_ratio << "\n";
    os << "mrfp_enabled = " << (c.mrfp_enabled ? "true" : "false") << "\n";
    os << "cti_to_vit_enabled = " << (c.cti_to_vit_enabled ? "true" : "false") << "\n";
    os << "cti_to_cnn_enabled = " << (c.cti_to_cnn_enabled ? "true" : "false") << "\n";
    os << "extra_quarter_level = " << (c.extra_quarter_level ? "true" : "false") << "\n";
    os << "toy_classes = " << c.toy_classes << "\n";
    return os.str();
}

inline CoMerConfig parse_model_config(const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in).model;
}

} // namespace vitcomer
