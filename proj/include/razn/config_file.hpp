#pragma once

// YAML loaders for run configurations and synthetic-data specs. Errors name
// the file, line and column of the offending entry.

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "razn/errors.hpp"
#include "razn/run_config.hpp"
#include "razn/synth.hpp"

namespace razn {

namespace yaml_detail {

class Reader {
public:
    explicit Reader(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void fail(const YAML::Mark& m, const std::string& msg) const {
        if (m.is_null()) throw ConfigError(source_ + ": " + msg);
        throw ConfigError(source_ + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1) + ": " + msg);
    }

    void require_map(const YAML::Node& n, const std::string& what) const {
        if (!n.IsMap()) fail(n.Mark(), what + " must be a mapping");
    }

    void allow_only(const YAML::Node& n, const std::set<std::string>& keys) const {
        for (const auto& kv : n) {
            const auto k = kv.first.as<std::string>();
            if (!keys.count(k)) fail(kv.first.Mark(), "unknown key '" + k + "'");
        }
    }

    template <typename T>
    void get(const YAML::Node& n, const std::string& key, T& out) const {
        const YAML::Node v = n[key];
        if (!v.IsDefined()) return;
        try {
            out = v.as<T>();
        } catch (const YAML::Exception&) {
            fail(v.Mark(), "'" + key + "' has the wrong type");
        }
    }

    template <typename T, std::size_t N>
    void get_array(const YAML::Node& n, const std::string& key, std::array<T, N>& out) const {
        std::vector<T> v;
        get(n, key, v);
        if (!n[key].IsDefined()) return;
        if (v.size() != N) fail(n[key].Mark(), "'" + key + "' needs " + std::to_string(N) + " entries");
        std::copy(v.begin(), v.end(), out.begin());
    }

    void get_pair(const YAML::Node& n, const std::string& key, int& a, int& b) const {
        std::array<int, 2> v{a, b};
        get_array(n, key, v);
        a = v[0];
        b = v[1];
    }

    void get_range(const YAML::Node& n, const std::string& key, double& lo, double& hi) const {
        std::array<double, 2> v{lo, hi};
        get_array(n, key, v);
        lo = v[0];
        hi = v[1];
    }

    /// Re-throws a validation error whose message starts with "<key>:" anchored at that key.
    template <typename Fn>
    void anchored(const YAML::Node& root, Fn validate) const {
        try {
            validate();
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            const auto colon = msg.find(':');
            if (colon != std::string::npos && root.IsMap()) {
                const std::string key = msg.substr(0, colon);
                for (const auto& kv : root)
                    if (kv.first.as<std::string>() == key) fail(kv.first.Mark(), msg);
            }
            fail(YAML::Mark::null_mark(), msg);
        }
    }

private:
    std::string source_;
};

inline YAML::Node load(const std::string& text, const std::string& source) {
    try {
        return YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        Reader(source).fail(e.mark, e.msg);
    }
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void read_seg(const Reader& rd, const YAML::Node& n, SegNetConfig& c) {
    rd.require_map(n, "seg_net");
    rd.allow_only(n, {"preset", "input", "classes", "widths", "blocks", "keep_stride3", "keep_stride4", "dilate"});
    std::string preset;
    rd.get(n, "preset", preset);
    if (preset == "paper") c = SegNetConfig::paper();
    else if (preset == "desk") c = SegNetConfig::desk();
    else if (!preset.empty()) rd.fail(n["preset"].Mark(), "preset must be desk or paper");
    rd.get_pair(n, "input", c.input_h, c.input_w);
    rd.get(n, "classes", c.classes);
    rd.get_array(n, "widths", c.widths);
    rd.get_array(n, "blocks", c.blocks);
    rd.get(n, "keep_stride3", c.keep_stride3);
    rd.get(n, "keep_stride4", c.keep_stride4);
    rd.get(n, "dilate", c.dilate);
}

inline void read_policy(const Reader& rd, const YAML::Node& n, PolicyNetConfig& c) {
    rd.require_map(n, "policy_net");
    rd.allow_only(n, {"preset", "input", "widths", "strides"});
    std::string preset;
    rd.get(n, "preset", preset);
    if (preset == "paper") c = PolicyNetConfig::paper();
    else if (preset == "desk") c = PolicyNetConfig::desk();
    else if (!preset.empty()) rd.fail(n["preset"].Mark(), "preset must be desk or paper");
    rd.get_pair(n, "input", c.input_h, c.input_w);
    rd.get_array(n, "widths", c.widths);
    rd.get_array(n, "strides", c.strides);
}

inline void read_lr(const Reader& rd, const YAML::Node& n, LrSchedule& s, const std::string& what) {
    rd.require_map(n, what);
    rd.allow_only(n, {"initial", "factor", "period"});
    rd.get(n, "initial", s.initial);
    rd.get(n, "factor", s.factor);
    rd.get(n, "period", s.period);
}

}  // namespace yaml_detail

/// Applies the keys present in `text` on top of `base`.
inline RunConfig parse_run_config(const std::string& text, const std::string& source, RunConfig base = {}) {
    using namespace yaml_detail;
    const Reader rd(source);
    const YAML::Node root = load(text, source);
    if (root.IsNull()) return base;
    rd.require_map(root, "run config");
    rd.allow_only(root, {"data_root", "out", "seed", "steps", "batch", "workers", "method", "zoom", "seg_net",
                         "policy_net", "seg_lr", "policy_lr", "adam", "split", "sampling", "checkpoint_every",
                         "log_every", "n_patches"});
    RunConfig c = std::move(base);
    rd.get(root, "data_root", c.data_root);
    rd.get(root, "out", c.out);
    rd.get(root, "seed", c.seed);
    rd.get(root, "steps", c.steps);
    rd.get(root, "batch", c.batch);
    rd.get(root, "workers", c.workers);
    rd.get(root, "checkpoint_every", c.checkpoint_every);
    rd.get(root, "log_every", c.log_every);
    rd.get(root, "n_patches", c.n_patches);
    if (root["method"]) {
        std::string m;
        rd.get(root, "method", m);
        try {
            c.method = parse_method(m);
        } catch (const ConfigError& e) {
            rd.fail(root["method"].Mark(), e.what());
        }
    }
    if (const auto z = root["zoom"]) {
        rd.require_map(z, "zoom");
        rd.allow_only(z, {"max_zoom", "rate", "alpha", "reward_sign", "eps"});
        rd.get(z, "max_zoom", c.zoom.max_zoom);
        rd.get(z, "rate", c.zoom.rate);
        rd.get(z, "alpha", c.zoom.alpha);
        rd.get(z, "eps", c.zoom.eps);
        if (z["reward_sign"]) {
            std::string s;
            rd.get(z, "reward_sign", s);
            try {
                c.zoom.sign = parse_reward_sign(s);
            } catch (const ConfigError& e) {
                rd.fail(z["reward_sign"].Mark(), e.what());
            }
        }
    }
    if (const auto n = root["seg_net"]) read_seg(rd, n, c.seg);
    if (const auto n = root["policy_net"]) read_policy(rd, n, c.policy);
    if (const auto n = root["seg_lr"]) read_lr(rd, n, c.seg_lr, "seg_lr");
    if (const auto n = root["policy_lr"]) read_lr(rd, n, c.policy_lr, "policy_lr");
    if (const auto n = root["adam"]) {
        rd.require_map(n, "adam");
        rd.allow_only(n, {"beta1", "beta2", "eps"});
        rd.get(n, "beta1", c.adam.beta1);
        rd.get(n, "beta2", c.adam.beta2);
        rd.get(n, "eps", c.adam.eps);
    }
    if (const auto n = root["split"]) {
        rd.require_map(n, "split");
        rd.allow_only(n, {"block", "modulus", "test_residue"});
        rd.get(n, "block", c.split.block);
        rd.get(n, "modulus", c.split.modulus);
        rd.get(n, "test_residue", c.split.test_residue);
    }
    if (const auto n = root["sampling"]) {
        rd.require_map(n, "sampling");
        rd.allow_only(n, {"level", "stride", "lesion_fraction"});
        rd.get(n, "level", c.sampling.level);
        rd.get(n, "stride", c.sampling.stride);
        rd.get(n, "lesion_fraction", c.sampling.lesion_fraction);
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
    return parse_run_config(yaml_detail::slurp(path), path.string(), std::move(base));
}

inline SynthSpec parse_synth_spec(const std::string& text, const std::string& source) {
    using namespace yaml_detail;
    const Reader rd(source);
    const YAML::Node root = load(text, source);
    SynthSpec s;
    if (root.IsNull()) {
        s.validate();
        return s;
    }
    rd.require_map(root, "synthetic spec");
    rd.allow_only(root, {"seed", "finest", "levels", "zoom_rate", "tile_size", "tissue_fraction", "class_area", "textures",
                         "glass", "noise", "label_jitter", "jitter_block", "tissue_radius", "lesion_radius"});
    rd.get(root, "seed", s.seed);
    rd.get_pair(root, "finest", s.finest_h, s.finest_w);
    rd.get(root, "levels", s.levels);
    rd.get(root, "zoom_rate", s.zoom_rate);
    rd.get(root, "tile_size", s.tile_size);
    rd.get(root, "tissue_fraction", s.tissue_fraction);
    rd.get_array(root, "class_area", s.class_area);
    rd.get_array(root, "glass", s.glass);
    rd.get(root, "noise", s.noise);
    rd.get(root, "label_jitter", s.label_jitter);
    rd.get(root, "jitter_block", s.jitter_block);
    rd.get_range(root, "tissue_radius", s.tissue_radius_min, s.tissue_radius_max);
    rd.get_range(root, "lesion_radius", s.lesion_radius_min, s.lesion_radius_max);
    if (const auto t = root["textures"]) {
        if (!t.IsSequence() || t.size() != s.textures.size()) {
            rd.fail(t.Mark(), "textures must list " + std::to_string(s.textures.size()) + " classes");
        }
        for (std::size_t k = 0; k < s.textures.size(); ++k) {
            const YAML::Node e = t[k];
            rd.require_map(e, "texture entry");
            rd.allow_only(e, {"base", "nucleus", "dot_density", "cluster"});
            rd.get_array(e, "base", s.textures[k].base);
            rd.get_array(e, "nucleus", s.textures[k].nucleus);
            rd.get(e, "dot_density", s.textures[k].dot_density);
            rd.get_pair(e, "cluster", s.textures[k].cluster_h, s.textures[k].cluster_w);
        }
    }
    rd.anchored(root, [&] { s.validate(); });
    return s;
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
    return parse_synth_spec(yaml_detail::slurp(path), path.string());
}

}  // namespace razn
