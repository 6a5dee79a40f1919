#pragma once

// Everything a training / evaluation run depends on, with JSON round-trip so
// the resolved configuration can be echoed and stored inside checkpoints.

#include <cstdint>
#include <string>

#include "json.hpp"
#include "razn/errors.hpp"
#include "razn/nets.hpp"
#include "razn/params.hpp"
#include "razn/policy.hpp"

namespace razn {

enum class Method { Razn, Scale1, Scale2, MultiScale };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::Razn: return "razn";
        case Method::Scale1: return "scale1";
        case Method::Scale2: return "scale2";
        case Method::MultiScale: return "ms";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "razn") return Method::Razn;
    if (s == "scale1") return Method::Scale1;
    if (s == "scale2") return Method::Scale2;
    if (s == "ms") return Method::MultiScale;
    throw ConfigError("method must be one of scale1, scale2, ms, razn; got '" + s + "'");
}

/// Train/test partition of the starting level: the level is cut into square
/// blocks of `block` pixels; block (i, j) is held out when (i + j) % modulus == test_residue.
struct SplitConfig {
    int block = 256;
    int modulus = 4;
    int test_residue = 1;

    void validate() const {
        if (block < 1 || modulus < 1 || test_residue < 0 || test_residue >= modulus) throw ConfigError("invalid split");
    }
    bool operator==(const SplitConfig&) const = default;
};

struct SamplingConfig {
    int level = 0;                 // pyramid level of the top-level patches
    int stride = 8;                // spacing of candidate training origins
    double lesion_fraction = 0.5;  // share of draws taken from patches containing any non-normal label

    void validate() const {
        if (level < 0 || stride < 1 || lesion_fraction < 0.0 || lesion_fraction > 1.0) throw ConfigError("invalid sampling");
    }
    bool operator==(const SamplingConfig&) const = default;
};

struct RunConfig {
    std::string data_root;
    std::string out;
    std::uint64_t seed = 1;
    std::int64_t steps = 5000;
    int batch = 8;
    int workers = 1;
    Method method = Method::Razn;
    ZoomConfig zoom;
    SegNetConfig seg = SegNetConfig::desk();
    PolicyNetConfig policy = PolicyNetConfig::desk();
    LrSchedule seg_lr{0.01, 0.1, 50000};
    LrSchedule policy_lr{0.01, 0.1, 50000};
    AdamConfig adam;
    SplitConfig split;
    SamplingConfig sampling;
    std::int64_t checkpoint_every = 1000;
    std::int64_t log_every = 50;
    int n_patches = 100;

    void validate() const {
        if (steps < 0) throw ConfigError("steps must be >= 0");
        if (batch < 2) throw ConfigError("batch must be >= 2 (batch normalization needs more than one value)");
        if (workers < 1) throw ConfigError("workers must be >= 1");
        if (checkpoint_every < 1 || log_every < 1) throw ConfigError("checkpoint_every and log_every must be >= 1");
        if (n_patches < 1) throw ConfigError("n_patches must be >= 1");
        zoom.validate();
        seg.validate();
        policy.validate();
        if (seg.input_h != policy.input_h || seg.input_w != policy.input_w) {
            throw ConfigError("segmentation and policy networks must take the same patch size");
        }
        seg_lr.validate();
        policy_lr.validate();
        split.validate();
        sampling.validate();
        if (split.block < seg.input_h || split.block < seg.input_w) throw ConfigError("split block smaller than a patch");
    }
};

inline void to_json(nlohmann::json& j, const SegNetConfig& c) {
    j = {{"input_h", c.input_h}, {"input_w", c.input_w},           {"classes", c.classes},
         {"widths", c.widths},   {"blocks", c.blocks},             {"keep_stride3", c.keep_stride3},
         {"keep_stride4", c.keep_stride4}, {"dilate", c.dilate}};
}
inline void from_json(const nlohmann::json& j, SegNetConfig& c) {
    c.input_h = j.at("input_h");
    c.input_w = j.at("input_w");
    c.classes = j.at("classes");
    c.widths = j.at("widths");
    c.blocks = j.at("blocks");
    c.keep_stride3 = j.at("keep_stride3");
    c.keep_stride4 = j.at("keep_stride4");
    c.dilate = j.at("dilate");
}

inline void to_json(nlohmann::json& j, const PolicyNetConfig& c) {
    j = {{"input_h", c.input_h}, {"input_w", c.input_w}, {"widths", c.widths}, {"strides", c.strides}};
}
inline void from_json(const nlohmann::json& j, PolicyNetConfig& c) {
    c.input_h = j.at("input_h");
    c.input_w = j.at("input_w");
    c.widths = j.at("widths");
    c.strides = j.at("strides");
}

inline void to_json(nlohmann::json& j, const ZoomConfig& c) {
    j = {{"max_zoom", c.max_zoom}, {"rate", c.rate}, {"alpha", c.alpha}, {"reward_sign", to_string(c.sign)}, {"eps", c.eps}};
}
inline void from_json(const nlohmann::json& j, ZoomConfig& c) {
    c.max_zoom = j.at("max_zoom");
    c.rate = j.at("rate");
    c.alpha = j.at("alpha");
    c.sign = parse_reward_sign(j.at("reward_sign").get<std::string>());
    c.eps = j.at("eps");
}

inline void to_json(nlohmann::json& j, const LrSchedule& s) {
    j = {{"initial", s.initial}, {"factor", s.factor}, {"period", s.period}};
}
inline void from_json(const nlohmann::json& j, LrSchedule& s) {
    s.initial = j.at("initial");
    s.factor = j.at("factor");
    s.period = j.at("period");
}

inline void to_json(nlohmann::json& j, const AdamConfig& a) {
    j = {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}
inline void from_json(const nlohmann::json& j, AdamConfig& a) {
    a.beta1 = j.at("beta1");
    a.beta2 = j.at("beta2");
    a.eps = j.at("eps");
}

inline void to_json(nlohmann::json& j, const SplitConfig& s) {
    j = {{"block", s.block}, {"modulus", s.modulus}, {"test_residue", s.test_residue}};
}
inline void from_json(const nlohmann::json& j, SplitConfig& s) {
    s.block = j.at("block");
    s.modulus = j.at("modulus");
    s.test_residue = j.at("test_residue");
}

inline void to_json(nlohmann::json& j, const SamplingConfig& s) {
    j = {{"level", s.level}, {"stride", s.stride}, {"lesion_fraction", s.lesion_fraction}};
}
inline void from_json(const nlohmann::json& j, SamplingConfig& s) {
    s.level = j.at("level");
    s.stride = j.at("stride");
    s.lesion_fraction = j.at("lesion_fraction");
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"data_root", c.data_root},
         {"out", c.out},
         {"seed", c.seed},
         {"steps", c.steps},
         {"batch", c.batch},
         {"workers", c.workers},
         {"method", to_string(c.method)},
         {"zoom", c.zoom},
         {"seg_net", c.seg},
         {"policy_net", c.policy},
         {"seg_lr", c.seg_lr},
         {"policy_lr", c.policy_lr},
         {"adam", c.adam},
         {"split", c.split},
         {"sampling", c.sampling},
         {"checkpoint_every", c.checkpoint_every},
         {"log_every", c.log_every},
         {"n_patches", c.n_patches}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    c.data_root = j.at("data_root");
    c.out = j.at("out");
    c.seed = j.at("seed");
    c.steps = j.at("steps");
    c.batch = j.at("batch");
    c.workers = j.at("workers");
    c.method = parse_method(j.at("method").get<std::string>());
    c.zoom = j.at("zoom");
    c.seg = j.at("seg_net");
    c.policy = j.at("policy_net");
    c.seg_lr = j.at("seg_lr");
    c.policy_lr = j.at("policy_lr");
    c.adam = j.at("adam");
    c.split = j.at("split");
    c.sampling = j.at("sampling");
    c.checkpoint_every = j.at("checkpoint_every");
    c.log_every = j.at("log_every");
    c.n_patches = j.at("n_patches");
}

}  // namespace razn
