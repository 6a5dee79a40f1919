#pragma once

// Checkpoint file layout:
//
//   RAZN-CHECKPOINT 1\n
//   <one-line JSON header>\n
//   <payload: raw little-endian float32 arrays>
//
// The header carries {"version", "step", "meta", "entries": [{"name", "shape",
// "offset"}]} where offset is the byte position of the entry inside the payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "razn/errors.hpp"
#include "razn/params.hpp"
#include "razn/tensor.hpp"

namespace razn {

inline constexpr const char* kCheckpointMagic = "RAZN-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::int64_t step = 0;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor<float>>> entries;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return &t;
        return nullptr;
    }
    bool has_prefix(const std::string& prefix) const {
        for (const auto& [n, _] : entries)
            if (n.rfind(prefix, 0) == 0) return true;
        return false;
    }
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["version"] = kCheckpointVersion;
    header["step"] = ck.step;
    header["meta"] = ck.meta;
    header["entries"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ck.entries) {
        header["entries"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel() * sizeof(float);
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
        out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << header.dump() << '\n';
        std::vector<std::uint32_t> buf;
        for (const auto& [_, t] : ck.entries) {
            buf.resize(t.numel());
            for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = detail::to_le(std::bit_cast<std::uint32_t>(t[i]));
            out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        }
        if (!out) throw std::runtime_error("short write on checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactMismatchError("cannot open checkpoint " + path.string());
    std::string magic_line, header_line;
    std::getline(in, magic_line);
    if (magic_line != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion)) {
        throw ArtifactMismatchError("not a version-" + std::to_string(kCheckpointVersion) + " checkpoint: " + path.string());
    }
    std::getline(in, header_line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactMismatchError(std::string("corrupt checkpoint header: ") + e.what());
    }
    const auto payload_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto payload_size = static_cast<std::uint64_t>(in.tellg() - payload_start);
    in.seekg(payload_start);

    Checkpoint ck;
    try {
        ck.step = header.at("step").get<std::int64_t>();
        ck.meta = header.value("meta", nlohmann::json::object());
        std::vector<std::uint32_t> buf;
        for (const auto& e : header.at("entries")) {
            Shape shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::uint64_t>();
            Tensor<float> t(shape);
            if (offset + t.numel() * 4 > payload_size) throw ArtifactMismatchError("checkpoint payload truncated");
            in.seekg(payload_start + static_cast<std::streamoff>(offset));
            buf.resize(t.numel());
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<float>(detail::to_le(buf[i]));
            ck.entries.emplace_back(e.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactMismatchError(std::string("malformed checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw ArtifactMismatchError(std::string("malformed checkpoint entry: ") + e.what());
    }
    return ck;
}

inline constexpr const char* kAdamMSuffix = "@adam_m";
inline constexpr const char* kAdamVSuffix = "@adam_v";

/// Appends values, Adam moments and buffers of `store` under `prefix`.
inline void put_store(Checkpoint& ck, const std::string& prefix, const ParamStore<float>& store) {
    for (const auto& [name, p] : store.params()) {
        ck.entries.emplace_back(prefix + name, p.node->value);
        ck.entries.emplace_back(prefix + name + kAdamMSuffix, p.adam_m);
        ck.entries.emplace_back(prefix + name + kAdamVSuffix, p.adam_v);
    }
    for (const auto& [name, b] : store.buffers()) ck.entries.emplace_back(prefix + name, b);
    ck.meta["adam_steps"][prefix] = store.adam_steps();
}

/// Restores every parameter and buffer already registered in `store` from `ck`.
/// Missing entries or shape disagreements raise ArtifactMismatchError.
inline void get_store(const Checkpoint& ck, const std::string& prefix, ParamStore<float>& store) {
    auto fetch = [&](const std::string& name, const Shape& want) -> const Tensor<float>& {
        const Tensor<float>* t = ck.find(prefix + name);
        if (!t) throw ArtifactMismatchError("checkpoint lacks entry " + prefix + name);
        if (t->shape() != want) {
            throw ArtifactMismatchError("checkpoint entry " + prefix + name + " has shape " + shape_str(t->shape()) +
                                        ", expected " + shape_str(want));
        }
        return *t;
    };
    for (auto& [name, p] : store.params()) {
        p.node->value = fetch(name, p.node->value.shape());
        p.adam_m = fetch(name + kAdamMSuffix, p.adam_m.shape());
        p.adam_v = fetch(name + kAdamVSuffix, p.adam_v.shape());
        p.node->grad = Tensor<float>();
    }
    for (auto& [name, b] : store.buffers()) b = fetch(name, b.shape());
    if (ck.meta.contains("adam_steps") && ck.meta["adam_steps"].contains(prefix)) {
        store.set_adam_steps(ck.meta["adam_steps"][prefix].get<std::int64_t>());
    }
}

}  // namespace razn
