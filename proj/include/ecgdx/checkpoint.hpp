#pragma once

// Versioned binary checkpoint: magic + version, the model config as JSON
// text, then named parameter blobs (name, shape, little-endian 32-bit
// floats). Loading rebuilds the model from the embedded config.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgdx/model.hpp"

namespace ecgdx::nn {

inline constexpr char kCheckpointMagic[8] = {'E', 'C', 'G', 'D', 'X', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["n_leads"] = cfg.n_leads;
    j["input_len"] = cfg.input_len;
    j["stem"] = {{"channels", cfg.stem_channels},
                 {"kernel", cfg.stem_kernel},
                 {"stride", cfg.stem_stride}};
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : cfg.blocks)
        j["blocks"].push_back({{"in_ch", b.in_ch},
                               {"bottleneck_ch", b.bottleneck_ch},
                               {"out_ch", b.out_ch},
                               {"kernel", b.kernel},
                               {"stride", b.stride},
                               {"groups", b.groups},
                               {"se_reduction", b.se_reduction}});
    j["head_dim"] = cfg.head_dim;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.n_leads = j.at("n_leads").get<int>();
    cfg.input_len = j.at("input_len").get<int>();
    cfg.stem_channels = j.at("stem").at("channels").get<int>();
    cfg.stem_kernel = j.at("stem").at("kernel").get<int>();
    cfg.stem_stride = j.at("stem").at("stride").get<int>();
    cfg.blocks.clear();
    for (const auto& b : j.at("blocks")) {
        BlockConfig bc;
        bc.in_ch = b.at("in_ch").get<int>();
        bc.bottleneck_ch = b.at("bottleneck_ch").get<int>();
        bc.out_ch = b.at("out_ch").get<int>();
        bc.kernel = b.at("kernel").get<int>();
        bc.stride = b.at("stride").get<int>();
        bc.groups = b.at("groups").get<int>();
        bc.se_reduction = b.at("se_reduction").get<int>();
        cfg.blocks.push_back(bc);
    }
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.validate();
    return cfg;
}

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is) {
    const std::uint32_t u = read_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

inline void save_checkpoint(EcgNet& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write(kCheckpointMagic, 8);
    detail::write_u32(os, kCheckpointVersion);

    const std::string cfg = model_config_to_json(model.config()).dump();
    detail::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    auto params = model.params();
    detail::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (auto& p : params) {
        detail::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(p.tensor->shape.size()));
        for (auto d : p.tensor->shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
        for (double v : p.tensor->data) detail::write_f32(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline EcgNet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    const std::uint32_t cfg_len = detail::read_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw std::runtime_error("checkpoint truncated");
    EcgNet model(model_config_from_json(nlohmann::json::parse(cfg_text)));

    auto params = model.params();
    const std::uint32_t count = detail::read_u32(is);
    if (count != params.size()) throw std::runtime_error("checkpoint parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (name != params[i].name)
            throw std::runtime_error("checkpoint parameter order mismatch at " + name);
        const std::uint32_t rank = detail::read_u32(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = detail::read_u32(is);
        if (shape != params[i].tensor->shape)
            throw std::runtime_error("checkpoint shape mismatch at " + name);
        for (double& v : params[i].tensor->data)
            v = static_cast<double>(detail::read_f32(is));
    }
    return model;
}

}  // namespace ecgdx::nn
