#pragma once

// The DGCP checkpoint container: a versioned little-endian binary holding a
// kind tag, a JSON config block and named tensor records (name, rank, dims,
// row-major doubles). Model checkpoints and graph bundles share it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dastgcn/errors.hpp"
#include "dastgcn/io.hpp"
#include "dastgcn/model.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

constexpr std::uint32_t kDgcpVersion = 1;

struct DgcpFile {
    std::string kind;
    nlohmann::json config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw DataError("checkpoint is missing tensor '" + name + "'");
    }
};

inline void write_dgcp(const std::filesystem::path& path, const std::string& kind,
                       const nlohmann::json& config,
                       const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::string out;
    out += "DGCP";
    detail::put_u32(out, kDgcpVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(kind.size()));
    out += kind;
    const std::string cfg = config.dump();
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(out, t[i]);
    }
    write_text_file(path, out);
}

inline DgcpFile read_dgcp(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t size = bytes.size();
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > size) throw DataError("checkpoint " + path.string() + " is truncated");
    };
    need(8);
    if (bytes.compare(0, 4, "DGCP") != 0)
        throw DataError("checkpoint " + path.string() + ": bad magic");
    pos = 4;
    const std::uint32_t version = detail::get_u32(p + pos);
    pos += 4;
    if (version != kDgcpVersion)
        throw DataError("checkpoint " + path.string() + ": unsupported format version " +
                        std::to_string(version));
    auto read_block = [&](std::size_t n) {
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    };
    auto read_u32 = [&]() {
        need(4);
        const std::uint32_t v = detail::get_u32(p + pos);
        pos += 4;
        return v;
    };
    DgcpFile file;
    file.kind = read_block(read_u32());
    const std::string cfg = read_block(read_u32());
    try {
        file.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path.string() + ": config block does not parse: " + e.what());
    }
    const std::uint32_t count = read_u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_block(read_u32());
        const std::uint32_t rank = read_u32();
        std::vector<int> dims;
        std::size_t total = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            dims.push_back(static_cast<int>(read_u32()));
            total *= static_cast<std::size_t>(dims.back());
        }
        need(total * 8);
        std::vector<double> values(total);
        for (std::size_t k = 0; k < total; ++k) values[k] = detail::get_f64(p + pos + k * 8);
        pos += total * 8;
        file.tensors.emplace_back(name, Tensor(std::move(dims), std::move(values)));
    }
    return file;
}

// ---------------------------------------------------------------------------
// ModelConfig JSON and model checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["nodes"] = cfg.nodes;
    j["input_channels"] = cfg.input_channels;
    j["blocks"] = cfg.blocks;
    j["filters"] = cfg.filters;
    j["kernel_size"] = cfg.kernel_size;
    j["embed_dim"] = cfg.embed_dim;
    j["graph_count"] = cfg.graph_count;
    j["dilations"] = cfg.dilations;
    j["dropout_rate"] = cfg.dropout_rate;
    j["use_tlc"] = cfg.use_tlc;
    j["adjacency"] = to_string(cfg.adjacency);
    j["num_classes"] = cfg.num_classes;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.nodes = j.at("nodes").get<int>();
    cfg.input_channels = j.at("input_channels").get<int>();
    cfg.blocks = j.at("blocks").get<int>();
    cfg.filters = j.at("filters").get<int>();
    cfg.kernel_size = j.at("kernel_size").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.graph_count = j.at("graph_count").get<int>();
    cfg.dilations = j.at("dilations").get<std::vector<int>>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.use_tlc = j.at("use_tlc").get<bool>();
    cfg.adjacency = adjacency_mode_from(j.at("adjacency").get<std::string>());
    cfg.num_classes = j.at("num_classes").get<int>();
    return cfg;
}

inline void save_model_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                                  const ModelParams& params) {
    auto tensors = params.named();
    if (cfg.fixed_adjacency.defined()) tensors.emplace_back("fixed.adjacency", cfg.fixed_adjacency);
    write_dgcp(path, "model", model_config_json(cfg), tensors);
}

inline std::pair<ModelConfig, ModelParams> load_model_checkpoint(const std::filesystem::path& path) {
    const DgcpFile file = read_dgcp(path);
    if (file.kind != "model")
        throw DataError("checkpoint " + path.string() + " holds a '" + file.kind + "', not a model");
    ModelConfig cfg = model_config_from_json(file.config);
    if (cfg.adjacency == AdjacencyMode::fixed_correlation) cfg.fixed_adjacency = file.tensor("fixed.adjacency");
    cfg.validate();
    // materialize the parameter structure for this config, then overwrite
    // every tensor from the stored records
    ModelParams params = init_model_params(cfg, 0);
    for (auto& [name, t] : params.named()) {
        const Tensor& stored = file.tensor(name);
        if (!stored.same_shape(t))
            throw DataError("checkpoint " + path.string() + ": tensor '" + name + "' has shape " +
                            shape_str(stored.shape()) + ", expected " + shape_str(t.shape()));
        t.values() = stored.values();
    }
    return {std::move(cfg), std::move(params)};
}

}  // namespace dastgcn
