#pragma once

#include <bit>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "steerlab/error.hpp"
#include "steerlab/model.hpp"

namespace steerlab {

static_assert(std::endian::native == std::endian::little,
              "weight blob format is little-endian");

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size},
            {"d_model", cfg.d_model},
            {"n_layers", cfg.n_layers},
            {"n_heads", cfg.n_heads},
            {"d_head", cfg.d_head},
            {"max_seq_len", cfg.max_seq_len},
            {"norm_epsilon", cfg.norm_epsilon},
            {"final_norm_enabled", cfg.final_norm_enabled},
            {"seed", cfg.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_head = j.at("d_head").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.norm_epsilon = j.at("norm_epsilon").get<double>();
    cfg.final_norm_enabled = j.value("final_norm_enabled", true);
    cfg.seed = j.value("seed", uint64_t{0});
    cfg.validate();
    return cfg;
}

// Writes <base>.json (manifest: config + tensor names/shapes/byte offsets)
// and <base>.bin (raw little-endian float64 blob).
inline void save_weights(const WeightStore& w, const std::string& base) {
    nlohmann::json manifest;
    manifest["config"] = config_to_json(w.cfg);
    manifest["dtype"] = "float64_le";
    nlohmann::json tensors = nlohmann::json::array();

    std::ofstream blob(base + ".bin", std::ios::binary);
    if (!blob) throw Error(Err::IoFailure, "cannot write " + base + ".bin");
    size_t offset = 0;
    w.for_each_tensor([&](const std::string& name, const Vec& v) {
        tensors.push_back({{"name", name},
                           {"count", v.size()},
                           {"byte_offset", offset}});
        blob.write(reinterpret_cast<const char*>(v.data()),
                   static_cast<std::streamsize>(v.size() * sizeof(double)));
        offset += v.size() * sizeof(double);
    });
    manifest["tensors"] = tensors;
    if (!blob) throw Error(Err::IoFailure, "failed writing " + base + ".bin");

    std::ofstream mf(base + ".json");
    if (!mf) throw Error(Err::IoFailure, "cannot write " + base + ".json");
    mf << manifest.dump(2) << "\n";
}

inline WeightStore load_weights(const std::string& base) {
    std::ifstream mf(base + ".json");
    if (!mf) throw Error(Err::IoFailure, "cannot open " + base + ".json");
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Err::ParseError, std::string("weight manifest: ") + e.what());
    }
    ModelConfig cfg = config_from_json(manifest.at("config"));

    // allocate via init then overwrite every tensor from the blob
    WeightStore w = init_weights(cfg);
    std::ifstream blob(base + ".bin", std::ios::binary);
    if (!blob) throw Error(Err::IoFailure, "cannot open " + base + ".bin");

    std::map<std::string, std::pair<size_t, size_t>> index;  // name -> (offset, count)
    for (const auto& t : manifest.at("tensors"))
        index[t.at("name").get<std::string>()] = {t.at("byte_offset").get<size_t>(),
                                                  t.at("count").get<size_t>()};
    w.for_each_tensor([&](const std::string& name, Vec& v) {
        auto it = index.find(name);
        if (it == index.end())
            throw Error(Err::ParseError, "weight manifest missing tensor " + name);
        if (it->second.second != v.size())
            throw Error(Err::ShapeMismatch, "tensor " + name + " has wrong element count");
        blob.seekg(static_cast<std::streamoff>(it->second.first));
        blob.read(reinterpret_cast<char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!blob) throw Error(Err::IoFailure, "short read in " + base + ".bin for " + name);
    });
    return w;
}

}  // namespace steerlab
