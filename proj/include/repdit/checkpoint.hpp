#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdit/config.hpp"
#include "repdit/error.hpp"
#include "repdit/tensor.hpp"

namespace repdit {

// RPVD checkpoint container.
//
// Layout: 4-byte magic "RPVD"; u32 LE format version (1); u64 LE header
// length; header = JSON {"config": <run config>, "manifest": [{"name",
// "shape"}...]}; payload = the manifest's tensors as contiguous little-endian
// 64-bit floats in manifest order.

struct Checkpoint {
    RunConfig config;
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : entries)
            if (n == name) return &t;
        return nullptr;
    }
};

inline void checkpoint_save(const std::string& path, const RunConfig& config,
                            const std::vector<std::pair<std::string, Tensor>>& entries) {
    nlohmann::json header;
    header["config"] = config.to_json();
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, t] : entries)
        manifest.push_back({{"name", name}, {"shape", t.shape()}});
    header["manifest"] = std::move(manifest);
    const std::string header_bytes = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io_error", "cannot open '" + path + "' for writing");
    out.write("RPVD", 4);
    const uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t hlen = header_bytes.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(header_bytes.data(), std::streamsize(header_bytes.size()));
    for (const auto& [name, t] : entries)
        out.write(reinterpret_cast<const char*>(t.data()),
                  std::streamsize(t.size() * sizeof(double)));
    if (!out) fail("io_error", "write failed for '" + path + "'");
}

inline Checkpoint checkpoint_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io_error", "cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "RPVD", 4) != 0)
        fail("checkpoint_magic", "'" + path + "' is not an RPVD checkpoint");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (in.gcount() != 4 || version != 1)
        fail("checkpoint_magic", "unsupported checkpoint version in '" + path + "'");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (in.gcount() != 8) fail("checkpoint_truncated", "header length missing in '" + path + "'");
    std::string header_bytes(hlen, '\0');
    in.read(header_bytes.data(), std::streamsize(hlen));
    if (uint64_t(in.gcount()) != hlen)
        fail("checkpoint_truncated", "header truncated in '" + path + "'");
    nlohmann::json header = nlohmann::json::parse(header_bytes, nullptr, false);
    if (header.is_discarded() || !header.contains("config") || !header.contains("manifest"))
        fail("checkpoint_truncated", "header is not a checkpoint header in '" + path + "'");

    Checkpoint ckpt;
    ckpt.config = RunConfig::from_json(header.at("config"));
    for (const auto& entry : header.at("manifest")) {
        std::string name;
        Shape shape;
        try {
            name = entry.at("name").get<std::string>();
            shape = entry.at("shape").get<Shape>();
        } catch (const nlohmann::json::exception& e) {
            fail("checkpoint_truncated", std::string("manifest entry malformed: ") + e.what());
        }
        std::vector<double> data(numel(shape));
        in.read(reinterpret_cast<char*>(data.data()),
                std::streamsize(data.size() * sizeof(double)));
        if (size_t(in.gcount()) != data.size() * sizeof(double))
            fail("checkpoint_truncated", "payload truncated at '" + name + "' in '" + path + "'");
        ckpt.entries.push_back({name, Tensor::from_data(shape, std::move(data))});
    }
    char extra;
    if (in.read(&extra, 1))
        fail("checkpoint_truncated", "trailing bytes after payload in '" + path + "'");
    return ckpt;
}

} // namespace repdit
