#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repdit/error.hpp"
#include "repdit/layout.hpp"

namespace repdit {

static_assert(std::endian::native == std::endian::little,
              "capture and checkpoint payloads are little-endian");

// One layer-output token sequence observed during sampling.
// variant is "orig" (layer output) or "mean" (cache aggregate).
struct FeatureRecord {
    size_t step = 0;   // denoising step t
    size_t layer = 0;  // 1-based
    std::string variant;
    size_t rows = 0, cols = 0;  // N x d
    std::vector<double> values;
};

// Softmax attention weights of one layer at one step. head is the head index,
// or the sentinel head_mean when weights are averaged over heads.
struct AttentionCaptureRecord {
    static constexpr size_t head_mean = size_t(-1);
    size_t step = 0;
    size_t layer = 0;
    size_t head = head_mean;
    size_t n = 0;
    std::vector<double> weights;  // n*n, query-major
};

// In-memory capture target. The sampling driver flips `active` per step; the
// model appends records while it is set.
struct CaptureSink {
    bool want_features = false;
    bool want_mean = false;
    bool want_attention = false;
    bool per_head = false;  // otherwise attention is stored head-averaged
    bool active = false;
    size_t step = 0;

    TokenLayout layout;
    size_t width = 0;   // d
    size_t layers = 0;  // L
    size_t heads = 0;
    // similarity definition the producer intended for this capture
    std::string similarity_hint = "per_position";

    std::vector<FeatureRecord> features;
    std::vector<AttentionCaptureRecord> attention;
};

// --- RPVA1 file format ------------------------------------------------------
// Line 1: "RPVA1"
// Line 2: one-line JSON metadata (layout, geometry, record directory)
// Then: concatenated little-endian 64-bit floats, one block per record in
// directory order; block lengths are implied by the per-record dimensions.

inline void write_capture(const std::string& path, const CaptureSink& sink) {
    nlohmann::json meta;
    meta["version"] = 1;
    meta["layout"] = {{"S", sink.layout.S}, {"F", sink.layout.F}, {"Gp", sink.layout.Gp}};
    meta["width"] = sink.width;
    meta["layers"] = sink.layers;
    meta["heads"] = sink.heads;
    meta["similarity"] = sink.similarity_hint;
    nlohmann::json records = nlohmann::json::array();
    for (const auto& f : sink.features) {
        records.push_back({{"kind", "features"},
                           {"step", f.step},
                           {"layer", f.layer},
                           {"variant", f.variant},
                           {"rows", f.rows},
                           {"cols", f.cols}});
    }
    for (const auto& a : sink.attention) {
        nlohmann::json r = {{"kind", "attention"}, {"step", a.step}, {"layer", a.layer}, {"n", a.n}};
        if (a.head == AttentionCaptureRecord::head_mean)
            r["head"] = "mean";
        else
            r["head"] = a.head;
        records.push_back(std::move(r));
    }
    meta["records"] = std::move(records);

    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io_error", "cannot open '" + path + "' for writing");
    out << "RPVA1\n" << meta.dump() << "\n";
    for (const auto& f : sink.features)
        out.write(reinterpret_cast<const char*>(f.values.data()),
                  std::streamsize(f.values.size() * sizeof(double)));
    for (const auto& a : sink.attention)
        out.write(reinterpret_cast<const char*>(a.weights.data()),
                  std::streamsize(a.weights.size() * sizeof(double)));
    if (!out) fail("io_error", "write failed for '" + path + "'");
}

inline CaptureSink read_capture(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io_error", "cannot open '" + path + "'");
    std::string magic;
    if (!std::getline(in, magic) || magic != "RPVA1")
        fail("capture_malformed", "bad magic in '" + path + "'");
    std::string meta_line;
    if (!std::getline(in, meta_line)) fail("capture_malformed", "missing metadata line");
    nlohmann::json meta = nlohmann::json::parse(meta_line, nullptr, false);
    if (meta.is_discarded() || !meta.is_object() || !meta.contains("records"))
        fail("capture_malformed", "metadata is not a record directory");

    CaptureSink sink;
    try {
        sink.layout = TokenLayout::make(meta.at("layout").at("S").get<size_t>(),
                                        meta.at("layout").at("F").get<size_t>(),
                                        meta.at("layout").at("Gp").get<size_t>());
        sink.width = meta.at("width").get<size_t>();
        sink.layers = meta.at("layers").get<size_t>();
        sink.heads = meta.at("heads").get<size_t>();
        if (meta.contains("similarity"))
            sink.similarity_hint = meta.at("similarity").get<std::string>();

        for (const auto& r : meta.at("records")) {
            const std::string kind = r.at("kind").get<std::string>();
            if (kind == "features") {
                FeatureRecord f;
                f.step = r.at("step").get<size_t>();
                f.layer = r.at("layer").get<size_t>();
                f.variant = r.at("variant").get<std::string>();
                f.rows = r.at("rows").get<size_t>();
                f.cols = r.at("cols").get<size_t>();
                f.values.resize(f.rows * f.cols);
                sink.features.push_back(std::move(f));
            } else if (kind == "attention") {
                AttentionCaptureRecord a;
                a.step = r.at("step").get<size_t>();
                a.layer = r.at("layer").get<size_t>();
                a.n = r.at("n").get<size_t>();
                if (r.at("head").is_string())
                    a.head = AttentionCaptureRecord::head_mean;
                else
                    a.head = r.at("head").get<size_t>();
                a.weights.resize(a.n * a.n);
                sink.attention.push_back(std::move(a));
            } else {
                fail("capture_malformed", "unknown record kind '" + kind + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail("capture_malformed", std::string("metadata field error: ") + e.what());
    }

    auto read_block = [&](std::vector<double>& v) {
        in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
        if (size_t(in.gcount()) != v.size() * sizeof(double))
            fail("capture_malformed", "payload truncated in '" + path + "'");
    };
    for (auto& f : sink.features) read_block(f.values);
    for (auto& a : sink.attention) read_block(a.weights);
    return sink;
}

} // namespace repdit
