#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "repdit/capture.hpp"
#include "repdit/diffusion.hpp"
#include "repdit/error.hpp"
#include "repdit/layout.hpp"
#include "repdit/model.hpp"

namespace repdit {

// Representation instruments. Everything here is a pure function over
// captured values (row-major [N x d] features, query-major [n x n] attention
// weights); capture plumbing lives in capture.hpp.

enum class SimilarityMode { per_position, pooled };

inline SimilarityMode similarity_mode_from_string(const std::string& s) {
    if (s == "per_position") return SimilarityMode::per_position;
    if (s == "pooled") return SimilarityMode::pooled;
    fail("config_invalid", "unknown similarity mode '" + s + "'");
}

inline double cosine(const double* a, const double* b, size_t d) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < d; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;  // zero-norm convention
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// Attention mass a query frame's tokens place on the text block and on each
// key frame's block, averaged over the frame's P query tokens. Rows of the
// weight matrix sum to 1, so the returned F+1 masses (text first) do too.
inline std::vector<double> frame_attention_distribution(const std::vector<double>& weights,
                                                        const TokenLayout& lay,
                                                        size_t query_frame) {
    if (query_frame >= lay.F)
        fail("bad_argument", "query frame " + std::to_string(query_frame) + " out of range");
    if (weights.size() != lay.N * lay.N)
        fail("shape_mismatch", "attention weights do not match layout (" +
                                   std::to_string(weights.size()) + " values for N=" +
                                   std::to_string(lay.N) + ")");
    std::vector<double> masses(lay.F + 1, 0.0);
    const size_t q0 = lay.frame_begin(query_frame);
    for (size_t q = q0; q < q0 + lay.P; ++q) {
        const double* row = weights.data() + q * lay.N;
        for (size_t s = 0; s < lay.S; ++s) masses[0] += row[s];
        for (size_t f = 0; f < lay.F; ++f) {
            const size_t k0 = lay.frame_begin(f);
            for (size_t k = k0; k < k0 + lay.P; ++k) masses[1 + f] += row[k];
        }
    }
    for (double& v : masses) v /= double(lay.P);
    return masses;
}

// Self-frame attention map: where within its own frame a frame's queries
// look. Each query row is restricted to the frame's own key block and
// renormalized, then rows are averaged; result is a Gp x Gp grid (row-major).
inline std::vector<double> frame_attention_map(const std::vector<double>& weights,
                                               const TokenLayout& lay, size_t query_frame) {
    if (query_frame >= lay.F)
        fail("bad_argument", "query frame " + std::to_string(query_frame) + " out of range");
    if (weights.size() != lay.N * lay.N)
        fail("shape_mismatch", "attention weights do not match layout");
    std::vector<double> map(lay.P, 0.0);
    const size_t b = lay.frame_begin(query_frame);
    for (size_t q = b; q < b + lay.P; ++q) {
        const double* row = weights.data() + q * lay.N;
        double in_frame = 0.0;
        for (size_t p = 0; p < lay.P; ++p) in_frame += row[b + p];
        if (in_frame == 0.0) continue;
        for (size_t p = 0; p < lay.P; ++p) map[p] += row[b + p] / in_frame;
    }
    for (double& v : map) v /= double(lay.P);
    return map;
}

// Mean cosine similarity between frames f and f+1, one value per adjacent
// pair. per_position compares spatially corresponding token vectors and
// averages over the P positions; pooled compares frame-mean-pooled vectors.
inline std::vector<double> adjacent_frame_similarity(const std::vector<double>& features,
                                                     const TokenLayout& lay, size_t d,
                                                     SimilarityMode mode = SimilarityMode::per_position) {
    if (lay.F < 2) fail("bad_argument", "adjacent-frame similarity needs F >= 2");
    if (features.size() != lay.N * d)
        fail("shape_mismatch", "feature matrix does not match layout/width");
    std::vector<double> sims(lay.F - 1, 0.0);
    if (mode == SimilarityMode::per_position) {
        for (size_t f = 0; f + 1 < lay.F; ++f) {
            double acc = 0.0;
            for (size_t p = 0; p < lay.P; ++p) {
                const double* a = features.data() + (lay.frame_begin(f) + p) * d;
                const double* b = features.data() + (lay.frame_begin(f + 1) + p) * d;
                acc += cosine(a, b, d);
            }
            sims[f] = acc / double(lay.P);
        }
    } else {
        std::vector<double> pooled(lay.F * d, 0.0);
        for (size_t f = 0; f < lay.F; ++f) {
            for (size_t p = 0; p < lay.P; ++p) {
                const double* a = features.data() + (lay.frame_begin(f) + p) * d;
                for (size_t i = 0; i < d; ++i) pooled[f * d + i] += a[i];
            }
            for (size_t i = 0; i < d; ++i) pooled[f * d + i] /= double(lay.P);
        }
        for (size_t f = 0; f + 1 < lay.F; ++f)
            sims[f] = cosine(pooled.data() + f * d, pooled.data() + (f + 1) * d, d);
    }
    return sims;
}

// Per-token L2 norms of one frame on the patch grid, min-max normalized to
// [0,1]; a constant-norm frame maps to all zeros.
inline std::vector<double> export_feature_map(const std::vector<double>& features,
                                              const TokenLayout& lay, size_t d, size_t frame) {
    if (frame >= lay.F) fail("bad_argument", "frame " + std::to_string(frame) + " out of range");
    if (features.size() != lay.N * d)
        fail("shape_mismatch", "feature matrix does not match layout/width");
    std::vector<double> norms(lay.P);
    for (size_t p = 0; p < lay.P; ++p) {
        const double* a = features.data() + (lay.frame_begin(frame) + p) * d;
        double acc = 0.0;
        for (size_t i = 0; i < d; ++i) acc += a[i] * a[i];
        norms[p] = std::sqrt(acc);
    }
    const auto [mn_it, mx_it] = std::minmax_element(norms.begin(), norms.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx == mn) return std::vector<double>(lay.P, 0.0);
    for (double& v : norms) v = (v - mn) / (mx - mn);
    return norms;
}

// --- layer x step similarity report ----------------------------------------

struct SimilarityReport {
    std::vector<size_t> steps;   // as captured (descending denoising order)
    std::vector<size_t> layers;  // ascending
    // mean-over-pairs similarity of the original layer features, [step][layer]
    std::vector<std::vector<double>> values;

    struct Row {
        size_t step, layer, pair;
        double sim;
    };
    std::vector<Row> detail;       // original features, one row per frame pair
    std::vector<Row> detail_mean;  // cache-aggregate features, empty if not captured
};

inline const FeatureRecord* find_features(const CaptureSink& cap, size_t step, size_t layer,
                                          const std::string& variant) {
    for (const auto& f : cap.features)
        if (f.step == step && f.layer == layer && f.variant == variant) return &f;
    return nullptr;
}

inline SimilarityReport report_from_capture(const CaptureSink& cap, std::vector<size_t> steps,
                                            std::vector<size_t> layers,
                                            SimilarityMode mode = SimilarityMode::per_position) {
    if (steps.empty()) {
        for (const auto& f : cap.features)
            if (f.variant == "orig" && std::find(steps.begin(), steps.end(), f.step) == steps.end())
                steps.push_back(f.step);
    }
    if (layers.empty()) {
        std::set<size_t> ls;
        for (const auto& f : cap.features)
            if (f.variant == "orig") ls.insert(f.layer);
        layers.assign(ls.begin(), ls.end());
    }
    if (steps.empty() || layers.empty())
        fail("capture_malformed", "capture contains no feature records");

    SimilarityReport rep;
    rep.steps = steps;
    rep.layers = layers;
    rep.values.assign(steps.size(), std::vector<double>(layers.size(), 0.0));
    const bool has_mean = find_features(cap, steps[0], layers[0], "mean") != nullptr;
    for (size_t si = 0; si < steps.size(); ++si) {
        for (size_t li = 0; li < layers.size(); ++li) {
            const FeatureRecord* f = find_features(cap, steps[si], layers[li], "orig");
            if (!f)
                fail("bad_argument", "capture has no features for step " +
                                         std::to_string(steps[si]) + " layer " +
                                         std::to_string(layers[li]));
            auto sims = adjacent_frame_similarity(f->values, cap.layout, cap.width, mode);
            double acc = 0.0;
            for (size_t p = 0; p < sims.size(); ++p) {
                rep.detail.push_back({steps[si], layers[li], p, sims[p]});
                acc += sims[p];
            }
            rep.values[si][li] = acc / double(sims.size());
            if (has_mean) {
                const FeatureRecord* fm = find_features(cap, steps[si], layers[li], "mean");
                if (fm) {
                    auto msims = adjacent_frame_similarity(fm->values, cap.layout, cap.width, mode);
                    for (size_t p = 0; p < msims.size(); ++p)
                        rep.detail_mean.push_back({steps[si], layers[li], p, msims[p]});
                }
            }
        }
    }
    return rep;
}

// Runs a full sampling trajectory with feature capture at the requested
// denoising steps and computes the similarity report. Attention weights are
// additionally captured at attention_step (0 = the first requested step).
inline SimilarityReport similarity_sweep(RepDiT& model, const NoiseSchedule& schedule,
                                         size_t prompt_id, uint64_t seed,
                                         std::vector<size_t> steps, std::vector<size_t> layers,
                                         SimilarityMode mode = SimilarityMode::per_position,
                                         CaptureSink* capture_out = nullptr,
                                         bool want_attention = false, size_t attention_step = 0) {
    const size_t T = schedule.T;
    if (steps.empty()) {
        std::set<size_t, std::greater<size_t>> s{T, (3 * T + 3) / 4, (T + 1) / 2, (T + 3) / 4, 1};
        steps.assign(s.begin(), s.end());
    }
    for (size_t t : steps) schedule.check(t);
    if (want_attention && attention_step == 0) attention_step = steps[0];

    CaptureSink local;
    CaptureSink& sink = capture_out ? *capture_out : local;
    sink.want_features = true;
    sink.want_mean = model.config().repvideo_enabled;

    auto requested = [&steps](size_t t) {
        return std::find(steps.begin(), steps.end(), t) != steps.end();
    };
    Denoiser denoiser = [&](const Tensor& x, size_t t) {
        sink.active = requested(t);
        sink.step = t;
        sink.want_attention = want_attention && t == attention_step;
        return model.forward(x, t, prompt_id, &sink);
    };
    const auto& cfg = model.config();
    sample_loop(denoiser, {cfg.F, cfg.G, cfg.G}, schedule, seed);
    sink.active = false;
    return report_from_capture(sink, steps, layers, mode);
}

} // namespace repdit
