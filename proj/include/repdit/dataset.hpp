#pragma once

#include <string>
#include <vector>

#include "repdit/config.hpp"
#include "repdit/rng.hpp"
#include "repdit/tensor.hpp"

namespace repdit {

// Tiny synthetic videos: a bright shape (+1) on a dark background (-1) that
// moves exactly one pixel per frame along its prompt's direction, wrapping at
// the edges. prompt_id decodes as kind = (id/4) % 2 (0 square, 1 bar) and
// direction = id % 4 (right, left, down, up).
struct SyntheticClip {
    Tensor video;  // [F, G, G], values in {-1, +1}
    size_t prompt_id = 0;
};

inline size_t prompt_kind(size_t prompt_id) { return (prompt_id / 4) % 2; }
inline size_t prompt_direction(size_t prompt_id) { return prompt_id % 4; }

namespace detail {

inline void paint_rect(std::vector<double>& frame, size_t G, size_t r0, size_t c0, size_t h,
                       size_t w) {
    for (size_t dr = 0; dr < h; ++dr)
        for (size_t dc = 0; dc < w; ++dc) frame[((r0 + dr) % G) * G + (c0 + dc) % G] = 1.0;
}

} // namespace detail

inline SyntheticClip make_clip(const ModelConfig& cfg, size_t prompt_id, size_t r0, size_t c0) {
    const size_t G = cfg.G, F = cfg.F;
    const size_t kind = prompt_kind(prompt_id);
    const size_t dir = prompt_direction(prompt_id);
    std::vector<double> data(F * G * G, -1.0);
    for (size_t f = 0; f < F; ++f) {
        // one-pixel-per-frame shift along the prompt direction, with wrap
        size_t r = r0, c = c0;
        switch (dir) {
            case 0: c = (c0 + f) % G; break;          // right
            case 1: c = (c0 + G * F - f) % G; break;  // left
            case 2: r = (r0 + f) % G; break;          // down
            case 3: r = (r0 + G * F - f) % G; break;  // up
        }
        std::vector<double> frame(G * G, -1.0);
        if (kind == 0) {
            const size_t edge = std::max<size_t>(2, G / 4);
            detail::paint_rect(frame, G, r, c, edge, edge);
        } else {
            detail::paint_rect(frame, G, r, c, std::max<size_t>(1, G / 8), std::max<size_t>(2, G / 2));
        }
        std::copy(frame.begin(), frame.end(), data.begin() + f * G * G);
    }
    SyntheticClip clip;
    clip.video = Tensor::from_data({F, G, G}, std::move(data));
    clip.prompt_id = prompt_id;
    return clip;
}

inline std::vector<size_t> eligible_prompts(const ModelConfig& cfg, const std::string& kinds) {
    std::vector<size_t> ids;
    for (size_t id = 0; id < cfg.vocab; ++id) {
        const size_t kind = prompt_kind(id);
        if (kinds == "both" || (kinds == "square" && kind == 0) || (kinds == "bar" && kind == 1))
            ids.push_back(id);
    }
    if (ids.empty()) fail("config_invalid", "no prompt ids available for kinds='" + kinds + "'");
    return ids;
}

inline std::vector<SyntheticClip> synth_dataset(uint64_t seed, size_t n, const RunConfig& cfg) {
    if (n < 1) fail("bad_argument", "dataset needs at least one clip");
    const auto ids = eligible_prompts(cfg.model, cfg.data.kinds);
    std::vector<SyntheticClip> clips;
    clips.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Rng rng(Rng::derive(seed, i));
        const size_t id = ids[rng.below(ids.size())];
        const size_t r0 = rng.below(cfg.model.G);
        const size_t c0 = rng.below(cfg.model.G);
        clips.push_back(make_clip(cfg.model, id, r0, c0));
    }
    return clips;
}

} // namespace repdit
