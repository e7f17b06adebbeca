#pragma once

#include <cstddef>
#include <string>

#include "repdit/error.hpp"

namespace repdit {

// Joint sequence arrangement: S text tokens first, then F frames in temporal
// order, each frame's patch tokens row-major on a Gp x Gp grid (Gp = G/patch).
struct TokenLayout {
    size_t S = 0;   // text tokens
    size_t F = 0;   // frames
    size_t Gp = 0;  // patch-grid edge
    size_t P = 0;   // tokens per frame, Gp*Gp
    size_t N = 0;   // S + F*P

    static TokenLayout make(size_t S, size_t F, size_t Gp) {
        TokenLayout l;
        l.S = S;
        l.F = F;
        l.Gp = Gp;
        l.P = Gp * Gp;
        l.N = S + F * l.P;
        return l;
    }

    bool is_text(size_t token) const { return token < S; }

    size_t token_index(size_t frame, size_t row, size_t col) const {
        if (frame >= F || row >= Gp || col >= Gp)
            fail("bad_argument", "token coordinates out of range (frame " + std::to_string(frame) +
                                     ", row " + std::to_string(row) + ", col " + std::to_string(col) + ")");
        return S + frame * P + row * Gp + col;
    }

    struct VideoCoord {
        size_t frame, row, col;
    };

    VideoCoord video_coord(size_t token) const {
        if (token < S || token >= N)
            fail("bad_argument", "token " + std::to_string(token) + " is not a video token");
        const size_t v = token - S;
        return {v / P, (v % P) / Gp, (v % P) % Gp};
    }

    // first token of a frame's block
    size_t frame_begin(size_t frame) const {
        if (frame >= F) fail("bad_argument", "frame " + std::to_string(frame) + " out of range");
        return S + frame * P;
    }
};

} // namespace repdit
