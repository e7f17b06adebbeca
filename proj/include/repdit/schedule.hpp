#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "repdit/error.hpp"

namespace repdit {

// Variance schedule tables for a T-step forward noising process.
// Timesteps are 1-based (t = 1..T); accessors take t directly.
struct NoiseSchedule {
    size_t T = 0;
    std::vector<double> betas;       // beta_t, index t-1
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s

    double beta(size_t t) const { return betas[check(t)]; }
    double alpha(size_t t) const { return alphas[check(t)]; }
    double alpha_bar(size_t t) const { return alpha_bars[check(t)]; }

    size_t check(size_t t) const {
        if (t < 1 || t > T)
            fail("bad_argument", "timestep " + std::to_string(t) + " outside 1.." +
                                     std::to_string(T));
        return t - 1;
    }
};

// Linear interpolation of beta from beta_start to beta_end across T steps.
// With T=1 the single beta is beta_start.
inline NoiseSchedule make_schedule(size_t T, double beta_start, double beta_end) {
    if (T < 1) fail("bad_argument", "schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        fail("bad_argument", "schedule range must satisfy 0 < beta_start <= beta_end < 1, got [" +
                                 std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    double bar = 1.0;
    for (size_t i = 0; i < T; ++i) {
        const double frac = (T == 1) ? 0.0 : double(i) / double(T - 1);
        s.betas[i] = beta_start + (beta_end - beta_start) * frac;
        s.alphas[i] = 1.0 - s.betas[i];
        bar *= s.alphas[i];
        s.alpha_bars[i] = bar;
    }
    return s;
}

} // namespace repdit
