#pragma once

#include <cmath>
#include <functional>
#include <optional>

#include "repdit/rng.hpp"
#include "repdit/schedule.hpp"
#include "repdit/tensor.hpp"

namespace repdit {

// Forward process, training objective, and ancestral sampler. The denoiser is
// any callable predicting the injected noise from (x_t, t); conditioning is
// the caller's business (bind it into the closure).

using Denoiser = std::function<Tensor(const Tensor& x_t, size_t t)>;

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Tensor q_sample(const Tensor& x0, size_t t, const Tensor& eps,
                       const NoiseSchedule& schedule) {
    check_same_shape("q_sample", x0, eps);
    const double ab = schedule.alpha_bar(t);
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

// L = mean((eps - eps_hat)^2) over all elements, eps_hat = denoiser(x_t, t).
// Differentiable through the denoiser.
inline Tensor training_loss(const Denoiser& denoiser, const Tensor& x0, size_t t,
                            const Tensor& eps, const NoiseSchedule& schedule) {
    Tensor x_t = q_sample(x0, t, eps, schedule);
    Tensor eps_hat = denoiser(x_t, t);
    check_same_shape("training_loss", eps, eps_hat);
    Tensor diff = sub(eps_hat, eps);
    return mean_all(mul(diff, diff));
}

// One reverse step:
//   x_{t-1} = (1/sqrt(alpha_t)) (x_t - beta_t/sqrt(1-abar_t) eps_hat) + sqrt(beta_t) z
// z is forced to zero at t=1 and must be supplied for t > 1.
inline Tensor p_sample(const Denoiser& denoiser, const Tensor& x_t, size_t t,
                       const NoiseSchedule& schedule,
                       const std::optional<Tensor>& noise = std::nullopt) {
    schedule.check(t);
    NoGradGuard guard;
    Tensor eps_hat = denoiser(x_t, t);
    check_same_shape("p_sample", x_t, eps_hat);
    const double beta = schedule.beta(t);
    const double alpha = schedule.alpha(t);
    const double ab = schedule.alpha_bar(t);
    const double coef = beta / std::sqrt(1.0 - ab);
    Tensor mean = scale(sub(x_t, scale(eps_hat, coef)), 1.0 / std::sqrt(alpha));
    if (t == 1) return mean;
    if (!noise) fail("bad_argument", "p_sample: noise required for t > 1");
    check_same_shape("p_sample", x_t, *noise);
    return add(mean, scale(*noise, std::sqrt(beta)));
}

// Full trajectory: x_T from N(0, I) under the seeded generator, then T reverse
// steps. on_state, when set, sees (t, x_t) for t = T..1 before each step and
// (0, x_0) at the end; analysis capture hangs off the denoiser closure.
inline Tensor sample_loop(const Denoiser& denoiser, const Shape& shape,
                          const NoiseSchedule& schedule, uint64_t seed,
                          const std::function<void(size_t, const Tensor&)>& on_state = {}) {
    NoGradGuard guard;
    Rng rng(seed);
    Tensor x = Tensor::zeros(shape);
    rng.fill_normal(std::span<double>(x.values()));
    for (size_t t = schedule.T; t >= 1; --t) {
        if (on_state) on_state(t, x);
        std::optional<Tensor> z;
        if (t > 1) {
            Tensor n = Tensor::zeros(shape);
            rng.fill_normal(std::span<double>(n.values()));
            z = n;
        }
        x = p_sample(denoiser, x, t, schedule, z);
    }
    validate_finite(x, "sample_loop output");
    if (on_state) on_state(0, x);
    return x;
}

} // namespace repdit
