#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "repdit/checkpoint.hpp"
#include "repdit/config.hpp"
#include "repdit/dataset.hpp"
#include "repdit/diffusion.hpp"
#include "repdit/model.hpp"
#include "repdit/optimizer.hpp"
#include "repdit/rng.hpp"

namespace repdit {

struct TrainLogRow {
    size_t step = 0;
    double loss = 0.0;      // batch-mean objective at this step
    double smoothed = 0.0;  // trailing mean over the last smooth_window steps
};

// Training state bundle. Every random draw is taken from a counter stream
// derived from (train seed, step, sample), so a run resumed from a checkpoint
// replays the exact trajectory of an uninterrupted one.
class Trainer {
public:
    static constexpr size_t smooth_window = 50;

    Trainer(RepDiT& model, Adam& opt, const RunConfig& cfg, const NoiseSchedule& schedule,
            const std::vector<SyntheticClip>& data)
        : model_(model), opt_(opt), cfg_(cfg), schedule_(schedule), data_(data) {}

    std::deque<double>& window() { return window_; }

    // runs steps (from, to]; on_checkpoint fires after the optimizer update
    std::vector<TrainLogRow> run(size_t from, size_t to,
                                 const std::function<void(size_t)>& on_checkpoint = {}) {
        std::vector<TrainLogRow> log;
        const size_t B = cfg_.train.batch;
        const size_t T = schedule_.T;
        for (size_t step = from + 1; step <= to; ++step) {
            model_.zero_grads();
            double batch_loss = 0.0;
            for (size_t s = 0; s < B; ++s) {
                Rng rng(Rng::derive(Rng::derive(cfg_.train.seed, step), s));
                const SyntheticClip& clip = data_[rng.below(data_.size())];
                const size_t t = rng.below(T) + 1;
                Tensor eps = Tensor::zeros(clip.video.shape());
                rng.fill_normal(std::span<double>(eps.values()));

                Denoiser denoiser = [this, &clip](const Tensor& x, size_t tt) {
                    return model_.forward(x, tt, clip.prompt_id);
                };
                Tensor loss = training_loss(denoiser, clip.video, t, eps, schedule_);
                batch_loss += loss.item() / double(B);
                backward(scale(loss, 1.0 / double(B)));
            }
            if (!std::isfinite(batch_loss))
                fail("non_finite", "training loss diverged at step " + std::to_string(step));
            opt_.step();

            window_.push_back(batch_loss);
            if (window_.size() > smooth_window) window_.pop_front();
            double smoothed = 0.0;
            for (double v : window_) smoothed += v;
            smoothed /= double(window_.size());
            log.push_back({step, batch_loss, smoothed});

            if (on_checkpoint && cfg_.train.checkpoint_every > 0 &&
                step % cfg_.train.checkpoint_every == 0 && step != to)
                on_checkpoint(step);
        }
        return log;
    }

private:
    RepDiT& model_;
    Adam& opt_;
    const RunConfig& cfg_;
    const NoiseSchedule& schedule_;
    const std::vector<SyntheticClip>& data_;
    std::deque<double> window_;
};

// --- checkpoint wiring ------------------------------------------------------
// A full training checkpoint holds the model parameters followed by optimizer
// state: opt.m.<name>, opt.v.<name>, opt.step [1], and opt.loss_window [1 +
// smooth_window] storing the window length then its values (zero padded).

inline std::vector<std::pair<std::string, Tensor>> training_state_entries(
    RepDiT& model, Adam& opt, const std::deque<double>& window) {
    std::vector<std::pair<std::string, Tensor>> entries;
    for (auto& [name, p] : model.params()) entries.push_back({name, p});
    for (size_t i = 0; i < model.params().size(); ++i) {
        const std::string& name = model.params()[i].first;
        const Shape& shape = model.params()[i].second.shape();
        entries.push_back({"opt.m." + name, Tensor::from_data(shape, opt.moment1(i))});
        entries.push_back({"opt.v." + name, Tensor::from_data(shape, opt.moment2(i))});
    }
    entries.push_back({"opt.step", Tensor::scalar(double(opt.updates()))});
    std::vector<double> w(1 + Trainer::smooth_window, 0.0);
    w[0] = double(window.size());
    for (size_t i = 0; i < window.size(); ++i) w[1 + i] = window[i];
    entries.push_back({"opt.loss_window", Tensor::from_data({1 + Trainer::smooth_window}, w)});
    return entries;
}

// Restores parameters and optimizer state; returns the global step count the
// checkpoint was taken at. Missing or mis-shaped entries are contract errors.
inline size_t restore_training_state(RepDiT& model, Adam& opt, std::deque<double>& window,
                                     const Checkpoint& ckpt) {
    for (size_t i = 0; i < model.params().size(); ++i) {
        const std::string& name = model.params()[i].first;
        Tensor& p = model.params()[i].second;
        const Tensor* saved = ckpt.find(name);
        if (!saved) fail("checkpoint_shape", "checkpoint missing parameter '" + name + "'");
        if (saved->shape() != p.shape())
            fail("checkpoint_shape", "parameter '" + name + "' has shape " +
                                         shape_str(saved->shape()) + ", expected " +
                                         shape_str(p.shape()));
        p.values() = saved->values();

        const Tensor* m = ckpt.find("opt.m." + name);
        const Tensor* v = ckpt.find("opt.v." + name);
        if (!m || !v || m->shape() != p.shape() || v->shape() != p.shape())
            fail("checkpoint_shape", "optimizer state for '" + name + "' missing or mis-shaped");
        opt.moment1(i) = m->values();
        opt.moment2(i) = v->values();
    }
    const Tensor* stept = ckpt.find("opt.step");
    if (!stept || stept->size() != 1)
        fail("checkpoint_shape", "checkpoint missing opt.step");
    opt.set_updates(size_t(stept->values()[0]));

    window.clear();
    const Tensor* wt = ckpt.find("opt.loss_window");
    if (!wt || wt->size() != 1 + Trainer::smooth_window)
        fail("checkpoint_shape", "checkpoint missing opt.loss_window");
    const size_t wlen = size_t(wt->values()[0]);
    if (wlen > Trainer::smooth_window)
        fail("checkpoint_shape", "opt.loss_window length out of range");
    for (size_t i = 0; i < wlen; ++i) window.push_back(wt->values()[1 + i]);
    return opt.updates();
}

// Loads only the model parameters (for sampling/analysis; optimizer entries
// in the checkpoint are ignored).
inline void restore_params(RepDiT& model, const Checkpoint& ckpt) {
    for (auto& [name, p] : model.params()) {
        const Tensor* saved = ckpt.find(name);
        if (!saved) fail("checkpoint_shape", "checkpoint missing parameter '" + name + "'");
        if (saved->shape() != p.shape())
            fail("checkpoint_shape", "parameter '" + name + "' has shape " +
                                         shape_str(saved->shape()) + ", expected " +
                                         shape_str(p.shape()));
        p.values() = saved->values();
    }
}

} // namespace repdit
