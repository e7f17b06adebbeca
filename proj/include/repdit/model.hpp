#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "repdit/cache.hpp"
#include "repdit/capture.hpp"
#include "repdit/error.hpp"
#include "repdit/layout.hpp"
#include "repdit/rng.hpp"
#include "repdit/tensor.hpp"

namespace repdit {

struct ModelConfig {
    size_t L = 8;       // transformer layers
    size_t d = 64;      // hidden width
    size_t H = 4;       // attention heads
    size_t F = 4;       // frames
    size_t G = 16;      // latent grid edge
    size_t patch = 2;   // patch edge
    size_t S = 4;       // text tokens
    size_t m = 4;       // cache group size
    size_t T = 50;      // diffusion steps
    size_t vocab = 8;   // prompt ids
    bool repvideo_enabled = true;
    CachePolicy cache_policy = CachePolicy::group_reset;
    double gamma_init = 4.0;
    std::optional<double> forced_gate;  // test hook: pins g at an exact constant

    size_t Gp() const { return G / patch; }
    size_t P() const { return Gp() * Gp(); }
    size_t N() const { return S + F * P(); }
    TokenLayout layout() const { return TokenLayout::make(S, F, Gp()); }

    void validate() const {
        if (L < 1) fail("config_invalid", "model.layers must be at least 1");
        if (d < 2 || d % 2 != 0) fail("config_invalid", "model.width must be even and >= 2");
        if (H < 1 || d % H != 0) fail("config_invalid", "model.heads must divide model.width");
        if (F < 1) fail("config_invalid", "model.frames must be at least 1");
        if (patch < 1 || G < patch || G % patch != 0)
            fail("config_invalid", "model.patch must divide model.grid");
        if (S < 1) fail("config_invalid", "model.text_tokens must be at least 1");
        if (m < 1 || m > L) fail("config_invalid", "model.group_size must satisfy 1 <= m <= layers");
        if (T < 1) fail("config_invalid", "schedule.steps must be at least 1");
        if (vocab < 1) fail("config_invalid", "model.vocab must be at least 1");
        if (forced_gate && !(*forced_gate >= 0.0 && *forced_gate <= 1.0))
            fail("config_invalid", "model.forced_gate must lie in [0,1]");
    }
};

// sin/cos embedding of an integer timestep, length d (d even)
inline std::vector<double> sinusoidal_embedding(size_t t, size_t d) {
    std::vector<double> e(d);
    const size_t half = d / 2;
    for (size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[2 * i] = std::sin(double(t) * freq);
        e[2 * i + 1] = std::cos(double(t) * freq);
    }
    return e;
}

// Joint text+video token transformer with the cross-layer feature cache.
// All parameters are registered in a fixed order under stable names; each is
// initialized from its own counter stream derived from (seed, name), so two
// models built from the same seed agree on every shared parameter regardless
// of unrelated configuration flags.
class RepDiT {
public:
    RepDiT(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        build_params(seed);
        build_perms();
    }

    const ModelConfig& config() const { return cfg_; }

    std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

    Tensor& param(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) fail("bad_argument", "unknown parameter '" + name + "'");
        return params_[it->second].second;
    }

    void zero_grads() {
        for (auto& [name, p] : params_) {
            p.grad();  // allocate on first use
            p.zero_grad();
        }
    }

    // text tokens for a prompt plus the timestep modulation vector
    std::pair<Tensor, Tensor> embed_condition(size_t prompt_id, size_t t) {
        if (prompt_id >= cfg_.vocab)
            fail("bad_argument", "unknown prompt id " + std::to_string(prompt_id) +
                                     " (vocab " + std::to_string(cfg_.vocab) + ")");
        if (t < 1 || t > cfg_.T)
            fail("bad_argument", "timestep " + std::to_string(t) + " outside 1.." +
                                     std::to_string(cfg_.T));
        Tensor text = slice_rows(param("embed.text"), prompt_id * cfg_.S, (prompt_id + 1) * cfg_.S);
        Tensor sinus = Tensor::from_data({1, cfg_.d}, sinusoidal_embedding(t, cfg_.d));
        Tensor h = gelu(add_rowvec(matmul(sinus, param("time.w1")), param("time.b1")));
        Tensor c = add_rowvec(matmul(h, param("time.w2")), param("time.b2"));
        return {text, c};
    }

    // latent [F, G, G] -> joint token sequence [N, d] with positions added
    Tensor embed_video(const Tensor& latent, const Tensor& text) {
        const Shape want{cfg_.F, cfg_.G, cfg_.G};
        if (latent.shape() != want)
            fail("shape_mismatch", "latent shape " + shape_str(latent.shape()) +
                                       " does not match config " + shape_str(want));
        const size_t pd = cfg_.patch * cfg_.patch;
        Tensor patches = permute_gather(latent, patchify_, {cfg_.F * cfg_.P(), pd});
        Tensor vid = add_rowvec(matmul(patches, param("embed.patch_w")), param("embed.patch_b"));
        Tensor joint = add(pad_rows(text, cfg_.N(), 0), pad_rows(vid, cfg_.N(), cfg_.S));
        return add(joint, param("embed.pos"));
    }

    // x [F, G, G] at step t -> predicted noise of the same shape
    Tensor forward(const Tensor& x, size_t t, size_t prompt_id, CaptureSink* sink = nullptr) {
        auto [text, cvec] = embed_condition(prompt_id, t);
        Tensor h = embed_video(x, text);
        const size_t d = cfg_.d;
        const size_t N = cfg_.N();

        FeatureCache cache(cfg_.m, cfg_.cache_policy);
        const bool capturing = sink && sink->active;
        if (sink) stamp(*sink);

        for (size_t l = 1; l <= cfg_.L; ++l) {
            const std::string pre = "layer" + std::to_string(l - 1) + ".";
            Tensor mvec = add_rowvec(matmul(cvec, param(pre + "mod_w")), param(pre + "mod_b"));
            Tensor scale1 = slice_cols(mvec, 0, d);
            Tensor shift1 = slice_cols(mvec, d, 2 * d);
            Tensor scale2 = slice_cols(mvec, 2 * d, 3 * d);
            Tensor shift2 = slice_cols(mvec, 3 * d, 4 * d);

            Tensor y = layer_norm(h, param(pre + "ln1_g"), param(pre + "ln1_b"));
            y = add_rowvec(mul_rowvec(y, add_scalar(scale1, 1.0)), shift1);
            Tensor q = add_rowvec(matmul(y, param(pre + "wq")), param(pre + "bq"));
            // no key bias: it shifts every score row by a constant, which the
            // softmax cancels, so the parameter could never train
            Tensor k = matmul(y, param(pre + "wk"));
            Tensor v = add_rowvec(matmul(y, param(pre + "wv")), param(pre + "bv"));
            AttentionCapture acap;
            const bool want_attn = capturing && sink->want_attention;
            Tensor a = multi_head_attention(q, k, v, cfg_.H, want_attn ? &acap : nullptr);
            h = add(h, add_rowvec(matmul(a, param(pre + "wo")), param(pre + "bo")));

            Tensor y2 = layer_norm(h, param(pre + "ln2_g"), param(pre + "ln2_b"));
            y2 = add_rowvec(mul_rowvec(y2, add_scalar(scale2, 1.0)), shift2);
            Tensor mid = gelu(add_rowvec(matmul(y2, param(pre + "mlp_w1")), param(pre + "mlp_b1")));
            h = add(h, add_rowvec(matmul(mid, param(pre + "mlp_w2")), param(pre + "mlp_b2")));

            if (want_attn) record_attention(*sink, l, acap);
            if (capturing && sink->want_features)
                sink->features.push_back({sink->step, l, "orig", N, d, h.values()});

            if (cfg_.repvideo_enabled) {
                cache.push(h, l);
                Tensor fmean = cache.mean();
                if (capturing && sink->want_mean)
                    sink->features.push_back({sink->step, l, "mean", N, d, fmean.values()});
                h = gate_combine(h, fmean, param(pre + "gamma"), cfg_.forced_gate);
            }
        }

        Tensor vid = slice_rows(h, cfg_.S, N);
        Tensor out_patches = add_rowvec(matmul(vid, param("head.w")), param("head.b"));
        return permute_gather(out_patches, unpatchify_, {cfg_.F, cfg_.G, cfg_.G});
    }

private:
    void stamp(CaptureSink& sink) const {
        sink.layout = cfg_.layout();
        sink.width = cfg_.d;
        sink.layers = cfg_.L;
        sink.heads = cfg_.H;
    }

    void record_attention(CaptureSink& sink, size_t l, const AttentionCapture& acap) const {
        const size_t n = acap.n;
        if (sink.per_head) {
            for (size_t h = 0; h < acap.heads; ++h)
                sink.attention.push_back({sink.step, l, h, n, acap.weights[h]});
        } else {
            std::vector<double> mean(n * n, 0.0);
            for (size_t h = 0; h < acap.heads; ++h)
                for (size_t i = 0; i < n * n; ++i) mean[i] += acap.weights[h][i];
            const double inv = 1.0 / double(acap.heads);
            for (double& w : mean) w *= inv;
            sink.attention.push_back(
                {sink.step, l, AttentionCaptureRecord::head_mean, n, std::move(mean)});
        }
    }

    Tensor add_param(const std::string& name, Shape shape,
                     const std::function<void(Rng&, std::vector<double>&)>& init,
                     uint64_t seed) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        Rng rng(Rng::derive(seed, Rng::hash_name(name)));
        init(rng, t.values());
        index_[name] = params_.size();
        params_.push_back({name, t});
        return t;
    }

    void build_params(uint64_t seed) {
        auto zeros = [](Rng&, std::vector<double>&) {};
        auto ones = [](Rng&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 1.0); };
        auto normal = [](double std_dev) {
            return [std_dev](Rng& rng, std::vector<double>& v) {
                for (double& x : v) x = rng.normal() * std_dev;
            };
        };
        auto constant = [](double c) {
            return [c](Rng&, std::vector<double>& v) { std::fill(v.begin(), v.end(), c); };
        };

        const size_t d = cfg_.d;
        const size_t pd = cfg_.patch * cfg_.patch;
        const double sd = 1.0 / std::sqrt(double(d));

        add_param("embed.text", {cfg_.vocab * cfg_.S, d}, normal(0.02), seed);
        add_param("embed.patch_w", {pd, d}, normal(1.0 / std::sqrt(double(pd))), seed);
        add_param("embed.patch_b", {d}, zeros, seed);
        add_param("embed.pos", {cfg_.N(), d}, normal(0.02), seed);
        add_param("time.w1", {d, d}, normal(sd), seed);
        add_param("time.b1", {d}, zeros, seed);
        add_param("time.w2", {d, d}, normal(sd), seed);
        add_param("time.b2", {d}, zeros, seed);
        for (size_t i = 0; i < cfg_.L; ++i) {
            const std::string pre = "layer" + std::to_string(i) + ".";
            add_param(pre + "ln1_g", {d}, ones, seed);
            add_param(pre + "ln1_b", {d}, zeros, seed);
            add_param(pre + "wq", {d, d}, normal(sd), seed);
            add_param(pre + "bq", {d}, zeros, seed);
            add_param(pre + "wk", {d, d}, normal(sd), seed);
            add_param(pre + "wv", {d, d}, normal(sd), seed);
            add_param(pre + "bv", {d}, zeros, seed);
            add_param(pre + "wo", {d, d}, normal(sd), seed);
            add_param(pre + "bo", {d}, zeros, seed);
            add_param(pre + "ln2_g", {d}, ones, seed);
            add_param(pre + "ln2_b", {d}, zeros, seed);
            add_param(pre + "mlp_w1", {d, 4 * d}, normal(sd), seed);
            add_param(pre + "mlp_b1", {4 * d}, zeros, seed);
            add_param(pre + "mlp_w2", {4 * d, d}, normal(1.0 / std::sqrt(double(4 * d))), seed);
            add_param(pre + "mlp_b2", {d}, zeros, seed);
            add_param(pre + "mod_w", {d, 4 * d}, normal(sd), seed);
            add_param(pre + "mod_b", {4 * d}, zeros, seed);
            // gamma exists for every layer in every mode so that checkpoints
            // and init streams line up between baseline and enhanced models
            add_param(pre + "gamma", {1}, constant(cfg_.gamma_init), seed);
        }
        add_param("head.w", {d, pd}, normal(sd), seed);
        add_param("head.b", {pd}, zeros, seed);
    }

    void build_perms() {
        const size_t G = cfg_.G, p = cfg_.patch, Gp = cfg_.Gp(), P = cfg_.P(), F = cfg_.F;
        auto fwd = std::make_shared<std::vector<size_t>>(F * G * G);
        auto inv = std::make_shared<std::vector<size_t>>(F * G * G);
        for (size_t f = 0; f < F; ++f)
            for (size_t pr = 0; pr < Gp; ++pr)
                for (size_t pc = 0; pc < Gp; ++pc)
                    for (size_t a = 0; a < p; ++a)
                        for (size_t b = 0; b < p; ++b) {
                            const size_t token = f * P + pr * Gp + pc;
                            const size_t out_idx = token * p * p + a * p + b;
                            const size_t src_idx = f * G * G + (pr * p + a) * G + (pc * p + b);
                            (*fwd)[out_idx] = src_idx;
                            (*inv)[src_idx] = out_idx;
                        }
        patchify_ = fwd;
        unpatchify_ = inv;
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::unordered_map<std::string, size_t> index_;
    std::shared_ptr<const std::vector<size_t>> patchify_;
    std::shared_ptr<const std::vector<size_t>> unpatchify_;
};

} // namespace repdit
