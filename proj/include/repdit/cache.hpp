#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "repdit/error.hpp"
#include "repdit/tensor.hpp"

namespace repdit {

// When the per-group feature buffer is cleared.
//   group_reset: cleared at each group boundary, occupancy ((l-1) mod m) + 1
//   cumulative:  never cleared, occupancy l
//   sliding:     keeps the most recent m entries, occupancy min(l, m)
enum class CachePolicy { group_reset, cumulative, sliding };

inline CachePolicy cache_policy_from_string(const std::string& s) {
    if (s == "group_reset") return CachePolicy::group_reset;
    if (s == "cumulative") return CachePolicy::cumulative;
    if (s == "sliding") return CachePolicy::sliding;
    fail("config_invalid", "unknown cache policy '" + s + "'");
}

inline std::string cache_policy_name(CachePolicy p) {
    switch (p) {
        case CachePolicy::group_reset: return "group_reset";
        case CachePolicy::cumulative: return "cumulative";
        case CachePolicy::sliding: return "sliding";
    }
    fail("bad_argument", "invalid cache policy value");
}

// Buffer of layer-output token sequences for the current group. Stored
// tensors stay on the recording tape, so gradients flow back into the pushed
// layers through cache_mean.
class FeatureCache {
public:
    FeatureCache(size_t m, CachePolicy policy) : m_(m), policy_(policy) {
        if (m < 1) fail("bad_argument", "cache group size must be at least 1");
    }

    // l is the 1-based layer index whose output f is being stored
    void push(const Tensor& f, size_t l) {
        if (l < 1) fail("bad_argument", "cache push with layer index 0");
        switch (policy_) {
            case CachePolicy::group_reset:
                if ((l - 1) % m_ == 0) buffer_.clear();
                buffer_.push_back(f);
                break;
            case CachePolicy::cumulative:
                buffer_.push_back(f);
                break;
            case CachePolicy::sliding:
                buffer_.push_back(f);
                if (buffer_.size() > m_) buffer_.pop_front();
                break;
        }
    }

    size_t occupancy() const { return buffer_.size(); }

    void clear() { buffer_.clear(); }

    // elementwise mean over the buffered sequences; buffer unchanged
    Tensor mean() const {
        if (buffer_.empty()) fail("bad_argument", "cache mean over an empty buffer");
        Tensor acc = buffer_[0];
        for (size_t i = 1; i < buffer_.size(); ++i) acc = add(acc, buffer_[i]);
        return scale(acc, 1.0 / double(buffer_.size()));
    }

private:
    size_t m_;
    CachePolicy policy_;
    std::deque<Tensor> buffer_;
};

// F_enh = g * F_orig + (1 - g) * F_mean with g = sigmoid(gamma).
// forced, when set, replaces g with an exact constant outside the graph; at
// 0 or 1 the other branch is multiplied by an exact 0 and contributes nothing
// to values or gradients.
inline Tensor gate_combine(const Tensor& f_orig, const Tensor& f_mean, const Tensor& gamma,
                           std::optional<double> forced = std::nullopt) {
    check_same_shape("gate_combine", f_orig, f_mean);
    if (forced) {
        const double g = *forced;
        if (!(g >= 0.0 && g <= 1.0))
            fail("bad_argument", "forced gate must lie in [0,1], got " + std::to_string(g));
        return add(scale(f_orig, g), scale(f_mean, 1.0 - g));
    }
    Tensor g = sigmoid(gamma);  // (0,1) for finite gamma
    Tensor one_minus_g = sub(Tensor::scalar(1.0), g);
    return add(mul_scalar_t(f_orig, g), mul_scalar_t(f_mean, one_minus_g));
}

} // namespace repdit
