#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "repdit/error.hpp"
#include "repdit/tensor.hpp"

namespace repdit {

// Adam with bias correction over a fixed, ordered parameter list. Moment
// buffers live here (plain values, not graph tensors) and are what the
// checkpoint persists as opt.m.* / opt.v.* entries.
class Adam {
public:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    Adam(std::vector<std::pair<std::string, Tensor>>& params, double lr)
        : params_(params), lr_(lr) {
        if (!(lr > 0.0)) fail("bad_argument", "learning rate must be positive");
        for (auto& [name, p] : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, double(t_));
        const double bc2 = 1.0 - std::pow(beta2, double(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i].second;
            const std::vector<double>& g = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            double* x = p.data();
            for (size_t j = 0; j < p.size(); ++j) {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                x[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
            }
        }
    }

    size_t updates() const { return t_; }
    void set_updates(size_t t) { t_ = t; }

    std::vector<double>& moment1(size_t i) { return m_[i]; }
    std::vector<double>& moment2(size_t i) { return v_[i]; }

private:
    std::vector<std::pair<std::string, Tensor>>& params_;
    double lr_;
    size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace repdit
