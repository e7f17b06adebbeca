#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "repdit/tensor.hpp"

namespace repdit {

// Finite-difference gradient oracle: central differences on a scalar-valued
// function, compared element by element against reverse-mode results.

struct GradCheckReport {
    double max_rel_error = 0.0;
    size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

inline double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

// f must treat x as its only variable; x is restored on exit.
// The analytic gradient is recomputed by the caller beforehand (x.grad()).
inline GradCheckReport finite_difference(const std::function<double(const Tensor&)>& f,
                                         Tensor& x, const std::vector<double>& analytic,
                                         double h = 1e-4) {
    GradCheckReport report;
    NoGradGuard guard;
    for (size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double up = f(x);
        x.data()[i] = saved - h;
        const double down = f(x);
        x.data()[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = rel_error(analytic[i], numeric);
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    return report;
}

// Convenience wrapper: runs backward once for the analytic gradient, then the
// finite-difference sweep. Returns the worst relative error over all inputs.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                                  double h = 1e-4) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor loss = f(x);
    backward(loss);
    std::vector<double> analytic = x.grad();
    auto scalar_f = [&f](const Tensor& t) { return f(t).item(); };
    return finite_difference(scalar_f, x, analytic, h);
}

// Same idea for a named set of parameters feeding a shared loss closure. The
// loss is re-evaluated after every nudge, so it must read the parameters by
// reference each call.
struct ParamCheck {
    std::string name;
    GradCheckReport report;
};

inline std::vector<ParamCheck> grad_check_params(
    const std::function<Tensor()>& loss_fn,
    std::vector<std::pair<std::string, Tensor>>& params, double h = 1e-4) {
    for (auto& [name, p] : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<ParamCheck> out;
    auto scalar_f = [&loss_fn](const Tensor&) { return loss_fn().item(); };
    for (auto& [name, p] : params) {
        std::vector<double> analytic(p.size(), 0.0);
        if (p.has_grad()) analytic = p.grad();
        ParamCheck pc;
        pc.name = name;
        pc.report = finite_difference(scalar_f, p, analytic, h);
        out.push_back(std::move(pc));
    }
    return out;
}

} // namespace repdit
