#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "repdit/error.hpp"

namespace repdit {

// ---------------------------------------------------------------------------
// Dense row-major f64 tensors with reverse-mode autodiff.
//
// Every op returns a fresh tensor; when gradients are enabled and an input
// requires them, the op records its parents and a local backward rule on the
// result node. backward(loss) replays the recorded graph once in reverse
// topological order, accumulating (additively, so fan-out just works) into
// each requires-grad node, then frees the tape. No broadcasting beyond
// scalar operands; shape mismatches throw.
// ---------------------------------------------------------------------------

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;   // empty until backward touches it
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

namespace detail {

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

// RAII scope that disables tape recording (inference / finite differences)
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class Tensor {
public:
    Tensor() : node_(std::make_shared<TensorNode>()) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.node_->data.assign(numel(shape), 0.0);
        t.node_->shape = std::move(shape);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& v : t.node_->data) v = value;
        return t;
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    // validates extents and finiteness: NaN/Inf in a tensor is a contract violation
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        for (size_t e : shape)
            if (e == 0) fail("bad_argument", "tensor extents must be positive, got " + shape_str(shape));
        if (numel(shape) != data.size())
            fail("shape_mismatch", "tensor data length " + std::to_string(data.size()) +
                                       " does not match shape " + shape_str(shape));
        for (double v : data)
            if (!std::isfinite(v)) fail("non_finite", "tensor constructed with non-finite value");
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    size_t size() const { return node_->data.size(); }
    size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
    size_t cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    std::vector<double>& values() { return node_->data; }
    const std::vector<double>& values() const { return node_->data; }

    double item() const {
        if (size() != 1) fail("bad_argument", "item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<double>& grad() { return node_->ensure_grad(); }
    const std::vector<double>& grad() const { return node_->grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    // deep copy of values only (fresh leaf, no history)
    Tensor detached_copy(bool requires_grad = false) const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        t.node_->requires_grad = requires_grad;
        return t;
    }

    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail("shape_mismatch", std::string(op) + ": operand shapes differ, " +
                                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

namespace detail {

inline void record(Tensor& out, std::initializer_list<Tensor> inputs,
                   std::function<void(TensorNode&)> rule) {
    if (!grad_enabled_flag()) return;
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (!any) return;
    out.node()->requires_grad = true;
    for (const Tensor& t : inputs) out.node()->parents.push_back(t.node());
    out.node()->backprop = std::move(rule);
}

inline void axpy(std::vector<double>& y, const std::vector<double>& x, double a) {
    for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// --- matmul kernels; all accumulate into c ---------------------------------

// eight doubles treated as one lane group; the compiler lowers these to the
// machine's vector unit, which plain scalar loops were not reaching
typedef double V8 __attribute__((vector_size(64)));

inline V8 v8_load(const double* p) {
    V8 r;
    __builtin_memcpy(&r, p, sizeof r);
    return r;
}

inline void v8_store(double* p, V8 x) { __builtin_memcpy(p, &x, sizeof x); }

inline V8 v8_splat(double x) { return V8{x, x, x, x, x, x, x, x}; }

// c[M,N] += a[M,K] * b[K,N]
// 4x16 register tile: the block accumulates across the whole k loop before
// touching c, so each c element is loaded and stored once per call instead
// of once per k; per element the k summation order matches the plain loop
inline void mm_nn_acc(const double* a, const double* b, double* c,
                      size_t M, size_t K, size_t N) {
    size_t i = 0;
    for (; i + 4 <= M; i += 4) {
        const double* a0 = a + i * K;
        const double* a1 = a0 + K;
        const double* a2 = a1 + K;
        const double* a3 = a2 + K;
        double* c0 = c + i * N;
        double* c1 = c0 + N;
        double* c2 = c1 + N;
        double* c3 = c2 + N;
        size_t j = 0;
        for (; j + 16 <= N; j += 16) {
            V8 t0l = {}, t0h = {}, t1l = {}, t1h = {};
            V8 t2l = {}, t2h = {}, t3l = {}, t3h = {};
            for (size_t k = 0; k < K; ++k) {
                const double* bk = b + k * N + j;
                const V8 bl = v8_load(bk), bh = v8_load(bk + 8);
                V8 f = v8_splat(a0[k]);
                t0l += f * bl;
                t0h += f * bh;
                f = v8_splat(a1[k]);
                t1l += f * bl;
                t1h += f * bh;
                f = v8_splat(a2[k]);
                t2l += f * bl;
                t2h += f * bh;
                f = v8_splat(a3[k]);
                t3l += f * bl;
                t3h += f * bh;
            }
            v8_store(c0 + j, v8_load(c0 + j) + t0l);
            v8_store(c0 + j + 8, v8_load(c0 + j + 8) + t0h);
            v8_store(c1 + j, v8_load(c1 + j) + t1l);
            v8_store(c1 + j + 8, v8_load(c1 + j + 8) + t1h);
            v8_store(c2 + j, v8_load(c2 + j) + t2l);
            v8_store(c2 + j + 8, v8_load(c2 + j + 8) + t2h);
            v8_store(c3 + j, v8_load(c3 + j) + t3l);
            v8_store(c3 + j + 8, v8_load(c3 + j + 8) + t3h);
        }
        for (; j + 8 <= N; j += 8) {
            V8 t0 = {}, t1 = {}, t2 = {}, t3 = {};
            for (size_t k = 0; k < K; ++k) {
                const V8 bv = v8_load(b + k * N + j);
                t0 += v8_splat(a0[k]) * bv;
                t1 += v8_splat(a1[k]) * bv;
                t2 += v8_splat(a2[k]) * bv;
                t3 += v8_splat(a3[k]) * bv;
            }
            v8_store(c0 + j, v8_load(c0 + j) + t0);
            v8_store(c1 + j, v8_load(c1 + j) + t1);
            v8_store(c2 + j, v8_load(c2 + j) + t2);
            v8_store(c3 + j, v8_load(c3 + j) + t3);
        }
        for (; j < N; ++j) {
            double t0 = 0.0, t1 = 0.0, t2 = 0.0, t3 = 0.0;
            for (size_t k = 0; k < K; ++k) {
                const double bv = b[k * N + j];
                t0 += a0[k] * bv;
                t1 += a1[k] * bv;
                t2 += a2[k] * bv;
                t3 += a3[k] * bv;
            }
            c0[j] += t0;
            c1[j] += t1;
            c2[j] += t2;
            c3[j] += t3;
        }
    }
    for (; i < M; ++i) {
        const double* ai = a + i * K;
        double* ci = c + i * N;
        for (size_t k = 0; k < K; ++k) {
            const double aik = ai[k];
            const double* bk = b + k * N;
            for (size_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
        }
    }
}

// c[M,N] += a[M,K] * b[N,K]^T
// row-of-b dot products serialize on one accumulator and defeat the
// vectorizer, so transpose b into scratch once and reuse the nn kernel;
// the transpose is O(K*N) against O(M*K*N) multiply work
inline void mm_nt_acc(const double* a, const double* b, double* c,
                      size_t M, size_t K, size_t N) {
    static thread_local std::vector<double> bt;
    bt.resize(K * N);
    for (size_t k = 0; k < K; ++k) {
        double* row = bt.data() + k * N;
        for (size_t j = 0; j < N; ++j) row[j] = b[j * K + k];
    }
    mm_nn_acc(a, bt.data(), c, M, K, N);
}

// c[K,N] += a[M,K]^T * b[M,N]
// same trick as mm_nt_acc: transpose a into scratch once and reuse the
// tiled nn kernel
inline void mm_tn_acc(const double* a, const double* b, double* c,
                      size_t M, size_t K, size_t N) {
    static thread_local std::vector<double> at;
    at.resize(K * M);
    for (size_t k = 0; k < K; ++k) {
        double* row = at.data() + k * M;
        for (size_t i = 0; i < M; ++i) row[i] = a[i * K + k];
    }
    mm_nn_acc(at.data(), b, c, K, M, N);
}

// row-wise numerically stable softmax, len contiguous values per row
inline void softmax_row(const double* x, double* y, size_t len) {
    double mx = x[0];
    for (size_t i = 1; i < len; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (size_t i = 0; i < len; ++i) {
        y[i] = std::exp(x[i] - mx);
        sum += y[i];
    }
    const double inv = 1.0 / sum;
    for (size_t i = 0; i < len; ++i) y[i] *= inv;
}

struct AxisView {
    size_t outer, len, inner;
};

inline AxisView axis_view(const Shape& shape, size_t axis, const char* op) {
    if (axis >= shape.size())
        fail("bad_argument", std::string(op) + ": axis " + std::to_string(axis) +
                                 " out of range for shape " + shape_str(shape));
    AxisView v{1, shape[axis], 1};
    for (size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    for (size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

} // namespace detail

// --- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    detail::record(out, {a, b}, [an, bn](TensorNode& self) {
        if (self.grad.empty()) return;
        if (an->requires_grad) detail::axpy(an->ensure_grad(), self.grad, 1.0);
        if (bn->requires_grad) detail::axpy(bn->ensure_grad(), self.grad, 1.0);
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    detail::record(out, {a, b}, [an, bn](TensorNode& self) {
        if (self.grad.empty()) return;
        if (an->requires_grad) detail::axpy(an->ensure_grad(), self.grad, 1.0);
        if (bn->requires_grad) detail::axpy(bn->ensure_grad(), self.grad, -1.0);
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    detail::record(out, {a, b}, [an, bn](TensorNode& self) {
        if (self.grad.empty()) return;
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
    auto an = a.node();
    detail::record(out, {a}, [an, c](TensorNode& self) {
        if (self.grad.empty()) return;
        detail::axpy(an->ensure_grad(), self.grad, c);
    });
    return out;
}

inline Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
    auto an = a.node();
    detail::record(out, {a}, [an](TensorNode& self) {
        if (self.grad.empty()) return;
        detail::axpy(an->ensure_grad(), self.grad, 1.0);
    });
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
    auto an = a.node(), on = out.node();
    detail::record(out, {a}, [an, on](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const double s = on->data[i];
            g[i] += self.grad[i] * s * (1.0 - s);
        }
    });
    return out;
}

// tanh-approximation GELU; 0.7978... = sqrt(2/pi). The forward tanh values
// are kept for the backward rule so the mlp pays for each tanh once.
inline Tensor gelu(const Tensor& a) {
    const double c = 0.7978845608028654;
    Tensor out = Tensor::zeros(a.shape());
    auto tanhs = std::make_shared<std::vector<double>>(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        const double x = a.data()[i];
        const double t = std::tanh(c * (x + 0.044715 * x * x * x));
        (*tanhs)[i] = t;
        out.data()[i] = 0.5 * x * (1.0 + t);
    }
    auto an = a.node();
    detail::record(out, {a}, [an, tanhs](TensorNode& self) {
        if (self.grad.empty()) return;
        const double c = 0.7978845608028654;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const double x = an->data[i];
            const double t = (*tanhs)[i];
            const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
            g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
        }
    });
    return out;
}

// x * s with s a one-element tensor; gradient reaches both operands
inline Tensor mul_scalar_t(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) fail("shape_mismatch", "mul_scalar_t: scalar operand has " +
                                                  std::to_string(s.size()) + " elements");
    const double sv = s.data()[0];
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * sv;
    auto xn = x.node(), sn = s.node();
    detail::record(out, {x, s}, [xn, sn](TensorNode& self) {
        if (self.grad.empty()) return;
        const double sv = sn->data[0];
        if (xn->requires_grad) detail::axpy(xn->ensure_grad(), self.grad, sv);
        if (sn->requires_grad) {
            double acc = 0.0;
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->data[i];
            sn->ensure_grad()[0] += acc;
        }
    });
    return out;
}

// custom elementwise op from (f, df); df receives (x, f(x)).
// Mostly a test hook: lets a caller wire a deliberately wrong rule.
inline Tensor map_elementwise(const Tensor& a, std::function<double(double)> f,
                              std::function<double(double, double)> df) {
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
    auto an = a.node(), on = out.node();
    detail::record(out, {a}, [an, on, df = std::move(df)](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * df(an->data[i], on->data[i]);
    });
    return out;
}

// --- matmul ----------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        fail("shape_mismatch", "matmul: expects 2-D operands, got " + shape_str(a.shape()) +
                                   " and " + shape_str(b.shape()));
    const size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    if (b.shape()[0] != K)
        fail("shape_mismatch", "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                   " x " + shape_str(b.shape()));
    Tensor out = Tensor::zeros({M, N});
    detail::mm_nn_acc(a.data(), b.data(), out.data(), M, K, N);
    auto an = a.node(), bn = b.node();
    detail::record(out, {a, b}, [an, bn, M, K, N](TensorNode& self) {
        if (self.grad.empty()) return;
        if (an->requires_grad)  // dA += dC * B^T
            detail::mm_nt_acc(self.grad.data(), bn->data.data(), an->ensure_grad().data(), M, N, K);
        if (bn->requires_grad)  // dB += A^T * dC
            detail::mm_tn_acc(an->data.data(), self.grad.data(), bn->ensure_grad().data(), M, K, N);
    });
    return out;
}

// --- softmax / layer_norm / reductions -------------------------------------

inline Tensor softmax(const Tensor& x, size_t axis) {
    const auto v = detail::axis_view(x.shape(), axis, "softmax");
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> buf(v.len);
    for (size_t o = 0; o < v.outer; ++o) {
        for (size_t in = 0; in < v.inner; ++in) {
            const size_t base = o * v.len * v.inner + in;
            for (size_t i = 0; i < v.len; ++i) buf[i] = x.data()[base + i * v.inner];
            detail::softmax_row(buf.data(), buf.data(), v.len);
            for (size_t i = 0; i < v.len; ++i) out.data()[base + i * v.inner] = buf[i];
        }
    }
    auto xn = x.node(), on = out.node();
    detail::record(out, {x}, [xn, on, v](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = xn->ensure_grad();
        for (size_t o = 0; o < v.outer; ++o) {
            for (size_t in = 0; in < v.inner; ++in) {
                const size_t base = o * v.len * v.inner + in;
                double dot = 0.0;
                for (size_t i = 0; i < v.len; ++i) {
                    const size_t idx = base + i * v.inner;
                    dot += self.grad[idx] * on->data[idx];
                }
                for (size_t i = 0; i < v.len; ++i) {
                    const size_t idx = base + i * v.inner;
                    g[idx] += on->data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
    return out;
}

// normalizes over the last axis, then affine: y = xhat * gain + bias
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.shape().empty()) fail("bad_argument", "layer_norm: scalar input");
    if (eps <= 0) fail("bad_argument", "layer_norm: eps must be positive");
    const size_t d = x.shape().back();
    if (gain.size() != d || bias.size() != d)
        fail("shape_mismatch", "layer_norm: gain/bias size must match last axis " +
                                   std::to_string(d));
    const size_t rows = x.size() / d;
    Tensor out = Tensor::zeros(x.shape());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    auto mean = std::make_shared<std::vector<double>>(rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* xi = x.data() + r * d;
        double m = 0.0;
        for (size_t i = 0; i < d; ++i) m += xi[i];
        m /= double(d);
        double var = 0.0;
        for (size_t i = 0; i < d; ++i) var += (xi[i] - m) * (xi[i] - m);
        var /= double(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mean)[r] = m;
        (*rstd)[r] = rs;
        double* yi = out.data() + r * d;
        for (size_t i = 0; i < d; ++i)
            yi[i] = (xi[i] - m) * rs * gain.data()[i] + bias.data()[i];
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    detail::record(out, {x, gain, bias}, [xn, gn, bn, rstd, mean, rows, d](TensorNode& self) {
        if (self.grad.empty()) return;
        std::vector<double> xhat(d), gh(d);
        for (size_t r = 0; r < rows; ++r) {
            const double* xi = xn->data.data() + r * d;
            const double* dy = self.grad.data() + r * d;
            const double m = (*mean)[r], rs = (*rstd)[r];
            for (size_t i = 0; i < d; ++i) xhat[i] = (xi[i] - m) * rs;
            if (gn->requires_grad) {
                auto& g = gn->ensure_grad();
                for (size_t i = 0; i < d; ++i) g[i] += dy[i] * xhat[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (size_t i = 0; i < d; ++i) g[i] += dy[i];
            }
            if (xn->requires_grad) {
                double mean_gh = 0.0, mean_ghx = 0.0;
                for (size_t i = 0; i < d; ++i) {
                    gh[i] = dy[i] * gn->data[i];
                    mean_gh += gh[i];
                    mean_ghx += gh[i] * xhat[i];
                }
                mean_gh /= double(d);
                mean_ghx /= double(d);
                auto& g = xn->ensure_grad();
                double* gx = g.data() + r * d;
                for (size_t i = 0; i < d; ++i)
                    gx[i] += rs * (gh[i] - mean_gh - xhat[i] * mean_ghx);
            }
        }
    });
    return out;
}

inline Tensor reduce_mean(const Tensor& x, size_t axis) {
    const auto v = detail::axis_view(x.shape(), axis, "reduce_mean");
    Shape out_shape;
    for (size_t i = 0; i < x.shape().size(); ++i)
        if (i != axis) out_shape.push_back(x.shape()[i]);
    if (out_shape.empty()) out_shape = {1};
    Tensor out = Tensor::zeros(out_shape);
    const double inv = 1.0 / double(v.len);
    for (size_t o = 0; o < v.outer; ++o) {
        for (size_t in = 0; in < v.inner; ++in) {
            double acc = 0.0;
            for (size_t i = 0; i < v.len; ++i)
                acc += x.data()[o * v.len * v.inner + i * v.inner + in];
            out.data()[o * v.inner + in] = acc * inv;
        }
    }
    auto xn = x.node();
    detail::record(out, {x}, [xn, v, inv](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = xn->ensure_grad();
        for (size_t o = 0; o < v.outer; ++o)
            for (size_t i = 0; i < v.len; ++i)
                for (size_t in = 0; in < v.inner; ++in)
                    g[o * v.len * v.inner + i * v.inner + in] +=
                        self.grad[o * v.inner + in] * inv;
    });
    return out;
}

// mean over every element, as a scalar
inline Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::zeros({1});
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
    const double inv = 1.0 / double(x.size());
    out.data()[0] = acc * inv;
    auto xn = x.node();
    detail::record(out, {x}, [xn, inv](TensorNode& self) {
        if (self.grad.empty()) return;
        detail::axpy(xn->ensure_grad(), std::vector<double>(xn->data.size(), self.grad[0] * inv), 1.0);
    });
    return out;
}

// --- structural ops --------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        fail("shape_mismatch", "reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
    Tensor out = Tensor::zeros(std::move(new_shape));
    std::copy(x.data(), x.data() + x.size(), out.data());
    auto xn = x.node();
    detail::record(out, {x}, [xn](TensorNode& self) {
        if (self.grad.empty()) return;
        detail::axpy(xn->ensure_grad(), self.grad, 1.0);
    });
    return out;
}

// rows [r0, r1) of a 2-D tensor
inline Tensor slice_rows(const Tensor& x, size_t r0, size_t r1) {
    if (x.shape().size() != 2 || r0 >= r1 || r1 > x.shape()[0])
        fail("bad_argument", "slice_rows: invalid range [" + std::to_string(r0) + "," +
                                 std::to_string(r1) + ") for " + shape_str(x.shape()));
    const size_t c = x.shape()[1];
    Tensor out = Tensor::zeros({r1 - r0, c});
    std::copy(x.data() + r0 * c, x.data() + r1 * c, out.data());
    auto xn = x.node();
    detail::record(out, {x}, [xn, r0, c](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) g[r0 * c + i] += self.grad[i];
    });
    return out;
}

// cols [c0, c1) of a 2-D tensor
inline Tensor slice_cols(const Tensor& x, size_t c0, size_t c1) {
    if (x.shape().size() != 2 || c0 >= c1 || c1 > x.shape()[1])
        fail("bad_argument", "slice_cols: invalid range [" + std::to_string(c0) + "," +
                                 std::to_string(c1) + ") for " + shape_str(x.shape()));
    const size_t r = x.shape()[0], c = x.shape()[1], w = c1 - c0;
    Tensor out = Tensor::zeros({r, w});
    for (size_t i = 0; i < r; ++i)
        std::copy(x.data() + i * c + c0, x.data() + i * c + c1, out.data() + i * w);
    auto xn = x.node();
    detail::record(out, {x}, [xn, c0, c, w, r](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = xn->ensure_grad();
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < w; ++j) g[i * c + c0 + j] += self.grad[i * w + j];
    });
    return out;
}

// embeds x as rows [offset, offset+rows) of a zero [total_rows, c] tensor
inline Tensor pad_rows(const Tensor& x, size_t total_rows, size_t offset) {
    if (x.shape().size() != 2 || offset + x.shape()[0] > total_rows)
        fail("bad_argument", "pad_rows: rows " + std::to_string(x.rows()) + " at offset " +
                                 std::to_string(offset) + " exceed " + std::to_string(total_rows));
    const size_t c = x.shape()[1];
    Tensor out = Tensor::zeros({total_rows, c});
    std::copy(x.data(), x.data() + x.size(), out.data() + offset * c);
    auto xn = x.node();
    detail::record(out, {x}, [xn, offset, c](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = xn->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset * c + i];
    });
    return out;
}

inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.shape().size() != 2 || v.size() != x.shape()[1])
        fail("shape_mismatch", "add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(v.shape()));
    const size_t r = x.shape()[0], c = x.shape()[1];
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] + v.data()[j];
    auto xn = x.node(), vn = v.node();
    detail::record(out, {x, v}, [xn, vn, r, c](TensorNode& self) {
        if (self.grad.empty()) return;
        if (xn->requires_grad) detail::axpy(xn->ensure_grad(), self.grad, 1.0);
        if (vn->requires_grad) {
            auto& g = vn->ensure_grad();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
    });
    return out;
}

inline Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    if (x.shape().size() != 2 || v.size() != x.shape()[1])
        fail("shape_mismatch", "mul_rowvec: " + shape_str(x.shape()) + " * " + shape_str(v.shape()));
    const size_t r = x.shape()[0], c = x.shape()[1];
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] * v.data()[j];
    auto xn = x.node(), vn = v.node();
    detail::record(out, {x, v}, [xn, vn, r, c](TensorNode& self) {
        if (self.grad.empty()) return;
        if (xn->requires_grad) {
            auto& g = xn->ensure_grad();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * vn->data[j];
        }
        if (vn->requires_grad) {
            auto& g = vn->ensure_grad();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xn->data[i * c + j];
        }
    });
    return out;
}

// out[i] = x[perm[i]]; perm must be a bijection over the element index space
inline Tensor permute_gather(const Tensor& x, std::shared_ptr<const std::vector<size_t>> perm,
                             Shape out_shape) {
    if (numel(out_shape) != x.size() || perm->size() != x.size())
        fail("shape_mismatch", "permute_gather: size mismatch");
    Tensor out = Tensor::zeros(std::move(out_shape));
    for (size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[(*perm)[i]];
    auto xn = x.node();
    detail::record(out, {x}, [xn, perm](TensorNode& self) {
        if (self.grad.empty()) return;
        auto& g = xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) g[(*perm)[i]] += self.grad[i];
    });
    return out;
}

// stacks k same-shape tensors into [k, ...shape]
inline Tensor stack0(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail("bad_argument", "stack0: empty input");
    const Shape& s = parts[0].shape();
    for (const auto& p : parts) check_same_shape("stack0", parts[0], p);
    Shape out_shape;
    out_shape.push_back(parts.size());
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    Tensor out = Tensor::zeros(std::move(out_shape));
    const size_t chunk = parts[0].size();
    for (size_t k = 0; k < parts.size(); ++k)
        std::copy(parts[k].data(), parts[k].data() + chunk, out.data() + k * chunk);

    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parts) any = any || p.requires_grad();
        if (any) {
            out.node()->requires_grad = true;
            for (const auto& p : parts) out.node()->parents.push_back(p.node());
            out.node()->backprop = [chunk](TensorNode& self) {
                if (self.grad.empty()) return;
                for (size_t k = 0; k < self.parents.size(); ++k) {
                    auto& p = self.parents[k];
                    if (!p->requires_grad) continue;
                    auto& g = p->ensure_grad();
                    for (size_t i = 0; i < chunk; ++i) g[i] += self.grad[k * chunk + i];
                }
            };
        }
    }
    return out;
}

// --- fused multi-head attention --------------------------------------------

// Softmax row weights of one layer's attention, per head (values only).
struct AttentionCapture {
    size_t heads = 0;
    size_t n = 0;
    std::vector<std::vector<double>> weights;  // [heads][n*n], query-major
};

// q, k, v: [N, d]; full (unmasked) attention over all N tokens.
// Scores are scaled by 1/sqrt(d/heads). Records a single fused node.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   size_t heads, AttentionCapture* capture = nullptr) {
    check_same_shape("attention", q, k);
    check_same_shape("attention", q, v);
    if (q.shape().size() != 2) fail("shape_mismatch", "attention: expects [N, d] inputs");
    const size_t N = q.shape()[0], d = q.shape()[1];
    if (heads == 0 || d % heads != 0)
        fail("bad_argument", "attention: head count " + std::to_string(heads) +
                                 " must divide width " + std::to_string(d));
    const size_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(double(dh));

    Tensor out = Tensor::zeros({N, d});
    // per-head softmax weights, kept for the backward pass
    auto attn = std::make_shared<std::vector<std::vector<double>>>(heads);
    if (capture) {
        capture->heads = heads;
        capture->n = N;
        capture->weights.assign(heads, {});
    }

    std::vector<double> qh(N * dh), kh(N * dh), vh(N * dh), sh(N * N), oh(N * dh);
    for (size_t h = 0; h < heads; ++h) {
        for (size_t i = 0; i < N; ++i)
            for (size_t j = 0; j < dh; ++j) {
                qh[i * dh + j] = q.data()[i * d + h * dh + j];
                kh[i * dh + j] = k.data()[i * d + h * dh + j];
                vh[i * dh + j] = v.data()[i * d + h * dh + j];
            }
        std::fill(sh.begin(), sh.end(), 0.0);
        detail::mm_nt_acc(qh.data(), kh.data(), sh.data(), N, dh, N);
        for (double& s : sh) s *= sc;
        for (size_t i = 0; i < N; ++i)
            detail::softmax_row(sh.data() + i * N, sh.data() + i * N, N);
        (*attn)[h] = sh;
        if (capture) capture->weights[h] = sh;
        std::fill(oh.begin(), oh.end(), 0.0);
        detail::mm_nn_acc(sh.data(), vh.data(), oh.data(), N, N, dh);
        for (size_t i = 0; i < N; ++i)
            for (size_t j = 0; j < dh; ++j) out.data()[i * d + h * dh + j] = oh[i * dh + j];
    }

    auto qn = q.node(), kn = k.node(), vn = v.node();
    detail::record(out, {q, k, v}, [qn, kn, vn, attn, N, d, dh, heads, sc](TensorNode& self) {
        if (self.grad.empty()) return;
        std::vector<double> qh(N * dh), kh(N * dh), vh(N * dh), doh(N * dh);
        std::vector<double> dvh(N * dh), dqh(N * dh), dkh(N * dh);
        std::vector<double> da(N * N), ds(N * N);
        auto& gq = qn->ensure_grad();
        auto& gk = kn->ensure_grad();
        auto& gv = vn->ensure_grad();
        for (size_t h = 0; h < heads; ++h) {
            const std::vector<double>& a = (*attn)[h];
            for (size_t i = 0; i < N; ++i)
                for (size_t j = 0; j < dh; ++j) {
                    qh[i * dh + j] = qn->data[i * d + h * dh + j];
                    kh[i * dh + j] = kn->data[i * d + h * dh + j];
                    vh[i * dh + j] = vn->data[i * d + h * dh + j];
                    doh[i * dh + j] = self.grad[i * d + h * dh + j];
                }
            // dV = A^T dO
            std::fill(dvh.begin(), dvh.end(), 0.0);
            detail::mm_tn_acc(a.data(), doh.data(), dvh.data(), N, N, dh);
            // dA = dO V^T
            std::fill(da.begin(), da.end(), 0.0);
            detail::mm_nt_acc(doh.data(), vh.data(), da.data(), N, dh, N);
            // softmax backward per row
            for (size_t i = 0; i < N; ++i) {
                double dot = 0.0;
                for (size_t j = 0; j < N; ++j) dot += da[i * N + j] * a[i * N + j];
                for (size_t j = 0; j < N; ++j)
                    ds[i * N + j] = a[i * N + j] * (da[i * N + j] - dot);
            }
            // dQ = sc * dS K ; dK = sc * dS^T Q
            std::fill(dqh.begin(), dqh.end(), 0.0);
            detail::mm_nn_acc(ds.data(), kh.data(), dqh.data(), N, N, dh);
            std::fill(dkh.begin(), dkh.end(), 0.0);
            detail::mm_tn_acc(ds.data(), qh.data(), dkh.data(), N, N, dh);
            for (size_t i = 0; i < N; ++i)
                for (size_t j = 0; j < dh; ++j) {
                    gq[i * d + h * dh + j] += sc * dqh[i * dh + j];
                    gk[i * d + h * dh + j] += sc * dkh[i * dh + j];
                    gv[i * d + h * dh + j] += dvh[i * dh + j];
                }
        }
    });
    return out;
}

// --- backward --------------------------------------------------------------

// Recorded graph in topological order (parents before consumers).
struct Graph {
    std::vector<TensorNode*> order;

    static Graph from(const Tensor& root) {
        Graph g;
        std::unordered_set<TensorNode*> seen;
        // iterative post-order DFS
        std::vector<std::pair<TensorNode*, size_t>> stack{{root.node().get(), 0}};
        seen.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                TensorNode* p = node->parents[next++].get();
                if (seen.insert(p).second) stack.push_back({p, 0});
            } else {
                g.order.push_back(node);
                stack.pop_back();
            }
        }
        return g;
    }
};

// Populates grad on every requires-grad node reachable from loss, then frees
// the tape (parents and backward rules) while keeping values and grads.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        fail("bad_argument", "backward: loss must be a scalar, got " + shape_str(loss.shape()));
    Graph g = Graph::from(loss);
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop) n->backprop(*n);
    }
    for (TensorNode* n : g.order) {
        n->parents.clear();
        n->backprop = nullptr;
    }
}

inline void validate_finite(const Tensor& t, const std::string& context) {
    for (size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t.data()[i]))
            fail("non_finite", context + ": non-finite value at flat index " + std::to_string(i));
}

} // namespace repdit
