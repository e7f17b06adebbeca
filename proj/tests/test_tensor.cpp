#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "repdit/cache.hpp"
#include "repdit/grad_check.hpp"
#include "repdit/rng.hpp"
#include "repdit/tensor.hpp"

using namespace repdit;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> data(numel(shape));
    for (double& v : data) v = rng.normal() * scale;
    return Tensor::from_data(std::move(shape), std::move(data));
}

// independent triple-loop reference, plain i-j-k order
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  size_t M, size_t K, size_t N) {
    std::vector<double> c(M * N, 0.0);
    for (size_t i = 0; i < M; ++i)
        for (size_t j = 0; j < N; ++j)
            for (size_t k = 0; k < K; ++k) c[i * N + j] += a[i * K + k] * b[k * N + j];
    return c;
}

} // namespace

// --- elementwise ------------------------------------------------------------

TEST(Elementwise, AddDefinition) {
    Tensor a = Tensor::from_data({2}, {1, 2});
    Tensor b = Tensor::from_data({2}, {3, 4});
    Tensor c = add(a, b);
    EXPECT_EQ(c.values(), (std::vector<double>{4, 6}));
}

TEST(Elementwise, SigmoidSymmetry) {
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    try {
        add(a, b);
        FAIL() << "expected shape error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), "shape_mismatch");
        EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("[3,2]"), std::string::npos);
    }
}

TEST(Elementwise, NonFiniteRejected) {
    EXPECT_THROW(Tensor::from_data({1}, {std::nan("")}), Error);
}

TEST(Elementwise, GeluGradientMatchesFiniteDifferences) {
    Tensor x = random_tensor({6}, 42);
    Tensor w = random_tensor({6}, 43);
    auto f = [&w](const Tensor& t) { return mean_all(mul(gelu(t), w)); };
    auto report = grad_check(f, x);
    EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Elementwise, PerOpGradChecks) {
    Tensor w = random_tensor({8}, 7);
    struct Case {
        const char* name;
        std::function<Tensor(const Tensor&)> f;
    };
    std::vector<Case> cases = {
        {"add", [&](const Tensor& t) { return mean_all(mul(add(t, w), w)); }},
        {"sub", [&](const Tensor& t) { return mean_all(mul(sub(w, t), w)); }},
        {"mul", [&](const Tensor& t) { return mean_all(mul(mul(t, t), w)); }},
        {"scale", [&](const Tensor& t) { return mean_all(mul(scale(t, -1.7), w)); }},
        {"add_scalar", [&](const Tensor& t) { return mean_all(mul(add_scalar(t, 2.5), w)); }},
        {"sigmoid", [&](const Tensor& t) { return mean_all(mul(sigmoid(t), w)); }},
        {"gelu", [&](const Tensor& t) { return mean_all(mul(gelu(t), w)); }},
    };
    for (auto& c : cases) {
        Tensor x = random_tensor({8}, 1000 + Rng::hash_name(c.name) % 100);
        auto report = grad_check(c.f, x);
        EXPECT_LT(report.max_rel_error, 1e-5) << c.name;
    }
}

// --- matmul -----------------------------------------------------------------

TEST(Matmul, IdentityPreserves) {
    Tensor a = random_tensor({3, 3}, 5);
    Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor c = matmul(a, eye);
    for (size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(c.data()[i], a.data()[i]);
}

TEST(Matmul, TwoByTwoKnownProduct) {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    EXPECT_EQ(c.values(), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, RandomMatchesTripleLoop) {
    // the tiled kernel may fuse and group sums differently than the naive
    // loop, so agreement is up to reassociation noise, not bit identity
    Tensor a = random_tensor({4, 5}, 11);
    Tensor b = random_tensor({5, 3}, 12);
    Tensor c = matmul(a, b);
    auto ref = matmul_oracle(a.values(), b.values(), 4, 5, 3);
    for (size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(c.data()[i], ref[i], 1e-12 * std::max(1.0, std::abs(ref[i])));
}

TEST(Matmul, IntegerInputsExactUpTo8x8) {
    Rng rng(13);
    for (size_t n = 1; n <= 8; ++n) {
        std::vector<double> av(n * n), bv(n * n);
        for (double& v : av) v = double(rng.below(19)) - 9.0;
        for (double& v : bv) v = double(rng.below(19)) - 9.0;
        Tensor a = Tensor::from_data({n, n}, av);
        Tensor b = Tensor::from_data({n, n}, bv);
        Tensor c = matmul(a, b);
        auto ref = matmul_oracle(av, bv, n, n, n);
        for (size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(c.data()[i], ref[i]) << "n=" << n;
    }
}

TEST(Matmul, InnerDimensionMismatch) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), Error);
}

TEST(Matmul, GradChecksBothOperands) {
    Tensor a = random_tensor({3, 4}, 21);
    Tensor b = random_tensor({4, 2}, 22);
    Tensor w = random_tensor({3, 2}, 23);
    auto fa = [&](const Tensor& t) { return mean_all(mul(matmul(t, b), w)); };
    auto fb = [&](const Tensor& t) { return mean_all(mul(matmul(a, t), w)); };
    EXPECT_LT(grad_check(fa, a).max_rel_error, 1e-5);
    EXPECT_LT(grad_check(fb, b).max_rel_error, 1e-5);
}

// --- softmax / layer_norm / reductions ---------------------------------------

TEST(Softmax, EqualLogitsUniform) {
    for (double c : {-4.0, 0.0, 3.5}) {
        Tensor x = Tensor::full({3}, c);
        Tensor y = softmax(x, 0);
        for (size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], 1.0 / 3.0, 1e-15);
    }
}

TEST(Softmax, ClosedFormQuarterThreeQuarters) {
    Tensor x = Tensor::from_data({2}, {0.0, std::log(3.0)});
    Tensor y = softmax(x, 0);
    EXPECT_NEAR(y.data()[0], 0.25, 1e-15);
    EXPECT_NEAR(y.data()[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneProperty) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Tensor x = random_tensor({4, 7}, 100 + seed, 10.0);
        Tensor y = softmax(x, 1);
        for (size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (size_t c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, StableUnderLargeLogits) {
    Tensor x = Tensor::from_data({3}, {1000.0, 1000.0, 999.0});
    Tensor y = softmax(x, 0);
    double s = y.data()[0] + y.data()[1] + y.data()[2];
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_GT(y.data()[0], y.data()[2]);
}

TEST(Softmax, MiddleAxis) {
    // [2,3,2]: softmax over axis 1 must normalize strided slices
    Tensor x = random_tensor({2, 3, 2}, 31);
    Tensor y = softmax(x, 1);
    for (size_t o = 0; o < 2; ++o)
        for (size_t in = 0; in < 2; ++in) {
            double s = 0.0;
            for (size_t i = 0; i < 3; ++i) s += y.data()[o * 6 + i * 2 + in];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
    Tensor x = random_tensor({2, 5}, 33);
    Tensor w = random_tensor({2, 5}, 34);
    auto f = [&](const Tensor& t) { return mean_all(mul(softmax(t, 1), w)); };
    EXPECT_LT(grad_check(f, x).max_rel_error, 1e-6);
}

TEST(LayerNorm, ConstantRowCollapsesToBias) {
    Tensor x = Tensor::full({2, 4}, 3.7);
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});
    Tensor y = layer_norm(x, gain, bias);
    for (size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], 0.0, 1e-12);
}

TEST(LayerNorm, OutputRowMeanEqualsBiasMean) {
    Tensor x = random_tensor({3, 8}, 41);
    Tensor gain = Tensor::full({8}, 1.0);
    Tensor bias = random_tensor({8}, 42);
    double bias_mean = 0.0;
    for (size_t i = 0; i < 8; ++i) bias_mean += bias.data()[i] / 8.0;
    Tensor y = layer_norm(x, gain, bias);
    for (size_t r = 0; r < 3; ++r) {
        double m = 0.0;
        for (size_t c = 0; c < 8; ++c) m += y.data()[r * 8 + c] / 8.0;
        EXPECT_NEAR(m, bias_mean, 1e-10);
    }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
    Tensor x = random_tensor({3, 6}, 51);
    Tensor gain = random_tensor({6}, 52, 0.5);
    Tensor bias = random_tensor({6}, 53, 0.5);
    Tensor w = random_tensor({3, 6}, 54);
    auto fx = [&](const Tensor& t) { return mean_all(mul(layer_norm(t, gain, bias), w)); };
    auto fg = [&](const Tensor& t) { return mean_all(mul(layer_norm(x, t, bias), w)); };
    auto fb = [&](const Tensor& t) { return mean_all(mul(layer_norm(x, gain, t), w)); };
    EXPECT_LT(grad_check(fx, x).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(fg, gain).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(fb, bias).max_rel_error, 1e-6);
}

TEST(ReduceMean, IdenticalSlicesIdempotent) {
    Tensor x = Tensor::from_data({3, 2}, {1.5, -2.0, 1.5, -2.0, 1.5, -2.0});
    Tensor y = reduce_mean(x, 0);
    EXPECT_DOUBLE_EQ(y.data()[0], 1.5);
    EXPECT_DOUBLE_EQ(y.data()[1], -2.0);
}

TEST(ReduceMean, Definition) {
    Tensor x = Tensor::from_data({3}, {1, 2, 3});
    EXPECT_DOUBLE_EQ(reduce_mean(x, 0).item(), 2.0);
}

TEST(ReduceMean, MatchesAccumulateThenDivideOracle) {
    Tensor x = random_tensor({6, 5}, 61);
    Tensor y = reduce_mean(x, 0);
    for (size_t c = 0; c < 5; ++c) {
        double acc = 0.0;
        for (size_t r = 0; r < 6; ++r) acc += x.data()[r * 5 + c];
        EXPECT_NEAR(y.data()[c], acc / 6.0, 1e-12);
    }
}

TEST(ReduceMean, GradientDistributesUniformly) {
    Tensor x = random_tensor({4, 3}, 62);
    Tensor w = random_tensor({3}, 63);
    auto f = [&](const Tensor& t) { return mean_all(mul(reduce_mean(t, 0), w)); };
    EXPECT_LT(grad_check(f, x).max_rel_error, 1e-8);
}

// --- structural ops -----------------------------------------------------------

TEST(Structural, GradChecksAreExactForLinearOps) {
    Tensor w10 = random_tensor({10}, 71);
    Tensor w6 = random_tensor({2, 3}, 72);
    auto perm = std::make_shared<std::vector<size_t>>(std::vector<size_t>{5, 3, 1, 0, 2, 4});
    struct Case {
        const char* name;
        Shape in_shape;
        std::function<Tensor(const Tensor&)> f;
    };
    std::vector<Case> cases = {
        {"reshape", {2, 5}, [&](const Tensor& t) { return mean_all(mul(reshape(t, {10}), w10)); }},
        {"slice_rows", {5, 3},
         [&](const Tensor& t) { return mean_all(mul(slice_rows(t, 1, 3), w6)); }},
        {"slice_cols", {2, 5},
         [&](const Tensor& t) { return mean_all(mul(slice_cols(t, 1, 4), w6)); }},
        {"pad_rows", {2, 3},
         [&](const Tensor& t) { return mean_all(mul(pad_rows(t, 5, 2), random_tensor({5, 3}, 73))); }},
        {"permute", {2, 3},
         [&](const Tensor& t) { return mean_all(mul(permute_gather(t, perm, {6}), random_tensor({6}, 74))); }},
    };
    for (auto& c : cases) {
        Tensor x = random_tensor(c.in_shape, 500 + Rng::hash_name(c.name) % 100);
        EXPECT_LT(grad_check(c.f, x).max_rel_error, 1e-7) << c.name;
    }
}

TEST(Structural, RowvecOpsGradCheck) {
    Tensor x = random_tensor({4, 3}, 81);
    Tensor v = random_tensor({3}, 82);
    Tensor w = random_tensor({4, 3}, 83);
    auto f1 = [&](const Tensor& t) { return mean_all(mul(add_rowvec(t, v), w)); };
    auto f2 = [&](const Tensor& t) { return mean_all(mul(add_rowvec(x, t), w)); };
    auto f3 = [&](const Tensor& t) { return mean_all(mul(mul_rowvec(t, v), w)); };
    auto f4 = [&](const Tensor& t) { return mean_all(mul(mul_rowvec(x, t), w)); };
    Tensor x2 = x.detached_copy(), v2 = v.detached_copy();
    EXPECT_LT(grad_check(f1, x).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(f2, v).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(f3, x2).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(f4, v2).max_rel_error, 1e-6);
}

TEST(Structural, Stack0RoundTrip) {
    Tensor a = random_tensor({2, 3}, 84);
    Tensor b = random_tensor({2, 3}, 85);
    Tensor s = stack0({a, b});
    EXPECT_EQ(s.shape(), (Shape{2, 2, 3}));
    for (size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(s.data()[i], a.data()[i]);
        EXPECT_EQ(s.data()[6 + i], b.data()[i]);
    }
}

TEST(Structural, MulScalarTensorGradCheck) {
    Tensor x = random_tensor({5}, 86);
    Tensor s = Tensor::scalar(0.8);
    Tensor w = random_tensor({5}, 87);
    auto fx = [&](const Tensor& t) { return mean_all(mul(mul_scalar_t(t, s), w)); };
    auto fs = [&](const Tensor& t) { return mean_all(mul(mul_scalar_t(x, t), w)); };
    EXPECT_LT(grad_check(fx, x).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(fs, s).max_rel_error, 1e-6);
}

// --- backward ---------------------------------------------------------------

TEST(Backward, SquareDerivative) {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor y = mul(x, x);
    backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, DotProductDerivative) {
    Tensor a = random_tensor({5}, 91);
    a.set_requires_grad(true);
    Tensor b = random_tensor({5}, 92);
    Tensor y = scale(mean_all(mul(a, b)), 5.0);  // a . b
    backward(y);
    for (size_t i = 0; i < 5; ++i) EXPECT_NEAR(a.grad()[i], b.data()[i], 1e-12);
}

TEST(Backward, FanOutAccumulatesExactlyTwice) {
    Tensor x1 = random_tensor({4}, 93);
    x1.set_requires_grad(true);
    Tensor g1 = sigmoid(x1);
    backward(mean_all(g1));
    std::vector<double> single = x1.grad();

    Tensor x2 = x1.detached_copy(true);
    Tensor g2 = sigmoid(x2);
    backward(mean_all(add(g2, g2)));
    for (size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x2.grad()[i], 2.0 * single[i]);
}

TEST(Backward, NonScalarLossRejected) {
    Tensor x = random_tensor({3}, 94);
    x.set_requires_grad(true);
    EXPECT_THROW(backward(sigmoid(x)), Error);
}

TEST(Backward, NoGradGuardSuppressesRecording) {
    Tensor x = random_tensor({3}, 95);
    x.set_requires_grad(true);
    NoGradGuard guard;
    Tensor y = sigmoid(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
}

// --- grad_check oracle itself -------------------------------------------------

TEST(GradCheck, LinearFunctionNearExact) {
    Tensor c = random_tensor({6}, 96);
    Tensor x = random_tensor({6}, 97);
    auto f = [&](const Tensor& t) { return scale(mean_all(mul(t, c)), 6.0); };
    EXPECT_LT(grad_check(f, x).max_rel_error, 1e-10);
}

TEST(GradCheck, SumSigmoid) {
    Tensor x = random_tensor({10}, 98);
    auto f = [](const Tensor& t) { return mean_all(sigmoid(t)); };
    EXPECT_LT(grad_check(f, x).max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsCorruptedBackwardRule) {
    Tensor x = random_tensor({6}, 99);
    // forward is x^2 but the registered derivative is wrong by +0.5
    auto f = [](const Tensor& t) {
        return mean_all(map_elementwise(
            t, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v + 0.5; }));
    };
    EXPECT_GT(grad_check(f, x).max_rel_error, 1e-2);
}

// --- fused attention -----------------------------------------------------------

namespace {

// naive per-head reference attention, double-loop softmax
std::vector<double> attention_oracle(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, size_t N, size_t d,
                                     size_t heads) {
    const size_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(double(dh));
    std::vector<double> out(N * d, 0.0);
    for (size_t h = 0; h < heads; ++h) {
        for (size_t i = 0; i < N; ++i) {
            std::vector<double> row(N);
            double mx = -1e300;
            for (size_t j = 0; j < N; ++j) {
                double s = 0.0;
                for (size_t c = 0; c < dh; ++c)
                    s += q[i * d + h * dh + c] * k[j * d + h * dh + c];
                row[j] = s * sc;
                mx = std::max(mx, row[j]);
            }
            double z = 0.0;
            for (size_t j = 0; j < N; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            for (size_t j = 0; j < N; ++j)
                for (size_t c = 0; c < dh; ++c)
                    out[i * d + h * dh + c] += row[j] / z * v[j * d + h * dh + c];
        }
    }
    return out;
}

} // namespace

TEST(Attention, MatchesNaiveOracle) {
    const size_t N = 5, d = 6, H = 2;
    Tensor q = random_tensor({N, d}, 101);
    Tensor k = random_tensor({N, d}, 102);
    Tensor v = random_tensor({N, d}, 103);
    Tensor out = multi_head_attention(q, k, v, H);
    auto ref = attention_oracle(q.values(), k.values(), v.values(), N, d, H);
    for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.data()[i], ref[i], 1e-13);
}

TEST(Attention, CapturedRowsSumToOne) {
    const size_t N = 7, d = 8, H = 4;
    Tensor q = random_tensor({N, d}, 104, 2.0);
    Tensor k = random_tensor({N, d}, 105, 2.0);
    Tensor v = random_tensor({N, d}, 106);
    AttentionCapture cap;
    multi_head_attention(q, k, v, H, &cap);
    ASSERT_EQ(cap.heads, H);
    ASSERT_EQ(cap.n, N);
    for (size_t h = 0; h < H; ++h)
        for (size_t i = 0; i < N; ++i) {
            double s = 0.0;
            for (size_t j = 0; j < N; ++j) s += cap.weights[h][i * N + j];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
}

TEST(Attention, GradChecksAllInputs) {
    const size_t N = 4, d = 6, H = 2;
    Tensor q = random_tensor({N, d}, 107);
    Tensor k = random_tensor({N, d}, 108);
    Tensor v = random_tensor({N, d}, 109);
    Tensor w = random_tensor({N, d}, 110);
    auto fq = [&](const Tensor& t) { return mean_all(mul(multi_head_attention(t, k, v, H), w)); };
    auto fk = [&](const Tensor& t) { return mean_all(mul(multi_head_attention(q, t, v, H), w)); };
    auto fv = [&](const Tensor& t) { return mean_all(mul(multi_head_attention(q, k, t, H), w)); };
    EXPECT_LT(grad_check(fq, q).max_rel_error, 1e-5);
    EXPECT_LT(grad_check(fk, k).max_rel_error, 1e-5);
    EXPECT_LT(grad_check(fv, v).max_rel_error, 1e-5);
}

TEST(Attention, HeadCountMustDivideWidth) {
    Tensor q = Tensor::zeros({4, 6});
    EXPECT_THROW(multi_head_attention(q, q, q, 4), Error);
}

// --- gate combine (differentiable path) ---------------------------------------

TEST(GateCombine, GradChecksOperandsAndGate) {
    Tensor fo = random_tensor({3, 4}, 111);
    Tensor fm = random_tensor({3, 4}, 112);
    Tensor gamma = Tensor::scalar(0.3);
    Tensor w = random_tensor({3, 4}, 113);
    auto f1 = [&](const Tensor& t) { return mean_all(mul(gate_combine(t, fm, gamma), w)); };
    auto f2 = [&](const Tensor& t) { return mean_all(mul(gate_combine(fo, t, gamma), w)); };
    auto f3 = [&](const Tensor& t) { return mean_all(mul(gate_combine(fo, fm, t), w)); };
    EXPECT_LT(grad_check(f1, fo).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(f2, fm).max_rel_error, 1e-6);
    EXPECT_LT(grad_check(f3, gamma).max_rel_error, 1e-6);
}
