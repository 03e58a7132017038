#include "logitgc/tensor.hpp"

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "logitgc/adam.hpp"
#include "logitgc/rng.hpp"
#include "support/grad_check.hpp"

using namespace logitgc;
using logitgc::testing::expect_gradients_match;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> v(detail::numel_of(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward values
// ---------------------------------------------------------------------------

TEST(Matmul, IdentityTimesColumn) {
    Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor col = Tensor::matrix(2, 1, {3, 4});
    Tensor out = matmul(eye, col);
    EXPECT_EQ(out.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(out.at(0), 3.0);
    EXPECT_DOUBLE_EQ(out.at(1), 4.0);
}

TEST(Matmul, DotProduct) {
    Tensor a = Tensor::matrix(1, 2, {1, 2});
    Tensor b = Tensor::matrix(2, 1, {3, 4});
    EXPECT_DOUBLE_EQ(matmul(a, b).value(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::matrix(3, 4, std::vector<double>(12, 0.0));
    Tensor b = Tensor::matrix(5, 2, std::vector<double>(10, 0.0));
    try {
        matmul(a, b);
        FAIL() << "expected shape error";
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[3 x 4]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[5 x 2]"), std::string::npos) << msg;
    }
}

TEST(Elementwise, SoftplusAtZeroIsLn2) {
    EXPECT_NEAR(softplus(Tensor::scalar(0.0)).value(), std::numbers::ln2, 1e-15);
}

TEST(Elementwise, SoftplusStableAtExtremes) {
    EXPECT_DOUBLE_EQ(softplus(Tensor::scalar(1000.0)).value(), 1000.0);
    EXPECT_DOUBLE_EQ(softplus(Tensor::scalar(-1000.0)).value(), 0.0);
}

TEST(Elementwise, Relu) {
    Tensor t = Tensor::from({2}, {-2.0, 3.0});
    Tensor out = relu(t);
    EXPECT_DOUBLE_EQ(out.at(0), 0.0);
    EXPECT_DOUBLE_EQ(out.at(1), 3.0);
}

TEST(Elementwise, LogOutsideDomainThrows) {
    EXPECT_THROW(log(Tensor::scalar(0.0)), std::domain_error);
    EXPECT_THROW(log(Tensor::scalar(-1.0)), std::domain_error);
}

TEST(Elementwise, ShapeMismatchRejected) {
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor b = Tensor::from({3}, {1, 2, 3});
    EXPECT_THROW(add(a, b), std::invalid_argument);
}

TEST(Elementwise, ScalarBroadcast) {
    Tensor a = Tensor::from({3}, {1, 2, 3});
    Tensor out = mul(a, 2.0);
    EXPECT_DOUBLE_EQ(out.at(2), 6.0);
    Tensor out2 = sub(10.0, a);
    EXPECT_DOUBLE_EQ(out2.at(0), 9.0);
}

TEST(Elementwise, NonFiniteOutputThrows) {
    EXPECT_THROW(exp(Tensor::scalar(1000.0)), std::runtime_error);
}

TEST(Reductions, LogsumexpOfTwoZeros) {
    EXPECT_NEAR(logsumexp(Tensor::from({2}, {0.0, 0.0})).value(), std::numbers::ln2, 1e-15);
}

TEST(Reductions, LogsumexpNoOverflow) {
    double out = logsumexp(Tensor::from({2}, {1000.0, 1000.0})).value();
    EXPECT_NEAR(out, 1000.0 + std::numbers::ln2, 1e-12);
}

TEST(Reductions, LogsumexpShiftInvariance) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(6);
        for (auto& x : v) x = rng.uniform(-1000.0, 1000.0);
        const double base = logsumexp(Tensor::from({6}, v)).value();
        const double c = rng.uniform(-100.0, 100.0);
        std::vector<double> shifted = v;
        for (auto& x : shifted) x += c;
        EXPECT_NEAR(logsumexp(Tensor::from({6}, shifted)).value(), base + c, 1e-9);
    }
}

TEST(Reductions, MeanOfFour) {
    EXPECT_DOUBLE_EQ(mean(Tensor::from({4}, {1, 2, 3, 4})).value(), 2.5);
}

TEST(Reductions, AxisVariants) {
    Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor cols = sum(t, 0);
    EXPECT_EQ(cols.shape(), (Shape{1, 3}));
    EXPECT_DOUBLE_EQ(cols.at(0), 5.0);
    Tensor rows = sum(t, 1);
    EXPECT_EQ(rows.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(rows.at(1), 15.0);
    EXPECT_THROW(sum(t, 2), std::invalid_argument);
    EXPECT_THROW(sum(Tensor::from({3}, {1, 2, 3}), 0), std::invalid_argument);
}

TEST(Structure, TileAndRepeatRows) {
    Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor tiled = tile_rows(t, 2);
    EXPECT_EQ(tiled.shape(), (Shape{4, 2}));
    EXPECT_DOUBLE_EQ(tiled.at(2, 0), 1.0);
    Tensor rep = repeat_each_row(t, 2);
    EXPECT_DOUBLE_EQ(rep.at(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(rep.at(2, 0), 3.0);
}

TEST(Structure, PairRowSumMatchesComposition) {
    Rng rng(91);
    Tensor a = random_tensor({3, 4}, rng, false);
    Tensor b = random_tensor({2, 4}, rng, false);
    Tensor fused = pair_row_sum(a, b);
    Tensor composed = add(repeat_each_row(a, 2), tile_rows(b, 3));
    ASSERT_EQ(fused.shape(), composed.shape());
    for (std::size_t i = 0; i < fused.numel(); ++i) {
        EXPECT_EQ(fused.at(i), composed.at(i));  // bitwise
    }
    EXPECT_THROW(pair_row_sum(a, Tensor::matrix(2, 3, std::vector<double>(6, 0.0))),
                 std::invalid_argument);
}

TEST(Structure, DeterministicForward) {
    Rng rng(3);
    Tensor a = random_tensor({4, 5}, rng, false);
    Tensor b = random_tensor({5, 2}, rng, false);
    Tensor o1 = matmul(a, b);
    Tensor o2 = matmul(a, b);
    for (std::size_t i = 0; i < o1.numel(); ++i) {
        EXPECT_EQ(o1.at(i), o2.at(i));  // bitwise
    }
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

TEST(Backward, SumGivesOnes) {
    Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}, true);
    Graph g;
    g.backward(sum(x));
    for (double v : x.grad()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, SumOfSquares) {
    Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
    Graph g;
    g.backward(sum(square(x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
}

TEST(Backward, NonScalarRootRejected) {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Graph g;
    Tensor y = square(x);
    EXPECT_THROW(g.backward(y), std::invalid_argument);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
    Graph g;
    Tensor loss = sum(square(x));
    g.backward(loss);
    g.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
    x.zero_grad();
    g.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Backward, MatmulMatchesFiniteDifferences) {
    Rng rng(17);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    expect_gradients_match([&] { return sum(square(matmul(a, b))); }, {a, b},
                           {.step = 1e-5, .rtol = 1e-4, .atol = 1e-8});
}

TEST(Backward, EluGradientAtHalf) {
    for (double z0 : {0.5, -0.5}) {
        Tensor z = Tensor::scalar(z0, true);
        expect_gradients_match([&] { return elu(z); }, {z}, {.step = 1e-5, .rtol = 1e-4, .atol = 1e-9});
    }
}

TEST(Backward, EveryOpMatchesFiniteDifferencesAcrossSeeds) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const std::size_t m = 2 + rng.uniform_int(3);
        const std::size_t k = 2 + rng.uniform_int(3);
        const std::size_t n = 2 + rng.uniform_int(3);
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor c = random_tensor({m, k}, rng);
        Tensor s = Tensor::scalar(rng.normal(), true);

        auto check = [&](const std::function<Tensor()>& build, std::vector<Tensor> params) {
            expect_gradients_match(build, std::move(params), {.step = 1e-5, .rtol = 1e-3, .atol = 1e-6});
        };
        check([&] { return sum(square(matmul(a, b))); }, {a, b});
        check([&] { return sum(mul(a, c)); }, {a, c});
        check([&] { return sum(square(sub(a, c))); }, {a, c});
        check([&] { return sum(exp(mul(a, 0.3))); }, {a});
        check([&] { return sum(log(add(square(a), 1.0))); }, {a});
        check([&] { return sum(relu(a)); }, {a});
        check([&] { return sum(elu(a)); }, {a});
        check([&] { return sum(softplus(a)); }, {a});
        check([&] { return sum(clamp(a, -0.5, 0.5)); }, {a});
        check([&] { return sum(neg(a)); }, {a});
        check([&] { return mean(square(a)); }, {a});
        check([&] { return logsumexp(a); }, {a});
        check([&] { return sum(logsumexp(a, 1)); }, {a});
        check([&] { return sum(logsumexp(a, 0)); }, {a});
        check([&] { return sum(square(transpose(a))); }, {a});
        check([&] { return sum(square(tile_rows(a, 3))); }, {a});
        check([&] { return sum(square(repeat_each_row(a, 3))); }, {a});
        check([&] { return sum(square(pair_row_sum(a, c))); }, {a, c});
        check([&] { return sum(mul(a, s)); }, {a, s});
    }
}

TEST(Backward, GradientFlowsOnlyIntoRequiresGrad) {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor frozen = Tensor::from({2}, {3.0, 4.0}, false);
    Graph g;
    g.backward(sum(mul(x, frozen)));
    EXPECT_TRUE(x.has_grad());
    EXPECT_FALSE(frozen.has_grad());
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    Tensor p = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    AdamState st;
    std::vector<double> zeros(3, 0.0);
    adam_step(p.values_mut(), zeros, st, 1, {});
    EXPECT_DOUBLE_EQ(p.at(0), 1.0);
    EXPECT_DOUBLE_EQ(p.at(1), 2.0);
    EXPECT_DOUBLE_EQ(p.at(2), 3.0);
}

// One step from zero state: m_hat = g, v_hat = g^2, so the update is
// -lr * g / (|g| + eps).
TEST(Adam, SingleStepFromZeroState) {
    const AdamConfig cfg{.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps_hat = 1e-8};
    Tensor p = Tensor::from({2}, {0.5, -0.25}, true);
    std::vector<double> g = {0.2, -3.0};
    AdamState st;
    adam_step(p.values_mut(), g, st, 1, cfg);
    for (std::size_t i = 0; i < 2; ++i) {
        const double expected = (i == 0 ? 0.5 : -0.25) - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps_hat);
        EXPECT_NEAR(p.at(i), expected, 1e-12);
    }
}

// Hand-traced two-step scalar reference.
TEST(Adam, TwoStepScalarTrace) {
    const AdamConfig cfg{.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps_hat = 1e-8};
    double p = 1.0;
    double m = 0.0, v = 0.0;
    const double g1 = 0.4, g2 = -0.1;
    auto ref_step = [&](double g, int t) {
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        const double mh = m / (1 - std::pow(cfg.beta1, t));
        const double vh = v / (1 - std::pow(cfg.beta2, t));
        p -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps_hat);
    };
    ref_step(g1, 1);
    ref_step(g2, 2);

    Tensor tp = Tensor::scalar(1.0, true);
    AdamState st;
    std::vector<double> grad1{g1}, grad2{g2};
    adam_step(tp.values_mut(), grad1, st, 1, cfg);
    adam_step(tp.values_mut(), grad2, st, 2, cfg);
    EXPECT_DOUBLE_EQ(tp.value(), p);
}

TEST(Adam, ShapeMismatchRejected) {
    Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
    std::vector<double> g = {1.0, 2.0, 3.0};
    AdamState st;
    EXPECT_THROW(adam_step(p.values_mut(), g, st, 1, {}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Rng determinism
// ---------------------------------------------------------------------------

TEST(Rng, SameSeedSameStream) {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.uniform01(), b.uniform01());
        EXPECT_EQ(a.normal(), b.normal());
    }
}

TEST(Rng, DerivedSeedsDifferByTag) {
    EXPECT_NE(derive_seed(7, "train"), derive_seed(7, "test"));
    EXPECT_EQ(derive_seed(7, "train"), derive_seed(7, "train"));
}
