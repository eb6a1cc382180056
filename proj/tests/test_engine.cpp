#include <catch2/catch_amalgamated.hpp>

#include "retinagan/core/adam.hpp"
#include "retinagan/core/ops.hpp"
#include "retinagan/core/rng.hpp"
#include "retinagan/core/spectral.hpp"

#include "gradcheck.hpp"

using namespace rg;
using rgtest::gradcheck;
using rgtest::random_array;

using rgtest::svd_sigma_max;

TEST_CASE("conv2d with 1x1 identity kernel is the identity") {
    Rng rng(1);
    Tape<double> t;
    auto img = t.leaf(random_array({1, 1, 5, 5}, rng, 0.0, 1.0));
    auto w = t.leaf(Array<double>({1, 1, 1, 1}, {1.0}));
    auto y = conv2d(img, w, 1, 0);
    REQUIRE(y.val().v == img.val().v);
}

TEST_CASE("sigmoid(0) = 0.5") {
    Tape<double> t;
    auto y = sigmoid(t.constant(0.0));
    REQUIRE(y.val().v[0] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("conv2d of 5x5 ramp with 3x3 averaging kernel matches nested-loop oracle") {
    Array<double> x({1, 1, 5, 5});
    for (int i = 0; i < 25; ++i) x.v[static_cast<std::size_t>(i)] = i * 0.13 - 1.0;
    Array<double> w = Array<double>::full({1, 1, 3, 3}, 1.0 / 9.0);
    Tape<double> t;
    auto y = conv2d(t.leaf(x), t.leaf(w), 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (int oh = 0; oh < 3; ++oh)
        for (int ow = 0; ow < 3; ++ow) {
            double s = 0.0;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) s += x.v[static_cast<std::size_t>((oh + r) * 5 + ow + c)] / 9.0;
            REQUIRE(y.val().v[static_cast<std::size_t>(oh * 3 + ow)] == Catch::Approx(s).margin(1e-12));
        }
}

TEST_CASE("backward of x*x at x=3 gives 6; unrelated parameter gets zero") {
    Tape<double> t;
    Param<double> p("unused", Array<double>::scalar(7.0));
    auto x = t.leaf(Array<double>::scalar(3.0), true);
    auto pv = t.param(p);
    (void)pv;
    auto loss = mul(x, x);
    t.backward(loss);
    REQUIRE(t.at(x.id).grad.v[0] == Catch::Approx(6.0).margin(1e-12));
    REQUIRE(p.grad.v[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape<double> t;
    auto x = t.leaf(Array<double>({2}, {1.0, 2.0}), true);
    auto y = mul(x, x);
    REQUIRE_THROWS_AS(t.backward(y), EngineError);
}

TEST_CASE("shape mismatch and non-finite outputs are rejected") {
    Tape<double> t;
    auto a = t.leaf(Array<double>({2}, {1.0, 2.0}));
    auto b = t.leaf(Array<double>({3}, {1.0, 2.0, 3.0}));
    REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("shape mismatch"));
    auto neg = t.leaf(Array<double>::scalar(-1.0));
    REQUIRE_THROWS_WITH(log_op(neg), Catch::Matchers::ContainsSubstring("log"));
}

TEST_CASE("finite-difference gradients for every differentiable primitive") {
    Rng rng(42);
    auto scalarize = [](Tape<double>& t, Var<double> v) {
        // weighted sum keeps per-element gradients distinguishable
        Array<double> w(v.shape());
        for (std::size_t i = 0; i < w.size(); ++i) w.v[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
        return sum_all(mul(v, t.leaf(w)));
    };

    SECTION("elementwise binary") {
        auto a = random_array({2, 3}, rng);
        auto b = random_array({2, 3}, rng, 0.5, 1.5);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, add(v[0], v[1])); }, {a, b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, sub(v[0], v[1])); }, {a, b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, mul(v[0], v[1])); }, {a, b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, div(v[0], v[1])); }, {a, b});
        auto s = random_array({1}, rng, 0.5, 1.0);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, mul(v[0], v[1])); }, {a, s});
    }
    SECTION("elementwise unary") {
        auto a = random_array({3, 4}, rng, 0.2, 2.0);
        auto b = random_array({3, 4}, rng, -2.0, 2.0);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, relu(add_scalar(v[0], -1.0))); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, leaky_relu(v[0], 0.2)); }, {b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, sigmoid(v[0])); }, {b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, tanh_op(v[0])); }, {b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, exp_op(v[0])); }, {b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, log_op(v[0])); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, abs_op(v[0])); }, {b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, pow_scalar(v[0], 2.7)); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, huber(v[0], 0.7)); }, {b});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, clamp(v[0], -0.9, 0.9)); }, {b});
    }
    SECTION("reductions and shape ops") {
        auto a = random_array({2, 3, 4}, rng);
        auto b = random_array({2, 3, 4}, rng);
        gradcheck([&](Tape<double>& t, auto& v) { (void)t; return sum_all(v[0]); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { (void)t; return mean_all(v[0]); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, reduce_max_last(v[0])); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, expand_last(v[0], 3)); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, reshape(v[0], {4, 6})); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, concat(v[0], v[1], 1)); }, {a, b});
        auto img = random_array({1, 2, 6, 6}, rng);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, mean_hw(v[0])); }, {img});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, crop2d(v[0], 1, 2, 3, 3)); }, {img});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, pad_reflect(v[0], 2)); }, {img});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, upsample_nearest_2x(v[0])); }, {img});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, resize_nearest(v[0], 5, 7)); }, {img});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, permute(v[0], {2, 0, 1})); }, {a});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, slice0(v[0], 1)); }, {a});
    }
    SECTION("permute forward matches index arithmetic") {
        Tape<double> t;
        Array<double> a({2, 3, 4});
        for (std::size_t i = 0; i < a.size(); ++i) a.v[i] = static_cast<double>(i);
        auto p = permute(t.leaf(std::move(a)), {1, 2, 0});
        REQUIRE(p.shape() == Shape{3, 4, 2});
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k)
                for (int i = 0; i < 2; ++i)
                    REQUIRE(p.val().v[static_cast<std::size_t>((j * 4 + k) * 2 + i)] ==
                            static_cast<double>((i * 3 + j) * 4 + k));
        REQUIRE_THROWS_AS(permute(p, {0, 0, 1}), EngineError);
        auto s = slice0(p, 2);
        REQUIRE(s.shape() == Shape{4, 2});
        REQUIRE(s.val().v[0] == p.val().v[2 * 8]);
        REQUIRE_THROWS_AS(slice0(p, 3), EngineError);
    }
    SECTION("linear algebra and conv") {
        auto a = random_array({3, 4}, rng);
        auto b = random_array({4, 2}, rng);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, matmul(v[0], v[1])); }, {a, b});
        auto x = random_array({2, 3, 6, 6}, rng);
        auto w = random_array({4, 3, 3, 3}, rng, -0.5, 0.5);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, conv2d(v[0], v[1], 1, 1)); }, {x, w});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, conv2d(v[0], v[1], 2, 1)); }, {x, w});
        auto wt = random_array({3, 4, 4, 4}, rng, -0.5, 0.5);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, conv_transpose2d(v[0], v[1], 2, 1)); }, {x, wt});
        auto bias = random_array({3}, rng);
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, add_bias(v[0], v[1])); }, {x, bias});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, scale_channels(v[0], v[1])); }, {x, bias});
        gradcheck([&](Tape<double>& t, auto& v) { return scalarize(t, instance_norm(v[0], 1e-5)); }, {x});
    }
}

TEST_CASE("tape replay determinism: same inputs give bit-identical forward values") {
    Rng rng(7);
    auto x = random_array({2, 3, 8, 8}, rng);
    auto w = random_array({4, 3, 3, 3}, rng);
    auto run = [&]() {
        Tape<double> t;
        auto y = tanh_op(conv2d(t.leaf(x), t.leaf(w), 1, 1));
        return y.val().v;
    };
    REQUIRE(run() == run());
}

TEST_CASE("apply dispatches the documented op names") {
    Tape<double> t;
    auto a = t.leaf(Array<double>({2}, {1.0, 2.0}));
    auto b = t.leaf(Array<double>({2}, {3.0, 4.0}));
    REQUIRE(apply<double>("add", {a, b}).val().v == std::vector<double>{4.0, 6.0});
    REQUIRE(apply<double>("mul", {a, b}).val().v == std::vector<double>{3.0, 8.0});
    REQUIRE(apply<double>("sigmoid", {t.constant(0.0)}).val().v[0] == Catch::Approx(0.5));
    auto img = t.leaf(Array<double>::full({1, 1, 2, 2}, 1.5));
    REQUIRE(apply<double>("upsample_nearest_2x", {img}).shape() == Shape{1, 1, 4, 4});
    REQUIRE_THROWS_AS(apply<double>("fft", {a}), EngineError);
}

TEST_CASE("adam: zero gradient and zero weight decay leave parameters unchanged") {
    Param<float> p("w", Array<float>({3}, {1.0f, -2.0f, 0.5f}));
    std::vector<Param<float>*> ps{&p};
    OptimState<float> st;
    st.bind(ps);
    auto before = p.value.v;
    for (int i = 0; i < 5; ++i) adam_step(ps, st);
    REQUIRE(p.value.v == before);
    REQUIRE(st.step == 5);
}

TEST_CASE("adam first step moves by -lr * sign(g)") {
    Param<double> p("w", Array<double>({2}, {1.0, 1.0}));
    p.grad = Array<double>({2}, {0.3, -2.0});
    std::vector<Param<double>*> ps{&p};
    OptimState<double> st;
    st.lr = 0.01;
    st.eps = 0.0;
    st.bind(ps);
    adam_step(ps, st);
    REQUIRE(p.value.v[0] == Catch::Approx(1.0 - 0.01).margin(1e-12));
    REQUIRE(p.value.v[1] == Catch::Approx(1.0 + 0.01).margin(1e-12));
}

TEST_CASE("adam 10-step trajectory on a quadratic matches a scalar oracle to 1e-10") {
    // oracle: independent scalar Adam, loss 0.5*(x-c)^2
    const double lr = 0.05, b1 = 0.1, b2 = 0.999, eps = 1e-8, wd = 7e-5, c = 3.0;
    double xo = 0.0, m = 0.0, v = 0.0;
    std::vector<double> oracle;
    for (int s = 1; s <= 10; ++s) {
        double g = xo - c;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mh = m / (1 - std::pow(b1, s));
        double vh = v / (1 - std::pow(b2, s));
        xo -= lr * mh / (std::sqrt(vh) + eps);
        xo -= lr * wd * xo;
        oracle.push_back(xo);
    }
    Param<double> p("x", Array<double>::scalar(0.0));
    std::vector<Param<double>*> ps{&p};
    OptimState<double> st;
    st.lr = lr; st.beta1 = b1; st.beta2 = b2; st.eps = eps; st.weight_decay = wd;
    st.bind(ps);
    for (int s = 0; s < 10; ++s) {
        p.zero_grad();
        Tape<double> t;
        auto x = t.param(p);
        auto d = add_scalar(x, -c);
        t.backward(mul_scalar(mul(d, d), 0.5));
        adam_step(ps, st);
        REQUIRE(p.value.v[0] == Catch::Approx(oracle[static_cast<std::size_t>(s)]).margin(1e-10));
    }
}

TEST_CASE("adam rejects NaN gradients") {
    Param<double> p("w", Array<double>::scalar(1.0));
    p.grad.v[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<Param<double>*> ps{&p};
    OptimState<double> st;
    st.bind(ps);
    REQUIRE_THROWS_AS(adam_step(ps, st), EngineError);
}

TEST_CASE("spectral norm: weight with sigma=1 is unchanged within 1e-6") {
    // orthonormal 2x2 rotation has both singular values 1
    double th = 0.37;
    Array<double> w({2, 2}, {std::cos(th), -std::sin(th), std::sin(th), std::cos(th)});
    Rng rng(3);
    SpectralState<double> st;
    st.init(2, rng);
    Tape<double> t;
    auto wn = spectral_normalize(t.leaf(w, true), st, 30);
    for (std::size_t i = 0; i < 4; ++i)
        REQUIRE(wn.val().v[i] == Catch::Approx(w.v[i]).margin(1e-6));
    REQUIRE(std::abs(std::hypot(st.u.v[0], st.u.v[1]) - 1.0) < 1e-6);
}

TEST_CASE("spectral norm on diag(2,1): sigma -> 2, normalized spectral norm -> 1") {
    Array<double> w({2, 2}, {2.0, 0.0, 0.0, 1.0});
    Rng rng(5);
    SpectralState<double> st;
    st.init(2, rng);
    auto v = spectral_power_iterate(w, 2, st, 100);
    double sigma = spectral_sigma(w, 2, st, v);
    REQUIRE(sigma == Catch::Approx(2.0).margin(1e-9));
    Tape<double> t;
    auto wn = spectral_normalize(t.leaf(w), st, 1);
    REQUIRE(svd_sigma_max(wn.val(), 2) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("spectral norm sigma matches dense SVD oracle on a random 8x8 matrix") {
    Rng rng(11);
    Array<double> w = random_array({8, 8}, rng);
    SpectralState<double> st;
    st.init(8, rng);
    auto v = spectral_power_iterate(w, 8, st, 50);
    double sigma = spectral_sigma(w, 8, st, v);
    REQUIRE(sigma == Catch::Approx(svd_sigma_max(w, 8)).margin(1e-4));
}

TEST_CASE("spectral norm floors sigma for the zero matrix") {
    Array<double> w = Array<double>({3, 3});
    Rng rng(9);
    SpectralState<double> st;
    st.init(3, rng);
    Tape<double> t;
    auto wn = spectral_normalize(t.leaf(w), st, 2);
    for (double e : wn.val().v) REQUIRE(std::isfinite(e));
}

TEST_CASE("gradient flows through the spectral-norm division") {
    Rng rng(13);
    Array<double> w = random_array({3, 4}, rng);
    SpectralState<double> st;
    st.init(3, rng);
    spectral_power_iterate(w, 3, st, 50);  // converge u first; check holds u,v fixed
    Array<double> u0 = st.u;
    gradcheck(
        [&](Tape<double>& t, std::vector<Var<double>>& v) {
            SpectralState<double> s2;
            s2.u = u0;
            auto wn = spectral_normalize(v[0], s2, 0);
            Array<double> cw(wn.shape());
            for (std::size_t i = 0; i < cw.size(); ++i) cw.v[i] = 0.1 * static_cast<double>(i + 1);
            return sum_all(mul(wn, t.leaf(cw)));
        },
        {w}, 1e-4, 12);
}
