#include <doctest.h>

#include "d2a/ops.hpp"
#include "oracles.hpp"

using d2a::ConvSpec;
using d2a::Shape;
using D = d2a::Tensor<double>;

TEST_CASE("conv2d output extent follows floor((H + 2p - K)/s) + 1") {
    ConvSpec sp;
    sp.kernel = 3;
    sp.dilation = 5;
    CHECK(sp.equivalent_kernel() == 11);
    sp.padding = 5;
    CHECK(sp.out_extent(17) == 17);
    sp.stride = 2;
    CHECK(sp.out_extent(17) == 9);
    sp.padding = 0;
    CHECK(sp.out_extent(11) == 1);
}

TEST_CASE("conv2d matches the naive oracle on 100 randomized cases") {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> d1_5(1, 5), d1_2(1, 2), d0_2(0, 2), d1_3(1, 3);
    int done = 0;
    while (done < 100) {
        ConvSpec sp;
        sp.kernel = d1_3(rng);
        sp.dilation = d1_5(rng);
        sp.stride = d1_2(rng);
        sp.padding = d0_2(rng);
        int64_t g = (done % 4 == 0) ? 2 : 1;
        sp.groups = g;
        sp.in_channels = g * d1_2(rng);
        sp.out_channels = g * d1_2(rng);
        sp.bias = true;
        int64_t H = sp.equivalent_kernel() + d0_2(rng);
        int64_t W = sp.equivalent_kernel() + d0_2(rng) + 1;
        if (sp.out_extent(H) < 1 || sp.out_extent(W) < 1) continue;
        d2a::NoGradGuard ng;
        D x = D::randn(Shape{2, sp.in_channels, H, W}, rng);
        D w = D::randn(Shape{sp.out_channels, sp.in_channels / g, sp.kernel, sp.kernel}, rng);
        D b = D::randn(Shape{sp.out_channels}, rng);
        D y = d2a::conv2d(x, sp, w, &b);
        auto ref = oracle::conv(x.values(), 2, sp.in_channels, H, W, w.values(), &b.values(), sp);
        double worst = 0;
        for (size_t i = 0; i < ref.size(); ++i)
            worst = std::max(worst, std::abs(ref[i] - y.values()[i]));
        CHECK(worst < 1e-10);
        ++done;
    }
}

TEST_CASE("conv2d rejects shape and channel mismatches") {
    std::mt19937_64 rng(5);
    D x = D::randn(Shape{1, 3, 6, 6}, rng);
    D w = D::randn(Shape{4, 2, 3, 3}, rng);
    ConvSpec sp;
    sp.in_channels = 3;
    sp.out_channels = 4;
    sp.kernel = 3;
    CHECK_THROWS_WITH_AS(d2a::conv2d(x, sp, w), doctest::Contains("weight shape"),
                         std::runtime_error);
    D w2 = D::randn(Shape{4, 3, 3, 3}, rng);
    D x2 = D::randn(Shape{1, 2, 6, 6}, rng);
    CHECK_THROWS_WITH_AS(d2a::conv2d(x2, sp, w2), doctest::Contains("channel count"),
                         std::runtime_error);
    // kernel larger than the padded input
    D x3 = D::randn(Shape{1, 3, 2, 2}, rng);
    CHECK_THROWS_WITH_AS(d2a::conv2d(x3, sp, w2), doctest::Contains("kernel exceeds"),
                         std::runtime_error);
}

TEST_CASE("conv2d gradcheck across strides, dilations and groups") {
    std::mt19937_64 rng(21);
    struct Case {
        int64_t k, s, p, d, g, cin, cout;
    };
    for (Case c : {Case{3, 1, 1, 1, 1, 2, 3}, Case{3, 2, 2, 2, 1, 2, 2}, Case{2, 1, 0, 3, 1, 1, 2},
                   Case{3, 1, 2, 1, 2, 4, 4}}) {
        ConvSpec sp{c.cin, c.cout, c.k, c.s, c.p, c.d, c.g, true};
        D x = D::randn(Shape{2, c.cin, 8, 8}, rng);
        D w = D::randn(Shape{c.cout, c.cin / c.g, c.k, c.k}, rng, 0.5);
        D b = D::randn(Shape{c.cout}, rng, 0.1);
        x.set_requires_grad(true);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        std::vector<D> leaves = {x, w, b};
        auto loss = [&]() {
            D y = d2a::conv2d(x, sp, w, &b);
            return d2a::sum(d2a::mul(y, y));
        };
        CHECK(oracle::gradcheck(loss, leaves) < 1e-6);
    }
}

TEST_CASE("bilinear upsample matches the scalar reference and its gradcheck") {
    std::mt19937_64 rng(31);
    for (int64_t s : {2, 3}) {
        D x = D::randn(Shape{2, 3, 4, 5}, rng);
        {
            d2a::NoGradGuard ng;
            D y = d2a::bilinear_upsample(x, s);
            auto ref = oracle::upsample(x.values(), 6, 4, 5, s);
            for (size_t i = 0; i < ref.size(); ++i)
                CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
        x.set_requires_grad(true);
        std::vector<D> leaves = {x};
        auto loss = [&]() {
            D y = d2a::bilinear_upsample(x, s);
            return d2a::sum(d2a::mul(y, y));
        };
        CHECK(oracle::gradcheck(loss, leaves) < 1e-7);
        x.set_requires_grad(false);
    }
}

TEST_CASE("upsample of a constant image is constant") {
    D x(Shape{1, 1, 3, 3}, 7.5);
    d2a::NoGradGuard ng;
    D y = d2a::bilinear_upsample(x, 2);
    for (double v : y.values()) CHECK(v == doctest::Approx(7.5));
}

TEST_CASE("max_pool2d matches reference, breaks ties to the first index") {
    std::mt19937_64 rng(41);
    D x = D::randn(Shape{2, 2, 6, 4}, rng);
    {
        d2a::NoGradGuard ng;
        D y = d2a::max_pool2d(x);
        auto ref = oracle::maxpool(x.values(), 4, 6, 4);
        for (size_t i = 0; i < ref.size(); ++i) CHECK(y.values()[i] == doctest::Approx(ref[i]));
    }
    // tie: all four equal, gradient must land on the first element only
    D t(Shape{1, 1, 2, 2}, 3.0);
    t.set_requires_grad(true);
    D y = d2a::max_pool2d(t);
    d2a::sum(y).backward();
    CHECK(t.grad() == std::vector<double>{1.0, 0.0, 0.0, 0.0});

    D odd(Shape{1, 1, 3, 4});
    CHECK_THROWS_WITH_AS(d2a::max_pool2d(odd), doctest::Contains("pad the input to even extents"),
                         std::runtime_error);
}

TEST_CASE("global_avg_pool averages per plane and spreads gradient evenly") {
    D x(Shape{1, 2, 2, 2}, {1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0});
    x.set_requires_grad(true);
    D y = d2a::global_avg_pool(x);
    CHECK(y.shape() == Shape{1, 2, 1, 1});
    CHECK(y.values()[0] == doctest::Approx(2.5));
    CHECK(y.values()[1] == doctest::Approx(10.0));
    d2a::sum(y).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("batch_norm training normalizes to zero mean unit variance") {
    std::mt19937_64 rng(51);
    D x = D::randn(Shape{4, 3, 5, 5}, rng, 2.0);
    for (auto& v : x.values()) v += 1.0;
    D gamma(Shape{3}, 1.0);
    D beta(Shape{3}, 0.0);
    std::vector<double> rm(3, 0.0), rv(3, 1.0);
    d2a::NoGradGuard ng;
    D y = d2a::batch_norm(x, gamma, beta, rm, rv, true);
    int64_t N = 4 * 5 * 5;
    for (int64_t c = 0; c < 3; ++c) {
        double m = 0, v = 0;
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t i = 0; i < 25; ++i) m += y.values()[(b * 3 + c) * 25 + i];
        m /= N;
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t i = 0; i < 25; ++i) {
                double d = y.values()[(b * 3 + c) * 25 + i] - m;
                v += d * d;
            }
        v /= N;
        CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
        // running stats moved one momentum step off their init
        CHECK(rm[c] != 0.0);
        CHECK(rv[c] != 1.0);
    }
}

TEST_CASE("batch_norm eval uses running statistics and is elementwise") {
    D x(Shape{1, 1, 1, 2}, {3.0, 5.0});
    D gamma(Shape{1}, 2.0);
    D beta(Shape{1}, 1.0);
    std::vector<double> rm{3.0}, rv{4.0};
    d2a::NoGradGuard ng;
    D y = d2a::batch_norm(x, gamma, beta, rm, rv, false);
    // (x - 3)/sqrt(4 + 1e-5) * 2 + 1
    CHECK(y.values()[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y.values()[1] == doctest::Approx(3.0).epsilon(1e-4));
    CHECK(rm[0] == 3.0);  // eval must not touch the buffers
}

TEST_CASE("batch_norm rejects single-value training batches") {
    D x(Shape{1, 2, 1, 1});
    D gamma(Shape{2}, 1.0);
    D beta(Shape{2});
    std::vector<double> rm(2), rv(2, 1.0);
    CHECK_THROWS_WITH_AS(d2a::batch_norm(x, gamma, beta, rm, rv, true),
                         doctest::Contains("more than one value"), std::runtime_error);
}

TEST_CASE("batch_norm gradcheck in training mode") {
    std::mt19937_64 rng(61);
    D x = D::randn(Shape{3, 2, 3, 3}, rng);
    D gamma = D::randn(Shape{2}, rng, 0.3);
    for (auto& v : gamma.values()) v += 1.0;
    D beta = D::randn(Shape{2}, rng, 0.3);
    x.set_requires_grad(true);
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
    std::vector<D> leaves = {x, gamma, beta};
    auto loss = [&]() {
        std::vector<double> rm(2, 0.0), rv(2, 1.0);  // fresh buffers per call
        D y = d2a::batch_norm(x, gamma, beta, rm, rv, true);
        return d2a::sum(d2a::mul(y, d2a::add_scalar(y, 0.3)));
    };
    CHECK(oracle::gradcheck(loss, leaves) < 1e-5);
}

TEST_CASE("linear matches a hand computation and gradchecks") {
    D x(Shape{1, 2}, {1.0, 2.0});
    D w(Shape{3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0});
    D b(Shape{3}, {0.5, -0.5, 0.0});
    {
        d2a::NoGradGuard ng;
        D y = d2a::linear(x, w, &b);
        CHECK(y.values() == std::vector<double>{1.5, 1.5, 3.0});
    }
    std::mt19937_64 rng(71);
    D xr = D::randn(Shape{3, 4}, rng);
    D wr = D::randn(Shape{2, 4}, rng);
    D br = D::randn(Shape{2}, rng);
    xr.set_requires_grad(true);
    wr.set_requires_grad(true);
    br.set_requires_grad(true);
    std::vector<D> leaves = {xr, wr, br};
    auto loss = [&]() {
        D y = d2a::linear(xr, wr, &br);
        return d2a::sum(d2a::mul(y, y));
    };
    CHECK(oracle::gradcheck(loss, leaves) < 1e-7);
}

TEST_CASE("bce_with_logits is stable at extreme logits") {
    D z(Shape{4}, {500.0, -500.0, 500.0, -500.0});
    D t(Shape{4}, {1.0, 0.0, 0.0, 1.0});
    d2a::NoGradGuard ng;
    double l = d2a::bce_with_logits(z, t).item();
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(250.0));  // two perfect terms, two 500-logit misses, mean over 4
}
