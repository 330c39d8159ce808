#include <doctest.h>

#include "d2a/attention.hpp"
#include "oracles.hpp"

using d2a::Shape;
using D = d2a::Tensor<double>;

TEST_CASE("gam shapes and the exact zero-parameter quarter law") {
    std::mt19937_64 rng(7);
    d2a::GAMParams<double> p(16, 8, 16, rng);
    CHECK(p.hidden() == 1);
    D f = D::randn(Shape{2, 8, 8, 8}, rng);
    D g = D::randn(Shape{2, 16, 4, 4}, rng);
    d2a::NoGradGuard ng;
    D zs, zc;
    D out = d2a::gam_forward(f, g, p, &zs, &zc);
    CHECK(out.shape() == f.shape());
    CHECK(zs.shape() == Shape{2, 1, 8, 8});
    CHECK(zc.shape() == Shape{2, 8, 1, 1});
    for (double v : zs.values()) CHECK((v > 0.0 && v < 1.0));
    for (double v : zc.values()) CHECK((v > 0.0 && v < 1.0));

    p.zero_all();
    D quarter = d2a::gam_forward(f, g, p);
    for (int64_t i = 0; i < f.numel(); ++i) CHECK(quarter.values()[i] == 0.25 * f.values()[i]);
}

TEST_CASE("dam zero-parameter quarter law and attention map ranges") {
    std::mt19937_64 rng(8);
    d2a::DAMParams<double> p(8, 2, rng);
    CHECK(p.hidden() == 4);
    D f = D::randn(Shape{2, 8, 6, 6}, rng);
    d2a::NoGradGuard ng;
    D zs, zc;
    D out = d2a::dam_forward(f, p, &zs, &zc);
    CHECK(out.shape() == f.shape());
    CHECK(zs.shape() == Shape{2, 1, 6, 6});
    CHECK(zc.shape() == Shape{2, 8, 1, 1});

    p.zero_all();
    D quarter = d2a::dam_forward(f, p);
    for (int64_t i = 0; i < f.numel(); ++i) CHECK(quarter.values()[i] == 0.25 * f.values()[i]);
}

TEST_CASE("gam insists on the 2x extent relation between skip and guide") {
    std::mt19937_64 rng(9);
    d2a::GAMParams<double> p(4, 4, 16, rng);
    D f = D::randn(Shape{1, 4, 9, 9}, rng);
    D g = D::randn(Shape{1, 4, 4, 4}, rng);
    CHECK_THROWS_WITH_AS(d2a::gam_forward(f, g, p), doctest::Contains("exactly 2x"),
                         std::runtime_error);
}

TEST_CASE("channel attention is spatially uniform, spatial attention channel-uniform") {
    std::mt19937_64 rng(10);
    d2a::DAMParams<double> p(4, 2, rng);
    D f = D::randn(Shape{1, 4, 4, 4}, rng);
    d2a::NoGradGuard ng;
    D zs, zc;
    d2a::dam_forward(f, p, &zs, &zc);
    // a channel map has one value per channel; a spatial map one per pixel.
    // scaling any single input pixel must leave zc's other channels' ratios
    // intact but this structural fact is already encoded by the shapes above;
    // here we pin the multiplicative composition: out = f * zs * zc.
    D out = d2a::dam_forward(f, p);
    for (int64_t c = 0; c < 4; ++c)
        for (int64_t i = 0; i < 16; ++i) {
            double expect = f.values()[c * 16 + i] * zs.values()[i] * zc.values()[c];
            CHECK(out.values()[c * 16 + i] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("gam gradcheck through every parameter") {
    std::mt19937_64 rng(11);
    d2a::GAMParams<double> p(4, 3, 2, rng);
    D f = D::randn(Shape{2, 3, 4, 4}, rng);
    D g = D::randn(Shape{2, 4, 2, 2}, rng);
    f.set_requires_grad(true);
    g.set_requires_grad(true);
    std::vector<D> leaves = {f, g};
    for (auto& [name, t] : p.params()) leaves.push_back(*t);
    auto loss = [&]() { return d2a::sum(d2a::mul(d2a::gam_forward(f, g, p),
                                                 d2a::gam_forward(f, g, p))); };
    CHECK(oracle::gradcheck(loss, leaves) < 1e-6);
}

TEST_CASE("dam gradcheck through every parameter") {
    std::mt19937_64 rng(12);
    d2a::DAMParams<double> p(4, 2, rng);
    D f = D::randn(Shape{2, 4, 4, 4}, rng);
    f.set_requires_grad(true);
    std::vector<D> leaves = {f};
    for (auto& [name, t] : p.params()) leaves.push_back(*t);
    auto loss = [&]() { return d2a::sum(d2a::mul(d2a::dam_forward(f, p), d2a::dam_forward(f, p))); };
    CHECK(oracle::gradcheck(loss, leaves) < 1e-6);
}
