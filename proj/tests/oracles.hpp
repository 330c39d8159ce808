// Reference implementations frozen for the tests. Deliberately naive: the
// production kernels must reproduce these, never the other way round.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "d2a/ops.hpp"

namespace oracle {

using d2a::ConvSpec;

// Definition-shaped convolution: seven nested loops, zero padding by skip.
inline std::vector<double> conv(const std::vector<double>& in, int64_t B, int64_t Cin, int64_t H,
                                int64_t W, const std::vector<double>& w,
                                const std::vector<double>* bias, const ConvSpec& sp) {
    int64_t Ho = sp.out_extent(H), Wo = sp.out_extent(W);
    int64_t Cig = Cin / sp.groups, Cog = sp.out_channels / sp.groups;
    std::vector<double> out((size_t)(B * sp.out_channels * Ho * Wo), 0.0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t oc = 0; oc < sp.out_channels; ++oc)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = bias ? (*bias)[oc] : 0.0;
                    int64_t g = oc / Cog;
                    for (int64_t ci = 0; ci < Cig; ++ci)
                        for (int64_t ky = 0; ky < sp.kernel; ++ky)
                            for (int64_t kx = 0; kx < sp.kernel; ++kx) {
                                int64_t iy = oy * sp.stride + ky * sp.dilation - sp.padding;
                                int64_t ix = ox * sp.stride + kx * sp.dilation - sp.padding;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += in[((b * Cin + g * Cig + ci) * H + iy) * W + ix] *
                                       w[((oc * Cig + ci) * sp.kernel + ky) * sp.kernel + kx];
                            }
                    out[((b * sp.out_channels + oc) * Ho + oy) * Wo + ox] = acc;
                }
    return out;
}

// One bilinear sample with align_corners=false semantics and edge clamping.
inline double bilinear_at(const std::vector<double>& img, int64_t H, int64_t W, int64_t plane,
                          double sy, double sx) {
    sy = std::min(std::max(sy, 0.0), (double)(H - 1));
    sx = std::min(std::max(sx, 0.0), (double)(W - 1));
    int64_t y0 = (int64_t)std::floor(sy), x0 = (int64_t)std::floor(sx);
    int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    double fy = sy - y0, fx = sx - x0;
    const double* p = img.data() + plane * H * W;
    return (1 - fy) * ((1 - fx) * p[y0 * W + x0] + fx * p[y0 * W + x1]) +
           fy * ((1 - fx) * p[y1 * W + x0] + fx * p[y1 * W + x1]);
}

inline std::vector<double> upsample(const std::vector<double>& in, int64_t planes, int64_t H,
                                    int64_t W, int64_t s) {
    std::vector<double> out((size_t)(planes * H * s * W * s));
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t oy = 0; oy < H * s; ++oy)
            for (int64_t ox = 0; ox < W * s; ++ox)
                out[(p * H * s + oy) * W * s + ox] =
                    bilinear_at(in, H, W, p, (oy + 0.5) / s - 0.5, (ox + 0.5) / s - 0.5);
    return out;
}

inline std::vector<double> maxpool(const std::vector<double>& in, int64_t planes, int64_t H,
                                   int64_t W) {
    std::vector<double> out((size_t)(planes * (H / 2) * (W / 2)));
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t oy = 0; oy < H / 2; ++oy)
            for (int64_t ox = 0; ox < W / 2; ++ox) {
                double m = -1e300;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        m = std::max(m, in[(p * H + 2 * oy + dy) * W + 2 * ox + dx]);
                out[(p * (H / 2) + oy) * (W / 2) + ox] = m;
            }
    return out;
}

// Scalar loss references on logits.
inline double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double dice_loss(const std::vector<double>& z, const std::vector<double>& t, int64_t B,
                        double eps) {
    int64_t n = (int64_t)z.size() / B;
    double acc = 0;
    for (int64_t b = 0; b < B; ++b) {
        double inter = 0, psum = 0, tsum = 0;
        for (int64_t i = 0; i < n; ++i) {
            double p = sigmoid(z[b * n + i]);
            inter += p * t[b * n + i];
            psum += p;
            tsum += t[b * n + i];
        }
        acc += 1.0 - (2 * inter + eps) / (psum + tsum + eps);
    }
    return acc / B;
}

inline double bce_loss(const std::vector<double>& z, const std::vector<double>& t) {
    double acc = 0;
    for (size_t i = 0; i < z.size(); ++i)
        acc += std::max(z[i], 0.0) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
    return acc / (double)z.size();
}

// Counting metrics oracle.
struct Counts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts count(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth) {
    Counts c;
    for (size_t i = 0; i < pred.size(); ++i) {
        c.tp += pred[i] == 1 && truth[i] == 1;
        c.fp += pred[i] == 1 && truth[i] == 0;
        c.fn += pred[i] == 0 && truth[i] == 1;
        c.tn += pred[i] == 0 && truth[i] == 0;
    }
    return c;
}

// Central finite differences on every requires-grad leaf of a double graph.
// Returns the worst relative error encountered.
template <typename LossFn>
double gradcheck(LossFn loss_fn, std::vector<d2a::Tensor<double>>& leaves, double h = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    loss_fn().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad());
    double worst = 0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].values();
        for (size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            double fp, fm;
            vals[i] = orig + h;
            {
                d2a::NoGradGuard ng;
                fp = loss_fn().item();
            }
            vals[i] = orig - h;
            {
                d2a::NoGradGuard ng;
                fm = loss_fn().item();
            }
            vals[i] = orig;
            double num = (fp - fm) / (2 * h);
            double scale = std::max(1.0, std::max(std::abs(num), std::abs(analytic[li][i])));
            worst = std::max(worst, std::abs(num - analytic[li][i]) / scale);
        }
    }
    for (auto& l : leaves) l.zero_grad();
    return worst;
}

}  // namespace oracle
