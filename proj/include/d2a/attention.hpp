#pragma once

#include "d2a/ops.hpp"

namespace d2a {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>*>>;

namespace detail {

// He fan-in normal init for conv/linear weights.
template <typename T>
void he_init(Tensor<T>& w, int64_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (double)fan_in));
    for (auto& x : w.values()) x = T(dist(rng));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gate attention module parameters. The channel MLP maps the guide's channel
// count C_g down to max(1, C_g/r) and back out to the skip feature's C_f, so
// the channel attention for F is produced from G.
// ---------------------------------------------------------------------------
template <typename T>
struct GAMParams {
    int64_t cg = 0, cf = 0, reduce_ratio = 16;
    Tensor<T> mlp_w0, mlp_w1;            // [hid, cg], [cf, hid]
    Tensor<T> squeeze_f_w, squeeze_f_b;  // 1x1 conv, cf -> 1
    Tensor<T> squeeze_g_w, squeeze_g_b;  // 1x1 conv, cg -> 1
    Tensor<T> spatial_w[3], spatial_b[3];  // k = 3, 5, 7 on the 2-channel map

    static constexpr int64_t kKernels[3] = {3, 5, 7};

    GAMParams() = default;
    GAMParams(int64_t cg_, int64_t cf_, int64_t r, std::mt19937_64& rng)
        : cg(cg_), cf(cf_), reduce_ratio(r) {
        int64_t hid = hidden();
        mlp_w0 = Tensor<T>(Shape{hid, cg});
        mlp_w1 = Tensor<T>(Shape{cf, hid});
        detail::he_init(mlp_w0, cg, rng);
        detail::he_init(mlp_w1, hid, rng);
        squeeze_f_w = Tensor<T>(Shape{1, cf, 1, 1});
        squeeze_g_w = Tensor<T>(Shape{1, cg, 1, 1});
        detail::he_init(squeeze_f_w, cf, rng);
        detail::he_init(squeeze_g_w, cg, rng);
        squeeze_f_b = Tensor<T>(Shape{1});
        squeeze_g_b = Tensor<T>(Shape{1});
        for (int i = 0; i < 3; ++i) {
            int64_t k = kKernels[i];
            spatial_w[i] = Tensor<T>(Shape{1, 2, k, k});
            detail::he_init(spatial_w[i], 2 * k * k, rng);
            spatial_b[i] = Tensor<T>(Shape{1});
        }
        for (auto& [name, t] : params()) t->set_requires_grad(true);
    }

    int64_t hidden() const { return std::max<int64_t>(1, cg / reduce_ratio); }

    NamedParams<T> params() {
        NamedParams<T> p = {{"mlp_w0", &mlp_w0},           {"mlp_w1", &mlp_w1},
                            {"squeeze_f_w", &squeeze_f_w}, {"squeeze_f_b", &squeeze_f_b},
                            {"squeeze_g_w", &squeeze_g_w}, {"squeeze_g_b", &squeeze_g_b}};
        const char* names_w[3] = {"spatial3_w", "spatial5_w", "spatial7_w"};
        const char* names_b[3] = {"spatial3_b", "spatial5_b", "spatial7_b"};
        for (int i = 0; i < 3; ++i) {
            p.push_back({names_w[i], &spatial_w[i]});
            p.push_back({names_b[i], &spatial_b[i]});
        }
        return p;
    }

    void zero_all() {
        for (auto& [name, t] : params()) std::fill(t->values().begin(), t->values().end(), T(0));
    }
};

// Decoder attention module parameters; the single-input analogue of GAM.
template <typename T>
struct DAMParams {
    int64_t c = 0, reduce_ratio = 16;
    Tensor<T> mlp_w0, mlp_w1;        // [hid, c], [c, hid]
    Tensor<T> squeeze_w, squeeze_b;  // 1x1 conv, c -> 1
    Tensor<T> spatial_w[3], spatial_b[3];  // k = 3, 5, 7 on the squeezed map

    static constexpr int64_t kKernels[3] = {3, 5, 7};

    DAMParams() = default;
    DAMParams(int64_t c_, int64_t r, std::mt19937_64& rng) : c(c_), reduce_ratio(r) {
        int64_t hid = hidden();
        mlp_w0 = Tensor<T>(Shape{hid, c});
        mlp_w1 = Tensor<T>(Shape{c, hid});
        detail::he_init(mlp_w0, c, rng);
        detail::he_init(mlp_w1, hid, rng);
        squeeze_w = Tensor<T>(Shape{1, c, 1, 1});
        detail::he_init(squeeze_w, c, rng);
        squeeze_b = Tensor<T>(Shape{1});
        for (int i = 0; i < 3; ++i) {
            int64_t k = kKernels[i];
            spatial_w[i] = Tensor<T>(Shape{1, 1, k, k});
            detail::he_init(spatial_w[i], k * k, rng);
            spatial_b[i] = Tensor<T>(Shape{1});
        }
        for (auto& [name, t] : params()) t->set_requires_grad(true);
    }

    int64_t hidden() const { return std::max<int64_t>(1, c / reduce_ratio); }

    NamedParams<T> params() {
        NamedParams<T> p = {{"mlp_w0", &mlp_w0},
                            {"mlp_w1", &mlp_w1},
                            {"squeeze_w", &squeeze_w},
                            {"squeeze_b", &squeeze_b}};
        const char* names_w[3] = {"spatial3_w", "spatial5_w", "spatial7_w"};
        const char* names_b[3] = {"spatial3_b", "spatial5_b", "spatial7_b"};
        for (int i = 0; i < 3; ++i) {
            p.push_back({names_w[i], &spatial_w[i]});
            p.push_back({names_b[i], &spatial_b[i]});
        }
        return p;
    }

    void zero_all() {
        for (auto& [name, t] : params()) std::fill(t->values().begin(), t->values().end(), T(0));
    }
};

// Channel attention from the guide: sigmoid(W1(ReLU(W0(avgpool(G))))), [B,Cf,1,1].
template <typename T>
Tensor<T> gam_channel_attention(const Tensor<T>& guide, GAMParams<T>& p) {
    check(guide.ndim() == 4 && guide.dim(1) == p.cg,
          "gam channel attention: guide has " + std::to_string(guide.dim(1)) +
              " channels, params expect " + std::to_string(p.cg));
    int64_t B = guide.dim(0);
    Tensor<T> pooled = reshape(global_avg_pool(guide), Shape{B, p.cg});
    Tensor<T> h = relu(linear(pooled, p.mlp_w0));
    Tensor<T> z = sigmoid(linear(h, p.mlp_w1));
    return reshape(z, Shape{B, p.cf, 1, 1});
}

namespace detail {

template <typename T>
Tensor<T> squeeze_1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return conv2d(x, w, &b, 1, 0, 1);
}

template <typename T>
Tensor<T> multi_kernel_spatial(const Tensor<T>& m, Tensor<T> (&w)[3], Tensor<T> (&b)[3]) {
    static constexpr int64_t ks[3] = {3, 5, 7};
    Tensor<T> acc;
    for (int i = 0; i < 3; ++i) {
        Tensor<T> c = conv2d(m, w[i], &b[i], 1, (ks[i] - 1) / 2, 1);
        acc = i == 0 ? c : add(acc, c);
    }
    return sigmoid(acc);
}

}  // namespace detail

// Spatial attention: sigmoid(f3([Fr,Gr]) + f5([Fr,Gr]) + f7([Fr,Gr])) with
// Fr = 1x1 squeeze of F and Gr = 2x upsample of the 1x1 squeeze of G.
template <typename T>
Tensor<T> gam_spatial_attention(const Tensor<T>& feat, const Tensor<T>& guide, GAMParams<T>& p) {
    check(feat.ndim() == 4 && guide.ndim() == 4, "gam spatial attention expects 4-D tensors");
    check(feat.dim(1) == p.cf && guide.dim(1) == p.cg,
          "gam spatial attention: channel counts do not match params");
    check(feat.dim(2) == 2 * guide.dim(2) && feat.dim(3) == 2 * guide.dim(3),
          "gam spatial attention: feature extent must be exactly 2x the guide extent, got " +
              shape_str(feat.shape()) + " vs " + shape_str(guide.shape()));
    Tensor<T> fr = detail::squeeze_1x1(feat, p.squeeze_f_w, p.squeeze_f_b);
    Tensor<T> gr = bilinear_upsample(detail::squeeze_1x1(guide, p.squeeze_g_w, p.squeeze_g_b), 2);
    Tensor<T> cat = concat<T>({fr, gr});
    return detail::multi_kernel_spatial(cat, p.spatial_w, p.spatial_b);
}

// Fused gate attention: Z(F) = F * Zs(F) * Zc(F).
template <typename T>
Tensor<T> gam_forward(const Tensor<T>& feat, const Tensor<T>& guide, GAMParams<T>& p,
                      Tensor<T>* spatial_map = nullptr, Tensor<T>* channel_map = nullptr) {
    Tensor<T> zs = gam_spatial_attention(feat, guide, p);
    Tensor<T> zc = gam_channel_attention(guide, p);
    if (spatial_map) *spatial_map = zs;
    if (channel_map) *channel_map = zc;
    return mul(mul(feat, zs), zc);
}

// Decoder attention: Z(F) = F * sigmoid(sum_k f_k(squeeze(F))) * sigmoid(MLP(avgpool(F))).
template <typename T>
Tensor<T> dam_forward(const Tensor<T>& feat, DAMParams<T>& p, Tensor<T>* spatial_map = nullptr,
                      Tensor<T>* channel_map = nullptr) {
    check(feat.ndim() == 4 && feat.dim(1) == p.c,
          "dam: input has " + std::to_string(feat.dim(1)) + " channels, params expect " +
              std::to_string(p.c));
    int64_t B = feat.dim(0);
    Tensor<T> pooled = reshape(global_avg_pool(feat), Shape{B, p.c});
    Tensor<T> zc = reshape(sigmoid(linear(relu(linear(pooled, p.mlp_w0)), p.mlp_w1)),
                           Shape{B, p.c, 1, 1});
    Tensor<T> squeezed = detail::squeeze_1x1(feat, p.squeeze_w, p.squeeze_b);
    Tensor<T> zs = detail::multi_kernel_spatial(squeezed, p.spatial_w, p.spatial_b);
    if (spatial_map) *spatial_map = zs;
    if (channel_map) *channel_map = zc;
    return mul(mul(feat, zs), zc);
}

}  // namespace d2a
