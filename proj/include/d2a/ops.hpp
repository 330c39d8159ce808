#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "d2a/tensor.hpp"

namespace d2a {

// ---------------------------------------------------------------------------
// Convolution descriptor. Output extent follows
//   out = floor((in + 2*padding - K) / stride) + 1,  K = k + (k-1)(n-1)
// where n is the dilation rate.
// ---------------------------------------------------------------------------
struct ConvSpec {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int64_t kernel = 3;
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t dilation = 1;
    int64_t groups = 1;
    bool bias = true;

    int64_t equivalent_kernel() const { return kernel + (kernel - 1) * (dilation - 1); }

    int64_t out_extent(int64_t in) const {
        return (in + 2 * padding - equivalent_kernel()) / stride + 1;
    }

    void validate() const {
        check(in_channels >= 1 && out_channels >= 1 && kernel >= 1 && stride >= 1 &&
                  dilation >= 1 && groups >= 1,
              "conv spec fields must be >= 1 (padding may be 0)");
        check(padding >= 0, "conv padding must be non-negative");
        check(in_channels % groups == 0 && out_channels % groups == 0,
              "conv channels must be divisible by groups");
    }
};

namespace detail {

template <typename T>
inline void add_into(std::vector<T>& dst, const std::vector<T>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
inline bool wants_grad(const Tensor<T>& t) {
    return t.defined() && t.requires_grad();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops. Broadcasting is deliberately restricted: the only legal
// mismatched pairs are a [B,C,H,W] tensor against a [B,C,1,1] channel map or
// a [B,1,H,W] spatial map (either argument order).
// ---------------------------------------------------------------------------

enum class BroadcastKind { None, ChannelMap, SpatialMap };

template <typename T>
inline BroadcastKind classify_broadcast(const Shape& big, const Shape& small) {
    if (big == small) return BroadcastKind::None;
    if (big.size() == 4 && small.size() == 4 && big[0] == small[0]) {
        if (small[1] == big[1] && small[2] == 1 && small[3] == 1) return BroadcastKind::ChannelMap;
        if (small[1] == 1 && small[2] == big[2] && small[3] == big[3])
            return BroadcastKind::SpatialMap;
    }
    throw std::runtime_error("illegal broadcast between shapes " + shape_str(big) + " and " +
                             shape_str(small) + "; only [B,C,1,1] and [B,1,H,W] maps may "
                             "broadcast against [B,C,H,W]");
}

namespace detail {

// Maps a flat index of the full tensor onto the flat index of a broadcast map.
struct BroadcastIndex {
    int64_t C, H, W;
    BroadcastKind kind;
    int64_t operator()(int64_t flat) const {
        int64_t hw = H * W;
        int64_t b = flat / (C * hw);
        int64_t rem = flat % (C * hw);
        if (kind == BroadcastKind::ChannelMap) return b * C + rem / hw;
        return b * hw + rem % hw;  // SpatialMap
    }
};

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const Tensor<T>*big = &a, *small = &b;
    BroadcastKind kind;
    if (a.numel() >= b.numel()) {
        kind = classify_broadcast<T>(a.shape(), b.shape());
    } else {
        big = &b;
        small = &a;
        kind = classify_broadcast<T>(b.shape(), a.shape());
    }
    Tensor<T> out(big->shape());
    const auto& bv = big->values();
    const auto& sv = small->values();
    auto& ov = out.values();
    if (kind == BroadcastKind::None) {
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = bv[i] + sv[i];
    } else {
        detail::BroadcastIndex map{big->dim(1), big->dim(2), big->dim(3), kind};
        for (int64_t i = 0; i < (int64_t)ov.size(); ++i) ov[i] = bv[i] + sv[map(i)];
    }
    if (grad_mode() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto bn = big->node();
        auto sn = small->node();
        on->parents = {bn, sn};
        Node<T>* self = on.get();
        int64_t C = big->ndim() == 4 ? big->dim(1) : 0;
        int64_t H = big->ndim() == 4 ? big->dim(2) : 0;
        int64_t W = big->ndim() == 4 ? big->dim(3) : 0;
        on->backward_fn = [self, bn, sn, kind, C, H, W]() {
            if (self->grad.empty()) return;
            const auto& g = self->grad;
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::add_into(bn->grad, g);
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                if (kind == BroadcastKind::None) {
                    detail::add_into(sn->grad, g);
                } else {
                    detail::BroadcastIndex map{C, H, W, kind};
                    for (int64_t i = 0; i < (int64_t)g.size(); ++i) sn->grad[map(i)] += g[i];
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const Tensor<T>*big = &a, *small = &b;
    BroadcastKind kind;
    if (a.numel() >= b.numel()) {
        kind = classify_broadcast<T>(a.shape(), b.shape());
    } else {
        big = &b;
        small = &a;
        kind = classify_broadcast<T>(b.shape(), a.shape());
    }
    Tensor<T> out(big->shape());
    const auto& bv = big->values();
    const auto& sv = small->values();
    auto& ov = out.values();
    detail::BroadcastIndex map{big->ndim() == 4 ? big->dim(1) : 0,
                               big->ndim() == 4 ? big->dim(2) : 0,
                               big->ndim() == 4 ? big->dim(3) : 0, kind};
    if (kind == BroadcastKind::None) {
        for (size_t i = 0; i < ov.size(); ++i) ov[i] = bv[i] * sv[i];
    } else {
        for (int64_t i = 0; i < (int64_t)ov.size(); ++i) ov[i] = bv[i] * sv[map(i)];
    }
    if (grad_mode() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto bn = big->node();
        auto sn = small->node();
        on->parents = {bn, sn};
        Node<T>* self = on.get();
        on->backward_fn = [self, bn, sn, kind, map]() {
            if (self->grad.empty()) return;
            const auto& g = self->grad;
            if (kind == BroadcastKind::None) {
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * sn->value[i];
                }
                if (sn->requires_grad) {
                    sn->ensure_grad();
                    for (size_t i = 0; i < g.size(); ++i) sn->grad[i] += g[i] * bn->value[i];
                }
            } else {
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int64_t i = 0; i < (int64_t)g.size(); ++i)
                        bn->grad[i] += g[i] * sn->value[map(i)];
                }
                if (sn->requires_grad) {
                    sn->ensure_grad();
                    for (int64_t i = 0; i < (int64_t)g.size(); ++i)
                        sn->grad[map(i)] += g[i] * bn->value[i];
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, mul_scalar(b, T(-1)));
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
    if (grad_mode() && a.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        on->parents = {an};
        Node<T>* self = on.get();
        on->backward_fn = [self, an, s]() {
            if (self->grad.empty()) return;
            an->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) an->grad[i] += self->grad[i] * s;
        };
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + s;
    if (grad_mode() && a.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        on->parents = {an};
        Node<T>* self = on.get();
        on->backward_fn = [self, an]() {
            if (self->grad.empty()) return;
            an->ensure_grad();
            detail::add_into(an->grad, self->grad);
        };
    }
    return out;
}

// Elementwise division, same shapes only.
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(),
          "div requires equal shapes, got " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    if (grad_mode() && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        auto bn = b.node();
        on->parents = {an, bn};
        Node<T>* self = on.get();
        on->backward_fn = [self, an, bn]() {
            if (self->grad.empty()) return;
            const auto& g = self->grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] / bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i)
                    bn->grad[i] -= g[i] * an->value[i] / (bn->value[i] * bn->value[i]);
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
    if (grad_mode() && a.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        on->parents = {an};
        Node<T>* self = on.get();
        on->backward_fn = [self, an]() {
            if (self->grad.empty()) return;
            an->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i)
                if (an->value[i] > T(0)) an->grad[i] += self->grad[i];
        };
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) {
        T x = av[i];
        ov[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                          : std::exp(x) / (T(1) + std::exp(x));
    }
    if (grad_mode() && a.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        on->parents = {an};
        Node<T>* self = on.get();
        on->backward_fn = [self, an]() {
            if (self->grad.empty()) return;
            an->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i) {
                T y = self->value[i];
                an->grad[i] += self->grad[i] * y * (T(1) - y);
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (grad_mode() && a.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        on->parents = {an};
        Node<T>* self = on.get();
        on->backward_fn = [self, an]() {
            if (self->grad.empty()) return;
            an->ensure_grad();
            T g = self->grad[0];
            for (auto& x : an->grad) x += g;
        };
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return mul_scalar(sum(a), T(1) / T(a.numel()));
}

// Per-sample reduction over all non-batch axes: [B,...] -> [B].
template <typename T>
Tensor<T> sum_per_sample(const Tensor<T>& a) {
    check(a.ndim() >= 1, "sum_per_sample needs a batched tensor");
    int64_t B = a.dim(0);
    int64_t stride = a.numel() / B;
    Tensor<T> out(Shape{B});
    const auto& av = a.values();
    for (int64_t b = 0; b < B; ++b) {
        T acc = 0;
        for (int64_t i = 0; i < stride; ++i) acc += av[b * stride + i];
        out.values()[b] = acc;
    }
    if (grad_mode() && a.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        on->parents = {an};
        Node<T>* self = on.get();
        on->backward_fn = [self, an, B, stride]() {
            if (self->grad.empty()) return;
            an->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < stride; ++i) an->grad[b * stride + i] += self->grad[b];
        };
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    check(numel_of(shape) == a.numel(),
          "reshape to " + shape_str(shape) + " changes element count of " + shape_str(a.shape()));
    Tensor<T> out(std::move(shape), a.values());
    if (grad_mode() && a.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto an = a.node();
        on->parents = {an};
        Node<T>* self = on.get();
        on->backward_fn = [self, an]() {
            if (self->grad.empty()) return;
            an->ensure_grad();
            detail::add_into(an->grad, self->grad);
        };
    }
    return out;
}

// Channel-axis concatenation of 4-D tensors.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
    check(!parts.empty(), "concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    check(s0.size() == 4, "concat expects 4-D tensors");
    int64_t Ctot = 0;
    for (const auto& p : parts) {
        check(p.ndim() == 4 && p.dim(0) == s0[0] && p.dim(2) == s0[2] && p.dim(3) == s0[3],
              "concat inputs must agree on batch and spatial extents; got " +
                  shape_str(p.shape()) + " vs " + shape_str(s0));
        Ctot += p.dim(1);
    }
    int64_t B = s0[0], H = s0[2], W = s0[3], hw = H * W;
    Tensor<T> out(Shape{B, Ctot, H, W});
    auto& ov = out.values();
    bool rg = false;
    for (int64_t b = 0; b < B; ++b) {
        int64_t coff = 0;
        for (const auto& p : parts) {
            int64_t C = p.dim(1);
            std::copy(p.data() + b * C * hw, p.data() + (b + 1) * C * hw,
                      ov.data() + (b * Ctot + coff) * hw);
            coff += C;
        }
    }
    for (const auto& p : parts) rg = rg || p.requires_grad();
    if (grad_mode() && rg) {
        out.set_requires_grad(true);
        auto on = out.node();
        std::vector<std::shared_ptr<Node<T>>> pn;
        for (const auto& p : parts) pn.push_back(p.node());
        on->parents = pn;
        Node<T>* self = on.get();
        on->backward_fn = [self, pn, B, Ctot, hw]() {
            if (self->grad.empty()) return;
            for (int64_t b = 0; b < B; ++b) {
                int64_t coff = 0;
                for (auto& p : pn) {
                    int64_t C = (int64_t)p->value.size() / (B * hw);
                    if (p->requires_grad) {
                        p->ensure_grad();
                        const T* src = self->grad.data() + (b * Ctot + coff) * hw;
                        T* dst = p->grad.data() + b * C * hw;
                        for (int64_t i = 0; i < C * hw; ++i) dst[i] += src[i];
                    }
                    coff += C;
                }
            }
        };
    }
    return out;
}

// View of channels [c0, c1) of a 4-D tensor (copying; test/debug helper).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int64_t c0, int64_t c1) {
    check(a.ndim() == 4 && c0 >= 0 && c1 <= a.dim(1) && c0 < c1, "bad channel slice");
    int64_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3), hw = H * W;
    Tensor<T> out(Shape{B, c1 - c0, H, W});
    for (int64_t b = 0; b < B; ++b)
        std::copy(a.data() + (b * C + c0) * hw, a.data() + (b * C + c1) * hw,
                  out.data() + b * (c1 - c0) * hw);
    return out;
}

// Fully connected layer: x [B,Cin], w [Cout,Cin], optional bias [Cout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
    check(x.ndim() == 2 && w.ndim() == 2, "linear expects 2-D input and weight");
    int64_t B = x.dim(0), Cin = x.dim(1), Cout = w.dim(0);
    check(w.dim(1) == Cin, "linear weight in-features " + std::to_string(w.dim(1)) +
                               " do not match input features " + std::to_string(Cin));
    if (bias) check(bias->ndim() == 1 && bias->dim(0) == Cout, "linear bias length mismatch");
    Tensor<T> out(Shape{B, Cout});
    auto& ov = out.values();
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < Cout; ++o) {
            T acc = bias ? bias->values()[o] : T(0);
            const T* xr = xv.data() + b * Cin;
            const T* wr = wv.data() + o * Cin;
            for (int64_t i = 0; i < Cin; ++i) acc += xr[i] * wr[i];
            ov[b * Cout + o] = acc;
        }
    bool rg = x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad());
    if (grad_mode() && rg) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto xn = x.node();
        auto wn = w.node();
        std::shared_ptr<Node<T>> bn = bias ? bias->node() : nullptr;
        on->parents = {xn, wn};
        if (bn) on->parents.push_back(bn);
        Node<T>* self = on.get();
        on->backward_fn = [self, xn, wn, bn, B, Cin, Cout]() {
            if (self->grad.empty()) return;
            const auto& g = self->grad;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t o = 0; o < Cout; ++o) {
                        T go = g[b * Cout + o];
                        const T* wr = wn->value.data() + o * Cin;
                        T* xr = xn->grad.data() + b * Cin;
                        for (int64_t i = 0; i < Cin; ++i) xr[i] += go * wr[i];
                    }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t o = 0; o < Cout; ++o) {
                        T go = g[b * Cout + o];
                        const T* xr = xn->value.data() + b * Cin;
                        T* wr = wn->grad.data() + o * Cin;
                        for (int64_t i = 0; i < Cin; ++i) wr[i] += go * xr[i];
                    }
            }
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t o = 0; o < Cout; ++o) bn->grad[o] += g[b * Cout + o];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: direct dilated cross-correlation, NCHW, optional groups.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>* bias = nullptr) {
    spec.validate();
    check(input.ndim() == 4, "conv2d input must be 4-D [B,C,H,W], got " + shape_str(input.shape()));
    int64_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(Cin == spec.in_channels, "conv2d input channel count " + std::to_string(Cin) +
                                       " does not match spec in_channels " +
                                       std::to_string(spec.in_channels));
    int64_t G = spec.groups, k = spec.kernel;
    int64_t Cig = Cin / G, Cog = spec.out_channels / G;
    check(weight.ndim() == 4 && weight.dim(0) == spec.out_channels && weight.dim(1) == Cig &&
              weight.dim(2) == k && weight.dim(3) == k,
          "conv2d weight shape " + shape_str(weight.shape()) + " does not match spec [" +
              std::to_string(spec.out_channels) + "," + std::to_string(Cig) + "," +
              std::to_string(k) + "," + std::to_string(k) + "]");
    if (bias)
        check(bias->ndim() == 1 && bias->dim(0) == spec.out_channels,
              "conv2d bias length mismatch");
    int64_t Ho = spec.out_extent(H), Wo = spec.out_extent(W);
    check(Ho >= 1 && Wo >= 1, "kernel exceeds padded input: equivalent kernel " +
                                  std::to_string(spec.equivalent_kernel()) + " vs padded extent " +
                                  std::to_string(std::min(H, W) + 2 * spec.padding));
    int64_t s = spec.stride, d = spec.dilation, p = spec.padding;
    Tensor<T> out(Shape{B, spec.out_channels, Ho, Wo});
    auto& ov = out.values();
    const auto& iv = input.values();
    const auto& wv = weight.values();

    // valid output range for a given kernel tap: in-coordinate = o*s + t*d - p in [0, extent)
    auto lo = [&](int64_t t) { return std::max<int64_t>(0, (p - t * d + s - 1) / s); };
    auto hi = [&](int64_t t, int64_t ext, int64_t omax) {
        int64_t v = (ext - 1 - t * d + p) / s + 1;
        return std::min(omax, std::max<int64_t>(0, v));
    };

    for (int64_t b = 0; b < B; ++b)
        for (int64_t g = 0; g < G; ++g)
            for (int64_t co = 0; co < Cog; ++co) {
                int64_t oc = g * Cog + co;
                T* orow = ov.data() + ((b * spec.out_channels + oc) * Ho) * Wo;
                T bv = bias ? bias->values()[oc] : T(0);
                std::fill(orow, orow + Ho * Wo, bv);
                for (int64_t ci = 0; ci < Cig; ++ci) {
                    const T* iplane = iv.data() + ((b * Cin + g * Cig + ci) * H) * W;
                    const T* wk = wv.data() + ((oc * Cig + ci) * k) * k;
                    for (int64_t ky = 0; ky < k; ++ky) {
                        int64_t oy0 = lo(ky), oy1 = hi(ky, H, Ho);
                        for (int64_t kx = 0; kx < k; ++kx) {
                            T wval = wk[ky * k + kx];
                            if (wval == T(0)) continue;
                            int64_t ox0 = lo(kx), ox1 = hi(kx, W, Wo);
                            for (int64_t oy = oy0; oy < oy1; ++oy) {
                                int64_t iy = oy * s + ky * d - p;
                                const T* ir = iplane + iy * W + kx * d - p;
                                T* orr = orow + oy * Wo;
                                if (s == 1) {
                                    for (int64_t ox = ox0; ox < ox1; ++ox)
                                        orr[ox] += wval * ir[ox];
                                } else {
                                    for (int64_t ox = ox0; ox < ox1; ++ox)
                                        orr[ox] += wval * ir[ox * s];
                                }
                            }
                        }
                    }
                }
            }

    bool rg = input.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
    if (grad_mode() && rg) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto in_n = input.node();
        auto w_n = weight.node();
        std::shared_ptr<Node<T>> b_n = bias ? bias->node() : nullptr;
        on->parents = {in_n, w_n};
        if (b_n) on->parents.push_back(b_n);
        Node<T>* self = on.get();
        ConvSpec sp = spec;
        on->backward_fn = [self, in_n, w_n, b_n, sp, B, Cin, H, W, Ho, Wo]() {
            if (self->grad.empty()) return;
            const auto& g = self->grad;
            int64_t G = sp.groups, k = sp.kernel, s = sp.stride, d = sp.dilation, p = sp.padding;
            int64_t Cig = Cin / G, Cog = sp.out_channels / G;
            auto lo = [&](int64_t t) { return std::max<int64_t>(0, (p - t * d + s - 1) / s); };
            auto hi = [&](int64_t t, int64_t ext, int64_t omax) {
                int64_t v = (ext - 1 - t * d + p) / s + 1;
                return std::min(omax, std::max<int64_t>(0, v));
            };
            if (in_n->requires_grad) in_n->ensure_grad();
            if (w_n->requires_grad) w_n->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t gi = 0; gi < G; ++gi)
                    for (int64_t co = 0; co < Cog; ++co) {
                        int64_t oc = gi * Cog + co;
                        const T* grow = g.data() + ((b * sp.out_channels + oc) * Ho) * Wo;
                        for (int64_t ci = 0; ci < Cig; ++ci) {
                            int64_t ic = gi * Cig + ci;
                            const T* iplane = in_n->value.data() + ((b * Cin + ic) * H) * W;
                            T* igrad = in_n->requires_grad
                                           ? in_n->grad.data() + ((b * Cin + ic) * H) * W
                                           : nullptr;
                            const T* wk = w_n->value.data() + ((oc * Cig + ci) * k) * k;
                            T* wg = w_n->requires_grad
                                        ? w_n->grad.data() + ((oc * Cig + ci) * k) * k
                                        : nullptr;
                            for (int64_t ky = 0; ky < k; ++ky) {
                                int64_t oy0 = lo(ky), oy1 = hi(ky, H, Ho);
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    int64_t ox0 = lo(kx), ox1 = hi(kx, W, Wo);
                                    T wval = wk[ky * k + kx];
                                    T wacc = 0;
                                    for (int64_t oy = oy0; oy < oy1; ++oy) {
                                        int64_t iy = oy * s + ky * d - p;
                                        const T* gr = grow + oy * Wo;
                                        const T* ir = iplane + iy * W + kx * d - p;
                                        if (igrad) {
                                            T* dgr = igrad + iy * W + kx * d - p;
                                            for (int64_t ox = ox0; ox < ox1; ++ox)
                                                dgr[ox * s] += wval * gr[ox];
                                        }
                                        if (wg)
                                            for (int64_t ox = ox0; ox < ox1; ++ox)
                                                wacc += gr[ox] * ir[ox * s];
                                    }
                                    if (wg) wg[ky * k + kx] += wacc;
                                }
                            }
                        }
                        if (b_n && b_n->requires_grad) {
                            b_n->ensure_grad();
                            T acc = 0;
                            for (int64_t i = 0; i < Ho * Wo; ++i) acc += grow[i];
                            b_n->grad[oc] += acc;
                        }
                    }
        };
    }
    return out;
}

// Convenience overload building the ConvSpec from the weight shape.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias = nullptr,
                 int64_t stride = 1, int64_t padding = 0, int64_t dilation = 1,
                 int64_t groups = 1) {
    ConvSpec spec;
    spec.in_channels = input.dim(1);
    spec.out_channels = weight.dim(0);
    spec.kernel = weight.dim(2);
    spec.stride = stride;
    spec.padding = padding;
    spec.dilation = dilation;
    spec.groups = groups;
    spec.bias = bias != nullptr;
    return conv2d(input, spec, weight, bias);
}

// ---------------------------------------------------------------------------
// bilinear_upsample: integer scale, align_corners = false.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int64_t scale) {
    check(scale >= 1, "upsample scale must be >= 1, got " + std::to_string(scale));
    check(input.ndim() == 4, "bilinear_upsample expects [B,C,H,W]");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    int64_t Ho = H * scale, Wo = W * scale;
    // precompute 1-D source taps
    struct Tap {
        int64_t i0, i1;
        T w0, w1;
    };
    auto taps = [&](int64_t out_ext, int64_t in_ext) {
        std::vector<Tap> t(out_ext);
        for (int64_t o = 0; o < out_ext; ++o) {
            double src = (o + 0.5) / (double)scale - 0.5;
            int64_t i0 = (int64_t)std::floor(src);
            T w1 = T(src - (double)i0);
            int64_t i1 = std::min(i0 + 1, in_ext - 1);
            i0 = std::clamp<int64_t>(i0, 0, in_ext - 1);
            t[o] = {i0, i1, T(1) - w1, w1};
        }
        return t;
    };
    auto ty = taps(Ho, H), tx = taps(Wo, W);
    Tensor<T> out(Shape{B, C, Ho, Wo});
    auto& ov = out.values();
    const auto& iv = input.values();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* ip = iv.data() + bc * H * W;
        T* op = ov.data() + bc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
            const Tap& y = ty[oy];
            for (int64_t ox = 0; ox < Wo; ++ox) {
                const Tap& x = tx[ox];
                op[oy * Wo + ox] = y.w0 * (x.w0 * ip[y.i0 * W + x.i0] + x.w1 * ip[y.i0 * W + x.i1]) +
                                   y.w1 * (x.w0 * ip[y.i1 * W + x.i0] + x.w1 * ip[y.i1 * W + x.i1]);
            }
        }
    }
    if (grad_mode() && input.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto in_n = input.node();
        on->parents = {in_n};
        Node<T>* self = on.get();
        on->backward_fn = [self, in_n, ty, tx, B, C, H, W, Ho, Wo]() {
            if (self->grad.empty()) return;
            in_n->ensure_grad();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                T* ig = in_n->grad.data() + bc * H * W;
                const T* og = self->grad.data() + bc * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const auto& y = ty[oy];
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const auto& x = tx[ox];
                        T g = og[oy * Wo + ox];
                        ig[y.i0 * W + x.i0] += g * y.w0 * x.w0;
                        ig[y.i0 * W + x.i1] += g * y.w0 * x.w1;
                        ig[y.i1 * W + x.i0] += g * y.w1 * x.w0;
                        ig[y.i1 * W + x.i1] += g * y.w1 * x.w1;
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    check(input.ndim() == 4, "global_avg_pool expects [B,C,H,W]");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(H * W >= 1, "global_avg_pool needs a nonempty spatial extent");
    Tensor<T> out(Shape{B, C, 1, 1});
    const auto& iv = input.values();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        T acc = 0;
        const T* p = iv.data() + bc * H * W;
        for (int64_t i = 0; i < H * W; ++i) acc += p[i];
        out.values()[bc] = acc / T(H * W);
    }
    if (grad_mode() && input.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto in_n = input.node();
        on->parents = {in_n};
        Node<T>* self = on.get();
        on->backward_fn = [self, in_n, B, C, H, W]() {
            if (self->grad.empty()) return;
            in_n->ensure_grad();
            T inv = T(1) / T(H * W);
            for (int64_t bc = 0; bc < B * C; ++bc) {
                T g = self->grad[bc] * inv;
                T* p = in_n->grad.data() + bc * H * W;
                for (int64_t i = 0; i < H * W; ++i) p[i] += g;
            }
        };
    }
    return out;
}

// 2x2 max pooling, stride 2. Ties route the gradient to the first element in
// row-major order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input) {
    check(input.ndim() == 4, "max_pool2d expects [B,C,H,W]");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(H % 2 == 0 && W % 2 == 0,
          "max_pool2d requires even spatial extents (got " + std::to_string(H) + "x" +
              std::to_string(W) + "); pad the input to even extents first");
    int64_t Ho = H / 2, Wo = W / 2;
    Tensor<T> out(Shape{B, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
    const auto& iv = input.values();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* ip = iv.data() + bc * H * W;
        T* op = out.values().data() + bc * Ho * Wo;
        int64_t* am = argmax->data() + bc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                int64_t base = (2 * oy) * W + 2 * ox;
                int64_t idx[4] = {base, base + 1, base + W, base + W + 1};
                int64_t best = idx[0];
                for (int j = 1; j < 4; ++j)
                    if (ip[idx[j]] > ip[best]) best = idx[j];
                op[oy * Wo + ox] = ip[best];
                am[oy * Wo + ox] = bc * H * W + best;
            }
    }
    if (grad_mode() && input.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto in_n = input.node();
        on->parents = {in_n};
        Node<T>* self = on.get();
        on->backward_fn = [self, in_n, argmax]() {
            if (self->grad.empty()) return;
            in_n->ensure_grad();
            for (size_t i = 0; i < self->grad.size(); ++i)
                in_n->grad[(*argmax)[i]] += self->grad[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over (B,H,W) per channel.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::vector<T>& running_mean, std::vector<T>& running_var, bool training,
                     T eps = T(1e-5), T momentum = T(0.1)) {
    check(input.ndim() == 4, "batch_norm expects [B,C,H,W]");
    int64_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    check(gamma.numel() == C && beta.numel() == C && (int64_t)running_mean.size() == C &&
              (int64_t)running_var.size() == C,
          "batch_norm parameter length must equal channel count " + std::to_string(C));
    int64_t N = B * H * W;
    if (training)
        check(N > 1,
              "batch_norm in training mode needs more than one value per channel "
              "(batch 1 with 1x1 spatial); use at least 2 samples or eval mode");
    int64_t hw = H * W;
    std::vector<T> mean_c(C), var_c(C);
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            T m = 0;
            for (int64_t b = 0; b < B; ++b) {
                const T* p = input.data() + (b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) m += p[i];
            }
            m /= T(N);
            T v = 0;
            for (int64_t b = 0; b < B; ++b) {
                const T* p = input.data() + (b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
            }
            v /= T(N);
            mean_c[c] = m;
            var_c[c] = v;
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
            T unbiased = N > 1 ? v * T(N) / T(N - 1) : v;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
        }
    } else {
        mean_c = running_mean;
        var_c = running_var;
    }
    Tensor<T> out(input.shape());
    auto xhat = std::make_shared<std::vector<T>>(input.numel());
    std::vector<T> inv_std(C);
    for (int64_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var_c[c] + eps);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T* p = input.data() + (b * C + c) * hw;
            T* xh = xhat->data() + (b * C + c) * hw;
            T* o = out.data() + (b * C + c) * hw;
            T g = gamma.values()[c], bt = beta.values()[c];
            for (int64_t i = 0; i < hw; ++i) {
                xh[i] = (p[i] - mean_c[c]) * inv_std[c];
                o[i] = g * xh[i] + bt;
            }
        }
    bool rg = input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    if (grad_mode() && rg) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto xn = input.node();
        auto gn = gamma.node();
        auto bn = beta.node();
        on->parents = {xn, gn, bn};
        Node<T>* self = on.get();
        auto istd = std::make_shared<std::vector<T>>(inv_std);
        on->backward_fn = [self, xn, gn, bn, xhat, istd, training, B, C, hw, N]() {
            if (self->grad.empty()) return;
            const auto& g = self->grad;
            for (int64_t c = 0; c < C; ++c) {
                T sum_g = 0, sum_gx = 0;
                for (int64_t b = 0; b < B; ++b) {
                    const T* gr = g.data() + (b * C + c) * hw;
                    const T* xh = xhat->data() + (b * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        sum_g += gr[i];
                        sum_gx += gr[i] * xh[i];
                    }
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[c] += sum_gx;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[c] += sum_g;
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    T gam = gn->value[c], is = (*istd)[c];
                    for (int64_t b = 0; b < B; ++b) {
                        const T* gr = g.data() + (b * C + c) * hw;
                        const T* xh = xhat->data() + (b * C + c) * hw;
                        T* xg = xn->grad.data() + (b * C + c) * hw;
                        if (training) {
                            for (int64_t i = 0; i < hw; ++i)
                                xg[i] += gam * is / T(N) *
                                         (T(N) * gr[i] - sum_g - xh[i] * sum_gx);
                        } else {
                            for (int64_t i = 0; i < hw; ++i) xg[i] += gam * is * gr[i];
                        }
                    }
                }
            }
        };
    }
    return out;
}

// Numerically stable binary cross-entropy with logits, mean over all elements.
// Target is treated as a constant.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& target) {
    check(logits.shape() == target.shape(), "bce loss shape mismatch: " +
                                                shape_str(logits.shape()) + " vs " +
                                                shape_str(target.shape()));
    int64_t n = logits.numel();
    const auto& z = logits.values();
    const auto& t = target.values();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        // max(z,0) - z*t + log(1 + exp(-|z|))
        T zi = z[i];
        acc += std::max(zi, T(0)) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    Tensor<T> out = Tensor<T>::scalar(acc / T(n));
    if (grad_mode() && logits.requires_grad()) {
        out.set_requires_grad(true);
        auto on = out.node();
        auto zn = logits.node();
        auto tn = target.node();
        on->parents = {zn, tn};
        Node<T>* self = on.get();
        on->backward_fn = [self, zn, tn, n]() {
            if (self->grad.empty()) return;
            if (!zn->requires_grad) return;
            zn->ensure_grad();
            T g = self->grad[0] / T(n);
            for (int64_t i = 0; i < n; ++i) {
                T zi = zn->value[i];
                T s = zi >= T(0) ? T(1) / (T(1) + std::exp(-zi))
                                 : std::exp(zi) / (T(1) + std::exp(zi));
                zn->grad[i] += g * (s - tn->value[i]);
            }
        };
    }
    return out;
}

}  // namespace d2a
