#pragma once

#include "d2a/attention.hpp"

namespace d2a {

// Equivalent kernel size of a dilated convolution: K = k + (k-1)(n-1).
inline int64_t equivalent_kernel_size(int64_t k, int64_t n) {
    check(k >= 1 && n >= 1, "kernel and dilation must be >= 1");
    return k + (k - 1) * (n - 1);
}

// Receptive field of a stride-1 stack: RF = 1 + sum(K_i - 1).
inline int64_t theoretical_receptive_field(const std::vector<std::pair<int64_t, int64_t>>& stack) {
    check(!stack.empty(), "receptive field of an empty stack");
    int64_t rf = 1;
    for (auto [k, n] : stack) rf += equivalent_kernel_size(k, n) - 1;
    return rf;
}

// ---------------------------------------------------------------------------
// Conv + optional batch norm + optional ReLU, the basic building block.
// ---------------------------------------------------------------------------
template <typename T>
struct ConvBlock {
    ConvSpec spec;
    Tensor<T> weight, bias;
    Tensor<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    bool use_norm = true;
    bool use_act = true;

    ConvBlock() = default;
    ConvBlock(ConvSpec s, std::mt19937_64& rng, bool norm = true, bool act = true)
        : spec(s), use_norm(norm), use_act(act) {
        spec.validate();
        weight = Tensor<T>(Shape{spec.out_channels, spec.in_channels / spec.groups, spec.kernel,
                                 spec.kernel});
        detail::he_init(weight, (spec.in_channels / spec.groups) * spec.kernel * spec.kernel, rng);
        weight.set_requires_grad(true);
        if (spec.bias) {
            bias = Tensor<T>(Shape{spec.out_channels});
            bias.set_requires_grad(true);
        }
        if (use_norm) {
            gamma = Tensor<T>(Shape{spec.out_channels}, T(1));
            beta = Tensor<T>(Shape{spec.out_channels});
            gamma.set_requires_grad(true);
            beta.set_requires_grad(true);
            running_mean.assign(spec.out_channels, T(0));
            running_var.assign(spec.out_channels, T(1));
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> y = conv2d(x, spec, weight, spec.bias ? &bias : nullptr);
        if (use_norm) y = batch_norm(y, gamma, beta, running_mean, running_var, training);
        if (use_act) y = relu(y);
        return y;
    }

    NamedParams<T> params() {
        NamedParams<T> p = {{"weight", &weight}};
        if (spec.bias) p.push_back({"bias", &bias});
        if (use_norm) {
            p.push_back({"gamma", &gamma});
            p.push_back({"beta", &beta});
        }
        return p;
    }

    std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
        if (!use_norm) return {};
        return {{"running_mean", &running_mean}, {"running_var", &running_var}};
    }
};

// ---------------------------------------------------------------------------
// Hybrid dilated convolution: kernel 3 at dilation rates [1, 2, 5], each conv
// padded to preserve extent. Equivalent kernels 3, 5, 11; receptive field 17.
// ---------------------------------------------------------------------------
struct RABSpec {
    int64_t channels = 0;
    int64_t kernel = 3;
    std::vector<int64_t> dilations = {1, 2, 5};
    int64_t reduce_ratio = 16;
    bool use_norm = true;  // identity tests run with norm disabled
};

template <typename T>
struct HDC {
    RABSpec spec;
    std::vector<ConvBlock<T>> convs;

    HDC() = default;
    HDC(const RABSpec& s, std::mt19937_64& rng) : spec(s) {
        for (int64_t n : spec.dilations) {
            ConvSpec cs;
            cs.in_channels = cs.out_channels = spec.channels;
            cs.kernel = spec.kernel;
            cs.dilation = n;
            cs.padding = n * (spec.kernel - 1) / 2;
            convs.emplace_back(cs, rng, spec.use_norm, true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        check(x.dim(1) == spec.channels, "hdc: input has " + std::to_string(x.dim(1)) +
                                             " channels, block expects " +
                                             std::to_string(spec.channels));
        Tensor<T> y = x;
        for (auto& c : convs) y = c.forward(y, training);
        return y;
    }
};

// Residual attention block: Y = X + DAM(HDC(X)).
template <typename T>
struct RAB {
    HDC<T> hdc;
    DAMParams<T> dam;

    RAB() = default;
    RAB(const RABSpec& s, std::mt19937_64& rng)
        : hdc(s, rng), dam(s.channels, s.reduce_ratio, rng) {}

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return add(x, dam_forward(hdc.forward(x, training), dam));
    }
};

template <typename T>
Tensor<T> hdc_forward(const Tensor<T>& x, HDC<T>& block, bool training = true) {
    return block.forward(x, training);
}

template <typename T>
Tensor<T> rab_forward(const Tensor<T>& x, RAB<T>& block, bool training = true) {
    return block.forward(x, training);
}

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------
struct ModelConfig {
    std::string encoder = "vgg";  // "vgg" | "resnext"
    // Toy widths ship as the default; full-scale configs live in configs/.
    std::vector<int64_t> encoder_channels = {8, 16, 32, 64, 128};
    std::vector<int64_t> decoder_channels;  // empty: mirror skip widths
    int64_t in_channels = 1;
    int64_t reduce_ratio = 16;
    int64_t input_extent = 64;  // used for cost reports and CLI defaults
    int64_t resnext_cardinality = 32;

    int64_t stages() const { return (int64_t)encoder_channels.size(); }
    int64_t extent_divisor() const { return int64_t(1) << (stages() - 1); }

    std::vector<int64_t> effective_decoder_channels() const {
        if (!decoder_channels.empty()) return decoder_channels;
        // mirror skip widths, deepest first
        std::vector<int64_t> d(encoder_channels.rbegin() + 1, encoder_channels.rend());
        return d;
    }

    void validate() const {
        check(encoder == "vgg" || encoder == "resnext",
              "encoder must be 'vgg' or 'resnext', got '" + encoder + "'");
        check(stages() >= 2, "encoder needs at least 2 stages");
        check((int64_t)effective_decoder_channels().size() == stages() - 1,
              "decoder stage count must be encoder stage count - 1");
        check(input_extent % extent_divisor() == 0,
              "input extent must be divisible by " + std::to_string(extent_divisor()));
    }
};

// Full-scale presets. The VGG-style widths are the halved U-Net widths that
// Table-2-style parameter counts correspond to.
inline ModelConfig full_vgg_config() {
    ModelConfig c;
    c.encoder = "vgg";
    c.encoder_channels = {32, 64, 128, 256, 512};
    c.input_extent = 448;
    return c;
}

inline ModelConfig full_resnext_config() {
    ModelConfig c;
    c.encoder = "resnext";
    c.encoder_channels = {64, 256, 512, 1024, 2048};
    c.input_extent = 448;
    return c;
}

// ---------------------------------------------------------------------------
// Encoder stages
// ---------------------------------------------------------------------------
template <typename T>
struct VggStage {
    ConvBlock<T> a, b;
    bool pool_first = false;

    VggStage() = default;
    VggStage(int64_t cin, int64_t cout, bool pool, std::mt19937_64& rng) : pool_first(pool) {
        ConvSpec s1{cin, cout, 3, 1, 1, 1, 1, true};
        ConvSpec s2{cout, cout, 3, 1, 1, 1, 1, true};
        a = ConvBlock<T>(s1, rng);
        b = ConvBlock<T>(s2, rng);
    }

    Tensor<T> forward(Tensor<T> x, bool training) {
        if (pool_first) x = max_pool2d(x);
        return b.forward(a.forward(x, training), training);
    }
};

// Grouped-conv bottleneck stage for the untrained shape-parity encoder.
template <typename T>
struct ResnextStage {
    ConvBlock<T> reduce, grouped, expand, project;
    bool pool_first = false;
    bool has_project = false;

    ResnextStage() = default;
    ResnextStage(int64_t cin, int64_t cout, bool pool, int64_t cardinality, std::mt19937_64& rng)
        : pool_first(pool) {
        int64_t width = std::max<int64_t>(1, cout / 2);
        int64_t groups = (width % cardinality == 0) ? cardinality : 1;
        reduce = ConvBlock<T>(ConvSpec{cin, width, 1, 1, 0, 1, 1, false}, rng);
        grouped = ConvBlock<T>(ConvSpec{width, width, 3, 1, 1, 1, groups, false}, rng);
        expand = ConvBlock<T>(ConvSpec{width, cout, 1, 1, 0, 1, 1, false}, rng, true, false);
        has_project = (cin != cout);
        if (has_project)
            project = ConvBlock<T>(ConvSpec{cin, cout, 1, 1, 0, 1, 1, false}, rng, true, false);
    }

    Tensor<T> forward(Tensor<T> x, bool training) {
        if (pool_first) x = max_pool2d(x);
        Tensor<T> y = expand.forward(grouped.forward(reduce.forward(x, training), training),
                                     training);
        Tensor<T> sc = has_project ? project.forward(x, training) : x;
        return relu(add(y, sc));
    }
};

// ---------------------------------------------------------------------------
// Decoder stage: upsample the deep path, refine it with DAM, gate the skip
// with GAM (guide = pre-upsample deep tensor), fuse, then run the RAB.
// ---------------------------------------------------------------------------
template <typename T>
struct DecoderStage {
    int64_t cd = 0, cs = 0, cout = 0;
    ConvBlock<T> conv_up;   // 3x3 after bilinear upsample
    DAMParams<T> dam_up;    // refines the post-upsample features
    GAMParams<T> gam;       // gates the skip, guided by the deep tensor
    ConvBlock<T> fuse;      // 1x1 after concatenation
    RAB<T> rab;

    DecoderStage() = default;
    DecoderStage(int64_t cd_, int64_t cs_, int64_t cout_, int64_t reduce_ratio,
                 std::mt19937_64& rng)
        : cd(cd_), cs(cs_), cout(cout_) {
        conv_up = ConvBlock<T>(ConvSpec{cd, cout, 3, 1, 1, 1, 1, true}, rng);
        dam_up = DAMParams<T>(cout, reduce_ratio, rng);
        gam = GAMParams<T>(cd, cs, reduce_ratio, rng);
        fuse = ConvBlock<T>(ConvSpec{cout + cs, cout, 1, 1, 0, 1, 1, true}, rng);
        RABSpec rs;
        rs.channels = cout;
        rs.reduce_ratio = reduce_ratio;
        rab = RAB<T>(rs, rng);
    }

    Tensor<T> forward(const Tensor<T>& deep, const Tensor<T>& skip, bool training) {
        check(skip.dim(2) == 2 * deep.dim(2) && skip.dim(3) == 2 * deep.dim(3),
              "decoder stage: skip extent " + shape_str(skip.shape()) +
                  " must be exactly 2x the deep extent " + shape_str(deep.shape()));
        Tensor<T> up = conv_up.forward(bilinear_upsample(deep, 2), training);
        up = dam_forward(up, dam_up);
        Tensor<T> gated = gam_forward(skip, deep, gam);
        Tensor<T> fused = fuse.forward(concat<T>({up, gated}), training);
        return rab.forward(fused, training);
    }
};

// ---------------------------------------------------------------------------
// Full D2A U-Net
// ---------------------------------------------------------------------------
template <typename T>
class D2AUNet {
public:
    D2AUNet() = default;

    explicit D2AUNet(const ModelConfig& cfg, uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        const auto& ec = cfg_.encoder_channels;
        int64_t prev = cfg_.in_channels;
        for (size_t i = 0; i < ec.size(); ++i) {
            bool pool = i > 0;
            if (cfg_.encoder == "vgg")
                vgg_stages_.emplace_back(prev, ec[i], pool, rng);
            else
                resnext_stages_.emplace_back(prev, ec[i], pool, cfg_.resnext_cardinality, rng);
            prev = ec[i];
        }
        auto dc = cfg_.effective_decoder_channels();
        int64_t deep = ec.back();
        for (size_t i = 0; i < dc.size(); ++i) {
            int64_t skip = ec[ec.size() - 2 - i];
            dec_stages_.emplace_back(deep, skip, dc[i], cfg_.reduce_ratio, rng);
            deep = dc[i];
        }
        head_w_ = Tensor<T>(Shape{1, deep, 1, 1});
        detail::he_init(head_w_, deep, rng);
        head_w_.set_requires_grad(true);
        head_b_ = Tensor<T>(Shape{1});  // zero bias: unbiased initial logits
        head_b_.set_requires_grad(true);
    }

    const ModelConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& image, bool training = false) {
        check(image.ndim() == 4, "model input must be [B,1,H,W]");
        check(image.dim(1) == cfg_.in_channels,
              "model expects " + std::to_string(cfg_.in_channels) + " input channel(s), got " +
                  std::to_string(image.dim(1)));
        int64_t div = cfg_.extent_divisor();
        check(image.dim(2) % div == 0 && image.dim(3) % div == 0,
              "input extent " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                  " must be divisible by " + std::to_string(div));
        std::vector<Tensor<T>> feats;
        Tensor<T> x = image;
        int64_t n = cfg_.stages();
        for (int64_t i = 0; i < n; ++i) {
            x = cfg_.encoder == "vgg" ? vgg_stages_[i].forward(x, training)
                                      : resnext_stages_[i].forward(x, training);
            feats.push_back(x);
        }
        Tensor<T> deep = feats.back();
        for (size_t i = 0; i < dec_stages_.size(); ++i)
            deep = dec_stages_[i].forward(deep, feats[n - 2 - i], training);
        return conv2d(deep, head_w_, &head_b_, 1, 0, 1);
    }

    NamedParams<T> params() {
        NamedParams<T> out;
        auto absorb = [&out](const std::string& prefix, NamedParams<T> p) {
            for (auto& [n, t] : p) out.push_back({prefix + "." + n, t});
        };
        for (size_t i = 0; i < vgg_stages_.size(); ++i) {
            auto pre = "enc" + std::to_string(i);
            absorb(pre + ".a", vgg_stages_[i].a.params());
            absorb(pre + ".b", vgg_stages_[i].b.params());
        }
        for (size_t i = 0; i < resnext_stages_.size(); ++i) {
            auto pre = "enc" + std::to_string(i);
            absorb(pre + ".reduce", resnext_stages_[i].reduce.params());
            absorb(pre + ".grouped", resnext_stages_[i].grouped.params());
            absorb(pre + ".expand", resnext_stages_[i].expand.params());
            if (resnext_stages_[i].has_project)
                absorb(pre + ".project", resnext_stages_[i].project.params());
        }
        for (size_t i = 0; i < dec_stages_.size(); ++i) {
            auto pre = "dec" + std::to_string(i);
            auto& d = dec_stages_[i];
            absorb(pre + ".conv_up", d.conv_up.params());
            absorb(pre + ".dam_up", d.dam_up.params());
            absorb(pre + ".gam", d.gam.params());
            absorb(pre + ".fuse", d.fuse.params());
            for (size_t j = 0; j < d.rab.hdc.convs.size(); ++j)
                absorb(pre + ".rab.hdc" + std::to_string(j), d.rab.hdc.convs[j].params());
            absorb(pre + ".rab.dam", d.rab.dam.params());
        }
        out.push_back({"head.weight", &head_w_});
        out.push_back({"head.bias", &head_b_});
        return out;
    }

    std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
        std::vector<std::pair<std::string, std::vector<T>*>> out;
        auto absorb = [&out](const std::string& prefix, auto b) {
            for (auto& [n, v] : b) out.push_back({prefix + "." + n, v});
        };
        for (size_t i = 0; i < vgg_stages_.size(); ++i) {
            auto pre = "enc" + std::to_string(i);
            absorb(pre + ".a", vgg_stages_[i].a.buffers());
            absorb(pre + ".b", vgg_stages_[i].b.buffers());
        }
        for (size_t i = 0; i < resnext_stages_.size(); ++i) {
            auto pre = "enc" + std::to_string(i);
            absorb(pre + ".reduce", resnext_stages_[i].reduce.buffers());
            absorb(pre + ".grouped", resnext_stages_[i].grouped.buffers());
            absorb(pre + ".expand", resnext_stages_[i].expand.buffers());
            if (resnext_stages_[i].has_project)
                absorb(pre + ".project", resnext_stages_[i].project.buffers());
        }
        for (size_t i = 0; i < dec_stages_.size(); ++i) {
            auto pre = "dec" + std::to_string(i);
            auto& d = dec_stages_[i];
            absorb(pre + ".conv_up", d.conv_up.buffers());
            absorb(pre + ".fuse", d.fuse.buffers());
            for (size_t j = 0; j < d.rab.hdc.convs.size(); ++j)
                absorb(pre + ".rab.hdc" + std::to_string(j), d.rab.hdc.convs[j].buffers());
        }
        return out;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (auto& [name, t] : params()) n += t->numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : params()) t->zero_grad();
    }

    std::vector<DecoderStage<T>>& decoder_stages() { return dec_stages_; }

private:
    ModelConfig cfg_;
    std::vector<VggStage<T>> vgg_stages_;
    std::vector<ResnextStage<T>> resnext_stages_;
    std::vector<DecoderStage<T>> dec_stages_;
    Tensor<T> head_w_, head_b_;
};

// ---------------------------------------------------------------------------
// Analytic cost model: parameters and forward multiply-accumulates at a given
// input extent. Only conv and linear terms are counted towards MACs; norm and
// activation costs are negligible at this granularity.
// ---------------------------------------------------------------------------
struct CostReport {
    int64_t params = 0;
    int64_t macs = 0;
};

inline CostReport count_params_flops(const ModelConfig& cfg, int64_t extent = 0) {
    cfg.validate();
    if (extent == 0) extent = cfg.input_extent;
    CostReport r;
    auto conv = [&r](int64_t cin, int64_t cout, int64_t k, int64_t e, int64_t groups = 1,
                     bool bias = true, bool norm = true) {
        int64_t w = cout * (cin / groups) * k * k;
        r.params += w + (bias ? cout : 0) + (norm ? 2 * cout : 0);
        r.macs += w * e * e;
    };
    auto lin = [&r](int64_t cin, int64_t cout) {
        r.params += cout * cin;
        r.macs += cout * cin;
    };
    auto dam = [&](int64_t c, int64_t e) {
        int64_t hid = std::max<int64_t>(1, c / cfg.reduce_ratio);
        lin(c, hid);
        lin(hid, c);
        conv(c, 1, 1, e, 1, true, false);  // squeeze
        for (int64_t k : {3, 5, 7}) conv(1, 1, k, e, 1, true, false);
    };
    const auto& ec = cfg.encoder_channels;
    int64_t e = extent, prev = cfg.in_channels;
    std::vector<int64_t> ext(ec.size());
    for (size_t i = 0; i < ec.size(); ++i) {
        if (i > 0) e /= 2;
        ext[i] = e;
        if (cfg.encoder == "vgg") {
            conv(prev, ec[i], 3, e);
            conv(ec[i], ec[i], 3, e);
        } else {
            int64_t width = std::max<int64_t>(1, ec[i] / 2);
            int64_t g = (width % cfg.resnext_cardinality == 0) ? cfg.resnext_cardinality : 1;
            conv(prev, width, 1, e, 1, false);
            conv(width, width, 3, e, g, false);
            conv(width, ec[i], 1, e, 1, false);
            if (prev != ec[i]) conv(prev, ec[i], 1, e, 1, false);
        }
        prev = ec[i];
    }
    auto dc = cfg.effective_decoder_channels();
    int64_t deep = ec.back();
    for (size_t i = 0; i < dc.size(); ++i) {
        int64_t skip = ec[ec.size() - 2 - i];
        int64_t cout = dc[i];
        int64_t eo = ext[ec.size() - 2 - i];  // output extent of this stage
        conv(deep, cout, 3, eo);              // conv_up after upsample
        dam(cout, eo);                        // dam_up
        {                                     // gam
            int64_t hid = std::max<int64_t>(1, deep / cfg.reduce_ratio);
            lin(deep, hid);
            lin(hid, skip);
            conv(skip, 1, 1, eo, 1, true, false);       // squeeze_f
            conv(deep, 1, 1, eo / 2, 1, true, false);   // squeeze_g at guide extent
            for (int64_t k : {3, 5, 7}) conv(2, 1, k, eo, 1, true, false);
        }
        conv(cout + skip, cout, 1, eo);  // fuse
        for (int j = 0; j < 3; ++j) conv(cout, cout, 3, eo);  // hdc
        dam(cout, eo);                                        // rab dam
        deep = cout;
    }
    conv(deep, 1, 1, extent, 1, true, false);  // head
    return r;
}

}  // namespace d2a
