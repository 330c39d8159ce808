#include "d2a/selftest.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "d2a/checkpoint.hpp"
#include "d2a/loss.hpp"

namespace d2a {

namespace {

using D = Tensor<double>;

bool report(std::ostream& out, const std::string& name, bool ok, const std::string& detail = "") {
    out << (ok ? "ok   " : "FAIL ") << name;
    if (!ok && !detail.empty()) out << "  (" << detail << ")";
    out << "\n";
    return ok;
}

// Seven-loop reference convolution, shaped like the definition and nothing
// like the production kernel.
std::vector<double> naive_conv(const std::vector<double>& in, int64_t B, int64_t Cin, int64_t H,
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

bool conv_matches_naive(std::string& detail, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 2);
    for (int c = 0; c < 25; ++c) {
        ConvSpec sp;
        sp.kernel = 1 + pick(rng);
        sp.stride = 1 + pick(rng) % 2;
        sp.padding = pick(rng);
        sp.dilation = 1 + pick(rng);
        int64_t g = (c % 5 == 0) ? 2 : 1;
        sp.groups = g;
        sp.in_channels = g * (1 + pick(rng));
        sp.out_channels = g * (1 + pick(rng));
        int64_t H = sp.equivalent_kernel() + 2 + pick(rng), W = H + pick(rng);
        if (sp.out_extent(H) < 1 || sp.out_extent(W) < 1) continue;
        NoGradGuard ng;
        D x = D::randn(Shape{2, sp.in_channels, H, W}, rng);
        D w = D::randn(Shape{sp.out_channels, sp.in_channels / g, sp.kernel, sp.kernel}, rng);
        D b = D::randn(Shape{sp.out_channels}, rng);
        sp.bias = true;
        D y = conv2d(x, sp, w, &b);
        auto ref = naive_conv(x.values(), 2, sp.in_channels, H, W, w.values(), &b.values(), sp);
        for (size_t i = 0; i < ref.size(); ++i)
            if (std::abs(ref[i] - y.values()[i]) > 1e-10) {
                char buf[128];
                snprintf(buf, sizeof(buf), "case %d diff %.3e", c,
                         std::abs(ref[i] - y.values()[i]));
                detail = buf;
                return false;
            }
    }
    return true;
}

// Central-difference check of every requires-grad leaf against the tape.
template <typename LossFn>
bool gradcheck(LossFn loss_fn, std::vector<D>& leaves, double tol, std::string& detail) {
    for (auto& l : leaves) l.zero_grad();
    loss_fn().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad());
    double h = 1e-5;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].values();
        for (size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + h;
            double fp;
            {
                NoGradGuard ng;
                fp = loss_fn().item();
            }
            vals[i] = orig - h;
            double fm;
            {
                NoGradGuard ng;
                fm = loss_fn().item();
            }
            vals[i] = orig;
            double num = (fp - fm) / (2 * h);
            double diff = std::abs(num - analytic[li][i]);
            double scale = std::max(1.0, std::max(std::abs(num), std::abs(analytic[li][i])));
            if (diff / scale > tol) {
                char buf[160];
                snprintf(buf, sizeof(buf), "leaf %zu elem %zu: analytic %.6g vs numeric %.6g", li,
                         i, analytic[li][i], num);
                detail = buf;
                return false;
            }
        }
    }
    for (auto& l : leaves) l.zero_grad();
    return true;
}

bool conv_gradcheck(std::string& detail, std::mt19937_64& rng, bool inject_fault) {
    ConvSpec sp;
    sp.in_channels = 2;
    sp.out_channels = 3;
    sp.kernel = 3;
    sp.padding = 2;
    sp.dilation = 2;
    sp.bias = true;
    D x = D::randn(Shape{2, 2, 7, 7}, rng);
    D w = D::randn(Shape{3, 2, 3, 3}, rng, 0.5);
    D b = D::randn(Shape{3}, rng, 0.1);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    std::vector<D> leaves = {x, w, b};
    auto loss = [&]() { return sum(mul(conv2d(x, sp, w, &b), conv2d(x, sp, w, &b))); };
    if (inject_fault) {
        // corrupt the analytic side so the comparison must trip
        for (auto& l : leaves) l.zero_grad();
        loss().backward();
        w.grad()[0] += 0.5;
        double h = 1e-5;
        double orig = w.values()[0];
        w.values()[0] = orig + h;
        double fp;
        {
            NoGradGuard ng;
            fp = loss().item();
        }
        w.values()[0] = orig - h;
        double fm;
        {
            NoGradGuard ng;
            fm = loss().item();
        }
        w.values()[0] = orig;
        double num = (fp - fm) / (2 * h);
        bool ok = std::abs(num - w.grad()[0]) /
                      std::max(1.0, std::max(std::abs(num), std::abs(w.grad()[0]))) <=
                  1e-6;
        detail = "injected gradient fault went undetected";
        return ok;  // ok==true means the fault slipped through -> caller fails
    }
    return gradcheck(loss, leaves, 1e-6, detail);
}

bool upsample_matches_reference(std::string& detail, std::mt19937_64& rng) {
    NoGradGuard ng;
    int64_t H = 5, W = 4, s = 2;
    D x = D::randn(Shape{1, 2, H, W}, rng);
    D y = bilinear_upsample(x, s);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t oy = 0; oy < H * s; ++oy)
            for (int64_t ox = 0; ox < W * s; ++ox) {
                // align_corners=false source coordinate, clamped
                double sy = (oy + 0.5) / s - 0.5, sx = (ox + 0.5) / s - 0.5;
                sy = std::min(std::max(sy, 0.0), (double)(H - 1));
                sx = std::min(std::max(sx, 0.0), (double)(W - 1));
                int64_t y0 = (int64_t)std::floor(sy), x0 = (int64_t)std::floor(sx);
                int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                double fy = sy - y0, fx = sx - x0;
                auto at = [&](int64_t yy, int64_t xx) {
                    return x.values()[(c * H + yy) * W + xx];
                };
                double ref = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                             fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
                double got = y.values()[(c * H * s + oy) * W * s + ox];
                if (std::abs(ref - got) > 1e-12) {
                    detail = "mismatch at (" + std::to_string(oy) + "," + std::to_string(ox) + ")";
                    return false;
                }
            }
    return true;
}

bool attention_zero_law(std::string& detail, std::mt19937_64& rng) {
    NoGradGuard ng;
    GAMParams<double> gp(8, 4, 16, rng);
    DAMParams<double> dp(4, 16, rng);
    gp.zero_all();
    dp.zero_all();
    D f = D::randn(Shape{2, 4, 8, 8}, rng);
    D g = D::randn(Shape{2, 8, 4, 4}, rng);
    D zg = gam_forward(f, g, gp);
    D zd = dam_forward(f, dp);
    for (int64_t i = 0; i < f.numel(); ++i) {
        if (zg.values()[i] != 0.25 * f.values()[i]) {
            detail = "gam output is not exactly 0.25*F";
            return false;
        }
        if (zd.values()[i] != 0.25 * f.values()[i]) {
            detail = "dam output is not exactly 0.25*F";
            return false;
        }
    }
    return true;
}

bool loss_matches_scalar(std::string& detail, std::mt19937_64& rng) {
    NoGradGuard ng;
    D z = D::randn(Shape{2, 1, 4, 4}, rng, 2.0);
    D t(Shape{2, 1, 4, 4});
    std::uniform_int_distribution<int> bit(0, 1);
    for (auto& v : t.values()) v = bit(rng);
    LossConfig cfg;
    double eps = cfg.dice_epsilon;
    // scalar re-derivation
    double dice_ref = 0, bce_ref = 0;
    int64_t n = 16;
    for (int64_t b = 0; b < 2; ++b) {
        double inter = 0, psum = 0, tsum = 0;
        for (int64_t i = 0; i < n; ++i) {
            double zz = z.values()[b * n + i], tt = t.values()[b * n + i];
            double p = 1.0 / (1.0 + std::exp(-zz));
            inter += p * tt;
            psum += p;
            tsum += tt;
            bce_ref += std::max(zz, 0.0) - zz * tt + std::log1p(std::exp(-std::abs(zz)));
        }
        dice_ref += 1.0 - (2 * inter + eps) / (psum + tsum + eps);
    }
    dice_ref /= 2;
    bce_ref /= 32;
    double d = dice_loss(z, t, cfg).item();
    double b = bce_loss(z, t).item();
    double s = seg_loss(z, t, cfg).item();
    if (std::abs(d - dice_ref) > 1e-9) {
        detail = "dice differs from scalar reference";
        return false;
    }
    if (std::abs(b - bce_ref) > 1e-9) {
        detail = "bce differs from scalar reference";
        return false;
    }
    if (std::abs(s - (d + cfg.alpha * b)) > 1e-9) {
        detail = "combined loss is not dice + alpha*bce";
        return false;
    }
    return true;
}

bool metrics_hand_case(std::string& detail) {
    std::vector<uint8_t> pred = {1, 0, 0, 0};
    std::vector<uint8_t> truth = {1, 1, 0, 0};
    MetricsRecord m = compute_metrics(pred, truth);
    bool ok = std::abs(m.dice() - 2.0 / 3.0) < 1e-12 && std::abs(m.pixel_error() - 0.25) < 1e-12 &&
              std::abs(m.recall() - 0.5) < 1e-12;
    if (!ok) detail = "hand-computed confusion ratios disagree";
    // empty-mask conventions
    MetricsRecord e = compute_metrics(std::vector<uint8_t>{0, 0}, std::vector<uint8_t>{0, 0});
    if (e.dice() != 1.0 || e.recall() != 1.0 || e.pixel_error() != 0.0) {
        detail = "empty-mask conventions broken";
        return false;
    }
    return ok;
}

bool adam_matches_reference(std::string& detail) {
    TrainConfig tc;
    tc.lr = 1e-2;
    tc.weight_decay = 1e-3;
    Adam<float> opt(tc);
    Tensor<float> p(Shape{1}, std::vector<float>{2.0f});
    p.set_requires_grad(true);
    NamedParams<float> params = {{"p", &p}};
    double ref = 2.0, m = 0, v = 0;
    for (int step = 1; step <= 20; ++step) {
        // loss = 0.5*p^2 so grad = p
        p.grad()[0] = p.values()[0];
        p.node()->grad_filled = true;
        double g = ref + tc.weight_decay * ref;
        m = tc.beta1 * m + (1 - tc.beta1) * g;
        v = tc.beta2 * v + (1 - tc.beta2) * g * g;
        double mh = m / (1 - std::pow(tc.beta1, step));
        double vh = v / (1 - std::pow(tc.beta2, step));
        ref -= tc.lr * mh / (std::sqrt(vh) + tc.eps);
        opt.step(params);
        if (std::abs((double)p.values()[0] - ref) > 1e-6) {
            detail = "trajectory diverges from the scalar recurrence at step " +
                     std::to_string(step);
            return false;
        }
        ref = p.values()[0];  // resync so float rounding does not accumulate
    }
    return true;
}

bool scheduler_trace(std::string& detail) {
    PlateauScheduler s(1.0, 0.1, 10);
    for (int e = 1; e <= 10; ++e) {
        if (s.observe(0.5) != 1.0) {
            detail = "lr reduced before epoch 11";
            return false;
        }
    }
    if (std::abs(s.observe(0.5) - 0.1) > 1e-15) {
        detail = "lr not reduced at epoch 11";
        return false;
    }
    // improvement resets the stall counter
    PlateauScheduler s2(1.0, 0.1, 1);
    s2.observe(1.0);
    s2.observe(0.5);
    if (s2.observe(0.6) != 1.0 || s2.observe(0.6) != 0.1) {
        detail = "stall counter does not reset on improvement";
        return false;
    }
    return true;
}

bool model_gradcheck(std::string& detail, std::mt19937_64& rng) {
    ModelConfig cfg;
    cfg.encoder_channels = {2, 4};
    cfg.input_extent = 8;
    // float model is the training path; gradcheck runs in double elsewhere,
    // here we just demand finite grads and a descending first step
    D2AUNet<float> model(cfg, 7);
    Tensor<float> x = Tensor<float>::randn(Shape{2, 1, 8, 8}, rng);
    Tensor<float> t(Shape{2, 1, 8, 8});
    std::uniform_int_distribution<int> bit(0, 1);
    for (auto& v : t.values()) v = (float)bit(rng);
    Tensor<float> l0 = seg_loss(model.forward(x, true), t);
    l0.backward();
    for (auto& [name, p] : model.params())
        for (float g : p->grad())
            if (!std::isfinite(g)) {
                detail = "non-finite gradient in " + name;
                return false;
            }
    TrainConfig tc;
    tc.lr = 1e-2;
    Adam<float> opt(tc);
    auto params = model.params();
    for (auto& [name, p] : params) p->zero_grad();
    for (int i = 0; i < 5; ++i) {
        Tensor<float> l = seg_loss(model.forward(x, true), t);
        l.backward();
        opt.step(params);
    }
    NoGradGuard ng;
    float l1 = seg_loss(model.forward(x, true), t).item();
    if (!(l1 < l0.item())) {
        detail = "loss did not decrease after 5 optimizer steps";
        return false;
    }
    return true;
}

bool checkpoint_roundtrip(std::string& detail) {
    namespace fs = std::filesystem;
    ModelConfig cfg;
    cfg.encoder_channels = {2, 4};
    cfg.input_extent = 8;
    D2AUNet<float> model(cfg, 3);
    TrainerState st;
    st.model_cfg = cfg;
    st.epoch = 2;
    st.rng_state = "12 34";
    st.metrics_csv = "epoch,split,loss,dice,pixel_error,recall,lr\n";
    fs::path dir = fs::temp_directory_path() / "d2a_selftest";
    fs::create_directories(dir);
    std::string p1 = (dir / "a.bin").string(), p2 = (dir / "b.bin").string();
    save_checkpoint(p1, model, nullptr, st);
    TrainerState st2;
    D2AUNet<float> loaded = load_checkpoint(p1, nullptr, st2);
    save_checkpoint(p2, loaded, nullptr, st2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    if (s1 != s2) {
        detail = "save -> load -> save is not byte-identical";
        return false;
    }
    return true;
}

}  // namespace

int run_selftest(std::ostream& out, bool inject_fault) {
    std::mt19937_64 rng(12345);
    int failures = 0;
    auto run = [&](const char* name, auto fn) {
        std::string detail;
        bool ok = false;
        try {
            ok = fn(detail);
        } catch (const std::exception& e) {
            detail = e.what();
        }
        if (!report(out, name, ok, detail)) ++failures;
    };
    run("conv_matches_naive_reference", [&](std::string& d) { return conv_matches_naive(d, rng); });
    run("conv_gradient_matches_finite_differences",
        [&](std::string& d) { return conv_gradcheck(d, rng, inject_fault); });
    run("bilinear_upsample_matches_reference",
        [&](std::string& d) { return upsample_matches_reference(d, rng); });
    run("zero_parameter_attention_scales_by_quarter",
        [&](std::string& d) { return attention_zero_law(d, rng); });
    run("losses_match_scalar_reference", [&](std::string& d) { return loss_matches_scalar(d, rng); });
    run("metrics_hand_case_and_conventions", [&](std::string& d) { return metrics_hand_case(d); });
    run("adam_matches_scalar_recurrence", [&](std::string& d) { return adam_matches_reference(d); });
    run("plateau_scheduler_trace", [&](std::string& d) { return scheduler_trace(d); });
    run("toy_model_trains_downhill", [&](std::string& d) { return model_gradcheck(d, rng); });
    run("checkpoint_roundtrip_is_byte_stable", [&](std::string& d) { return checkpoint_roundtrip(d); });
    out << (failures == 0 ? "selftest passed" : "selftest FAILED") << " (" << (10 - failures)
        << "/10)\n";
    return failures;
}

}  // namespace d2a
