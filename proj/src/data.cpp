#include "d2a/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace d2a {

namespace {

std::string stem_subject(const std::string& stem) {
    auto us = stem.find('_');
    return us == std::string::npos ? stem : stem.substr(0, us);
}

// Bilinear resample (align-corners false), zero-centred pixel convention.
std::vector<float> resize_bilinear(const std::vector<float>& src, int64_t h, int64_t w,
                                   int64_t ho, int64_t wo) {
    if (h == ho && w == wo) return src;
    std::vector<float> out((size_t)(ho * wo));
    double sy = (double)h / ho, sx = (double)w / wo;
    for (int64_t y = 0; y < ho; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int64_t y0 = (int64_t)std::floor(fy);
        double wy = fy - y0;
        int64_t y0c = std::clamp<int64_t>(y0, 0, h - 1), y1c = std::clamp<int64_t>(y0 + 1, 0, h - 1);
        for (int64_t x = 0; x < wo; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int64_t x0 = (int64_t)std::floor(fx);
            double wx = fx - x0;
            int64_t x0c = std::clamp<int64_t>(x0, 0, w - 1),
                    x1c = std::clamp<int64_t>(x0 + 1, 0, w - 1);
            double v = (1 - wy) * ((1 - wx) * src[y0c * w + x0c] + wx * src[y0c * w + x1c]) +
                       wy * ((1 - wx) * src[y1c * w + x0c] + wx * src[y1c * w + x1c]);
            out[y * wo + x] = (float)v;
        }
    }
    return out;
}

std::vector<uint8_t> resize_nearest(const std::vector<uint8_t>& src, int64_t h, int64_t w,
                                    int64_t ho, int64_t wo) {
    if (h == ho && w == wo) return src;
    std::vector<uint8_t> out((size_t)(ho * wo));
    double sy = (double)h / ho, sx = (double)w / wo;
    for (int64_t y = 0; y < ho; ++y) {
        int64_t yi = std::clamp<int64_t>((int64_t)std::floor((y + 0.5) * sy), 0, h - 1);
        for (int64_t x = 0; x < wo; ++x) {
            int64_t xi = std::clamp<int64_t>((int64_t)std::floor((x + 0.5) * sx), 0, w - 1);
            out[y * wo + x] = src[yi * w + xi];
        }
    }
    return out;
}

// Rotation about the image centre, inverse mapping, zero fill outside.
void rotate(std::vector<float>& img, std::vector<uint8_t>& mask, int64_t h, int64_t w,
            double angle_deg) {
    double th = angle_deg * M_PI / 180.0;
    double c = std::cos(th), s = std::sin(th);
    double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    std::vector<float> oi((size_t)(h * w), 0.f);
    std::vector<uint8_t> om((size_t)(h * w), 0);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double dy = y - cy, dx = x - cx;
            double syf = c * dy + s * dx + cy;  // inverse rotation
            double sxf = -s * dy + c * dx + cx;
            int64_t y0 = (int64_t)std::floor(syf), x0 = (int64_t)std::floor(sxf);
            double wy = syf - y0, wx = sxf - x0;
            auto at = [&](int64_t yy, int64_t xx) -> double {
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
                return img[yy * w + xx];
            };
            oi[y * w + x] = (float)((1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                                    wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1)));
            int64_t yn = (int64_t)std::lround(syf), xn = (int64_t)std::lround(sxf);
            om[y * w + x] =
                (yn < 0 || yn >= h || xn < 0 || xn >= w) ? 0 : mask[yn * w + xn];
        }
    img = std::move(oi);
    mask = std::move(om);
}

}  // namespace

AugDraw draw_augment(const AugmentConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    AugDraw d;
    d.hflip = u01(rng) < cfg.flip_prob;
    d.vflip = u01(rng) < cfg.flip_prob;
    d.angle_deg = cfg.rotation_deg > 0
                      ? std::uniform_real_distribution<double>(-cfg.rotation_deg,
                                                               cfg.rotation_deg)(rng)
                      : 0.0;
    d.gamma = cfg.gamma_max > cfg.gamma_min
                  ? std::uniform_real_distribution<double>(cfg.gamma_min, cfg.gamma_max)(rng)
                  : cfg.gamma_min;
    d.log_transform = u01(rng) < cfg.log_transform_prob;
    int64_t slack = cfg.resize_to - cfg.crop_to;
    if (slack > 0) {
        d.crop_y = std::uniform_int_distribution<int64_t>(0, slack)(rng);
        d.crop_x = std::uniform_int_distribution<int64_t>(0, slack)(rng);
    }
    return d;
}

SegSample load_sample(const std::string& image_path, const std::string& mask_path) {
    GrayImage img = read_gray_image(image_path);
    GrayImage msk = read_gray_image(mask_path);
    check(img.width == msk.width && img.height == msk.height,
          "image/mask extent mismatch: " + image_path + " is " + std::to_string(img.width) + "x" +
              std::to_string(img.height) + " but mask is " + std::to_string(msk.width) + "x" +
              std::to_string(msk.height));
    SegSample s;
    s.width = img.width;
    s.height = img.height;
    s.image.resize(img.size());
    for (int64_t i = 0; i < img.size(); ++i) s.image[i] = (float)img.pixels[i] / (float)img.maxval;
    s.mask.resize(msk.size());
    for (int64_t i = 0; i < msk.size(); ++i) s.mask[i] = msk.pixels[i] > 0 ? 1 : 0;
    s.source_path = image_path;
    s.subject_id = stem_subject(fs::path(image_path).stem().string());
    return s;
}

void save_sample(const SegSample& s, const std::string& image_path, const std::string& mask_path) {
    GrayImage img;
    img.width = s.width;
    img.height = s.height;
    img.maxval = 65535;
    img.pixels.resize(s.image.size());
    for (size_t i = 0; i < s.image.size(); ++i)
        img.pixels[i] = (uint16_t)std::lround(std::clamp(s.image[i], 0.f, 1.f) * 65535.f);
    write_pgm(image_path, img);
    GrayImage msk;
    msk.width = s.width;
    msk.height = s.height;
    msk.maxval = 255;
    msk.pixels.resize(s.mask.size());
    for (size_t i = 0; i < s.mask.size(); ++i) msk.pixels[i] = s.mask[i] ? 255 : 0;
    write_pgm(mask_path, msk);
}

std::vector<SegSample> load_dataset(const std::string& dir) {
    fs::path images = fs::path(dir) / "images";
    fs::path masks = fs::path(dir) / "masks";
    check(fs::is_directory(images) && fs::is_directory(masks),
          "dataset directory '" + dir + "' must contain images/ and masks/ subdirectories");
    std::map<std::string, fs::path> mask_by_stem;
    for (const auto& e : fs::directory_iterator(masks))
        if (e.is_regular_file()) mask_by_stem[e.path().stem().string()] = e.path();
    std::vector<SegSample> out;
    std::vector<fs::path> image_files;
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file()) image_files.push_back(e.path());
    std::sort(image_files.begin(), image_files.end());
    for (const auto& p : image_files) {
        auto it = mask_by_stem.find(p.stem().string());
        check(it != mask_by_stem.end(), "no mask found for image '" + p.string() + "'");
        out.push_back(load_sample(p.string(), it->second.string()));
    }
    check(!out.empty(), "dataset directory '" + dir + "' contains no samples");
    return out;
}

SegSample intensity_normalize(SegSample s) {
    float lo = s.image[0], hi = s.image[0];
    for (float v : s.image) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo <= 0.f) {
        std::fill(s.image.begin(), s.image.end(), 0.f);
        return s;
    }
    float inv = 1.f / (hi - lo);
    for (float& v : s.image) v = (v - lo) * inv;
    return s;
}

SegSample apply_augment(const SegSample& s, const AugmentConfig& cfg, const AugDraw& d) {
    cfg.validate();
    SegSample out = s;
    out.image = resize_bilinear(s.image, s.height, s.width, cfg.resize_to, cfg.resize_to);
    out.mask = resize_nearest(s.mask, s.height, s.width, cfg.resize_to, cfg.resize_to);
    out.width = out.height = cfg.resize_to;
    int64_t h = out.height, w = out.width;
    if (d.hflip) {
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w / 2; ++x) {
                std::swap(out.image[y * w + x], out.image[y * w + (w - 1 - x)]);
                std::swap(out.mask[y * w + x], out.mask[y * w + (w - 1 - x)]);
            }
    }
    if (d.vflip) {
        for (int64_t y = 0; y < h / 2; ++y)
            for (int64_t x = 0; x < w; ++x) {
                std::swap(out.image[y * w + x], out.image[(h - 1 - y) * w + x]);
                std::swap(out.mask[y * w + x], out.mask[(h - 1 - y) * w + x]);
            }
    }
    if (d.angle_deg != 0.0) rotate(out.image, out.mask, h, w, d.angle_deg);
    if (d.gamma != 1.0)
        for (float& v : out.image) v = std::pow(std::max(v, 0.f), (float)d.gamma);
    if (d.log_transform) {
        // x -> ln(1 + x) / ln 2: fixes the endpoints 0 and 1
        const float inv_ln2 = 1.f / std::log(2.f);
        for (float& v : out.image) v = std::log1p(std::max(v, 0.f)) * inv_ln2;
    }
    if (cfg.crop_to != cfg.resize_to || d.crop_y != 0 || d.crop_x != 0) {
        int64_t cs = cfg.crop_to;
        std::vector<float> ci((size_t)(cs * cs));
        std::vector<uint8_t> cm((size_t)(cs * cs));
        for (int64_t y = 0; y < cs; ++y)
            for (int64_t x = 0; x < cs; ++x) {
                ci[y * cs + x] = out.image[(y + d.crop_y) * w + (x + d.crop_x)];
                cm[y * cs + x] = out.mask[(y + d.crop_y) * w + (x + d.crop_x)];
            }
        out.image = std::move(ci);
        out.mask = std::move(cm);
        out.width = out.height = cs;
    }
    return out;
}

SegSample augment(const SegSample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
    return apply_augment(s, cfg, draw_augment(cfg, rng));
}

SegSample eval_preprocess(const SegSample& s, const AugmentConfig& cfg) {
    SegSample out = s;
    out.image = resize_bilinear(s.image, s.height, s.width, cfg.crop_to, cfg.crop_to);
    out.mask = resize_nearest(s.mask, s.height, s.width, cfg.crop_to, cfg.crop_to);
    out.width = out.height = cfg.crop_to;
    return out;
}

SplitResult split_by_subject(const std::vector<SegSample>& samples, double train_frac,
                             double val_frac, double test_frac, uint64_t seed) {
    check(train_frac >= 0 && val_frac >= 0 && test_frac >= 0, "split fractions must be >= 0");
    double tot = train_frac + val_frac + test_frac;
    check(tot > 0, "split fractions sum to zero");
    std::set<std::string> subj_set;
    for (const auto& s : samples) {
        check(!s.subject_id.empty(), "sample without subject id: " + s.source_path);
        subj_set.insert(s.subject_id);
    }
    std::vector<std::string> subjects(subj_set.begin(), subj_set.end());
    int64_t wanted = (train_frac > 0) + (val_frac > 0) + (test_frac > 0);
    check((int64_t)subjects.size() >= wanted,
          "need at least " + std::to_string(wanted) + " subjects for the requested splits, have " +
              std::to_string(subjects.size()));
    std::mt19937_64 rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    int64_t n = (int64_t)subjects.size();
    int64_t n_train = (int64_t)std::llround(n * train_frac / tot);
    int64_t n_val = (int64_t)std::llround(n * val_frac / tot);
    if (train_frac > 0) n_train = std::max<int64_t>(1, n_train);
    if (val_frac > 0) n_val = std::max<int64_t>(1, n_val);
    while (n_train + n_val >= n && test_frac > 0) (n_train > 1 ? n_train : n_val)--;
    std::map<std::string, int> assign;  // 0 train, 1 val, 2 test
    for (int64_t i = 0; i < n; ++i)
        assign[subjects[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    SplitResult r;
    for (const auto& s : samples) {
        int a = assign[s.subject_id];
        (a == 0 ? r.train : a == 1 ? r.val : r.test).push_back(s);
    }
    return r;
}

void write_split_manifest(const SplitResult& r, const std::string& path) {
    std::ofstream out(path);
    check((bool)out, "cannot write split manifest '" + path + "'");
    auto emit = [&out](const std::vector<SegSample>& v, const char* name) {
        std::set<std::string> subs;
        for (const auto& s : v) subs.insert(s.subject_id);
        for (const auto& s : subs) out << s << "\t" << name << "\n";
    };
    emit(r.train, "train");
    emit(r.val, "val");
    emit(r.test, "test");
}

BatchIterator::BatchIterator(const std::vector<SegSample>& samples, int64_t batch_size,
                             const AugmentConfig& cfg, std::mt19937_64& rng, bool augment_on)
    : samples_(samples), batch_size_(batch_size), cfg_(cfg), rng_(rng), augment_(augment_on) {
    check(!samples.empty(), "batch iteration over an empty split");
    check(batch_size >= 1, "batch size must be >= 1");
    order_.resize(samples.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = (int64_t)i;
    std::shuffle(order_.begin(), order_.end(), rng_);
}

bool BatchIterator::next(Batch& out) {
    if (pos_ >= order_.size()) return false;
    size_t take = std::min((size_t)batch_size_, order_.size() - pos_);
    int64_t e = cfg_.crop_to;
    out.images = Tensor<float>(Shape{(int64_t)take, 1, e, e});
    out.masks = Tensor<float>(Shape{(int64_t)take, 1, e, e});
    for (size_t b = 0; b < take; ++b) {
        const SegSample& src = samples_[order_[pos_ + b]];
        SegSample s = augment_ ? augment(src, cfg_, rng_) : eval_preprocess(src, cfg_);
        check(s.width == e && s.height == e, "augment produced a wrong extent");
        std::copy(s.image.begin(), s.image.end(), out.images.data() + b * e * e);
        float* mp = out.masks.data() + b * e * e;
        for (int64_t i = 0; i < e * e; ++i) mp[i] = s.mask[i] ? 1.f : 0.f;
    }
    pos_ += take;
    return true;
}

void make_synthetic_dataset(const std::string& dir, int64_t subjects, int64_t slices_per_subject,
                            int64_t extent, uint64_t seed) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int64_t su = 0; su < subjects; ++su)
        for (int64_t sl = 0; sl < slices_per_subject; ++sl) {
            SegSample s;
            s.width = s.height = extent;
            s.image.resize((size_t)(extent * extent));
            s.mask.assign((size_t)(extent * extent), 0);
            double cy = extent * (0.3 + 0.4 * u01(rng));
            double cx = extent * (0.3 + 0.4 * u01(rng));
            double ry = extent * (0.08 + 0.12 * u01(rng));
            double rx = extent * (0.08 + 0.12 * u01(rng));
            double gdir = u01(rng);
            for (int64_t y = 0; y < extent; ++y)
                for (int64_t x = 0; x < extent; ++x) {
                    double bg = 0.15 + 0.25 * (gdir < 0.5 ? (double)y / extent
                                                          : (double)x / extent) +
                                0.05 * u01(rng);
                    double dy = (y - cy) / ry, dx = (x - cx) / rx;
                    bool inside = dy * dy + dx * dx <= 1.0;
                    if (inside) {
                        s.mask[y * extent + x] = 1;
                        bg += 0.5;
                    }
                    s.image[y * extent + x] = (float)std::clamp(bg, 0.0, 1.0);
                }
            char name[64];
            snprintf(name, sizeof(name), "subj%02lld_slice%02lld", (long long)su, (long long)sl);
            save_sample(s, (fs::path(dir) / "images" / (std::string(name) + ".pgm")).string(),
                        (fs::path(dir) / "masks" / (std::string(name) + ".pgm")).string());
        }
}

}  // namespace d2a
