#include "d2a/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace d2a {

namespace {

constexpr const char* kCsvHeader = "epoch,split,loss,dice,pixel_error,recall,lr\n";

std::string csv_row(int64_t epoch, const char* split, double loss, double dice, double pixerr,
                    double recall, double lr) {
    char buf[256];
    snprintf(buf, sizeof(buf), "%lld,%s,%.10g,%.10g,%.10g,%.10g,%.10g\n", (long long)epoch, split,
             loss, dice, pixerr, recall, lr);
    return buf;
}

// Per-slice confusion counts feeding the accumulator (micro vs macro).
void accumulate_slices(const Tensor<float>& logits, const Tensor<float>& masks,
                       MetricsAccumulator& acc) {
    int64_t B = logits.dim(0);
    int64_t n = logits.numel() / B;
    for (int64_t b = 0; b < B; ++b) {
        std::vector<uint8_t> pred(n), truth(n);
        for (int64_t i = 0; i < n; ++i) {
            float z = logits.values()[b * n + i];
            float p = z >= 0.f ? 1.f / (1.f + std::exp(-z)) : std::exp(z) / (1.f + std::exp(z));
            pred[i] = p >= 0.5f ? 1 : 0;
            truth[i] = masks.values()[b * n + i] > 0.5f ? 1 : 0;
        }
        acc.add(compute_metrics(pred, truth));
    }
}

std::vector<SegSample> load_and_normalize(const std::string& dir) {
    auto samples = load_dataset(dir);
    for (auto& s : samples) s = intensity_normalize(std::move(s));
    return samples;
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    check(!is.fail(), "corrupt RNG state in checkpoint");
}

}  // namespace

EvalResult evaluate_model(D2AUNet<float>& model, const std::vector<SegSample>& samples,
                          const AugmentConfig& aug_cfg, int64_t batch_size, bool micro) {
    NoGradGuard ng;
    check(!samples.empty(), "evaluation over an empty sample set");
    MetricsAccumulator acc(micro);
    double loss_sum = 0;
    int64_t seen = 0;
    // eval batches are taken in order, no shuffle or augmentation
    int64_t e = aug_cfg.crop_to;
    for (size_t off = 0; off < samples.size(); off += (size_t)batch_size) {
        size_t take = std::min((size_t)batch_size, samples.size() - off);
        Tensor<float> images(Shape{(int64_t)take, 1, e, e});
        Tensor<float> masks(Shape{(int64_t)take, 1, e, e});
        for (size_t b = 0; b < take; ++b) {
            SegSample s = eval_preprocess(samples[off + b], aug_cfg);
            std::copy(s.image.begin(), s.image.end(), images.data() + b * e * e);
            for (int64_t i = 0; i < e * e; ++i)
                masks.data()[b * e * e + i] = s.mask[i] ? 1.f : 0.f;
        }
        Tensor<float> logits = model.forward(images, /*training=*/false);
        loss_sum += (double)seg_loss(logits, masks).item() * (double)take;
        seen += (int64_t)take;
        accumulate_slices(logits, masks, acc);
    }
    EvalResult r;
    r.counts = acc.counts();
    r.dice = acc.dice();
    r.pixel_error = acc.pixel_error();
    r.recall = acc.recall();
    r.loss = loss_sum / (double)seen;
    r.slices = acc.slices();
    return r;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const AugmentConfig& aug_cfg, const std::string& data_dir,
                  const std::string& out_dir, const std::string& resume) {
    model_cfg.validate();
    train_cfg.validate();
    aug_cfg.validate();
    fs::create_directories(out_dir);

    auto samples = load_and_normalize(data_dir);
    auto split = split_by_subject(samples, train_cfg.train_frac, train_cfg.val_frac,
                                  train_cfg.test_frac, train_cfg.seed);
    check(!split.train.empty(), "training split is empty");
    write_split_manifest(split, (fs::path(out_dir) / "split.tsv").string());

    TrainerState st;
    D2AUNet<float> model;
    Adam<float> opt;
    std::mt19937_64 data_rng;
    int64_t start_epoch = 0;

    if (resume.empty()) {
        st.model_cfg = model_cfg;
        st.train_cfg = train_cfg;
        st.aug_cfg = aug_cfg;
        st.sched = PlateauScheduler(train_cfg.lr, train_cfg.plateau_factor,
                                    train_cfg.plateau_patience, train_cfg.improvement_eps);
        st.metrics_csv = kCsvHeader;
        model = D2AUNet<float>(model_cfg, train_cfg.seed);
        opt = Adam<float>(train_cfg);
        data_rng.seed(train_cfg.seed + 1);
    } else {
        model = load_checkpoint(resume, &opt, st);
        check(serialize_model_config(st.model_cfg) == serialize_model_config(model_cfg),
              "checkpoint '" + resume + "' was produced under a different model config");
        rng_from_string(data_rng, st.rng_state);
        start_epoch = st.epoch;
        // hyperparameters may legitimately change on resume (longer epoch
        // budget); optimizer/scheduler state stays as restored
        st.train_cfg = train_cfg;
        st.aug_cfg = aug_cfg;
    }

    TrainResult result;
    result.metrics_csv_path = (fs::path(out_dir) / "metrics.csv").string();
    result.best_checkpoint = (fs::path(out_dir) / "ckpt_best.bin").string();
    result.last_checkpoint = (fs::path(out_dir) / "ckpt_last.bin").string();

    LossConfig loss_cfg;
    bool have_val = !split.val.empty();

    for (int64_t epoch = start_epoch + 1; epoch <= train_cfg.epochs; ++epoch) {
        opt.set_lr(st.sched.lr);
        BatchIterator it(split.train, train_cfg.batch_size, st.aug_cfg, data_rng, true);
        Batch batch;
        double loss_sum = 0;
        int64_t seen = 0;
        MetricsAccumulator train_acc(train_cfg.micro_metrics);
        while (it.next(batch)) {
            Tensor<float> logits = model.forward(batch.images, /*training=*/true);
            Tensor<float> loss = seg_loss(logits, batch.masks, loss_cfg);
            double lv = (double)loss.item();
            check(std::isfinite(lv), "non-finite training loss at epoch " + std::to_string(epoch));
            loss.backward();
            auto params = model.params();
            opt.step(params);
            loss_sum += lv * (double)batch.images.dim(0);
            seen += batch.images.dim(0);
            {
                NoGradGuard ng;
                accumulate_slices(logits, batch.masks, train_acc);
            }
        }
        double train_loss = loss_sum / (double)seen;
        EpochMetrics tm{epoch, train_loss, train_acc.dice(), train_acc.pixel_error(),
                        train_acc.recall(), st.sched.lr};
        result.train_history.push_back(tm);
        st.metrics_csv += csv_row(epoch, "train", tm.loss, tm.dice, tm.pixel_error, tm.recall,
                                  st.sched.lr);

        double monitored = train_loss;
        if (have_val) {
            EvalResult ev = evaluate_model(model, split.val, st.aug_cfg, train_cfg.batch_size,
                                           train_cfg.micro_metrics);
            EpochMetrics vm{epoch, ev.loss, ev.dice, ev.pixel_error, ev.recall, st.sched.lr};
            result.val_history.push_back(vm);
            st.metrics_csv += csv_row(epoch, "val", ev.loss, ev.dice, ev.pixel_error, ev.recall,
                                      st.sched.lr);
            monitored = ev.loss;
        }
        st.sched.observe(monitored);

        st.epoch = epoch;
        st.rng_state = rng_to_string(data_rng);
        save_checkpoint(result.last_checkpoint, model, &opt, st);
        if (!st.best_set || monitored < st.best_monitor) {
            st.best_monitor = monitored;
            st.best_set = true;
            save_checkpoint(result.best_checkpoint, model, &opt, st);
        }
        std::ofstream csv(result.metrics_csv_path, std::ios::trunc);
        csv << st.metrics_csv;
    }
    if (start_epoch >= train_cfg.epochs) {
        // nothing to do; still emit the CSV echo for inspection
        std::ofstream csv(result.metrics_csv_path, std::ios::trunc);
        csv << st.metrics_csv;
    }
    return result;
}

EvalResult evaluate(const std::string& ckpt_path, const std::string& data_dir,
                    const std::string& csv_out) {
    TrainerState st;
    D2AUNet<float> model = load_checkpoint(ckpt_path, nullptr, st);
    auto samples = load_and_normalize(data_dir);
    EvalResult r = evaluate_model(model, samples, st.aug_cfg, st.train_cfg.batch_size,
                                  st.train_cfg.micro_metrics);
    if (!csv_out.empty()) {
        std::ofstream csv(csv_out, std::ios::trunc);
        csv << kCsvHeader
            << csv_row(st.epoch, "eval", r.loss, r.dice, r.pixel_error, r.recall, st.sched.lr);
    }
    return r;
}

PredictResult predict(const std::string& ckpt_path, const std::string& image_path,
                      const std::string& out_dir) {
    TrainerState st;
    D2AUNet<float> model = load_checkpoint(ckpt_path, nullptr, st);
    fs::create_directories(out_dir);

    GrayImage img = read_gray_image(image_path);
    SegSample s;
    s.width = img.width;
    s.height = img.height;
    s.image.resize(img.size());
    for (int64_t i = 0; i < img.size(); ++i) s.image[i] = (float)img.pixels[i] / (float)img.maxval;
    s = intensity_normalize(std::move(s));

    int64_t div = st.model_cfg.extent_divisor();
    int64_t ph = (s.height + div - 1) / div * div;
    int64_t pw = (s.width + div - 1) / div * div;
    PredictResult out;
    out.padded = (ph != s.height || pw != s.width);
    if (out.padded)
        std::cout << "note: input " << s.width << "x" << s.height << " zero-padded to " << pw
                  << "x" << ph << " (extent must be a multiple of " << div
                  << "), output cropped back\n";
    Tensor<float> x(Shape{1, 1, ph, pw});
    for (int64_t y = 0; y < s.height; ++y)
        for (int64_t xx = 0; xx < s.width; ++xx) x.data()[y * pw + xx] = s.image[y * s.width + xx];

    NoGradGuard ng;
    Tensor<float> logits = model.forward(x, /*training=*/false);
    GrayImage mask;
    mask.width = s.width;
    mask.height = s.height;
    mask.maxval = 255;
    mask.pixels.resize(s.width * s.height);
    std::vector<uint8_t> rgb(s.width * s.height * 3);
    for (int64_t y = 0; y < s.height; ++y)
        for (int64_t xx = 0; xx < s.width; ++xx) {
            float z = logits.data()[y * pw + xx];
            float p = z >= 0.f ? 1.f / (1.f + std::exp(-z)) : std::exp(z) / (1.f + std::exp(z));
            bool lesion = p >= 0.5f;
            mask.pixels[y * s.width + xx] = lesion ? 255 : 0;
            uint8_t v = (uint8_t)std::lround(s.image[y * s.width + xx] * 255.f);
            int64_t o = (y * s.width + xx) * 3;
            if (lesion) {
                // red tint at fixed 0.5 opacity
                rgb[o] = (uint8_t)std::lround(0.5 * v + 0.5 * 255.0);
                rgb[o + 1] = (uint8_t)std::lround(0.5 * v);
                rgb[o + 2] = (uint8_t)std::lround(0.5 * v);
            } else {
                rgb[o] = rgb[o + 1] = rgb[o + 2] = v;
            }
        }
    std::string stem = fs::path(image_path).stem().string();
    out.mask_path = (fs::path(out_dir) / (stem + "_mask.pgm")).string();
    out.overlay_path = (fs::path(out_dir) / (stem + "_overlay.ppm")).string();
    write_pgm(out.mask_path, mask);
    write_ppm(out.overlay_path, s.width, s.height, rgb);
    return out;
}

}  // namespace d2a
