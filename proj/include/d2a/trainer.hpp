#pragma once

#include "d2a/checkpoint.hpp"
#include "d2a/loss.hpp"

namespace d2a {

struct EpochMetrics {
    int64_t epoch = 0;
    double loss = 0;
    double dice = 0;
    double pixel_error = 0;
    double recall = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> train_history;
    std::vector<EpochMetrics> val_history;
    std::string best_checkpoint;
    std::string last_checkpoint;
    std::string metrics_csv_path;
};

// Full training run: subject-safe split, augmented batches, Adam with
// coupled L2, reduce-on-plateau on the validation loss (train loss when the
// validation split is empty), best/last checkpoints, metrics CSV.
// `resume` continues bit-exactly from a previous last-checkpoint.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const AugmentConfig& aug_cfg, const std::string& data_dir,
                  const std::string& out_dir, const std::string& resume = "");

struct EvalResult {
    MetricsRecord counts;
    double dice = 0, pixel_error = 0, recall = 0, loss = 0;
    int64_t slices = 0;
};

// Eval-mode metrics over every sample in a dataset directory.
EvalResult evaluate(const std::string& ckpt_path, const std::string& data_dir,
                    const std::string& csv_out = "");

EvalResult evaluate_model(D2AUNet<float>& model, const std::vector<SegSample>& samples,
                          const AugmentConfig& aug_cfg, int64_t batch_size, bool micro = true);

// Segment one image: writes <stem>_mask.pgm (0/255) and <stem>_overlay.ppm
// (lesion pixels tinted red at fixed opacity). Extents that are not a
// multiple of the model's divisor are zero-padded and cropped back.
struct PredictResult {
    std::string mask_path;
    std::string overlay_path;
    bool padded = false;
};
PredictResult predict(const std::string& ckpt_path, const std::string& image_path,
                      const std::string& out_dir);

}  // namespace d2a
