#pragma once

#include <string>

#include "d2a/config.hpp"

namespace d2a {

// Everything beyond model weights that an exact training resume needs.
struct TrainerState {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    AugmentConfig aug_cfg;
    int64_t epoch = 0;  // epochs completed
    PlateauScheduler sched;
    double best_monitor = 0;
    bool best_set = false;
    std::string rng_state;    // serialized std::mt19937_64 driving the data pipeline
    std::string metrics_csv;  // accumulated metrics rows, header included
};

// Checkpoint file: little-endian binary — magic "D2ACKPT1", u32 version,
// length-prefixed config text block, then length-prefixed named tensors
// (dtype byte 0 = float32), named buffers, optional Adam state, scheduler
// and RNG state, and the metrics CSV echo.
void save_checkpoint(const std::string& path, D2AUNet<float>& model, Adam<float>* opt,
                     const TrainerState& st);

// Rebuilds the model from the stored config and restores all state. When
// `opt` is non-null the optimizer moments are restored as well (and must be
// present in the file).
D2AUNet<float> load_checkpoint(const std::string& path, Adam<float>* opt, TrainerState& st);

}  // namespace d2a
