#pragma once

#include <random>
#include <string>
#include <vector>

#include "d2a/image.hpp"
#include "d2a/tensor.hpp"

namespace d2a {

// One grayscale slice plus its aligned binary lesion mask.
struct SegSample {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<float> image;   // intensities in [0,1]
    std::vector<uint8_t> mask;  // strictly {0,1}
    std::string subject_id;
    std::string source_path;

    bool lesion_free() const {
        for (uint8_t m : mask)
            if (m) return false;
        return true;
    }
};

struct AugmentConfig {
    int64_t resize_to = 80;  // full scale: 560
    int64_t crop_to = 64;    // full scale: 448
    double flip_prob = 0.5;  // per axis
    double rotation_deg = 15.0;
    double gamma_min = 0.7;
    double gamma_max = 1.5;
    double log_transform_prob = 0.5;

    void validate() const {
        check(crop_to <= resize_to, "crop_to must not exceed resize_to");
        check(crop_to >= 1 && resize_to >= 1, "extents must be positive");
        check(gamma_min > 0 && gamma_max >= gamma_min, "gamma range must be positive");
        check(flip_prob >= 0 && flip_prob <= 1 && log_transform_prob >= 0 &&
                  log_transform_prob <= 1,
              "probabilities must lie in [0,1]");
        check(rotation_deg >= 0, "rotation range must be non-negative");
    }
};

// The random decisions of one augmentation application, drawn up front so the
// identical chain can be replayed (image vs mask consistency checks).
struct AugDraw {
    bool hflip = false;
    bool vflip = false;
    double angle_deg = 0.0;
    double gamma = 1.0;
    bool log_transform = false;
    int64_t crop_y = 0;
    int64_t crop_x = 0;
};

AugDraw draw_augment(const AugmentConfig& cfg, std::mt19937_64& rng);

// Ingestion -----------------------------------------------------------------

// Loads an image/mask pair; intensities scaled to [0,1], mask thresholded at
// > 0. The subject id is the filename stem up to the first '_' (whole stem if
// there is none).
SegSample load_sample(const std::string& image_path, const std::string& mask_path);

// Writes a sample as a 16-bit PGM image plus an 8-bit PGM mask.
void save_sample(const SegSample& s, const std::string& image_path, const std::string& mask_path);

// Loads every stem that appears in both <dir>/images and <dir>/masks.
std::vector<SegSample> load_dataset(const std::string& dir);

// Per-slice min-max rescale to [0,1]; a constant slice maps to all zeros.
SegSample intensity_normalize(SegSample s);

// Augmentation --------------------------------------------------------------

// Ordered chain: resize -> flips -> rotation -> gamma -> log -> random crop.
// Geometric steps use bilinear resampling for the image and nearest neighbour
// for the mask; rotation fills out-of-bounds regions with zero.
SegSample augment(const SegSample& s, const AugmentConfig& cfg, std::mt19937_64& rng);
SegSample apply_augment(const SegSample& s, const AugmentConfig& cfg, const AugDraw& d);

// Deterministic eval-time preprocessing: resize to crop_to, no randomness.
SegSample eval_preprocess(const SegSample& s, const AugmentConfig& cfg);

// Splitting -----------------------------------------------------------------

struct SplitResult {
    std::vector<SegSample> train, val, test;
};

// Every subject's slices land wholly in one split.
SplitResult split_by_subject(const std::vector<SegSample>& samples, double train_frac,
                             double val_frac, double test_frac, uint64_t seed);

void write_split_manifest(const SplitResult& r, const std::string& path);

// Batching ------------------------------------------------------------------

struct Batch {
    Tensor<float> images;  // [B,1,h,w]
    Tensor<float> masks;   // [B,1,h,w], strictly {0,1}
};

// One epoch over a split: seeded shuffle, per-sample augmentation, final
// short batch emitted. The caller owns the rng so its state can be
// checkpointed for exact resume.
class BatchIterator {
public:
    BatchIterator(const std::vector<SegSample>& samples, int64_t batch_size,
                  const AugmentConfig& cfg, std::mt19937_64& rng, bool augment_on = true);

    bool next(Batch& out);

private:
    const std::vector<SegSample>& samples_;
    int64_t batch_size_;
    AugmentConfig cfg_;
    std::mt19937_64& rng_;
    bool augment_;
    std::vector<int64_t> order_;
    size_t pos_ = 0;
};

// Fixture -------------------------------------------------------------------

// Writes a small synthetic lesion dataset (soft background plus one bright
// elliptical blob per slice) under <dir>/images and <dir>/masks.
void make_synthetic_dataset(const std::string& dir, int64_t subjects, int64_t slices_per_subject,
                            int64_t extent, uint64_t seed);

}  // namespace d2a
