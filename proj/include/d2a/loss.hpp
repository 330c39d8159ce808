#pragma once

#include "d2a/ops.hpp"

namespace d2a {

struct LossConfig {
    double alpha = 1.0;         // BCE weight
    double dice_epsilon = 1e-5; // smoothing for empty masks
};

namespace detail {

template <typename T>
void check_binary_target(const Tensor<T>& target) {
    for (T v : target.values())
        check(v == T(0) || v == T(1), "target mask must be strictly binary {0,1}");
}

}  // namespace detail

// Soft Dice loss on logits, averaged over the batch:
//   1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps),  p = sigmoid(z)
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& target, const LossConfig& cfg = {}) {
    check(logits.shape() == target.shape(), "dice loss shape mismatch: " +
                                                shape_str(logits.shape()) + " vs " +
                                                shape_str(target.shape()));
    detail::check_binary_target(target);
    T eps = T(cfg.dice_epsilon);
    Tensor<T> p = sigmoid(logits);
    Tensor<T> inter = sum_per_sample(mul(p, target));         // [B]
    Tensor<T> denom = add(sum_per_sample(p), sum_per_sample(target));
    Tensor<T> dice = div(add_scalar(mul_scalar(inter, T(2)), eps), add_scalar(denom, eps));
    return add_scalar(mul_scalar(mean(dice), T(-1)), T(1));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target) {
    detail::check_binary_target(target);
    return bce_with_logits(logits, target);
}

// Combined objective: dice + alpha * bce.
template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& target, const LossConfig& cfg = {}) {
    Tensor<T> d = dice_loss(logits, target, cfg);
    if (cfg.alpha == 0.0) return d;
    return add(d, mul_scalar(bce_loss(logits, target), T(cfg.alpha)));
}

// Probability map -> binary mask; p >= threshold maps to 1.
template <typename T>
std::vector<uint8_t> binarize(const std::vector<T>& probs, T threshold = T(0.5)) {
    std::vector<uint8_t> out(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Confusion counts and the derived ratio metrics.
// Empty-mask conventions: Recall with TP+FN = 0 is 1; Dice with both masks
// empty is 1 (a correct all-negative prediction scores perfectly).
// ---------------------------------------------------------------------------
struct MetricsRecord {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    int64_t total() const { return tp + fp + tn + fn; }

    double dice() const {
        if (2 * tp + fp + fn == 0) return 1.0;
        return 2.0 * (double)tp / (double)(2 * tp + fp + fn);
    }
    double pixel_error() const {
        if (total() == 0) return 0.0;
        return (double)(fp + fn) / (double)total();
    }
    double recall() const {
        if (tp + fn == 0) return 1.0;
        return (double)tp / (double)(tp + fn);
    }

    MetricsRecord& operator+=(const MetricsRecord& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

inline MetricsRecord compute_metrics(const std::vector<uint8_t>& pred,
                                     const std::vector<uint8_t>& truth) {
    check(pred.size() == truth.size(), "metrics: prediction and truth sizes differ");
    MetricsRecord m;
    for (size_t i = 0; i < pred.size(); ++i) {
        check(pred[i] <= 1 && truth[i] <= 1, "metrics inputs must be binary {0,1}");
        if (pred[i] && truth[i])
            ++m.tp;
        else if (pred[i] && !truth[i])
            ++m.fp;
        else if (!pred[i] && truth[i])
            ++m.fn;
        else
            ++m.tn;
    }
    return m;
}

template <typename T>
MetricsRecord compute_metrics(const Tensor<T>& pred, const Tensor<T>& truth) {
    check(pred.shape() == truth.shape(), "metrics: shape mismatch " + shape_str(pred.shape()) +
                                             " vs " + shape_str(truth.shape()));
    std::vector<uint8_t> p(pred.numel()), t(truth.numel());
    for (int64_t i = 0; i < pred.numel(); ++i) {
        T pv = pred.values()[i], tv = truth.values()[i];
        check(pv == T(0) || pv == T(1), "metrics inputs must be binary {0,1}");
        check(tv == T(0) || tv == T(1), "metrics inputs must be binary {0,1}");
        p[i] = (uint8_t)pv;
        t[i] = (uint8_t)tv;
    }
    return compute_metrics(p, t);
}

// Accumulates confusion counts across an evaluation set. Micro mode sums
// counts before computing ratios; macro averages per-slice ratios.
class MetricsAccumulator {
public:
    explicit MetricsAccumulator(bool micro = true) : micro_(micro) {}

    void add(const MetricsRecord& m) {
        sum_ += m;
        dice_ += m.dice();
        pixerr_ += m.pixel_error();
        recall_ += m.recall();
        ++count_;
    }

    double dice() const { return micro_ ? sum_.dice() : dice_ / std::max<int64_t>(1, count_); }
    double pixel_error() const {
        return micro_ ? sum_.pixel_error() : pixerr_ / std::max<int64_t>(1, count_);
    }
    double recall() const {
        return micro_ ? sum_.recall() : recall_ / std::max<int64_t>(1, count_);
    }
    const MetricsRecord& counts() const { return sum_; }
    int64_t slices() const { return count_; }

private:
    bool micro_;
    MetricsRecord sum_;
    double dice_ = 0, pixerr_ = 0, recall_ = 0;
    int64_t count_ = 0;
};

}  // namespace d2a
