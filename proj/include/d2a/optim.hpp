#pragma once

#include <limits>

#include "d2a/attention.hpp"

namespace d2a {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double plateau_factor = 0.1;
    int64_t plateau_patience = 10;
    double improvement_eps = 1e-8;
    int64_t batch_size = 4;  // full scale: 6
    int64_t epochs = 30;
    uint64_t seed = 0;
    double train_frac = 0.5;
    double val_frac = 0.25;
    double test_frac = 0.25;
    bool micro_metrics = true;

    void validate() const {
        check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
              "Adam betas must lie in [0,1)");
        check(lr > 0 && eps > 0, "lr and eps must be positive");
        check(plateau_patience >= 0, "patience must be >= 0");
        check(batch_size >= 1 && epochs >= 0, "batch size and epochs must be positive");
        check(weight_decay >= 0, "weight decay must be >= 0");
    }
};

// Classic Adam with bias correction. L2 regularization is the coupled form:
// the decay term is added to the gradient before the moment updates.
template <typename T>
class Adam {
public:
    Adam() = default;
    explicit Adam(const TrainConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    int64_t step_count() const { return step_; }

    void step(NamedParams<T>& params) {
        if (m_.empty()) {
            for (auto& [name, t] : params) {
                m_.emplace_back(t->numel(), T(0));
                v_.emplace_back(t->numel(), T(0));
            }
        }
        check(m_.size() == params.size(), "optimizer state does not match parameter list");
        ++step_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, (double)step_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, (double)step_);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& [name, t] = params[pi];
            auto& g = t->grad();
            auto& val = t->values();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < val.size(); ++i) {
                if (std::isnan((double)g[i]) || std::isinf((double)g[i]))
                    throw std::runtime_error("non-finite gradient in parameter '" + name + "'");
                double gi = (double)g[i] + cfg_.weight_decay * (double)val[i];
                m[i] = T(cfg_.beta1 * (double)m[i] + (1.0 - cfg_.beta1) * gi);
                v[i] = T(cfg_.beta2 * (double)v[i] + (1.0 - cfg_.beta2) * gi * gi);
                double mhat = (double)m[i] / bc1;
                double vhat = (double)v[i] / bc2;
                val[i] = T((double)val[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
            t->zero_grad();
        }
    }

    // state access for checkpointing
    std::vector<std::vector<T>>& moment1() { return m_; }
    std::vector<std::vector<T>>& moment2() { return v_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    TrainConfig cfg_;
    int64_t step_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// Reduce-on-plateau: after patience+1 consecutive epochs without a strict
// improvement (beyond improvement_eps), multiply lr by the factor. The stall
// counter resets on improvement or reduction.
struct PlateauScheduler {
    double lr = 1e-4;
    double factor = 0.1;
    int64_t patience = 10;
    double eps = 1e-8;

    double best = std::numeric_limits<double>::infinity();
    bool best_set = false;
    int64_t stall = 0;

    PlateauScheduler() = default;
    PlateauScheduler(double lr_, double factor_, int64_t patience_, double eps_ = 1e-8)
        : lr(lr_), factor(factor_), patience(patience_), eps(eps_) {}

    // Feed the monitored value for one epoch; returns the (possibly reduced) lr.
    double observe(double value) {
        bool improved = best_set && value < best - eps;
        if (!best_set || improved) {
            best = value;
            best_set = true;
        }
        if (improved)
            stall = 0;
        else
            ++stall;
        if (stall >= patience + 1) {
            lr *= factor;
            stall = 0;
        }
        return lr;
    }
};

}  // namespace d2a
