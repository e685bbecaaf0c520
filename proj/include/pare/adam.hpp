#pragma once
// Adam with dense per-tensor state, plus the reduce-on-plateau / early-stopping
// controller shared by both trainable models. Gradients accumulate in double;
// parameters keep their storage type.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pare {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;

    void resize(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

template <class S>
inline void adam_step(AdamState& state, std::span<S> params, std::span<const double> grads,
                      double lr, const AdamConfig& cfg = {}) {
    if (params.size() != grads.size() || state.m.size() != params.size())
        throw std::runtime_error("adam_step: size mismatch");
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] = static_cast<S>(static_cast<double>(params[i]) -
                                   lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_metric = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;
    std::size_t skipped_pairs = 0;  // pairs skipped for lack of eligible negatives
};

using TrainHistory = std::vector<EpochStats>;

// Tracks a maximized validation metric. `observe` returns true when training
// should stop; `should_snapshot` marks epochs whose parameters are the best so far.
struct PlateauController {
    double factor = 0.5;
    int plateau_patience = 5;
    int early_stop_patience = 10;
    double lr_floor = 1e-5;

    double best = -std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    int plateau_bad_epochs = 0;
    bool improved_last = false;

    bool observe(double metric, double& lr) {
        improved_last = metric > best;
        if (improved_last) {
            best = metric;
            bad_epochs = 0;
            plateau_bad_epochs = 0;
            return false;
        }
        ++bad_epochs;
        ++plateau_bad_epochs;
        if (plateau_bad_epochs >= plateau_patience) {
            lr = std::max(lr * factor, lr_floor);
            plateau_bad_epochs = 0;
        }
        return bad_epochs >= early_stop_patience;
    }

    bool should_snapshot() const { return improved_last; }
};

inline void check_finite_loss(double loss, int epoch, std::size_t batch, const char* model) {
    if (!std::isfinite(loss))
        throw std::runtime_error(std::string(model) + ": non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batch));
}

}  // namespace pare
