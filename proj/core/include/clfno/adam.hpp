#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "clfno/param_store.hpp"

namespace clfno {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // coupled (added to the gradient)
};

/// Per-parameter first/second moments plus a shared step counter.
/// Moments are keyed by parameter name and created lazily, so entries
/// added to the store mid-run (task-specific parameters) just work.
struct AdamState {
    explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}

    AdamConfig config;
    int64_t step = 0;

    struct Moments {
        Tensor m;
        Tensor v;
    };
    std::map<std::string, Moments> moments;
};

/// One bias-corrected Adam update over the trainable entries of `params`,
/// using the gradients currently in their slots. No-op on an empty
/// trainable set.
void adam_step(AdamState& state, ParamStore& params);

/// Cosine decay from `start` at epoch 0 to `end` at the last epoch.
double cosine_lr(double start, double end, int epoch, int total_epochs);

} // namespace clfno
