#include "clfno/adam.hpp"

#include <cmath>

namespace clfno {

void adam_step(AdamState& state, ParamStore& params) {
    bool any = false;
    for (const auto& [name, e] : params) {
        if (e.trainable) {
            any = true;
            break;
        }
    }
    if (!any) {
        return;
    }

    const AdamConfig& c = state.config;
    ++state.step;
    double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

    for (auto& [name, e] : params) {
        if (!e.trainable) {
            continue;
        }
        auto it = state.moments.find(name);
        if (it == state.moments.end()) {
            AdamState::Moments mo;
            mo.m = Tensor(e.value.shape);
            mo.v = Tensor(e.value.shape);
            it = state.moments.emplace(name, std::move(mo)).first;
        }
        AdamState::Moments& mo = it->second;
        for (size_t i = 0; i < e.value.data.size(); ++i) {
            double g = e.grad.data[i] + c.weight_decay * e.value.data[i];
            mo.m.data[i] = c.beta1 * mo.m.data[i] + (1.0 - c.beta1) * g;
            mo.v.data[i] = c.beta2 * mo.v.data[i] + (1.0 - c.beta2) * g * g;
            double mhat = mo.m.data[i] / bc1;
            double vhat = mo.v.data[i] / bc2;
            e.value.data[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

double cosine_lr(double start, double end, int epoch, int total_epochs) {
    if (total_epochs <= 1) {
        return start;
    }
    double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    if (t > 1.0) {
        t = 1.0;
    }
    return end + 0.5 * (start - end) * (1.0 + std::cos(3.14159265358979323846 * t));
}

} // namespace clfno
