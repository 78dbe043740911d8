#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "graphfed/errors.hpp"

namespace graphfed {

// Adam optimizer state for one flat parameter vector. Betas and epsilon are
// the usual defaults; the learning rate is the tuned setting.
struct adam_state {
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
    std::uint64_t t = 0;    // completed steps
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 0.015;

    adam_state() = default;
    explicit adam_state(std::size_t n_params, double learning_rate = 0.015)
        : m(n_params, 0.0), v(n_params, 0.0), lr(learning_rate) {}
};

// One bias-corrected Adam step, in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, adam_state& state) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        state.m.size() != state.v.size())
        throw shape_error("adam_step: params " + std::to_string(params.size()) +
                          ", grads " + std::to_string(grads.size()) +
                          ", state " + std::to_string(state.m.size()));
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

} // namespace graphfed
