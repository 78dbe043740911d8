#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "graphfed/errors.hpp"
#include "graphfed/recording.hpp"
#include "graphfed/rng.hpp"

namespace graphfed {

// Synthetic recording with class structure built in. For an epoch of class c
// the channels split into two groups whose membership rotates with c; each
// group carries a shared-phase sinusoid at a class-specific frequency bin.
// Channels in a group are therefore phase locked and strongly correlated,
// groups are not, and the spectral band holding the energy identifies the
// class, so phase, correlation, and band-energy pipelines can all separate
// the classes.

inline constexpr std::uint64_t kSynthStream = 2'000'000'000;

struct synth_config {
    std::size_t n_classes = 5;
    std::size_t n_channels = 10;
    std::size_t n_epochs = 500;
    std::size_t samples_per_epoch = 256;
    double noise = 0.1;
    double sample_rate = 100.0;
};

inline void validate_synth_config(const synth_config& cfg) {
    if (cfg.n_classes < 2) throw config_error("synthetic data needs at least 2 classes");
    if (cfg.n_channels < 4) throw config_error("synthetic data needs at least 4 channels");
    if (cfg.n_epochs < cfg.n_classes)
        throw config_error("synthetic data needs at least one epoch per class");
    if (cfg.samples_per_epoch % 2 != 0 || cfg.samples_per_epoch < 4 * cfg.n_classes)
        throw config_error("samples per epoch must be even and at least 4x the class count");
    if (cfg.noise < 0.0) throw config_error("noise level must be non-negative");
    if (!(cfg.sample_rate > 0.0)) throw config_error("sample rate must be positive");
}

namespace detail {

// Frequency slots 0..2K-1 spread evenly over the positive spectrum; slot
// g*K + c belongs to group g of class c. Distinct slots land in distinct
// bands of the band-energy features when the band count is 2K.
inline std::size_t synth_bin(std::size_t slot, std::size_t n_classes, std::size_t d) {
    const std::size_t half = d / 2;
    const double raw = (double(slot) + 0.5) * double(half) / double(2 * n_classes);
    auto bin = std::size_t(std::llround(raw));
    return std::clamp<std::size_t>(bin, 1, half - 1);
}

} // namespace detail

struct synth_result {
    recording rec;
    label_set labels;
    electrode_positions positions;
};

inline synth_result gen_synthetic(const synth_config& cfg, std::uint64_t seed) {
    validate_synth_config(cfg);
    const std::size_t n = cfg.n_channels, t_count = cfg.n_epochs, d = cfg.samples_per_epoch;
    const std::size_t k_classes = cfg.n_classes;
    const std::size_t group_size = n / 2;

    synth_result out;
    out.rec.n_channels = n;
    out.rec.n_epochs = t_count;
    out.rec.samples_per_epoch = d;
    out.rec.sample_rate = cfg.sample_rate;
    out.rec.values.assign(n * t_count * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "ch%02zu", i);
        out.rec.channel_names.push_back(name);
        const double angle = 2.0 * std::numbers::pi * double(i) / double(n);
        out.positions.names.push_back(name);
        out.positions.coords.push_back({std::cos(angle), std::sin(angle), 0.0});
    }

    out.labels.n_classes = int(k_classes);
    rng_stream rng(seed, kSynthStream);
    for (std::size_t t = 0; t < t_count; ++t) {
        const std::size_t c = t % k_classes;
        out.labels.labels.push_back(int(c));
        const double phase[2] = {2.0 * std::numbers::pi * rng.uniform(),
                                 2.0 * std::numbers::pi * rng.uniform()};
        const std::size_t bin[2] = {detail::synth_bin(c, k_classes, d),
                                    detail::synth_bin(k_classes + c, k_classes, d)};
        for (std::size_t ch = 0; ch < n; ++ch) {
            // group 0 is the group_size channels starting at c, cyclically
            const std::size_t rel = (ch + n - c % n) % n;
            const std::size_t g = rel < group_size ? 0 : 1;
            const double omega = 2.0 * std::numbers::pi * double(bin[g]) / double(d);
            for (std::size_t k = 0; k < d; ++k) {
                double v = std::sin(omega * double(k) + phase[g]);
                if (cfg.noise > 0.0) v += cfg.noise * rng.normal();
                out.rec.at(ch, t, k) = v;
            }
        }
    }
    return out;
}

} // namespace graphfed
