#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "graphfed/binary_io.hpp"
#include "graphfed/errors.hpp"
#include "graphfed/features.hpp"

namespace graphfed {

// Frozen two-branch 1-D CNN used as an alternative feature extractor. The
// temporal branch uses a small first kernel, the spectral branch a large one;
// both end in a flatten and the results concatenate to 256 features. Forward
// only, inference mode: batch norm uses running statistics, dropout is
// inactive.

struct conv_layer_weights {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::vector<double> kernels;  // [out][in][k]
    std::vector<double> bias;     // [out]
    std::vector<double> bn_scale, bn_shift, bn_mean, bn_var;  // [out]
};

struct conv_branch_weights {
    std::vector<conv_layer_weights> convs;  // 4 conv+bn layers
};

struct conv_pipeline_weights {
    conv_branch_weights temporal;  // small kernels
    conv_branch_weights spectral;  // large kernels
};

// One stage of the pipeline as seen in the layer table: name + output shape.
struct conv_stage {
    std::string name;
    std::size_t length = 0;
    std::size_t channels = 0;
};

struct conv_trace {
    std::vector<conv_stage> temporal;
    std::vector<conv_stage> spectral;
    std::size_t concat_dim = 0;
};

namespace detail {

struct conv_layer_spec {
    std::size_t in_ch, out_ch, kernel, stride, pad_left, pad_right;
};

struct pool_spec {
    std::size_t kernel, stride;
};

struct branch_spec {
    conv_layer_spec conv[4];
    pool_spec pool_a;     // after conv 0
    pool_spec pool_b;     // after conv 3
};

// Kernel/stride choices are pinned so the stage shapes below come out to the
// widths listed in each branch_spec for a 3000-sample input.
inline const branch_spec& temporal_spec() {
    static const branch_spec s{
        {{1, 32, 54, 6, 0, 0},
         {32, 64, 8, 1, 3, 4},
         {64, 64, 8, 1, 3, 4},
         {64, 64, 8, 1, 3, 4}},
        {16, 16},
        {10, 10},
    };
    return s;
}

inline const branch_spec& spectral_spec() {
    static const branch_spec s{
        {{1, 64, 400, 50, 0, 0},
         {64, 64, 8, 1, 3, 4},
         {64, 64, 8, 1, 3, 4},
         {64, 64, 8, 1, 3, 4}},
        {8, 8},
        {6, 6},
    };
    return s;
}

inline std::size_t conv_out_len(std::size_t in_len, const conv_layer_spec& c) {
    const std::size_t padded = in_len + c.pad_left + c.pad_right;
    if (padded < c.kernel) throw shape_error("conv: input shorter than kernel");
    return (padded - c.kernel) / c.stride + 1;
}

inline std::size_t pool_out_len(std::size_t in_len, const pool_spec& p) {
    if (in_len < p.kernel) throw shape_error("pool: input shorter than window");
    return (in_len - p.kernel) / p.stride + 1;
}

inline void require_tensor(std::size_t got, std::size_t want, const std::string& what) {
    if (got != want)
        throw shape_error(what + ": got " + std::to_string(got) + " values, want " +
                          std::to_string(want));
}

inline void validate_layer(const conv_layer_weights& w, const conv_layer_spec& spec,
                           const std::string& what) {
    if (w.in_channels != spec.in_ch || w.out_channels != spec.out_ch || w.kernel != spec.kernel)
        throw shape_error(what + ": layer is " + std::to_string(w.in_channels) + "->" +
                          std::to_string(w.out_channels) + " k" + std::to_string(w.kernel) +
                          ", want " + std::to_string(spec.in_ch) + "->" +
                          std::to_string(spec.out_ch) + " k" + std::to_string(spec.kernel));
    require_tensor(w.kernels.size(), spec.out_ch * spec.in_ch * spec.kernel, what + " kernels");
    require_tensor(w.bias.size(), spec.out_ch, what + " bias");
    require_tensor(w.bn_scale.size(), spec.out_ch, what + " bn_scale");
    require_tensor(w.bn_shift.size(), spec.out_ch, what + " bn_shift");
    require_tensor(w.bn_mean.size(), spec.out_ch, what + " bn_mean");
    require_tensor(w.bn_var.size(), spec.out_ch, what + " bn_var");
    for (double v : w.bn_var)
        if (!(v > 0.0))
            throw validation_error(what + ": running variance must be positive");
}

// Feature map stored channel-major: [channel][position].
struct feature_map {
    std::size_t channels = 0, length = 0;
    std::vector<double> data;
    feature_map(std::size_t c, std::size_t l) : channels(c), length(l), data(c * l, 0.0) {}
    double& at(std::size_t c, std::size_t p) { return data[c * length + p]; }
    double at(std::size_t c, std::size_t p) const { return data[c * length + p]; }
};

inline feature_map conv_bn_relu(const feature_map& in, const conv_layer_weights& w,
                                const conv_layer_spec& spec) {
    const std::size_t out_len = conv_out_len(in.length, spec);
    feature_map out(spec.out_ch, out_len);
    for (std::size_t oc = 0; oc < spec.out_ch; ++oc) {
        const double inv_sd = 1.0 / std::sqrt(w.bn_var[oc] + 1e-5);
        for (std::size_t p = 0; p < out_len; ++p) {
            double acc = w.bias[oc];
            for (std::size_t ic = 0; ic < spec.in_ch; ++ic) {
                const double* kern = w.kernels.data() + (oc * spec.in_ch + ic) * spec.kernel;
                for (std::size_t j = 0; j < spec.kernel; ++j) {
                    const std::size_t pos = p * spec.stride + j;
                    if (pos < spec.pad_left) continue;
                    const std::size_t src = pos - spec.pad_left;
                    if (src >= in.length) continue;
                    acc += kern[j] * in.at(ic, src);
                }
            }
            const double bn = w.bn_scale[oc] * (acc - w.bn_mean[oc]) * inv_sd + w.bn_shift[oc];
            out.at(oc, p) = std::max(0.0, bn);
        }
    }
    return out;
}

inline feature_map max_pool(const feature_map& in, const pool_spec& p) {
    const std::size_t out_len = pool_out_len(in.length, p);
    feature_map out(in.channels, out_len);
    for (std::size_t c = 0; c < in.channels; ++c)
        for (std::size_t o = 0; o < out_len; ++o) {
            double best = in.at(c, o * p.stride);
            for (std::size_t j = 1; j < p.kernel; ++j)
                best = std::max(best, in.at(c, o * p.stride + j));
            out.at(c, o) = best;
        }
    return out;
}

inline std::vector<double> run_branch(std::span<const double> epoch, const branch_spec& spec,
                                      const conv_branch_weights& w,
                                      std::vector<conv_stage>* trace) {
    auto record = [&](const char* name, const feature_map& fm) {
        if (trace) trace->push_back({name, fm.length, fm.channels});
    };
    feature_map fm(1, epoch.size());
    std::copy(epoch.begin(), epoch.end(), fm.data.begin());

    fm = conv_bn_relu(fm, w.convs[0], spec.conv[0]);
    record("conv_bn", fm);
    fm = max_pool(fm, spec.pool_a);
    record("max_pool", fm);
    record("dropout", fm);  // inactive in inference; shape unchanged
    for (int l = 1; l < 4; ++l) {
        fm = conv_bn_relu(fm, w.convs[l], spec.conv[l]);
        record("conv_bn", fm);
    }
    fm = max_pool(fm, spec.pool_b);
    record("max_pool", fm);
    if (trace) trace->push_back({"flatten", fm.channels * fm.length, 1});
    // flatten position-major to interleave channels per position
    std::vector<double> flat(fm.channels * fm.length);
    for (std::size_t p = 0; p < fm.length; ++p)
        for (std::size_t c = 0; c < fm.channels; ++c)
            flat[p * fm.channels + c] = fm.at(c, p);
    return flat;
}

} // namespace detail

inline constexpr std::size_t kConvInputLen = 3000;
inline constexpr std::size_t kConvOutputDim = 256;

inline void validate_conv_weights(const conv_pipeline_weights& w) {
    if (w.temporal.convs.size() != 4 || w.spectral.convs.size() != 4)
        throw shape_error("conv weights: each branch needs 4 conv layers");
    for (int l = 0; l < 4; ++l) {
        detail::validate_layer(w.temporal.convs[l], detail::temporal_spec().conv[l],
                               "temporal conv " + std::to_string(l));
        detail::validate_layer(w.spectral.convs[l], detail::spectral_spec().conv[l],
                               "spectral conv " + std::to_string(l));
    }
}

inline std::vector<double> conv_forward(std::span<const double> epoch,
                                        const conv_pipeline_weights& w,
                                        conv_trace* trace = nullptr) {
    if (epoch.size() != kConvInputLen)
        throw shape_error("conv_forward: epoch length " + std::to_string(epoch.size()) +
                          ", want " + std::to_string(kConvInputLen));
    validate_conv_weights(w);
    if (trace) *trace = conv_trace{};
    std::vector<double> a = detail::run_branch(epoch, detail::temporal_spec(), w.temporal,
                                               trace ? &trace->temporal : nullptr);
    std::vector<double> b = detail::run_branch(epoch, detail::spectral_spec(), w.spectral,
                                               trace ? &trace->spectral : nullptr);
    a.insert(a.end(), b.begin(), b.end());
    if (trace) trace->concat_dim = a.size();
    if (a.size() != kConvOutputDim)
        throw shape_error("conv_forward: concatenated " + std::to_string(a.size()) + " features");
    return a;
}

class conv_extractor : public feature_extractor {
public:
    explicit conv_extractor(conv_pipeline_weights w) : weights_(std::move(w)) {
        validate_conv_weights(weights_);
    }

    std::string kind() const override { return "conv"; }
    std::size_t dim() const override { return kConvOutputDim; }
    void extract(std::span<const double> epoch, std::span<double> out) const override {
        const std::vector<double> f = conv_forward(epoch, weights_);
        std::copy(f.begin(), f.end(), out.begin());
    }

    const conv_pipeline_weights& weights() const { return weights_; }

private:
    conv_pipeline_weights weights_;
};

// .cpw container: magic "CPW1", then the 8 conv layers in order (temporal
// 0..3, then spectral 0..3). Each layer: u32 tensor count (6), then per
// tensor u32 rank, u32 dims[rank], f32 payload. Tensor order per layer:
// kernels [out, in, k], bias [out], bn_scale, bn_shift, bn_mean, bn_var.
inline constexpr char kCpwMagic[] = "CPW1";

namespace detail {

inline void put_tensor(std::ostream& os, std::span<const std::size_t> dims,
                       std::span<const double> values) {
    io::put_le<std::uint32_t>(os, std::uint32_t(dims.size()));
    for (std::size_t d : dims) io::put_le<std::uint32_t>(os, std::uint32_t(d));
    for (double v : values) io::put_f32(os, float(v));
}

inline std::vector<double> get_tensor(std::istream& is, std::size_t expect_rank,
                                      const std::string& what) {
    const auto rank = io::get_le<std::uint32_t>(is);
    if (rank != expect_rank)
        throw format_error(what + ": rank " + std::to_string(rank) + ", want " +
                           std::to_string(expect_rank));
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) count *= io::get_le<std::uint32_t>(is);
    std::vector<double> out(count);
    for (auto& v : out) v = double(io::get_f32(is));
    return out;
}

inline void put_layer(std::ostream& os, const conv_layer_weights& w) {
    io::put_le<std::uint32_t>(os, 6);
    const std::size_t kdims[3] = {w.out_channels, w.in_channels, w.kernel};
    put_tensor(os, kdims, w.kernels);
    const std::size_t vdims[1] = {w.out_channels};
    put_tensor(os, vdims, w.bias);
    put_tensor(os, vdims, w.bn_scale);
    put_tensor(os, vdims, w.bn_shift);
    put_tensor(os, vdims, w.bn_mean);
    put_tensor(os, vdims, w.bn_var);
}

inline conv_layer_weights get_layer(std::istream& is, const conv_layer_spec& spec,
                                    const std::string& what) {
    const auto count = io::get_le<std::uint32_t>(is);
    if (count != 6)
        throw format_error(what + ": " + std::to_string(count) + " tensors, want 6");
    conv_layer_weights w;
    w.in_channels = spec.in_ch;
    w.out_channels = spec.out_ch;
    w.kernel = spec.kernel;
    w.kernels = get_tensor(is, 3, what + " kernels");
    w.bias = get_tensor(is, 1, what + " bias");
    w.bn_scale = get_tensor(is, 1, what + " bn_scale");
    w.bn_shift = get_tensor(is, 1, what + " bn_shift");
    w.bn_mean = get_tensor(is, 1, what + " bn_mean");
    w.bn_var = get_tensor(is, 1, what + " bn_var");
    return w;
}

} // namespace detail

inline void write_conv_weights(const conv_pipeline_weights& w, const std::filesystem::path& path) {
    validate_conv_weights(w);
    io::atomic_write(path, [&](std::ostream& os) {
        io::put_magic(os, kCpwMagic);
        for (const auto& layer : w.temporal.convs) detail::put_layer(os, layer);
        for (const auto& layer : w.spectral.convs) detail::put_layer(os, layer);
    });
}

inline conv_pipeline_weights load_conv_weights(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, kCpwMagic, path.string());
    conv_pipeline_weights w;
    for (int l = 0; l < 4; ++l)
        w.temporal.convs.push_back(detail::get_layer(is, detail::temporal_spec().conv[l],
                                                     path.string() + " temporal " +
                                                     std::to_string(l)));
    for (int l = 0; l < 4; ++l)
        w.spectral.convs.push_back(detail::get_layer(is, detail::spectral_spec().conv[l],
                                                     path.string() + " spectral " +
                                                     std::to_string(l)));
    io::expect_eof(is, path.string());
    validate_conv_weights(w);
    return w;
}

} // namespace graphfed
