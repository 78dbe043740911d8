#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "graphfed/binary_io.hpp"
#include "graphfed/dft.hpp"
#include "graphfed/errors.hpp"
#include "graphfed/parallel.hpp"
#include "graphfed/recording.hpp"

namespace graphfed {

// Per-epoch node features for all timestamps: T x N x d, row-major.
struct feature_tensor {
    std::size_t n_timestamps = 0;  // T
    std::size_t n_nodes = 0;       // N
    std::size_t dim = 0;           // d
    std::vector<double> data;

    feature_tensor() = default;
    feature_tensor(std::size_t t, std::size_t n, std::size_t d)
        : n_timestamps(t), n_nodes(n), dim(d), data(t * n * d, 0.0) {}

    std::span<double> row(std::size_t t, std::size_t n) {
        return {data.data() + (t * n_nodes + n) * dim, dim};
    }
    std::span<const double> row(std::size_t t, std::size_t n) const {
        return {data.data() + (t * n_nodes + n) * dim, dim};
    }
};

class feature_extractor {
public:
    virtual ~feature_extractor() = default;
    virtual std::string kind() const = 0;
    virtual std::size_t dim() const = 0;
    // Writes exactly dim() finite values into out.
    virtual void extract(std::span<const double> epoch, std::span<double> out) const = 0;
};

// Summary-statistic features: mean, population std, min, max, RMS,
// zero-crossing rate, then n_bands spectral band energies. The bands
// partition DFT bins 1..D/2 into contiguous chunks (leading chunks take the
// remainder) and sum |X_k|^2 / D per band.
class stat_extractor : public feature_extractor {
public:
    explicit stat_extractor(std::size_t n_bands = 10) : n_bands_(n_bands) {
        if (n_bands_ < 1)
            throw config_error("stat_extractor: need at least 1 band");
    }

    std::string kind() const override { return "stat"; }
    std::size_t dim() const override { return 6 + n_bands_; }
    std::size_t n_bands() const { return n_bands_; }

    void extract(std::span<const double> epoch, std::span<double> out) const override {
        const std::size_t d = epoch.size();
        if (d < 2)
            throw shape_error("stat_extractor: epoch needs at least 2 samples");
        if (n_bands_ > d / 2)
            throw shape_error("stat_extractor: " + std::to_string(n_bands_) +
                              " bands exceed " + std::to_string(d / 2) + " spectral bins");
        for (double v : epoch)
            if (!std::isfinite(v))
                throw validation_error("stat_extractor: non-finite sample");

        double sum = 0.0, sum_sq = 0.0;
        double lo = epoch[0], hi = epoch[0];
        std::size_t crossings = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const double v = epoch[i];
            sum += v;
            sum_sq += v * v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            if (i + 1 < d && v * epoch[i + 1] < 0.0) ++crossings;
        }
        const double mean = sum / double(d);
        double var = 0.0;
        for (double v : epoch) var += (v - mean) * (v - mean);
        var /= double(d);
        out[0] = mean;
        out[1] = std::sqrt(var);
        out[2] = lo;
        out[3] = hi;
        out[4] = std::sqrt(sum_sq / double(d));
        out[5] = double(crossings) / double(d - 1);

        const std::size_t n_bins = d / 2;  // bins 1..n_bins
        const complex_vector spec = dft(epoch);
        const std::size_t base = n_bins / n_bands_;
        const std::size_t rem = n_bins % n_bands_;
        std::size_t bin = 1;
        for (std::size_t b = 0; b < n_bands_; ++b) {
            const std::size_t width = base + (b < rem ? 1 : 0);
            double energy = 0.0;
            for (std::size_t k = 0; k < width; ++k, ++bin)
                energy += std::norm(spec[bin]) / double(d);
            out[6 + b] = energy;
        }
    }

private:
    std::size_t n_bands_;
};

inline std::vector<double> stat_features(std::span<const double> epoch, std::size_t n_bands) {
    stat_extractor ex(n_bands);
    std::vector<double> out(ex.dim());
    ex.extract(epoch, out);
    return out;
}

inline feature_tensor extract_all(const recording& rec, const feature_extractor& ex,
                                  unsigned workers = 1) {
    feature_tensor out(rec.n_epochs, rec.n_channels, ex.dim());
    parallel_for(rec.n_epochs, workers, [&](std::size_t t0, std::size_t t1) {
        for (std::size_t t = t0; t < t1; ++t)
            for (std::size_t n = 0; n < rec.n_channels; ++n)
                ex.extract(rec.epoch(n, t), out.row(t, n));
    });
    for (double v : out.data)
        if (!std::isfinite(v)) throw numeric_error("extract_all: non-finite feature");
    return out;
}

// .ftr container: magic "FTR1", u32 T, u32 N, u32 d, then T*N*d f64 values.
inline constexpr char kFtrMagic[] = "FTR1";

inline void write_features(const feature_tensor& ft, const std::filesystem::path& path) {
    io::atomic_write(path, [&](std::ostream& os) {
        io::put_magic(os, kFtrMagic);
        io::put_le<std::uint32_t>(os, std::uint32_t(ft.n_timestamps));
        io::put_le<std::uint32_t>(os, std::uint32_t(ft.n_nodes));
        io::put_le<std::uint32_t>(os, std::uint32_t(ft.dim));
        for (double v : ft.data) io::put_f64(os, v);
    });
}

inline feature_tensor load_features(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, kFtrMagic, path.string());
    const auto t = io::get_le<std::uint32_t>(is);
    const auto n = io::get_le<std::uint32_t>(is);
    const auto d = io::get_le<std::uint32_t>(is);
    feature_tensor out(t, n, d);
    for (auto& v : out.data) {
        v = io::get_f64(is);
        if (!std::isfinite(v))
            throw validation_error(path.string() + ": non-finite feature value");
    }
    io::expect_eof(is, path.string());
    return out;
}

} // namespace graphfed
