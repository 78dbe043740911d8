#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "graphfed/binary_io.hpp"
#include "graphfed/errors.hpp"

namespace graphfed {

// Raw multichannel recording: N channels x T epochs x D samples per epoch.
struct recording {
    std::size_t n_channels = 0;       // N
    std::size_t n_epochs = 0;         // T
    std::size_t samples_per_epoch = 0; // D
    double sample_rate = 0.0;
    std::vector<std::string> channel_names;
    std::vector<double> values;       // [channel][epoch][sample]

    std::span<const double> epoch(std::size_t channel, std::size_t t) const {
        return {values.data() + (channel * n_epochs + t) * samples_per_epoch,
                samples_per_epoch};
    }
    double& at(std::size_t channel, std::size_t t, std::size_t k) {
        return values[(channel * n_epochs + t) * samples_per_epoch + k];
    }
};

struct label_set {
    std::vector<int> labels;  // one per epoch
    int n_classes = 5;
};

struct electrode_positions {
    std::vector<std::string> names;
    std::vector<std::array<double, 3>> coords;

    std::size_t size() const { return names.size(); }
};

inline void validate(const recording& rec) {
    if (rec.n_channels < 2)
        throw validation_error("recording: need at least 2 channels, got " +
                               std::to_string(rec.n_channels));
    if (rec.samples_per_epoch < 2)
        throw validation_error("recording: need at least 2 samples per epoch, got " +
                               std::to_string(rec.samples_per_epoch));
    if (rec.channel_names.size() != rec.n_channels)
        throw validation_error("recording: channel name count does not match N");
    if (rec.values.size() != rec.n_channels * rec.n_epochs * rec.samples_per_epoch)
        throw truncation_error("recording: value count does not match N*T*D");
    for (std::size_t c = 0; c < rec.n_channels; ++c)
        for (std::size_t t = 0; t < rec.n_epochs; ++t)
            for (double v : rec.epoch(c, t))
                if (!std::isfinite(v))
                    throw validation_error("recording: non-finite sample in channel '" +
                                           rec.channel_names[c] + "' epoch " +
                                           std::to_string(t));
}

// .sts container, little-endian:
//   magic "STSQ1", u8 version=1, u32 N, u32 T, u32 D, f64 sample_rate,
//   N channel names (u16 length + UTF-8 bytes), N*T*D f32 samples ordered
//   [channel][epoch][sample].
inline constexpr char kStsMagic[] = "STSQ1";

inline recording load_recording(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, kStsMagic, path.string());
    const auto version = io::get_le<std::uint8_t>(is);
    if (version != 1)
        throw format_error(path.string() + ": unsupported version " + std::to_string(version));
    recording rec;
    rec.n_channels = io::get_le<std::uint32_t>(is);
    rec.n_epochs = io::get_le<std::uint32_t>(is);
    rec.samples_per_epoch = io::get_le<std::uint32_t>(is);
    rec.sample_rate = io::get_f64(is);
    rec.channel_names.resize(rec.n_channels);
    for (auto& name : rec.channel_names) {
        const auto len = io::get_le<std::uint16_t>(is);
        name.resize(len);
        if (len && !is.read(name.data(), len))
            throw truncation_error(path.string() + ": truncated channel name");
    }
    const std::size_t count = rec.n_channels * rec.n_epochs * rec.samples_per_epoch;
    rec.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        char bytes[4];
        if (!is.read(bytes, 4))
            throw truncation_error(path.string() + ": declared N*T*D exceeds payload (" +
                                   std::to_string(i) + " of " + std::to_string(count) +
                                   " samples present)");
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b)
            u |= std::uint32_t(static_cast<unsigned char>(bytes[b])) << (8 * b);
        rec.values[i] = double(std::bit_cast<float>(u));
    }
    io::expect_eof(is, path.string());
    validate(rec);
    return rec;
}

inline void write_recording(const recording& rec, const std::filesystem::path& path) {
    validate(rec);
    io::atomic_write(path, [&](std::ostream& os) {
        io::put_magic(os, kStsMagic);
        io::put_le<std::uint8_t>(os, 1);
        io::put_le<std::uint32_t>(os, std::uint32_t(rec.n_channels));
        io::put_le<std::uint32_t>(os, std::uint32_t(rec.n_epochs));
        io::put_le<std::uint32_t>(os, std::uint32_t(rec.samples_per_epoch));
        io::put_f64(os, rec.sample_rate);
        for (const auto& name : rec.channel_names) {
            io::put_le<std::uint16_t>(os, std::uint16_t(name.size()));
            os.write(name.data(), std::streamsize(name.size()));
        }
        for (double v : rec.values) io::put_f32(os, float(v));
    });
}

// labels.csv: header "epoch,label", one row per epoch in order.
inline label_set load_labels(const std::filesystem::path& path, int n_classes) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "epoch,label")
        throw format_error(path.string() + ": expected header \"epoch,label\"");
    label_set out;
    out.n_classes = n_classes;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw format_error(path.string() + ": malformed row " + std::to_string(row));
        const long epoch = std::stol(line.substr(0, comma));
        const long label = std::stol(line.substr(comma + 1));
        if (epoch != long(row))
            throw validation_error(path.string() + ": epoch column out of order at row " +
                                   std::to_string(row));
        if (label < 0 || label >= n_classes)
            throw validation_error(path.string() + ": label " + std::to_string(label) +
                                   " outside [0, " + std::to_string(n_classes) + ") at epoch " +
                                   std::to_string(row));
        out.labels.push_back(int(label));
        ++row;
    }
    return out;
}

inline void write_labels(const label_set& labels, const std::filesystem::path& path) {
    io::atomic_write(path, [&](std::ostream& os) {
        os << "epoch,label\n";
        for (std::size_t t = 0; t < labels.labels.size(); ++t)
            os << t << ',' << labels.labels[t] << '\n';
    });
}

// positions.csv: header "channel,x,y,z".
inline electrode_positions load_positions(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "channel,x,y,z")
        throw format_error(path.string() + ": expected header \"channel,x,y,z\"");
    electrode_positions out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string name, xs, ys, zs;
        if (!std::getline(ss, name, ',') || !std::getline(ss, xs, ',') ||
            !std::getline(ss, ys, ',') || !std::getline(ss, zs))
            throw format_error(path.string() + ": malformed row \"" + line + "\"");
        out.names.push_back(name);
        out.coords.push_back({std::stod(xs), std::stod(ys), std::stod(zs)});
    }
    return out;
}

inline void write_positions(const electrode_positions& pos, const std::filesystem::path& path) {
    io::atomic_write(path, [&](std::ostream& os) {
        os << "channel,x,y,z\n";
        char buf[96];
        for (std::size_t i = 0; i < pos.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g", pos.names[i].c_str(),
                          pos.coords[i][0], pos.coords[i][1], pos.coords[i][2]);
            os << buf << '\n';
        }
    });
}

// Reorders positions to match the recording's channel order; every channel
// must be present exactly once.
inline electrode_positions match_channels(const electrode_positions& pos, const recording& rec) {
    if (pos.size() != rec.n_channels)
        throw validation_error("positions: " + std::to_string(pos.size()) +
                               " entries for " + std::to_string(rec.n_channels) + " channels");
    electrode_positions out;
    for (const auto& name : rec.channel_names) {
        bool found = false;
        for (std::size_t i = 0; i < pos.size(); ++i) {
            if (pos.names[i] == name) {
                out.names.push_back(pos.names[i]);
                out.coords.push_back(pos.coords[i]);
                found = true;
                break;
            }
        }
        if (!found)
            throw validation_error("positions: no entry for channel '" + name + "'");
    }
    return out;
}

} // namespace graphfed
