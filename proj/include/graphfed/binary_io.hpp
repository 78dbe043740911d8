#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>

#include "graphfed/errors.hpp"

// Little-endian primitives for the binary container formats, plus an atomic
// write helper (temp file + rename) so failed runs never leave partial files.

namespace graphfed {
namespace io {

template <typename T>
inline void put_le(std::ostream& os, T value) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(value);
    char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bytes[i] = char((u >> (8 * i)) & 0xff);
    os.write(bytes, sizeof(T));
}

template <typename T>
inline T get_le(std::istream& is) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    char bytes[sizeof(T)];
    if (!is.read(bytes, sizeof(T)))
        throw truncation_error("unexpected end of file");
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        u |= U(static_cast<unsigned char>(bytes[i])) << (8 * i);
    return static_cast<T>(u);
}

inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }

inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

inline void put_magic(std::ostream& os, const std::string& magic) {
    os.write(magic.data(), std::streamsize(magic.size()));
}

inline void expect_magic(std::istream& is, const std::string& magic, const std::string& what) {
    std::string got(magic.size(), '\0');
    if (!is.read(got.data(), std::streamsize(magic.size())) || got != magic)
        throw format_error(what + ": bad magic (expected \"" + magic + "\")");
}

inline void expect_eof(std::istream& is, const std::string& what) {
    if (is.peek() != std::char_traits<char>::eof())
        throw format_error(what + ": trailing bytes after declared payload");
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open " + path.string());
    return is;
}

// Writes via a sibling temp file and renames into place on success.
template <typename WriterFn>
inline void atomic_write(const std::filesystem::path& path, WriterFn&& writer) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    try {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw data_error("cannot open " + tmp.string() + " for writing");
        writer(os);
        os.flush();
        if (!os) throw data_error("write failed: " + tmp.string());
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
    std::filesystem::rename(tmp, path);
}

} // namespace io
} // namespace graphfed
