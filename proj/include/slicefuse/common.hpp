#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace slicefuse {

// Error taxonomy. The CLI maps these onto exit codes: ValueError and usage
// problems -> 1, IoError/DataError -> 2, ShapeError/NumericError -> 3.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk containers (bad magic, truncation, inconsistent counts).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---- little-endian binary primitives ----
// All file formats in this project are explicitly little-endian; these
// helpers assemble bytes by hand so the layout is host-independent.

inline void write_u8(std::ostream& out, std::uint8_t v) {
    out.put(static_cast<char>(v));
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(b, 4);
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    out.write(b, 8);
}

inline void write_f64_le(std::ostream& out, double v) {
    write_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

inline void write_f32_le(std::ostream& out, float v) {
    write_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

inline std::uint8_t read_u8(std::istream& in, const char* what) {
    int c = in.get();
    if (c == std::char_traits<char>::eof()) {
        throw DataError(std::string("truncated input while reading ") + what);
    }
    return static_cast<std::uint8_t>(c);
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw DataError(std::string("truncated input while reading ") + what);
    }
}

inline std::uint32_t read_u32_le(std::istream& in, const char* what) {
    char b[4];
    read_exact(in, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

inline std::uint64_t read_u64_le(std::istream& in, const char* what) {
    char b[8];
    read_exact(in, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

inline double read_f64_le(std::istream& in, const char* what) {
    return std::bit_cast<double>(read_u64_le(in, what));
}

inline float read_f32_le(std::istream& in, const char* what) {
    return std::bit_cast<float>(read_u32_le(in, what));
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_u32_le(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what) {
    const std::uint32_t n = read_u32_le(in, what);
    std::string s(n, '\0');
    if (n > 0) read_exact(in, s.data(), n, what);
    return s;
}

// ---- FNV-1a checksums ----
// Used for the stage-2 freeze contract: a checksum of the descriptor source
// taken before and after training must match bit for bit.

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::vector<double>& values, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (double v : values) {
        const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        unsigned char b[8];
        std::memcpy(b, &bits, 8);
        h = fnv1a64(b, 8, h);
    }
    return h;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace slicefuse
