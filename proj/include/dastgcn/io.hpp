#pragma once

// Small file helpers shared by the data, report and checkpoint code. Doubles
// are printed with %.17g so every written artifact is byte-reproducible and
// round-trips exactly.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dastgcn/errors.hpp"
#include "dastgcn/tensor.hpp"

namespace dastgcn {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// little-endian scalar packing for the binary formats
namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}
inline double get_f64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}
}  // namespace detail

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_matrix_csv(const std::filesystem::path& path, const Tensor& m) {
    if (m.rank() != 2) throw DimensionError("write_matrix_csv: want a 2D tensor, got " + shape_str(m.shape()));
    std::ostringstream ss;
    for (int i = 0; i < m.dim(0); ++i) {
        for (int j = 0; j < m.dim(1); ++j) {
            if (j) ss << ',';
            ss << format_double(m.at(i, j));
        }
        ss << '\n';
    }
    write_text_file(path, ss.str());
}

inline Tensor read_matrix_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<double> values;
    int cols = -1, rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        int c = 0;
        while (std::getline(ls, cell, ',')) {
            values.push_back(std::stod(cell));
            ++c;
        }
        if (cols < 0) cols = c;
        if (c != cols) throw DataError("ragged CSV row in " + path.string());
        ++rows;
    }
    if (rows == 0) throw DataError("empty CSV " + path.string());
    return Tensor({rows, cols}, std::move(values));
}

}  // namespace dastgcn
