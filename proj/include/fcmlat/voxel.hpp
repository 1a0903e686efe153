#pragma once

// Voxel grids of Hounsfield-like values, the two-valued indicator function,
// CT porosity and the CVOL volume format.

#include "fcmlat/error.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace fcmlat {

using HU = std::uint16_t;
using Dims = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

struct VoxelIndex {
    int i = 0;
    int j = 0;
    int k = 0;
};

/// Dense 3D field of HU values, x-fastest: flat = i + nx*(j + ny*k).
/// Immutable after construction.
class VoxelGrid {
public:
    VoxelGrid() = default;

    VoxelGrid(Dims dims, Vec3 spacing, Vec3 origin, std::vector<HU> values)
        : dims_(dims), spacing_(spacing), origin_(origin), values_(std::move(values)) {
        for (int a = 0; a < 3; ++a) {
            if (dims_[a] < 1) {
                throw std::invalid_argument("VoxelGrid: dims must be >= 1");
            }
            if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) {
                throw std::invalid_argument("VoxelGrid: spacing must be finite and > 0");
            }
            if (!std::isfinite(origin_[a])) {
                throw std::invalid_argument("VoxelGrid: origin must be finite");
            }
        }
        if (values_.size() != voxel_count()) {
            throw std::invalid_argument("VoxelGrid: values length does not match dims");
        }
    }

    /// Uniform grid filled with one value.
    static VoxelGrid filled(Dims dims, Vec3 spacing, Vec3 origin, HU value) {
        const std::size_t n = std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]);
        return VoxelGrid(dims, spacing, origin, std::vector<HU>(n, value));
    }

    const Dims& dims() const { return dims_; }
    const Vec3& spacing() const { return spacing_; }
    const Vec3& origin() const { return origin_; }
    std::span<const HU> values() const { return values_; }

    std::size_t voxel_count() const {
        return std::size_t(dims_[0]) * std::size_t(dims_[1]) * std::size_t(dims_[2]);
    }

    bool contains(VoxelIndex v) const {
        return v.i >= 0 && v.j >= 0 && v.k >= 0 && v.i < dims_[0] && v.j < dims_[1] &&
               v.k < dims_[2];
    }

    std::size_t flat(VoxelIndex v) const {
        return std::size_t(v.i) + std::size_t(dims_[0]) * (std::size_t(v.j) + std::size_t(dims_[1]) * std::size_t(v.k));
    }

    HU at(VoxelIndex v) const {
        if (!contains(v)) {
            throw std::out_of_range("VoxelGrid: voxel index out of range");
        }
        return values_[flat(v)];
    }

    /// World coordinate of a voxel center.
    Vec3 center(VoxelIndex v) const {
        return {origin_[0] + (v.i + 0.5) * spacing_[0], origin_[1] + (v.j + 0.5) * spacing_[1],
                origin_[2] + (v.k + 0.5) * spacing_[2]};
    }

    /// Physical extent of the grid (mm).
    Vec3 extent() const {
        return {dims_[0] * spacing_[0], dims_[1] * spacing_[1], dims_[2] * spacing_[2]};
    }

    friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

private:
    Dims dims_{1, 1, 1};
    Vec3 spacing_{1.0, 1.0, 1.0};
    Vec3 origin_{0.0, 0.0, 0.0};
    std::vector<HU> values_{0};
};

/// alpha(x): exactly 1 in material (HU >= threshold), exactly epsilon in void.
struct IndicatorField {
    const VoxelGrid* grid = nullptr;
    HU threshold = 0;
    double epsilon = 1e-8;

    IndicatorField(const VoxelGrid& g, HU thres, double eps = 1e-8)
        : grid(&g), threshold(thres), epsilon(eps) {
        if (!(eps > 0.0 && eps < 1.0)) {
            throw std::invalid_argument("IndicatorField: epsilon must lie in (0, 1)");
        }
    }

    bool is_material(std::size_t flat_index) const {
        return grid->values()[flat_index] >= threshold;
    }

    double operator()(std::size_t flat_index) const {
        return is_material(flat_index) ? 1.0 : epsilon;
    }
};

inline double indicator(const IndicatorField& field, VoxelIndex v) {
    if (!field.grid->contains(v)) {
        throw std::out_of_range("indicator: voxel index out of range");
    }
    return field(field.grid->flat(v));
}

inline std::size_t material_count(const VoxelGrid& grid, HU threshold) {
    std::size_t count = 0;
    for (HU v : grid.values()) {
        count += (v >= threshold) ? 1 : 0;
    }
    return count;
}

/// Voxel-count porosity: 1 - (#voxels with HU >= threshold) / (#voxels).
inline double porosity(const VoxelGrid& grid, HU threshold) {
    const auto n = grid.voxel_count();
    return 1.0 - double(material_count(grid, threshold)) / double(n);
}

/// Block-average downsampling. Trailing partial blocks are dropped.
inline VoxelGrid downsample(const VoxelGrid& grid, int factor) {
    if (factor < 2) {
        throw std::invalid_argument("downsample: factor must be >= 2");
    }
    const Dims& d = grid.dims();
    Dims out{d[0] / factor, d[1] / factor, d[2] / factor};
    for (int a = 0; a < 3; ++a) {
        if (out[a] < 1) {
            throw std::invalid_argument("downsample: factor exceeds grid dimension");
        }
    }
    std::vector<HU> values(std::size_t(out[0]) * out[1] * out[2]);
    const std::uint64_t block = std::uint64_t(factor) * factor * factor;
    const auto& src = grid.values();
    for (int k = 0; k < out[2]; ++k) {
        for (int j = 0; j < out[1]; ++j) {
            for (int i = 0; i < out[0]; ++i) {
                std::uint64_t sum = 0;
                for (int c = 0; c < factor; ++c) {
                    for (int b = 0; b < factor; ++b) {
                        const std::size_t row = grid.flat({i * factor, j * factor + b, k * factor + c});
                        for (int a = 0; a < factor; ++a) {
                            sum += src[row + a];
                        }
                    }
                }
                // round half up
                values[std::size_t(i) + std::size_t(out[0]) * (j + std::size_t(out[1]) * k)] =
                    HU((2 * sum + block) / (2 * block));
            }
        }
    }
    const Vec3& s = grid.spacing();
    return VoxelGrid(out, {s[0] * factor, s[1] * factor, s[2] * factor}, grid.origin(),
                     std::move(values));
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
        const std::size_t start = pos;
        while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
        if (pos > start) out.push_back(line.substr(start, pos - start));
    }
    return out;
}

template <typename T>
T parse_number(std::string_view token, const std::string& field) {
    T value{};
    auto res = std::from_chars(token.data(), token.data() + token.size(), value);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
        throw FormatError("invalid number in field '" + field + "': '" + std::string(token) + "'");
    }
    return value;
}

/// Reads "key a b c" into three numbers.
template <typename T>
std::array<T, 3> parse_triple(std::string_view line, std::string_view key) {
    const auto tok = split_ws(line);
    const std::string field(key);
    if (tok.empty() || tok[0] != key) {
        throw FormatError("expected header field '" + field + "'");
    }
    if (tok.size() != 4) {
        throw FormatError("header field '" + field + "' needs exactly 3 values");
    }
    return {parse_number<T>(tok[1], field), parse_number<T>(tok[2], field),
            parse_number<T>(tok[3], field)};
}

inline bool read_line(std::istream& in, std::string& line) {
    line.clear();
    char c;
    while (in.get(c)) {
        if (c == '\n') return true;
        line.push_back(c);
        if (line.size() > 4096) throw FormatError("header line too long");
    }
    return false;
}

} // namespace detail

/// Header bytes of a CVOL file (everything before the payload).
inline std::string cvol_header(const VoxelGrid& grid) {
    using detail::format_double;
    const auto& d = grid.dims();
    const auto& s = grid.spacing();
    const auto& o = grid.origin();
    std::string h = "CVOL 1\n";
    h += "dims " + std::to_string(d[0]) + " " + std::to_string(d[1]) + " " + std::to_string(d[2]) + "\n";
    h += "spacing " + format_double(s[0]) + " " + format_double(s[1]) + " " + format_double(s[2]) + "\n";
    h += "origin " + format_double(o[0]) + " " + format_double(o[1]) + " " + format_double(o[2]) + "\n";
    h += "data uint16-le\n\n";
    return h;
}

inline void write_volume(std::ostream& out, const VoxelGrid& grid) {
    out << cvol_header(grid);
    const auto values = grid.values();
    std::vector<unsigned char> bytes(values.size() * 2);
    for (std::size_t n = 0; n < values.size(); ++n) {
        bytes[2 * n] = static_cast<unsigned char>(values[n] & 0xff);
        bytes[2 * n + 1] = static_cast<unsigned char>(values[n] >> 8);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write_volume: stream write failed");
}

inline void write_volume(const VoxelGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_volume: cannot open '" + path + "'");
    write_volume(out, grid);
}

inline VoxelGrid read_volume(std::istream& in) {
    std::string line;
    if (!detail::read_line(in, line) || line != "CVOL 1") {
        throw FormatError("bad magic: expected 'CVOL 1'");
    }
    if (!detail::read_line(in, line)) throw FormatError("missing header field 'dims'");
    const auto dims = detail::parse_triple<int>(line, "dims");
    if (!detail::read_line(in, line)) throw FormatError("missing header field 'spacing'");
    const auto spacing = detail::parse_triple<double>(line, "spacing");
    if (!detail::read_line(in, line)) throw FormatError("missing header field 'origin'");
    const auto origin = detail::parse_triple<double>(line, "origin");
    if (!detail::read_line(in, line) || line != "data uint16-le") {
        throw FormatError("bad header field 'data': expected 'data uint16-le'");
    }
    if (!detail::read_line(in, line) || !line.empty()) {
        throw FormatError("missing blank line terminating header");
    }
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) throw FormatError("header field 'dims' must be >= 1");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw FormatError("header field 'spacing' must be finite and > 0");
        }
        if (!std::isfinite(origin[a])) throw FormatError("header field 'origin' must be finite");
    }
    const std::size_t n = std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]);
    std::vector<unsigned char> bytes(n * 2);
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (std::size_t(in.gcount()) != bytes.size()) {
        throw FormatError("truncated payload: 'data' holds fewer values than 'dims' requires");
    }
    char extra;
    if (in.get(extra)) {
        throw FormatError("payload longer than 'dims' requires");
    }
    std::vector<HU> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = HU(bytes[2 * i] | (HU(bytes[2 * i + 1]) << 8));
    }
    return VoxelGrid(dims, spacing, origin, std::move(values));
}

inline VoxelGrid read_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_volume: cannot open '" + path + "'");
    try {
        return read_volume(in);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

} // namespace fcmlat
