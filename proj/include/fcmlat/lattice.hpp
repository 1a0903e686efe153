#pragma once

// Voxelized octet-truss lattice beams and parametric SLM-like defects.

#include "fcmlat/voxel.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <tuple>

namespace fcmlat {

struct OctetCellSpec {
    double cell_size = 4.0;      // mm
    double strut_diameter = 0.6; // mm
    HU material_hu = 2000;
    HU void_hu = 0;

    void validate() const {
        if (!(cell_size > 0.0)) throw std::invalid_argument("OctetCellSpec: cell_size must be > 0");
        if (!(strut_diameter > 0.0 && strut_diameter < cell_size)) {
            throw std::invalid_argument("OctetCellSpec: strut_diameter must lie in (0, cell_size)");
        }
        if (!(material_hu > void_hu)) {
            throw std::invalid_argument("OctetCellSpec: material_hu must exceed void_hu");
        }
    }
};

/// cells = (n_width, n_length, n_height) along (x, y, z).
struct LatticeBeamSpec {
    Dims cells{2, 32, 1};
    OctetCellSpec cell;
    double resolution = 0.1; // mm per voxel

    void validate() const {
        cell.validate();
        for (int c : cells) {
            if (c < 1) throw std::invalid_argument("LatticeBeamSpec: cell counts must be >= 1");
        }
        if (!(resolution > 0.0) || resolution > cell.strut_diameter / 2.0 + 1e-12) {
            throw std::invalid_argument(
                "LatticeBeamSpec: resolution must be > 0 and at most strut_diameter/2");
        }
    }

    Vec3 extent() const {
        return {cells[0] * cell.cell_size, cells[1] * cell.cell_size, cells[2] * cell.cell_size};
    }
};

struct DefectSpec {
    double strut_dilation = 0.0;    // mm
    double node_blob_radius = 0.0;  // mm
    double particle_density = 0.0;  // per mm^2 of downward-facing surface
    double particle_radius = 0.0;   // mm
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (strut_dilation < 0.0 || node_blob_radius < 0.0 || particle_density < 0.0 ||
            particle_radius < 0.0) {
            throw std::invalid_argument("DefectSpec: lengths and densities must be >= 0");
        }
    }
};

struct Strut {
    Vec3 a;
    Vec3 b;
};

/// The 36 struts of one octet cell in cell-local mm: 12 edges of the inner
/// octahedron (vertices at the face centers) and 24 corner-to-face-center
/// half diagonals, four per face.
inline std::vector<Strut> octet_cell_struts(const OctetCellSpec& spec) {
    const double a = spec.cell_size;
    const double h = a / 2.0;
    const std::array<Vec3, 6> face_centers{{{h, h, 0}, {h, h, a}, {h, 0, h}, {h, a, h}, {0, h, h}, {a, h, h}}};
    std::vector<Strut> struts;
    struts.reserve(36);
    for (int f = 0; f < 6; ++f) {
        for (int g = f + 1; g < 6; ++g) {
            if (g == f + 1 && f % 2 == 0) continue; // opposite faces
            struts.push_back({face_centers[f], face_centers[g]});
        }
    }
    for (int f = 0; f < 6; ++f) {
        const int axis = 2 - f / 2; // face pairs ordered z, y, x
        const Vec3& c = face_centers[f];
        for (int s = 0; s < 4; ++s) {
            Vec3 corner = c;
            const int u = (axis + 1) % 3;
            const int v = (axis + 2) % 3;
            corner[u] = (s & 1) ? a : 0.0;
            corner[v] = (s & 2) ? a : 0.0;
            struts.push_back({corner, c});
        }
    }
    return struts;
}

namespace detail {

inline double segment_distance2(const Vec3& p, const Vec3& a, const Vec3& b) {
    const double dx = b[0] - a[0], dy = b[1] - a[1], dz = b[2] - a[2];
    const double px = p[0] - a[0], py = p[1] - a[1], pz = p[2] - a[2];
    const double len2 = dx * dx + dy * dy + dz * dz;
    double t = len2 > 0.0 ? (px * dx + py * dy + pz * dz) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = px - t * dx, ey = py - t * dy, ez = pz - t * dz;
    return ex * ex + ey * ey + ez * ez;
}

/// Deduplicated struts of a tiled beam. Endpoints live on the half-cell lattice,
/// so they are keyed by integer half-cell coordinates.
struct TiledLattice {
    std::vector<Strut> struts;
    std::vector<std::vector<int>> candidates; // per cell: struts whose capsule can reach it
    Dims cells;
    double cell_size;
    double radius;

    int cell_flat(int cx, int cy, int cz) const { return cx + cells[0] * (cy + cells[1] * cz); }
};

inline TiledLattice tile_lattice(const LatticeBeamSpec& spec) {
    const auto local = octet_cell_struts(spec.cell);
    const double a = spec.cell.cell_size;
    using Key = std::array<int, 6>;
    std::set<Key> seen;
    TiledLattice t;
    t.cells = spec.cells;
    t.cell_size = a;
    t.radius = spec.cell.strut_diameter / 2.0;
    auto half = [&](double v) { return int(std::lround(2.0 * v / a)); };
    for (int cz = 0; cz < spec.cells[2]; ++cz)
        for (int cy = 0; cy < spec.cells[1]; ++cy)
            for (int cx = 0; cx < spec.cells[0]; ++cx)
                for (const Strut& s : local) {
                    std::array<int, 3> p{half(s.a[0]) + 2 * cx, half(s.a[1]) + 2 * cy, half(s.a[2]) + 2 * cz};
                    std::array<int, 3> q{half(s.b[0]) + 2 * cx, half(s.b[1]) + 2 * cy, half(s.b[2]) + 2 * cz};
                    if (q < p) std::swap(p, q);
                    Key key{p[0], p[1], p[2], q[0], q[1], q[2]};
                    if (!seen.insert(key).second) continue;
                    t.struts.push_back({{p[0] * a / 2, p[1] * a / 2, p[2] * a / 2},
                                        {q[0] * a / 2, q[1] * a / 2, q[2] * a / 2}});
                }
    const int ncell = spec.cells[0] * spec.cells[1] * spec.cells[2];
    t.candidates.assign(ncell, {});
    for (int s = 0; s < int(t.struts.size()); ++s) {
        const Strut& st = t.struts[s];
        int lo[3], hi[3];
        for (int ax = 0; ax < 3; ++ax) {
            const double mn = std::min(st.a[ax], st.b[ax]) - t.radius;
            const double mx = std::max(st.a[ax], st.b[ax]) + t.radius;
            lo[ax] = std::max(0, int(std::floor(mn / a)));
            hi[ax] = std::min(spec.cells[ax] - 1, int(std::floor(mx / a)));
        }
        for (int cz = lo[2]; cz <= hi[2]; ++cz)
            for (int cy = lo[1]; cy <= hi[1]; ++cy)
                for (int cx = lo[0]; cx <= hi[0]; ++cx) t.candidates[t.cell_flat(cx, cy, cz)].push_back(s);
    }
    return t;
}

inline bool inside_capsules(const TiledLattice& t, const std::vector<int>& cand, const Vec3& p) {
    // Sample points on a strut surface are common (resolution and diameter are
    // usually round numbers); the relative slack includes them on every path,
    // whatever the rounding of the coordinates, which keeps voxelizations
    // mirror symmetric and independent of how the points were computed.
    const double r2 = t.radius * t.radius * (1.0 + 1e-9);
    for (int s : cand) {
        if (segment_distance2(p, t.struts[s].a, t.struts[s].b) <= r2) return true;
    }
    return false;
}

inline Dims beam_dims(const LatticeBeamSpec& spec) {
    const Vec3 ext = spec.extent();
    Dims d{};
    for (int a = 0; a < 3; ++a) d[a] = int(std::ceil(ext[a] / spec.resolution - 1e-9));
    return d;
}

/// Voxel-by-voxel capsule test; used when voxels do not tile cells evenly.
inline VoxelGrid voxelize_direct(const LatticeBeamSpec& spec, const TiledLattice& t) {
    const Dims d = beam_dims(spec);
    const double res = spec.resolution;
    const double a = spec.cell.cell_size;
    std::vector<HU> values(std::size_t(d[0]) * d[1] * d[2], spec.cell.void_hu);
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const Vec3 p{(i + 0.5) * res, (j + 0.5) * res, (k + 0.5) * res};
                const int cx = std::min(int(p[0] / a), spec.cells[0] - 1);
                const int cy = std::min(int(p[1] / a), spec.cells[1] - 1);
                const int cz = std::min(int(p[2] / a), spec.cells[2] - 1);
                if (inside_capsules(t, t.candidates[t.cell_flat(cx, cy, cz)], p)) {
                    values[std::size_t(i) + std::size_t(d[0]) * (j + std::size_t(d[1]) * k)] = spec.cell.material_hu;
                }
            }
    return VoxelGrid(d, {res, res, res}, {0, 0, 0}, std::move(values));
}

/// When voxels tile cells evenly every cell with the same set of existing
/// neighbours has the same voxel pattern, so patterns are computed once per
/// neighbourhood signature.
inline VoxelGrid voxelize_tiled(const LatticeBeamSpec& spec, const TiledLattice& t, int per_cell) {
    const Dims d = beam_dims(spec);
    const double res = spec.resolution;
    const double a = spec.cell.cell_size;
    std::vector<HU> values(std::size_t(d[0]) * d[1] * d[2], spec.cell.void_hu);
    std::map<std::uint32_t, std::vector<std::uint8_t>> patterns;
    for (int cz = 0; cz < spec.cells[2]; ++cz)
        for (int cy = 0; cy < spec.cells[1]; ++cy)
            for (int cx = 0; cx < spec.cells[0]; ++cx) {
                std::uint32_t sig = 0;
                int bit = 0;
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx, ++bit) {
                            const int nx = cx + dx, ny = cy + dy, nz = cz + dz;
                            if (nx >= 0 && ny >= 0 && nz >= 0 && nx < spec.cells[0] &&
                                ny < spec.cells[1] && nz < spec.cells[2]) {
                                sig |= (1u << bit);
                            }
                        }
                auto it = patterns.find(sig);
                if (it == patterns.end()) {
                    std::vector<std::uint8_t> pat(std::size_t(per_cell) * per_cell * per_cell);
                    const auto& cand = t.candidates[t.cell_flat(cx, cy, cz)];
                    for (int k = 0; k < per_cell; ++k)
                        for (int j = 0; j < per_cell; ++j)
                            for (int i = 0; i < per_cell; ++i) {
                                const Vec3 p{cx * a + (i + 0.5) * res, cy * a + (j + 0.5) * res,
                                             cz * a + (k + 0.5) * res};
                                pat[i + per_cell * (j + per_cell * k)] = inside_capsules(t, cand, p) ? 1 : 0;
                            }
                    it = patterns.emplace(sig, std::move(pat)).first;
                }
                const auto& pat = it->second;
                for (int k = 0; k < per_cell; ++k)
                    for (int j = 0; j < per_cell; ++j) {
                        const std::size_t row = std::size_t(cx * per_cell) +
                            std::size_t(d[0]) * (std::size_t(cy * per_cell + j) + std::size_t(d[1]) * (cz * per_cell + k));
                        for (int i = 0; i < per_cell; ++i) {
                            if (pat[i + per_cell * (j + per_cell * k)]) values[row + i] = spec.cell.material_hu;
                        }
                    }
            }
    return VoxelGrid(d, {res, res, res}, {0, 0, 0}, std::move(values));
}

} // namespace detail

/// Voxel-center sampling of the union of strut capsules over all tiled cells.
inline VoxelGrid voxelize_beam(const LatticeBeamSpec& spec) {
    spec.validate();
    const auto tiled = detail::tile_lattice(spec);
    const double ratio = spec.cell.cell_size / spec.resolution;
    const int per_cell = int(std::lround(ratio));
    if (per_cell >= 1 && std::abs(ratio - per_cell) < 1e-9 * ratio) {
        return detail::voxelize_tiled(spec, tiled, per_cell);
    }
    return detail::voxelize_direct(spec, tiled);
}

/// World coordinates of every strut junction (cell corners and face centers)
/// of a tiled beam.
inline std::vector<Vec3> lattice_junctions(const LatticeBeamSpec& spec) {
    const double h = spec.cell.cell_size / 2.0;
    std::vector<Vec3> nodes;
    for (int k = 0; k <= 2 * spec.cells[2]; ++k)
        for (int j = 0; j <= 2 * spec.cells[1]; ++j)
            for (int i = 0; i <= 2 * spec.cells[0]; ++i) {
                const int odd = (i & 1) + (j & 1) + (k & 1);
                // corners have no odd coordinate, face centers exactly two
                if (odd == 0 || odd == 2) nodes.push_back({i * h, j * h, k * h});
            }
    return nodes;
}

enum class Axis { X = 0, Y = 1, Z = 2 };

namespace detail {

inline void stamp_sphere(const VoxelGrid& grid, std::vector<HU>& values, const Vec3& c, double r, HU value) {
    const auto& d = grid.dims();
    const auto& s = grid.spacing();
    const auto& o = grid.origin();
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, int(std::floor((c[a] - r - o[a]) / s[a])));
        hi[a] = std::min(d[a] - 1, int(std::floor((c[a] + r - o[a]) / s[a])));
    }
    const double r2 = r * r;
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                const Vec3 p = grid.center({i, j, k});
                const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
                if (dx * dx + dy * dy + dz * dz <= r2) values[grid.flat({i, j, k})] = value;
            }
}

} // namespace detail

/// Applies, in order: ball dilation by strut_dilation, spheres of excess
/// material at the given junctions, and powder particles hanging from surfaces
/// that face against the build direction. Never removes material.
/// material_hu defaults to the grid maximum.
inline VoxelGrid inject_defects(const VoxelGrid& grid, const DefectSpec& spec, Axis build_direction,
                                std::span<const Vec3> junctions = {},
                                std::optional<HU> material_hu = std::nullopt) {
    spec.validate();
    const auto src = grid.values();
    const HU mat = material_hu.value_or(*std::max_element(src.begin(), src.end()));
    auto is_mat = [&](HU v) { return v >= mat; };
    std::vector<HU> values(src.begin(), src.end());
    const auto& d = grid.dims();
    const auto& s = grid.spacing();

    if (spec.strut_dilation > 0.0) {
        std::vector<std::array<int, 3>> ball;
        int reach[3];
        for (int a = 0; a < 3; ++a) reach[a] = int(std::floor(spec.strut_dilation / s[a]));
        const double r2 = spec.strut_dilation * spec.strut_dilation * (1.0 + 1e-12);
        for (int k = -reach[2]; k <= reach[2]; ++k)
            for (int j = -reach[1]; j <= reach[1]; ++j)
                for (int i = -reach[0]; i <= reach[0]; ++i) {
                    const double x = i * s[0], y = j * s[1], z = k * s[2];
                    if ((i || j || k) && x * x + y * y + z * z <= r2) ball.push_back({i, j, k});
                }
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const std::size_t f = grid.flat({i, j, k});
                    if (is_mat(src[f])) continue;
                    for (const auto& o : ball) {
                        const VoxelIndex n{i + o[0], j + o[1], k + o[2]};
                        if (grid.contains(n) && is_mat(src[grid.flat(n)])) {
                            values[f] = mat;
                            break;
                        }
                    }
                }
    }

    if (spec.node_blob_radius > 0.0) {
        for (const Vec3& c : junctions) detail::stamp_sphere(grid, values, c, spec.node_blob_radius, mat);
    }

    if (spec.particle_density > 0.0 && spec.particle_radius > 0.0) {
        const int ax = int(build_direction);
        // surfaces whose outward normal points against the build direction
        std::vector<std::size_t> down;
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const VoxelIndex v{i, j, k};
                    if (!is_mat(values[grid.flat(v)])) continue;
                    VoxelIndex below = v;
                    (ax == 0 ? below.i : ax == 1 ? below.j : below.k) -= 1;
                    if (grid.contains(below) && !is_mat(values[grid.flat(below)])) down.push_back(grid.flat(v));
                }
        if (!down.empty()) {
            const double face_area = s[(ax + 1) % 3] * s[(ax + 2) % 3];
            std::mt19937_64 rng(spec.rng_seed);
            std::poisson_distribution<long> count_dist(spec.particle_density * face_area * double(down.size()));
            const long count = count_dist(rng);
            std::uniform_int_distribution<std::size_t> pick(0, down.size() - 1);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (long n = 0; n < count; ++n) {
                const std::size_t f = down[pick(rng)];
                const int i = int(f % std::size_t(d[0]));
                const int j = int((f / std::size_t(d[0])) % std::size_t(d[1]));
                const int k = int(f / (std::size_t(d[0]) * std::size_t(d[1])));
                Vec3 c = grid.center({i, j, k});
                c[(ax + 1) % 3] += (unit(rng) - 0.5) * s[(ax + 1) % 3];
                c[(ax + 2) % 3] += (unit(rng) - 0.5) * s[(ax + 2) % 3];
                // centre sits half a radius below the bottom face of the voxel
                c[ax] -= 0.5 * s[ax] + 0.5 * spec.particle_radius;
                detail::stamp_sphere(grid, values, c, spec.particle_radius, mat);
            }
        }
    }
    return VoxelGrid(grid.dims(), grid.spacing(), grid.origin(), std::move(values));
}

} // namespace fcmlat
