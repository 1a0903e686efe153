#pragma once

// Finite Cell discretization of linear elasticity on voxel data: tensor-product
// hierarchic hexahedra over a structured grid, per-voxel pre-integrated
// stiffness, penalty Dirichlet and traction boundary terms, CSR assembly.

#include "fcmlat/basis.hpp"
#include "fcmlat/error.hpp"
#include "fcmlat/sparse.hpp"
#include "fcmlat/voxel.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>

namespace fcmlat {

struct ElasticMaterial {
    double youngs_modulus = 190000.0; // MPa
    double poisson_ratio = 0.3;
    double epsilon = 1e-8;            // void scaling

    void validate() const {
        if (!(youngs_modulus > 0.0)) throw std::invalid_argument("ElasticMaterial: E must be > 0");
        if (!(poisson_ratio > -1.0 && poisson_ratio < 0.5)) {
            throw std::invalid_argument("ElasticMaterial: poisson ratio must lie in (-1, 0.5)");
        }
        if (!(epsilon > 0.0 && epsilon < 1.0)) {
            throw std::invalid_argument("ElasticMaterial: epsilon must lie in (0, 1)");
        }
    }

    double lambda() const {
        const double nu = poisson_ratio;
        return youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    }
    double mu() const { return youngs_modulus / (2.0 * (1.0 + poisson_ratio)); }
    double shear_modulus() const { return mu(); }
};

/// Structured grid of finite cells. Scalar basis functions are indexed by a
/// global tensor-product lattice of (n*p + 1) entries per axis: 1D index e*p is
/// the vertex between cells e-1 and e, e*p + k (0 < k < p) the k-th bubble of
/// cell e. Displacement dofs interleave components: dof = 3*scalar + comp.
struct FcmMesh {
    Dims cell_counts{1, 1, 1};
    Dims voxels_per_cell{2, 2, 2};
    int order = 3;
    Vec3 voxel_size{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    /// Mesh over a voxel grid; trailing voxels are padded up to whole cells.
    static FcmMesh over(const VoxelGrid& grid, Dims voxels_per_cell, int order) {
        if (order < 1 || order > 8) throw std::invalid_argument("FcmMesh: order must lie in [1, 8]");
        FcmMesh m;
        m.voxels_per_cell = voxels_per_cell;
        m.order = order;
        m.voxel_size = grid.spacing();
        m.origin = grid.origin();
        for (int a = 0; a < 3; ++a) {
            if (voxels_per_cell[a] < 1) throw std::invalid_argument("FcmMesh: voxels_per_cell must be >= 1");
            m.cell_counts[a] = (grid.dims()[a] + voxels_per_cell[a] - 1) / voxels_per_cell[a];
        }
        return m;
    }

    Vec3 cell_size() const {
        return {voxel_size[0] * voxels_per_cell[0], voxel_size[1] * voxels_per_cell[1],
                voxel_size[2] * voxels_per_cell[2]};
    }
    Vec3 extent() const {
        const Vec3 h = cell_size();
        return {h[0] * cell_counts[0], h[1] * cell_counts[1], h[2] * cell_counts[2]};
    }
    int nodes(int axis) const { return cell_counts[axis] * order + 1; }
    std::size_t n_scalar() const { return std::size_t(nodes(0)) * nodes(1) * nodes(2); }
    std::size_t n_dofs() const { return 3 * n_scalar(); }
    int local_count() const { return order + 1; }
    int cell_dof_count() const { return 3 * local_count() * local_count() * local_count(); }
    std::size_t cell_count() const { return std::size_t(cell_counts[0]) * cell_counts[1] * cell_counts[2]; }

    /// 1D global index of local mode `local` (0: N_1, 1: N_2, k >= 2: N_{k+1}) in cell e.
    int global_1d(int e, int local) const {
        return e * order + (local == 0 ? 0 : local == 1 ? order : local - 1);
    }

    std::size_t scalar_index(int gx, int gy, int gz) const {
        return std::size_t(gx) + std::size_t(nodes(0)) * (std::size_t(gy) + std::size_t(nodes(1)) * gz);
    }

    /// Global dofs of a cell in local order 3*(a + q*(b + q*c)) + comp.
    std::vector<std::int64_t> cell_dofs(int cx, int cy, int cz) const {
        const int q = local_count();
        std::vector<std::int64_t> dofs(std::size_t(3) * q * q * q);
        for (int c = 0; c < q; ++c)
            for (int b = 0; b < q; ++b)
                for (int a = 0; a < q; ++a) {
                    const std::size_t s = scalar_index(global_1d(cx, a), global_1d(cy, b), global_1d(cz, c));
                    const int I = a + q * (b + q * c);
                    for (int d = 0; d < 3; ++d) dofs[3 * I + d] = std::int64_t(3 * s + d);
                }
        return dofs;
    }

    bool is_vertex_1d(int g) const { return g % order == 0; }
};

namespace detail {

/// 1D integrals over a sub-interval [x0, x1] of reference coordinates of a
/// cell of physical length h: G[s][t](i, j) = int N_i^(s) N_j^(t) dx with
/// physical derivatives of order s, t in {0, 1}.
struct Interval1D {
    Eigen::MatrixXd G[2][2];
    Eigen::VectorXd mean; // int N_i dx
};

inline Interval1D integrate_interval(int order, double h, double xi0, double xi1) {
    const int q = order + 1;
    const GaussRule rule = gauss_legendre(q);
    Interval1D out;
    for (auto& row : out.G)
        for (auto& m : row) m = Eigen::MatrixXd::Zero(q, q);
    out.mean = Eigen::VectorXd::Zero(q);
    std::vector<double> N(q), dN(q);
    const double mid = 0.5 * (xi0 + xi1);
    const double half = 0.5 * (xi1 - xi0);
    for (int g = 0; g < q; ++g) {
        const double xi = mid + half * rule.points[g];
        shape_functions_1d(order, xi, N.data(), dN.data());
        const double w = rule.weights[g] * half * 0.5 * h;
        for (int i = 0; i < q; ++i) {
            dN[i] *= 2.0 / h;
        }
        for (int i = 0; i < q; ++i) {
            out.mean[i] += w * N[i];
            for (int j = 0; j < q; ++j) {
                out.G[0][0](i, j) += w * N[i] * N[j];
                out.G[0][1](i, j) += w * N[i] * dN[j];
                out.G[1][0](i, j) += w * dN[i] * N[j];
                out.G[1][1](i, j) += w * dN[i] * dN[j];
            }
        }
    }
    return out;
}

/// Isotropic stiffness block from per-axis interval integrals.
inline Eigen::MatrixXd box_stiffness(int order, const std::array<const Interval1D*, 3>& ax, double lambda, double mu) {
    const int q = order + 1;
    const int nb = q * q * q;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(3 * nb, 3 * nb);
    for (int I = 0; I < nb; ++I) {
        const int Ia[3] = {I % q, (I / q) % q, I / (q * q)};
        for (int J = I; J < nb; ++J) {
            const int Ja[3] = {J % q, (J / q) % q, J / (q * q)};
            double S[3][3];
            for (int k = 0; k < 3; ++k) {
                for (int l = 0; l < 3; ++l) {
                    double prod = 1.0;
                    for (int a = 0; a < 3; ++a) {
                        prod *= ax[a]->G[a == k ? 1 : 0][a == l ? 1 : 0](Ia[a], Ja[a]);
                    }
                    S[k][l] = prod;
                }
            }
            const double trace = S[0][0] + S[1][1] + S[2][2];
            for (int c = 0; c < 3; ++c) {
                for (int d = 0; d < 3; ++d) {
                    double v = lambda * S[c][d] + mu * S[d][c];
                    if (c == d) v += mu * trace;
                    K(3 * I + c, 3 * J + d) = v;
                    K(3 * J + d, 3 * I + c) = v;
                }
            }
        }
    }
    return K;
}

} // namespace detail

/// Exact unscaled stiffness of every voxel position within the reference cell,
/// (p+1)^3 Gauss points per voxel. Index vx + mx*(vy + my*vz).
inline std::vector<Eigen::MatrixXd> voxel_stiffness_template(int order, Dims voxels_per_cell, Vec3 cell_size,
                                                             const ElasticMaterial& material) {
    material.validate();
    std::array<std::vector<detail::Interval1D>, 3> per_axis;
    for (int a = 0; a < 3; ++a) {
        const int m = voxels_per_cell[a];
        for (int v = 0; v < m; ++v) {
            per_axis[a].push_back(detail::integrate_interval(order, cell_size[a], -1.0 + 2.0 * v / m,
                                                             -1.0 + 2.0 * (v + 1) / m));
        }
    }
    std::vector<Eigen::MatrixXd> out;
    out.reserve(std::size_t(voxels_per_cell[0]) * voxels_per_cell[1] * voxels_per_cell[2]);
    for (int vz = 0; vz < voxels_per_cell[2]; ++vz)
        for (int vy = 0; vy < voxels_per_cell[1]; ++vy)
            for (int vx = 0; vx < voxels_per_cell[0]; ++vx) {
                out.push_back(detail::box_stiffness(order, {&per_axis[0][vx], &per_axis[1][vy], &per_axis[2][vz]},
                                                    material.lambda(), material.mu()));
            }
    return out;
}

/// Axis-aligned box in world mm.
struct Box {
    Vec3 lo;
    Vec3 hi;
};

enum class BcKind { PenaltyDirichlet, Traction };

struct BoundaryCondition {
    BcKind kind = BcKind::PenaltyDirichlet;
    Box region;
    std::array<bool, 3> components{true, true, true};
    Vec3 value{0.0, 0.0, 0.0}; // prescribed displacement (mm) or traction (MPa)
    double penalty = 0.0;      // beta_D, Dirichlet only
    std::function<Vec3(const Vec3&)> field; // position-dependent value; overrides `value` when set

    static BoundaryCondition dirichlet(Box region, std::array<bool, 3> comps, Vec3 value, double penalty) {
        return {BcKind::PenaltyDirichlet, region, comps, value, penalty, {}};
    }
    static BoundaryCondition dirichlet(Box region, std::array<bool, 3> comps,
                                       std::function<Vec3(const Vec3&)> field, double penalty) {
        return {BcKind::PenaltyDirichlet, region, comps, {0.0, 0.0, 0.0}, penalty, std::move(field)};
    }
    static BoundaryCondition traction(Box region, Vec3 t) {
        return {BcKind::Traction, region, {true, true, true}, t, 0.0, {}};
    }

    Vec3 value_at(const Vec3& x) const { return field ? field(x) : value; }
};

/// Penalty default: 1e6 * E per mm.
inline double default_penalty(const ElasticMaterial& material) { return 1e6 * material.youngs_modulus; }

namespace detail {

/// A quadrature point on the domain boundary.
struct FacePoint {
    int cell[3];
    double xi[3];
    double weight; // physical area (or length) weight
    double alpha;  // indicator of the voxel under the point; 1 without a field
};

inline Vec3 face_point_position(const FcmMesh& mesh, const FacePoint& fp) {
    const Vec3 h = mesh.cell_size();
    Vec3 x;
    for (int a = 0; a < 3; ++a) x[a] = mesh.origin[a] + (fp.cell[a] + 0.5 * (fp.xi[a] + 1.0)) * h[a];
    return x;
}

/// Indicator of voxel (i, j, k); voxels in the padding beyond the grid are void.
inline double alpha_at(const IndicatorField& ind, int i, int j, int k) {
    const VoxelIndex v{i, j, k};
    return ind.grid->contains(v) ? ind(ind.grid->flat(v)) : ind.epsilon;
}

/// Gauss points covering the intersection of `region` with the faces of the
/// extended domain, one (p+1)^2 rule per voxel face so that the per-voxel
/// indicator is integrated exactly. A region that is flat in two axes selects
/// a line on a face; its weights are then lengths. A line running along a
/// voxel boundary sees the larger indicator of the two voxels beside it.
/// Returns false when the region touches no face.
inline bool for_each_face_point(const FcmMesh& mesh, const Box& region,
                                const std::function<void(const FacePoint&)>& visit,
                                const IndicatorField* indicator = nullptr) {
    const Vec3 h = mesh.cell_size();
    const Vec3 ext = mesh.extent();
    const Vec3 vs = mesh.voxel_size;
    const GaussRule rule = gauss_legendre(mesh.order + 1);
    const GaussRule single{{0.0}, {2.0}};
    // Only a region that is itself flat in two axes may select a line; a flat
    // strip merely grazing a perpendicular face does not.
    int flat_axes = 0;
    for (int t = 0; t < 3; ++t) flat_axes += region.hi[t] - region.lo[t] <= 1e-9 * std::max(ext[t], 1.0);
    bool touched = false;
    for (int a = 0; a < 3; ++a) {
        const double tol = 1e-9 * std::max(ext[a], 1.0);
        const int u = (a + 1) % 3, v = (a + 2) % 3;
        for (int side = 0; side < 2; ++side) {
            const double plane = mesh.origin[a] + side * ext[a];
            if (region.lo[a] > plane + tol || region.hi[a] < plane - tol) continue;
            double lo[3], hi[3];
            bool line[3] = {false, false, false};
            bool empty = false;
            for (int t : {u, v}) {
                lo[t] = std::max(region.lo[t], mesh.origin[t]);
                hi[t] = std::min(region.hi[t], mesh.origin[t] + ext[t]);
                const double ttol = 1e-9 * std::max(ext[t], 1.0);
                if (hi[t] - lo[t] > ttol) continue;
                if (hi[t] - lo[t] < -ttol) empty = true;
                line[t] = true;
                hi[t] = lo[t] = std::clamp(0.5 * (region.lo[t] + region.hi[t]), mesh.origin[t],
                                           mesh.origin[t] + ext[t]);
            }
            if (empty || (line[u] && line[v]) || ((line[u] || line[v]) && flat_axes < 2)) continue;
            touched = true;
            // voxel ranges [k0, k1] per in-face axis; for a line, the voxels beside it
            int k0[3], k1[3];
            const int nvox[3] = {mesh.cell_counts[0] * mesh.voxels_per_cell[0],
                                 mesh.cell_counts[1] * mesh.voxels_per_cell[1],
                                 mesh.cell_counts[2] * mesh.voxels_per_cell[2]};
            for (int t : {u, v}) {
                const double r0 = (lo[t] - mesh.origin[t]) / vs[t];
                const double r1 = (hi[t] - mesh.origin[t]) / vs[t];
                if (line[t]) {
                    const double near = std::round(r0);
                    if (std::abs(r0 - near) < 1e-9) {
                        k0[t] = std::max(0, int(near) - 1);
                        k1[t] = std::min(nvox[t] - 1, int(near));
                    } else {
                        k0[t] = k1[t] = std::clamp(int(std::floor(r0)), 0, nvox[t] - 1);
                    }
                } else {
                    k0[t] = std::max(0, int(std::floor(r0 + 1e-9)));
                    k1[t] = std::min(nvox[t] - 1, int(std::ceil(r1 - 1e-9)) - 1);
                }
            }
            const int ka = side == 0 ? 0 : nvox[a] - 1;
            const GaussRule& ru = line[u] ? single : rule;
            const GaussRule& rv = line[v] ? single : rule;
            const int su1 = line[u] ? k0[u] : k1[u];
            const int sv1 = line[v] ? k0[v] : k1[v];
            for (int kv = k0[v]; kv <= sv1; ++kv) {
                for (int ku = k0[u]; ku <= su1; ++ku) {
                    double alpha = 1.0;
                    if (indicator) {
                        alpha = 0.0;
                        for (int jv = line[v] ? k0[v] : kv; jv <= (line[v] ? k1[v] : kv); ++jv)
                            for (int ju = line[u] ? k0[u] : ku; ju <= (line[u] ? k1[u] : ku); ++ju) {
                                int idx[3];
                                idx[a] = ka;
                                idx[u] = ju;
                                idx[v] = jv;
                                alpha = std::max(alpha, alpha_at(*indicator, idx[0], idx[1], idx[2]));
                            }
                    }
                    const double vu0 = mesh.origin[u] + ku * vs[u];
                    const double vv0 = mesh.origin[v] + kv * vs[v];
                    const double a0 = line[u] ? lo[u] : std::max(lo[u], vu0);
                    const double a1 = line[u] ? lo[u] : std::min(hi[u], vu0 + vs[u]);
                    const double b0 = line[v] ? lo[v] : std::max(lo[v], vv0);
                    const double b1 = line[v] ? lo[v] : std::min(hi[v], vv0 + vs[v]);
                    if ((!line[u] && !(a1 > a0)) || (!line[v] && !(b1 > b0))) continue;
                    const int cu = std::min(mesh.cell_counts[u] - 1, ku / mesh.voxels_per_cell[u]);
                    const int cv = std::min(mesh.cell_counts[v] - 1, kv / mesh.voxels_per_cell[v]);
                    const double cell_u0 = mesh.origin[u] + cu * h[u];
                    const double cell_v0 = mesh.origin[v] + cv * h[v];
                    const double ju = line[u] ? 0.5 : 0.5 * (a1 - a0);
                    const double jv = line[v] ? 0.5 : 0.5 * (b1 - b0);
                    for (std::size_t gv = 0; gv < rv.points.size(); ++gv) {
                        for (std::size_t gu = 0; gu < ru.points.size(); ++gu) {
                            const double pu = 0.5 * (a0 + a1) + 0.5 * (a1 - a0) * ru.points[gu];
                            const double pv = 0.5 * (b0 + b1) + 0.5 * (b1 - b0) * rv.points[gv];
                            FacePoint fp{};
                            fp.cell[a] = side == 0 ? 0 : mesh.cell_counts[a] - 1;
                            fp.cell[u] = cu;
                            fp.cell[v] = cv;
                            fp.xi[a] = side == 0 ? -1.0 : 1.0;
                            fp.xi[u] = std::clamp(2.0 * (pu - cell_u0) / h[u] - 1.0, -1.0, 1.0);
                            fp.xi[v] = std::clamp(2.0 * (pv - cell_v0) / h[v] - 1.0, -1.0, 1.0);
                            fp.weight = ru.weights[gu] * rv.weights[gv] * ju * jv;
                            fp.alpha = alpha;
                            visit(fp);
                        }
                    }
                }
            }
        }
    }
    return touched;
}

/// Tensor-product basis values (and optionally physical gradients) at a local point.
struct CellBasis {
    std::vector<double> N;
    std::vector<std::array<double, 3>> dN;
};

inline CellBasis cell_basis(const FcmMesh& mesh, const double xi[3], bool gradients) {
    const int q = mesh.local_count();
    const Vec3 h = mesh.cell_size();
    std::vector<double> v[3], d[3];
    for (int a = 0; a < 3; ++a) {
        v[a].resize(q);
        d[a].resize(q);
        shape_functions_1d(mesh.order, xi[a], v[a].data(), d[a].data());
        for (double& x : d[a]) x *= 2.0 / h[a];
    }
    CellBasis out;
    out.N.resize(std::size_t(q) * q * q);
    if (gradients) out.dN.resize(out.N.size());
    for (int c = 0; c < q; ++c)
        for (int b = 0; b < q; ++b)
            for (int a = 0; a < q; ++a) {
                const int I = a + q * (b + q * c);
                out.N[I] = v[0][a] * v[1][b] * v[2][c];
                if (gradients) {
                    out.dN[I] = {d[0][a] * v[1][b] * v[2][c], v[0][a] * d[1][b] * v[2][c],
                                 v[0][a] * v[1][b] * d[2][c]};
                }
            }
    return out;
}

/// Contiguous 1D coupling window of global index g.
inline std::pair<int, int> coupling_window(int g, int cells, int order) {
    const int n = cells * order;
    if (g % order == 0) return {std::max(0, g - order), std::min(n, g + order)};
    const int e = g / order;
    return {e * order, (e + 1) * order};
}

/// CSR sparsity of the tensor-product space; every row couples to a product
/// of contiguous 1D windows, so column positions are computable directly.
struct Pattern {
    CsrMatrix matrix;
    std::array<std::vector<std::pair<int, int>>, 3> windows;
};

inline Pattern build_pattern(const FcmMesh& mesh) {
    Pattern pat;
    for (int a = 0; a < 3; ++a) {
        pat.windows[a].resize(mesh.nodes(a));
        for (int g = 0; g < mesh.nodes(a); ++g) pat.windows[a][g] = coupling_window(g, mesh.cell_counts[a], mesh.order);
    }
    CsrMatrix& K = pat.matrix;
    K.rows = mesh.n_dofs();
    K.row_ptr.assign(K.rows + 1, 0);
    const int nx = mesh.nodes(0), ny = mesh.nodes(1), nz = mesh.nodes(2);
    std::size_t row = 0;
    for (int gz = 0; gz < nz; ++gz)
        for (int gy = 0; gy < ny; ++gy)
            for (int gx = 0; gx < nx; ++gx) {
                const auto [xl, xh] = pat.windows[0][gx];
                const auto [yl, yh] = pat.windows[1][gy];
                const auto [zl, zh] = pat.windows[2][gz];
                const std::int64_t len = std::int64_t(3) * (xh - xl + 1) * (yh - yl + 1) * (zh - zl + 1);
                for (int d = 0; d < 3; ++d, ++row) K.row_ptr[row + 1] = K.row_ptr[row] + len;
            }
    K.cols.resize(std::size_t(K.row_ptr.back()));
    K.values.assign(K.cols.size(), 0.0);
    row = 0;
    for (int gz = 0; gz < nz; ++gz)
        for (int gy = 0; gy < ny; ++gy)
            for (int gx = 0; gx < nx; ++gx) {
                const auto [xl, xh] = pat.windows[0][gx];
                const auto [yl, yh] = pat.windows[1][gy];
                const auto [zl, zh] = pat.windows[2][gz];
                for (int d = 0; d < 3; ++d, ++row) {
                    std::int64_t p = K.row_ptr[row];
                    for (int jz = zl; jz <= zh; ++jz)
                        for (int jy = yl; jy <= yh; ++jy)
                            for (int jx = xl; jx <= xh; ++jx)
                                for (int e = 0; e < 3; ++e) {
                                    K.cols[p++] = std::int32_t(3 * mesh.scalar_index(jx, jy, jz) + e);
                                }
                }
            }
    return pat;
}

/// Position of entry (row node g, comp c; col node j, comp d) inside CSR values.
inline std::int64_t entry_position(const Pattern& pat, const FcmMesh& mesh, const int g[3], int c,
                                   const int j[3], int d) {
    const auto& wx = pat.windows[0][g[0]];
    const auto& wy = pat.windows[1][g[1]];
    const auto& wz = pat.windows[2][g[2]];
    const std::int64_t lx = wx.second - wx.first + 1;
    const std::int64_t ly = wy.second - wy.first + 1;
    const std::size_t row = 3 * mesh.scalar_index(g[0], g[1], g[2]) + c;
    return pat.matrix.row_ptr[row] +
           ((std::int64_t(j[2] - wz.first) * ly + (j[1] - wy.first)) * lx + (j[0] - wx.first)) * 3 + d;
}

} // namespace detail

/// Assembled FCM system: K = sum_cells sum_voxels alpha_v T_v plus penalty
/// boundary mass on constrained components; rhs = traction + penalty + body
/// terms.
struct AssembledSystem : SparseSystem {
    std::vector<std::string> warnings;
};

inline AssembledSystem assemble(const FcmMesh& mesh, const ElasticMaterial& material, const IndicatorField& indicator,
                                std::span<const BoundaryCondition> bcs,
                                std::optional<Vec3> body_force = std::nullopt) {
    material.validate();
    const VoxelGrid& grid = *indicator.grid;
    for (int a = 0; a < 3; ++a) {
        if (mesh.cell_counts[a] * mesh.voxels_per_cell[a] < grid.dims()[a]) {
            throw ConfigError("assemble: mesh does not cover the voxel grid");
        }
        if (std::abs(mesh.voxel_size[a] - grid.spacing()[a]) > 1e-12 * grid.spacing()[a]) {
            throw ConfigError("assemble: mesh voxel size differs from grid spacing");
        }
    }
    for (const auto& bc : bcs) {
        if (bc.kind == BcKind::PenaltyDirichlet && !(bc.penalty > 0.0)) {
            throw ConfigError("assemble: Dirichlet penalty must be > 0");
        }
    }

    const int q = mesh.local_count();
    const int n_local = mesh.cell_dof_count();
    const Dims& m = mesh.voxels_per_cell;
    const auto templates = voxel_stiffness_template(mesh.order, m, mesh.cell_size(), material);
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(n_local, n_local);
    for (const auto& T : templates) full += T;

    // per-voxel int N dV for body loads
    std::array<std::vector<detail::Interval1D>, 3> intervals;
    if (body_force) {
        for (int a = 0; a < 3; ++a)
            for (int v = 0; v < m[a]; ++v)
                intervals[a].push_back(detail::integrate_interval(mesh.order, mesh.cell_size()[a], -1.0 + 2.0 * v / m[a],
                                                                  -1.0 + 2.0 * (v + 1) / m[a]));
    }

    detail::Pattern pat = detail::build_pattern(mesh);
    AssembledSystem sys;
    sys.rhs.assign(mesh.n_dofs(), 0.0);
    std::size_t material_voxels = 0;

    const std::size_t voxels_in_cell = std::size_t(m[0]) * m[1] * m[2];
    const auto& d = grid.dims();

    // Cells of equal parity share no basis functions, so each colour can be
    // scattered without write conflicts.
    for (int colour = 0; colour < 8; ++colour) {
        const int px = colour & 1, py = (colour >> 1) & 1, pz = (colour >> 2) & 1;
        for (int cz = pz; cz < mesh.cell_counts[2]; cz += 2)
            for (int cy = py; cy < mesh.cell_counts[1]; cy += 2)
                for (int cx = px; cx < mesh.cell_counts[0]; cx += 2) {
                    std::vector<double> alpha(voxels_in_cell);
                    std::size_t n_mat = 0;
                    for (int vz = 0; vz < m[2]; ++vz)
                        for (int vy = 0; vy < m[1]; ++vy)
                            for (int vx = 0; vx < m[0]; ++vx) {
                                const VoxelIndex vi{cx * m[0] + vx, cy * m[1] + vy, cz * m[2] + vz};
                                double a = indicator.epsilon;
                                if (vi.i < d[0] && vi.j < d[1] && vi.k < d[2] && indicator.is_material(grid.flat(vi))) {
                                    a = 1.0;
                                    ++n_mat;
                                }
                                alpha[vx + m[0] * (vy + m[1] * vz)] = a;
                            }
                    material_voxels += n_mat;
                    Eigen::MatrixXd Kc;
                    if (n_mat == 0) {
                        Kc = indicator.epsilon * full;
                    } else if (n_mat == voxels_in_cell) {
                        Kc = full;
                    } else {
                        Kc = Eigen::MatrixXd::Zero(n_local, n_local);
                        for (std::size_t v = 0; v < voxels_in_cell; ++v) Kc.noalias() += alpha[v] * templates[v];
                    }

                    int gnode[3][8 + 1];
                    std::vector<std::array<int, 3>> local_nodes(std::size_t(q) * q * q);
                    for (int a = 0; a < q; ++a) {
                        gnode[0][a] = mesh.global_1d(cx, a);
                        gnode[1][a] = mesh.global_1d(cy, a);
                        gnode[2][a] = mesh.global_1d(cz, a);
                    }
                    for (int c = 0; c < q; ++c)
                        for (int b = 0; b < q; ++b)
                            for (int a = 0; a < q; ++a) local_nodes[a + q * (b + q * c)] = {gnode[0][a], gnode[1][b], gnode[2][c]};
                    for (int I = 0; I < q * q * q; ++I) {
                        for (int ci = 0; ci < 3; ++ci) {
                            const int r = 3 * I + ci;
                            for (int J = 0; J < q * q * q; ++J) {
                                const std::int64_t base =
                                    detail::entry_position(pat, mesh, local_nodes[I].data(), ci, local_nodes[J].data(), 0);
                                for (int cj = 0; cj < 3; ++cj) pat.matrix.values[base + cj] += Kc(r, 3 * J + cj);
                            }
                        }
                    }

                    if (body_force) {
                        const auto dofs = mesh.cell_dofs(cx, cy, cz);
                        for (int vz = 0; vz < m[2]; ++vz)
                            for (int vy = 0; vy < m[1]; ++vy)
                                for (int vx = 0; vx < m[0]; ++vx) {
                                    const double a = alpha[vx + m[0] * (vy + m[1] * vz)];
                                    for (int I = 0; I < q * q * q; ++I) {
                                        const double w = intervals[0][vx].mean[I % q] * intervals[1][vy].mean[(I / q) % q] *
                                                         intervals[2][vz].mean[I / (q * q)];
                                        for (int c = 0; c < 3; ++c) sys.rhs[dofs[3 * I + c]] += a * w * (*body_force)[c];
                                    }
                                }
                    }
                }
    }

    for (const auto& bc : bcs) {
        const bool touched = detail::for_each_face_point(mesh, bc.region, [&](const detail::FacePoint& fp) {
            const auto basis = detail::cell_basis(mesh, fp.xi, false);
            const auto dofs = mesh.cell_dofs(fp.cell[0], fp.cell[1], fp.cell[2]);
            const int nb = q * q * q;
            if (bc.kind == BcKind::Traction) {
                const double w = fp.alpha * fp.weight;
                for (int I = 0; I < nb; ++I)
                    for (int c = 0; c < 3; ++c) sys.rhs[dofs[3 * I + c]] += w * basis.N[I] * bc.value[c];
                return;
            }
            int gnode[3][9];
            for (int a = 0; a < q; ++a) {
                gnode[0][a] = mesh.global_1d(fp.cell[0], a);
                gnode[1][a] = mesh.global_1d(fp.cell[1], a);
                gnode[2][a] = mesh.global_1d(fp.cell[2], a);
            }
            const double bw = bc.penalty * fp.alpha * fp.weight;
            const Vec3 uhat = bc.value_at(detail::face_point_position(mesh, fp));
            for (int I = 0; I < nb; ++I) {
                if (basis.N[I] == 0.0) continue;
                const int gi[3] = {gnode[0][I % q], gnode[1][(I / q) % q], gnode[2][I / (q * q)]};
                for (int c = 0; c < 3; ++c) {
                    if (!bc.components[c]) continue;
                    sys.rhs[dofs[3 * I + c]] += bw * basis.N[I] * uhat[c];
                    for (int J = 0; J < nb; ++J) {
                        if (basis.N[J] == 0.0) continue;
                        const int gj[3] = {gnode[0][J % q], gnode[1][(J / q) % q], gnode[2][J / (q * q)]};
                        // N_I N_J first keeps the (I, J) and (J, I) entries bitwise equal
                        pat.matrix.values[detail::entry_position(pat, mesh, gi, c, gj, c)] +=
                            bw * (basis.N[I] * basis.N[J]);
                    }
                }
            }
        }, &indicator);
        if (!touched) {
            throw ConfigError("assemble: boundary condition region does not touch the domain boundary");
        }
    }

    if (material_voxels == 0) {
        sys.warnings.push_back("no voxel reaches the material threshold; system is epsilon-scaled only");
    }
    sys.matrix = std::move(pat.matrix);
    return sys;
}

namespace detail {

inline std::pair<std::array<int, 3>, std::array<double, 3>> locate(const FcmMesh& mesh, const Vec3& x) {
    const Vec3 h = mesh.cell_size();
    const Vec3 ext = mesh.extent();
    std::array<int, 3> cell{};
    std::array<double, 3> xi{};
    for (int a = 0; a < 3; ++a) {
        const double rel = x[a] - mesh.origin[a];
        const double tol = 1e-12 * std::max(ext[a], 1.0);
        if (!(rel >= -tol && rel <= ext[a] + tol)) {
            throw std::out_of_range("point lies outside the extended domain");
        }
        cell[a] = std::clamp(int(std::floor(rel / h[a])), 0, mesh.cell_counts[a] - 1);
        xi[a] = std::clamp(2.0 * (rel - cell[a] * h[a]) / h[a] - 1.0, -1.0, 1.0);
    }
    return {cell, xi};
}

} // namespace detail

inline Vec3 evaluate_displacement(const FcmMesh& mesh, std::span<const double> solution, const Vec3& point) {
    const auto [cell, xi] = detail::locate(mesh, point);
    const auto basis = detail::cell_basis(mesh, xi.data(), false);
    const auto dofs = mesh.cell_dofs(cell[0], cell[1], cell[2]);
    Vec3 u{0, 0, 0};
    for (std::size_t I = 0; I < basis.N.size(); ++I)
        for (int c = 0; c < 3; ++c) u[c] += basis.N[I] * solution[dofs[3 * I + c]];
    return u;
}

/// du_c/dx_k at a point.
inline Eigen::Matrix3d evaluate_gradient(const FcmMesh& mesh, std::span<const double> solution, const Vec3& point) {
    const auto [cell, xi] = detail::locate(mesh, point);
    const auto basis = detail::cell_basis(mesh, xi.data(), true);
    const auto dofs = mesh.cell_dofs(cell[0], cell[1], cell[2]);
    Eigen::Matrix3d grad = Eigen::Matrix3d::Zero();
    for (std::size_t I = 0; I < basis.N.size(); ++I)
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 3; ++k) grad(c, k) += basis.dN[I][k] * solution[dofs[3 * I + c]];
    return grad;
}

/// Bulk-material Cauchy stress at a point.
inline Eigen::Matrix3d evaluate_stress(const FcmMesh& mesh, std::span<const double> solution,
                                       const ElasticMaterial& material, const Vec3& point) {
    const Eigen::Matrix3d g = evaluate_gradient(mesh, solution, point);
    const Eigen::Matrix3d strain = 0.5 * (g + g.transpose());
    return material.lambda() * strain.trace() * Eigen::Matrix3d::Identity() + 2.0 * material.mu() * strain;
}

inline double von_mises(const Eigen::Matrix3d& stress) {
    const Eigen::Matrix3d dev = stress - stress.trace() / 3.0 * Eigen::Matrix3d::Identity();
    return std::sqrt(std::max(0.0, 1.5 * dev.cwiseProduct(dev).sum()));
}

inline double evaluate_von_mises(const FcmMesh& mesh, std::span<const double> solution,
                                 const ElasticMaterial& material, const Vec3& point) {
    return von_mises(evaluate_stress(mesh, solution, material, point));
}

/// Coefficient vector reproducing a field that is linear in each coordinate:
/// vertex modes take the nodal value, bubbles vanish.
inline std::vector<double> interpolate_vertices(const FcmMesh& mesh, const std::function<Vec3(const Vec3&)>& field) {
    std::vector<double> u(mesh.n_dofs(), 0.0);
    const Vec3 h = mesh.cell_size();
    for (int gz = 0; gz < mesh.nodes(2); gz += mesh.order)
        for (int gy = 0; gy < mesh.nodes(1); gy += mesh.order)
            for (int gx = 0; gx < mesh.nodes(0); gx += mesh.order) {
                const Vec3 x{mesh.origin[0] + gx / mesh.order * h[0], mesh.origin[1] + gy / mesh.order * h[1],
                             mesh.origin[2] + gz / mesh.order * h[2]};
                const Vec3 val = field(x);
                const std::size_t s = mesh.scalar_index(gx, gy, gz);
                for (int c = 0; c < 3; ++c) u[3 * s + c] = val[c];
            }
    return u;
}

/// Constraint force beta * int alpha (u_hat - u) dA over a penalty-Dirichlet
/// region, per constrained component (zero for free components). Pass the
/// indicator used in assembly; without it alpha = 1.
inline Vec3 penalty_reaction(const FcmMesh& mesh, std::span<const double> solution, const BoundaryCondition& bc,
                             const IndicatorField* indicator = nullptr) {
    Vec3 force{0, 0, 0};
    detail::for_each_face_point(mesh, bc.region, [&](const detail::FacePoint& fp) {
        const auto basis = detail::cell_basis(mesh, fp.xi, false);
        const auto dofs = mesh.cell_dofs(fp.cell[0], fp.cell[1], fp.cell[2]);
        Vec3 u{0, 0, 0};
        for (std::size_t I = 0; I < basis.N.size(); ++I)
            for (int c = 0; c < 3; ++c) u[c] += basis.N[I] * solution[dofs[3 * I + c]];
        const Vec3 uhat = bc.value_at(detail::face_point_position(mesh, fp));
        for (int c = 0; c < 3; ++c)
            if (bc.components[c]) force[c] += bc.penalty * fp.alpha * fp.weight * (uhat[c] - u[c]);
    }, indicator);
    return force;
}

/// int alpha dA over the part of the domain boundary inside `region`.
inline double boundary_measure(const FcmMesh& mesh, const Box& region, const IndicatorField* indicator = nullptr) {
    double area = 0.0;
    const bool touched = detail::for_each_face_point(
        mesh, region, [&](const detail::FacePoint& fp) { area += fp.alpha * fp.weight; }, indicator);
    if (!touched) throw ConfigError("region does not touch the domain boundary");
    return area;
}

/// Indicator-weighted mean displacement over the part of the domain boundary
/// inside `region` (plain area mean without an indicator).
inline Vec3 boundary_mean_displacement(const FcmMesh& mesh, std::span<const double> solution, const Box& region,
                                       const IndicatorField* indicator = nullptr) {
    Vec3 sum{0, 0, 0};
    double area = 0.0;
    const bool touched = detail::for_each_face_point(mesh, region, [&](const detail::FacePoint& fp) {
        const auto basis = detail::cell_basis(mesh, fp.xi, false);
        const auto dofs = mesh.cell_dofs(fp.cell[0], fp.cell[1], fp.cell[2]);
        const double w = fp.alpha * fp.weight;
        for (std::size_t I = 0; I < basis.N.size(); ++I)
            for (int c = 0; c < 3; ++c) sum[c] += w * basis.N[I] * solution[dofs[3 * I + c]];
        area += w;
    }, indicator);
    if (!touched || !(area > 0.0)) throw ConfigError("region does not touch the domain boundary");
    return {sum[0] / area, sum[1] / area, sum[2] / area};
}

} // namespace fcmlat
