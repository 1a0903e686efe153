#include "fcmlat/solve.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace fcmlat;

namespace {

// Dense row-major input to CSR (zeros dropped).
SparseSystem from_dense(const std::vector<std::vector<double>>& A, std::vector<double> f) {
    SparseSystem s;
    s.matrix.rows = A.size();
    s.matrix.row_ptr.assign(1, 0);
    for (const auto& row : A) {
        for (std::size_t c = 0; c < row.size(); ++c)
            if (row[c] != 0.0) {
                s.matrix.cols.push_back(std::int32_t(c));
                s.matrix.values.push_back(row[c]);
            }
        s.matrix.row_ptr.push_back(std::int64_t(s.matrix.values.size()));
    }
    s.rhs = std::move(f);
    return s;
}

// 1D Laplacian-like SPD tridiagonal matrix with a shifted diagonal.
SparseSystem tridiagonal(int n, double diag, double off, std::uint32_t seed) {
    std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) {
        A[i][i] = diag;
        if (i > 0) A[i][i - 1] = off;
        if (i + 1 < n) A[i][i + 1] = off;
    }
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> f(n);
    for (auto& x : f) x = u(rng);
    return from_dense(A, f);
}

std::vector<double> residual(const SparseSystem& s, const std::vector<double>& u) {
    std::vector<double> r(u.size());
    s.matrix.multiply(u, r);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = s.rhs[i] - r[i];
    return r;
}

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace

TEST(Cg, IdentityInOneIteration) {
    const auto s = from_dense({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {3, -1, 2});
    const auto [u, rep] = cg_solve(s, SolverConfig{});
    EXPECT_EQ(rep.iterations, 1);
    EXPECT_EQ(u, (std::vector<double>{3, -1, 2}));
}

TEST(Cg, TwoByTwoHandElimination) {
    const auto s = from_dense({{4, 1}, {1, 3}}, {1, 2});
    for (auto pc : {Preconditioner::None, Preconditioner::Jacobi}) {
        SolverConfig c;
        c.preconditioner = pc;
        c.rel_tolerance = 1e-14;
        const auto [u, rep] = cg_solve(s, c);
        EXPECT_NEAR(u[0], 1.0 / 11.0, 1e-15);
        EXPECT_NEAR(u[1], 7.0 / 11.0, 1e-15);
        EXPECT_LE(rep.iterations, 2);
    }
}

TEST(Cg, JacobiInvertsIllConditionedDiagonal) {
    std::vector<std::vector<double>> A(5, std::vector<double>(5, 0.0));
    const double d[5] = {1.0, 1e2, 1e3, 1e5, 1e6};
    for (int i = 0; i < 5; ++i) A[i][i] = d[i];
    const auto s = from_dense(A, {1, 1, 1, 1, 1});
    const auto [u, rep] = cg_solve(s, SolverConfig{});
    EXPECT_LE(rep.iterations, 2);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(u[i], 1.0 / d[i], 1e-14 / d[i]);
}

TEST(Cg, ZeroRhsReturnsZeroImmediately) {
    const auto s = from_dense({{2, 0}, {0, 2}}, {0, 0});
    const auto [u, rep] = cg_solve(s, SolverConfig{});
    EXPECT_EQ(rep.iterations, 0);
    EXPECT_EQ(u, (std::vector<double>{0, 0}));
}

TEST(Cg, MeetsToleranceAndReportsIt) {
    const auto s = tridiagonal(300, 2.05, -1.0, 1);
    SolverConfig c;
    c.rel_tolerance = 1e-10;
    const auto [u, rep] = cg_solve(s, c);
    EXPECT_LE(rep.final_relative_residual, 1e-10);
    EXPECT_LE(norm(residual(s, u)) / norm(s.rhs), 1e-9);
    EXPECT_EQ(rep.residual_history.size(), std::size_t(rep.iterations) + 1);
    EXPECT_GE(rep.wall_time, 0.0);
}

TEST(Cg, ResidualNonIncreasingOnWellConditionedSystem) {
    // condition number about 2: the 2-norm residual decreases at every step
    const auto s = tridiagonal(200, 4.0, -1.0, 2);
    SolverConfig c;
    c.rel_tolerance = 1e-12;
    c.preconditioner = Preconditioner::None;
    const auto [u, rep] = cg_solve(s, c);
    const auto& h = rep.residual_history;
    for (std::size_t k = 1; k < h.size(); ++k) EXPECT_LE(h[k], 1.1 * h[k - 1]) << "step " << k;
}

TEST(Cg, EnergyIdentityAtConvergence) {
    const auto s = tridiagonal(150, 2.2, -1.0, 3);
    SolverConfig c;
    c.rel_tolerance = 1e-10;
    const auto [u, rep] = cg_solve(s, c);
    std::vector<double> Ku(u.size());
    s.matrix.multiply(u, Ku);
    double uKu = 0, fu = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uKu += u[i] * Ku[i];
        fu += s.rhs[i] * u[i];
    }
    EXPECT_LT(std::abs(uKu - fu) / std::abs(fu), 1e-10);
}

TEST(Cg, NonConvergenceCarriesHistory) {
    const auto s = tridiagonal(400, 2.0001, -1.0, 4);
    SolverConfig c;
    c.max_iterations = 5;
    c.preconditioner = Preconditioner::None;
    try {
        cg_solve(s, c);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.residual_history.size(), 6u);
    }
}

TEST(Cg, RefinementReducesTrueResidual) {
    // stiff diagonal entries next to soft ones, as with penalty rows
    std::vector<std::vector<double>> A(60, std::vector<double>(60, 0.0));
    for (int i = 0; i < 60; ++i) {
        A[i][i] = (i % 10 == 0) ? 1e9 : 2.0;
        if (i > 0) A[i][i - 1] = A[i - 1][i] = -0.9;
    }
    std::vector<double> f(60, 1.0);
    const auto s = from_dense(A, f);
    SolverConfig c;
    c.rel_tolerance = 1e-6;
    const auto [u0, r0] = cg_solve(s, c);
    c.refinement_steps = 2;
    const auto [u2, r2] = cg_solve(s, c);
    EXPECT_LT(norm(residual(s, u2)), 1e-3 * norm(residual(s, u0)));
    EXPECT_GT(r2.iterations, r0.iterations);
    EXPECT_EQ(r2.residual_history.size(), std::size_t(r2.iterations) + 1);
    c.refinement_steps = -1;
    EXPECT_THROW(cg_solve(s, c), std::invalid_argument);
}

TEST(Cg, BitwiseReproducible) {
    const auto s = tridiagonal(10000, 2.01, -1.0, 5);
    const auto a = cg_solve(s, SolverConfig{}).first;
    const auto b = cg_solve(s, SolverConfig{}).first;
    EXPECT_EQ(a, b);
}

TEST(Cg, RejectsBadConfig) {
    const auto s = from_dense({{1}}, {1});
    SolverConfig c;
    c.rel_tolerance = 1.0;
    EXPECT_THROW(cg_solve(s, c), std::invalid_argument);
    c = SolverConfig{};
    c.max_iterations = 0;
    EXPECT_THROW(cg_solve(s, c), std::invalid_argument);
}

namespace {

FcmMesh unit_mesh(int p) {
    FcmMesh m;
    m.cell_counts = {2, 1, 1};
    m.voxels_per_cell = {2, 2, 2};
    m.order = p;
    m.voxel_size = {0.5, 0.5, 0.5};
    m.origin = {1.0, -1.0, 0.0};
    return m;
}

} // namespace

TEST(Fields, ZeroSolutionGivesZeroFile) {
    const FcmMesh m = unit_mesh(2);
    const std::vector<double> u(m.n_dofs(), 0.0);
    const auto fs = sample_fields(m, u, ElasticMaterial{}, 0.5);
    EXPECT_EQ(fs.dims, (Dims{5, 3, 3}));
    for (double v : fs.displacement) EXPECT_EQ(v, 0.0);
    for (double v : fs.von_mises) EXPECT_EQ(v, 0.0);
}

TEST(Fields, RigidTranslationIsConstantAndStressFree) {
    const FcmMesh m = unit_mesh(3);
    const auto u = interpolate_vertices(m, [](const Vec3&) { return Vec3{0.1, -0.2, 0.3}; });
    const auto fs = sample_fields(m, u, ElasticMaterial{}, 0.25);
    for (std::size_t n = 0; n < fs.von_mises.size(); ++n) {
        EXPECT_NEAR(fs.displacement[3 * n], 0.1, 1e-14);
        EXPECT_NEAR(fs.displacement[3 * n + 1], -0.2, 1e-14);
        EXPECT_NEAR(fs.displacement[3 * n + 2], 0.3, 1e-14);
        EXPECT_NEAR(fs.von_mises[n], 0.0, 1e-9);
    }
}

TEST(Fields, LinearRampIsSampledExactly) {
    const FcmMesh m = unit_mesh(1);
    const auto field = [](const Vec3& x) { return Vec3{0.001 * x[0], 0.002 * x[1] - 0.001 * x[2], 0.0}; };
    const auto u = interpolate_vertices(m, field);
    const auto fs = sample_fields(m, u, ElasticMaterial{}, 0.5);
    std::size_t n = 0;
    for (int k = 0; k < fs.dims[2]; ++k)
        for (int j = 0; j < fs.dims[1]; ++j)
            for (int i = 0; i < fs.dims[0]; ++i, ++n) {
                const Vec3 x{fs.origin[0] + 0.5 * i, fs.origin[1] + 0.5 * j, fs.origin[2] + 0.5 * k};
                const Vec3 want = field(x);
                for (int c = 0; c < 3; ++c) EXPECT_NEAR(fs.displacement[3 * n + c], want[c], 1e-15);
            }
}

TEST(Fields, FileRoundTripAndLayout) {
    const FcmMesh m = unit_mesh(2);
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> r(-1, 1);
    std::vector<double> u(m.n_dofs());
    for (auto& x : u) x = 1e-3 * r(rng);
    const auto fs = sample_fields(m, u, ElasticMaterial{}, 0.5);
    std::ostringstream os(std::ios::binary);
    write_fields(fs, os);
    const std::string bytes = os.str();
    const std::string header = "FIELD 1\ndims 5 3 3\nspacing 0.5 0.5 0.5\norigin 1 -1 0\narrays displacement:3 von_mises:1\n\n";
    ASSERT_EQ(bytes.substr(0, header.size()), header);
    EXPECT_EQ(bytes.size(), header.size() + 8 * 4 * 45);
    std::istringstream is(bytes, std::ios::binary);
    const auto back = read_fields(is);
    EXPECT_EQ(back.dims, fs.dims);
    EXPECT_EQ(back.displacement, fs.displacement);
    EXPECT_EQ(back.von_mises, fs.von_mises);
    std::istringstream cut(bytes.substr(0, bytes.size() - 3), std::ios::binary);
    EXPECT_THROW(read_fields(cut), FormatError);
}

TEST(Fields, ExportReportsPath) {
    const FcmMesh m = unit_mesh(1);
    const std::vector<double> u(m.n_dofs(), 0.0);
    try {
        export_fields(m, u, ElasticMaterial{}, 0.5, "/nonexistent-dir/out.field");
        FAIL() << "expected an I/O error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/out.field"), std::string::npos);
    }
}
