#pragma once

// Three-point bending and virtual tensile drivers on voxel grids, the
// key = value configuration format, solution caches and the study pipeline.

#include "fcmlat/beams.hpp"
#include "fcmlat/fcm.hpp"
#include "fcmlat/lattice.hpp"
#include "fcmlat/solve.hpp"

#include <filesystem>
#include <map>

namespace fcmlat {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Flat `key = value` text with `[section]` headers; `#` starts a comment.
/// Keys before any header belong to the section "".
class Config {
public:
    static Config parse(std::istream& in) {
        Config cfg;
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
                cfg.order_.push_back(section);
                cfg.data_[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            if (!cfg.data_.count(section)) cfg.order_.push_back(section);
            cfg.data_[section][key] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config '" + path + "'");
        try {
            return parse(in);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }

    bool has_section(const std::string& s) const { return data_.count(s) != 0; }
    bool has(const std::string& s, const std::string& key) const {
        auto it = data_.find(s);
        return it != data_.end() && it->second.count(key) != 0;
    }

    std::string get(const std::string& s, const std::string& key) const {
        if (!has(s, key)) throw ConfigError("missing key '" + key + "' in section [" + s + "]");
        return data_.at(s).at(key);
    }
    std::string get(const std::string& s, const std::string& key, const std::string& fallback) const {
        return has(s, key) ? get(s, key) : fallback;
    }

    double get_double(const std::string& s, const std::string& key) const {
        return to_double(get(s, key), s, key);
    }
    double get_double(const std::string& s, const std::string& key, double fallback) const {
        return has(s, key) ? get_double(s, key) : fallback;
    }
    int get_int(const std::string& s, const std::string& key, int fallback) const {
        if (!has(s, key)) return fallback;
        const double v = get_double(s, key);
        if (v != std::floor(v)) throw ConfigError("key '" + key + "' in [" + s + "] must be an integer");
        return int(v);
    }
    /// One value (broadcast) or three values.
    Dims get_dims(const std::string& s, const std::string& key, Dims fallback) const {
        if (!has(s, key)) return fallback;
        std::stringstream ss(get(s, key));
        std::vector<int> v;
        std::string tok;
        while (ss >> tok) {
            const double d = to_double(tok, s, key);
            if (d != std::floor(d)) throw ConfigError("key '" + key + "' in [" + s + "] must hold integers");
            v.push_back(int(d));
        }
        if (v.size() == 1) return {v[0], v[0], v[0]};
        if (v.size() == 3) return {v[0], v[1], v[2]};
        throw ConfigError("key '" + key + "' in [" + s + "] needs 1 or 3 integers");
    }

    /// Sections whose name starts with prefix, in file order.
    std::vector<std::string> sections_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& s : order_)
            if (s.rfind(prefix, 0) == 0) out.push_back(s);
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }
    static double to_double(const std::string& v, const std::string& s, const std::string& key) {
        double out = 0.0;
        auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
            throw ConfigError("key '" + key + "' in [" + s + "] is not a number: '" + v + "'");
        }
        return out;
    }

    std::map<std::string, std::map<std::string, std::string>> data_;
    std::vector<std::string> order_;
};

/// Material, discretization and solver settings shared by all drivers.
struct SimulationSettings {
    ElasticMaterial material;
    HU threshold = 1000;
    int order = 3;
    Dims voxels_per_cell{2, 2, 2};
    double penalty_factor = 1.0; // multiplies default_penalty(material)
    SolverConfig solver;

    double penalty() const { return penalty_factor * default_penalty(material); }

    static SimulationSettings from_config(const Config& cfg, const std::string& section) {
        SimulationSettings s;
        s.material.youngs_modulus = cfg.get_double(section, "youngs_modulus", s.material.youngs_modulus);
        s.material.poisson_ratio = cfg.get_double(section, "poisson_ratio", s.material.poisson_ratio);
        s.material.epsilon = cfg.get_double(section, "epsilon", s.material.epsilon);
        // No default: the HU threshold is always an explicit user input.
        const double thr = cfg.get_double(section, "threshold");
        if (thr < 0.0 || thr > 65535.0 || thr != std::floor(thr)) {
            throw ConfigError("threshold must be an integer HU value in [0, 65535]");
        }
        s.threshold = HU(thr);
        s.order = cfg.get_int(section, "order", s.order);
        s.voxels_per_cell = cfg.get_dims(section, "voxels_per_cell", s.voxels_per_cell);
        s.penalty_factor = cfg.get_double(section, "penalty_factor", s.penalty_factor);
        s.solver.rel_tolerance = cfg.get_double(section, "rel_tolerance", s.solver.rel_tolerance);
        s.solver.max_iterations = cfg.get_int(section, "max_iterations", s.solver.max_iterations);
        s.solver.refinement_steps = cfg.get_int(section, "refinement_steps", s.solver.refinement_steps);
        const std::string pc = cfg.get(section, "preconditioner", "jacobi");
        if (pc == "jacobi") s.solver.preconditioner = Preconditioner::Jacobi;
        else if (pc == "none") s.solver.preconditioner = Preconditioner::None;
        else throw ConfigError("preconditioner must be 'jacobi' or 'none'");
        try {
            s.material.validate();
            s.solver.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (s.order < 1 || s.order > 8) throw ConfigError("order must lie in [1, 8]");
        if (!(s.penalty_factor > 0.0)) throw ConfigError("penalty_factor must be > 0");
        return s;
    }
};

// ---------------------------------------------------------------------------
// Three-point bending
// ---------------------------------------------------------------------------

/// Beam axis y, height z, width x. Supports sit on the bottom face
/// symmetrically about midspan; the load strip sits on the top face at
/// midspan. Both span the full width.
struct BendingScenario {
    const VoxelGrid* grid = nullptr;
    double span = 120.0;              // mm
    double support_strip_width = 0.0; // mm along y; 0 selects 2 voxels
    double load_strip_width = 0.0;    // mm along y; 0 selects 2 voxels
    double applied_load = 1.0;        // N
    SimulationSettings settings;
};

struct RigidityResult {
    double rigidity = 0.0;           // N/mm
    double midspan_deflection = 0.0; // mm
    SolveReport solve;
    double porosity = 0.0;
    std::size_t n_dofs = 0;
    std::vector<std::string> warnings;
};

/// Model built for a bending scenario, kept for post-processing.
struct BendingModel {
    FcmMesh mesh;
    std::vector<BoundaryCondition> bcs;
    Box load_region;
};

namespace detail {

inline void require_whole_cells(const VoxelGrid& grid, const SimulationSettings& s) {
    for (int a = 0; a < 3; ++a) {
        if (s.voxels_per_cell[a] < 1 || grid.dims()[a] % s.voxels_per_cell[a] != 0) {
            throw ConfigError("grid dims must be divisible by voxels_per_cell");
        }
    }
}

} // namespace detail

inline BendingModel build_bending_model(const BendingScenario& sc) {
    if (!sc.grid) throw ConfigError("bending scenario without grid");
    const VoxelGrid& grid = *sc.grid;
    detail::require_whole_cells(grid, sc.settings);
    const Vec3 o = grid.origin();
    const Vec3 ext = grid.extent();
    const double dy = grid.spacing()[1];
    const double ws = sc.support_strip_width > 0.0 ? sc.support_strip_width : 2.0 * dy;
    const double wl = sc.load_strip_width > 0.0 ? sc.load_strip_width : 2.0 * dy;
    if (!(sc.span > 0.0) || sc.span + ws > ext[1] + 1e-12) {
        throw ConfigError("span plus support strip width must fit within the beam length");
    }
    if (!(sc.applied_load > 0.0)) throw ConfigError("applied load must be > 0");
    if (wl > ext[1]) throw ConfigError("load strip wider than the beam");

    BendingModel m;
    m.mesh = FcmMesh::over(grid, sc.settings.voxels_per_cell, sc.settings.order);
    const double ymid = o[1] + 0.5 * ext[1];
    const double y1 = ymid - 0.5 * sc.span;
    const double y2 = ymid + 0.5 * sc.span;
    const double z0 = o[2];
    const double z1 = o[2] + ext[2];
    auto strip = [&](double yc, double w, double z) {
        return Box{{o[0], yc - 0.5 * w, z}, {o[0] + ext[0], yc + 0.5 * w, z}};
    };
    // Supports are knife edges: u_z = 0 on the strip's centre line, weighted by
    // the strip width. Penalizing the whole strip would pin every polynomial
    // mode of the cell face in y and clamp the beam's end rotation.
    auto line = [&](double yc, double z) { return Box{{o[0], yc, z}, {o[0] + ext[0], yc, z}}; };
    const double beta = sc.settings.penalty() * ws;
    m.bcs.push_back(BoundaryCondition::dirichlet(line(y1, z0), {false, false, true}, {0, 0, 0}, beta));
    m.bcs.push_back(BoundaryCondition::dirichlet(line(y2, z0), {false, false, true}, {0, 0, 0}, beta));
    // in-plane rigid modes: pin x and y on the first support line
    m.bcs.push_back(BoundaryCondition::dirichlet(line(y1, z0), {true, true, false}, {0, 0, 0}, beta));
    m.load_region = strip(ymid, wl, z1);
    // Boundary terms act on material only, so the traction is scaled by the
    // indicator-weighted footprint to integrate to -F.
    const IndicatorField alpha(grid, sc.settings.threshold, sc.settings.material.epsilon);
    const double area = boundary_measure(m.mesh, m.load_region, &alpha);
    m.bcs.push_back(BoundaryCondition::traction(m.load_region, {0, 0, -sc.applied_load / area}));
    return m;
}

/// Solves the scenario; deflection is the mean u_z over the load footprint.
inline RigidityResult run_bending(const BendingScenario& sc, std::vector<double>* solution_out = nullptr,
                                  BendingModel* model_out = nullptr) {
    BendingModel model = build_bending_model(sc);
    const IndicatorField alpha(*sc.grid, sc.settings.threshold, sc.settings.material.epsilon);
    AssembledSystem sys = assemble(model.mesh, sc.settings.material, alpha, model.bcs);
    RigidityResult res;
    res.warnings = sys.warnings;
    const double hy = model.mesh.cell_size()[1];
    for (const double y : {model.bcs[0].region.lo[1], model.bcs[1].region.lo[1]}) {
        const double r = (y - model.mesh.origin[1]) / hy;
        if (std::abs(r - std::round(r)) > 1e-9) {
            res.warnings.push_back("support line off a cell boundary; expect slow CG convergence");
            break;
        }
    }
    res.n_dofs = sys.n_dofs();
    res.porosity = porosity(*sc.grid, sc.settings.threshold);
    auto [u, report] = cg_solve(sys, sc.settings.solver);
    res.solve = report;
    res.midspan_deflection = -boundary_mean_displacement(model.mesh, u, model.load_region, &alpha)[2];
    if (!(res.midspan_deflection > 0.0)) {
        throw std::runtime_error("run_bending: non-positive midspan deflection");
    }
    res.rigidity = sc.applied_load / res.midspan_deflection;
    if (solution_out) *solution_out = std::move(u);
    if (model_out) *model_out = std::move(model);
    return res;
}

// ---------------------------------------------------------------------------
// Virtual tensile test
// ---------------------------------------------------------------------------

struct TensileResult {
    double effective_E = 0.0; // MPa
    double reaction = 0.0;    // N
    SolveReport solve;
};

/// Axial stretch along y: u_y = 0 on the y-min face, u_y = strain * length on
/// the y-max face, both by penalty. Lateral rigid modes are removed by two
/// centre lines on the y-min face (u_x = 0 along z, u_z = 0 along x), which
/// leave the ends free to contract. E* = (R / (b h)) / strain with R the
/// penalty reaction on the loaded face.
inline TensileResult run_virtual_tensile(const VoxelGrid& grid, const SimulationSettings& settings, double strain) {
    if (!(strain > 0.0)) throw ConfigError("tensile strain must be > 0");
    detail::require_whole_cells(grid, settings);
    const FcmMesh mesh = FcmMesh::over(grid, settings.voxels_per_cell, settings.order);
    const Vec3 o = grid.origin();
    const Vec3 ext = grid.extent();
    const double beta = settings.penalty();
    const Box fixed{{o[0], o[1], o[2]}, {o[0] + ext[0], o[1], o[2] + ext[2]}};
    const Box pulled{{o[0], o[1] + ext[1], o[2]}, {o[0] + ext[0], o[1] + ext[1], o[2] + ext[2]}};
    const double xc = o[0] + 0.5 * ext[0], zc = o[2] + 0.5 * ext[2];
    const Box along_z{{xc, o[1], o[2]}, {xc, o[1], o[2] + ext[2]}};
    const Box along_x{{o[0], o[1], zc}, {o[0] + ext[0], o[1], zc}};
    const double beta_line = beta * grid.spacing()[0];
    std::vector<BoundaryCondition> bcs{
        BoundaryCondition::dirichlet(fixed, {false, true, false}, {0, 0, 0}, beta),
        BoundaryCondition::dirichlet(pulled, {false, true, false}, {0, strain * ext[1], 0}, beta),
        BoundaryCondition::dirichlet(along_z, {true, false, false}, {0, 0, 0}, beta_line),
        BoundaryCondition::dirichlet(along_x, {false, false, true}, {0, 0, 0}, beta_line)};
    const IndicatorField alpha(grid, settings.threshold, settings.material.epsilon);
    AssembledSystem sys = assemble(mesh, settings.material, alpha, bcs);
    // Solve for the correction to the uniform stretch, which meets both end
    // constraints exactly. The penalty load then cancels out of the right-hand
    // side and the residual tolerance applies to elastic forces only.
    const std::vector<double> lift =
        interpolate_vertices(mesh, [&](const Vec3& x) { return Vec3{0.0, strain * (x[1] - o[1]), 0.0}; });
    std::vector<double> Ku(lift.size());
    sys.matrix.multiply(lift, Ku);
    for (std::size_t i = 0; i < Ku.size(); ++i) sys.rhs[i] -= Ku[i];
    auto [u, report] = cg_solve(sys, settings.solver);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += lift[i];
    TensileResult out;
    out.solve = report;
    out.reaction = std::abs(penalty_reaction(mesh, u, bcs[1], &alpha)[1]);
    out.effective_E = out.reaction / (ext[0] * ext[2]) / strain;
    return out;
}

// ---------------------------------------------------------------------------
// Solution cache (CSOL)
// ---------------------------------------------------------------------------

struct SolutionCache {
    FcmMesh mesh;
    ElasticMaterial material;
    std::vector<double> solution;
};

inline void write_solution(const SolutionCache& c, const std::string& path) {
    using detail::format_double;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_solution: cannot open '" + path + "'");
    const auto& m = c.mesh;
    out << "CSOL 1\n";
    out << "cells " << m.cell_counts[0] << ' ' << m.cell_counts[1] << ' ' << m.cell_counts[2] << '\n';
    out << "voxels_per_cell " << m.voxels_per_cell[0] << ' ' << m.voxels_per_cell[1] << ' ' << m.voxels_per_cell[2] << '\n';
    out << "order " << m.order << '\n';
    out << "voxel_size " << format_double(m.voxel_size[0]) << ' ' << format_double(m.voxel_size[1]) << ' '
        << format_double(m.voxel_size[2]) << '\n';
    out << "origin " << format_double(m.origin[0]) << ' ' << format_double(m.origin[1]) << ' '
        << format_double(m.origin[2]) << '\n';
    out << "material " << format_double(c.material.youngs_modulus) << ' ' << format_double(c.material.poisson_ratio)
        << ' ' << format_double(c.material.epsilon) << '\n';
    out << "dofs " << c.solution.size() << '\n';
    out << "data float64-le\n\n";
    for (double v : c.solution) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!out) throw std::runtime_error("write_solution: write failed for '" + path + "'");
}

inline SolutionCache read_solution(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_solution: cannot open '" + path + "'");
    std::string line;
    auto next = [&](const char* field) {
        if (!detail::read_line(in, line)) throw FormatError(path + ": missing header field '" + field + "'");
        return line;
    };
    if (next("CSOL") != "CSOL 1") throw FormatError(path + ": bad magic: expected 'CSOL 1'");
    SolutionCache c;
    try {
        c.mesh.cell_counts = detail::parse_triple<int>(next("cells"), "cells");
        c.mesh.voxels_per_cell = detail::parse_triple<int>(next("voxels_per_cell"), "voxels_per_cell");
        const auto ord = detail::split_ws(next("order"));
        if (ord.size() != 2 || ord[0] != "order") throw FormatError("expected header field 'order'");
        c.mesh.order = detail::parse_number<int>(ord[1], "order");
        c.mesh.voxel_size = detail::parse_triple<double>(next("voxel_size"), "voxel_size");
        c.mesh.origin = detail::parse_triple<double>(next("origin"), "origin");
        const auto mat = detail::parse_triple<double>(next("material"), "material");
        c.material = {mat[0], mat[1], mat[2]};
        const auto nd = detail::split_ws(next("dofs"));
        if (nd.size() != 2 || nd[0] != "dofs") throw FormatError("expected header field 'dofs'");
        const auto n = detail::parse_number<std::size_t>(nd[1], "dofs");
        if (next("data") != "data float64-le") throw FormatError("bad header field 'data'");
        if (!next("blank line").empty()) throw FormatError("missing blank line terminating header");
        if (c.mesh.order < 1 || c.mesh.order > 8) throw FormatError("header field 'order' out of range");
        if (n != c.mesh.n_dofs()) throw FormatError("header field 'dofs' does not match the mesh");
        c.solution.resize(n);
        for (double& v : c.solution) {
            unsigned char b[8];
            in.read(reinterpret_cast<char*>(b), 8);
            if (in.gcount() != 8) throw FormatError("truncated payload");
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
            std::memcpy(&v, &bits, 8);
        }
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        throw FormatError(msg.rfind(path, 0) == 0 ? msg : path + ": " + msg);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Study
// ---------------------------------------------------------------------------

struct SpecimenSpec {
    std::string name;
    std::optional<Dims> cells;      // generated lattice
    std::optional<std::string> grid_path;
};

struct StudyConfig {
    SimulationSettings settings;
    OctetCellSpec cell;
    double resolution = 0.125;
    double span = 30.0;
    double support_strip_width = 0.0;
    double load_strip_width = 0.0;
    double applied_load = 1.0;
    std::optional<double> effective_E;
    double effective_G = 0.0;
    double tensile_strain = 1e-3;
    std::optional<DefectSpec> defects;
    Axis build_direction = Axis::Z;
    std::vector<SpecimenSpec> specimens;
    std::filesystem::path base_dir; // relative grid paths resolve here

    static StudyConfig from_config(const Config& cfg, const std::filesystem::path& base_dir = {}) {
        const std::string S = "study";
        if (!cfg.has_section(S)) throw ConfigError("missing section [study]");
        StudyConfig sc;
        sc.base_dir = base_dir;
        sc.settings = SimulationSettings::from_config(cfg, S);
        sc.cell.cell_size = cfg.get_double(S, "cell_size_mm", sc.cell.cell_size);
        sc.cell.strut_diameter = cfg.get_double(S, "strut_diameter_mm", sc.cell.strut_diameter);
        sc.cell.material_hu = HU(cfg.get_int(S, "material_hu", sc.cell.material_hu));
        sc.cell.void_hu = HU(cfg.get_int(S, "void_hu", sc.cell.void_hu));
        sc.resolution = cfg.get_double(S, "resolution_mm", sc.resolution);
        sc.span = cfg.get_double(S, "span_mm", sc.span);
        sc.support_strip_width = cfg.get_double(S, "support_strip_mm", 0.0);
        sc.load_strip_width = cfg.get_double(S, "load_strip_mm", 0.0);
        sc.applied_load = cfg.get_double(S, "applied_load_N", sc.applied_load);
        if (cfg.has(S, "effective_E")) sc.effective_E = cfg.get_double(S, "effective_E");
        sc.effective_G = cfg.get_double(S, "effective_G");
        if (!(sc.effective_G > 0.0)) throw ConfigError("effective_G must be > 0");
        if (sc.effective_E && !(*sc.effective_E > 0.0)) throw ConfigError("effective_E must be > 0");
        sc.tensile_strain = cfg.get_double(S, "tensile_strain", sc.tensile_strain);
        const std::string bd = cfg.get(S, "build_direction", "z");
        if (bd == "x") sc.build_direction = Axis::X;
        else if (bd == "y") sc.build_direction = Axis::Y;
        else if (bd == "z") sc.build_direction = Axis::Z;
        else throw ConfigError("build_direction must be x, y or z");
        if (cfg.has_section("defects")) {
            DefectSpec d;
            d.strut_dilation = cfg.get_double("defects", "strut_dilation_mm", 0.0);
            d.node_blob_radius = cfg.get_double("defects", "node_blob_radius_mm", 0.0);
            d.particle_density = cfg.get_double("defects", "particle_density_per_mm2", 0.0);
            d.particle_radius = cfg.get_double("defects", "particle_radius_mm", 0.0);
            d.rng_seed = std::uint64_t(cfg.get_int("defects", "seed", 0));
            try {
                d.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            sc.defects = d;
        }
        for (const auto& sec : cfg.sections_with_prefix("specimen.")) {
            SpecimenSpec sp;
            sp.name = sec.substr(std::string("specimen.").size());
            if (cfg.has(sec, "grid")) sp.grid_path = cfg.get(sec, "grid");
            if (cfg.has(sec, "cells")) sp.cells = cfg.get_dims(sec, "cells", {1, 1, 1});
            if (sp.grid_path.has_value() == sp.cells.has_value()) {
                throw ConfigError("[" + sec + "] needs exactly one of 'cells' or 'grid'");
            }
            sc.specimens.push_back(sp);
        }
        if (sc.specimens.empty()) throw ConfigError("study has no [specimen.*] sections");
        return sc;
    }

    bool defected() const {
        return defects && (defects->strut_dilation > 0 || defects->node_blob_radius > 0 ||
                           (defects->particle_density > 0 && defects->particle_radius > 0));
    }

    /// Builds a specimen grid: generated lattice (plus defects) or a CVOL file.
    VoxelGrid specimen_grid(const SpecimenSpec& sp) const {
        if (sp.grid_path) {
            std::filesystem::path p(*sp.grid_path);
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            return read_volume(p.string());
        }
        LatticeBeamSpec lb;
        lb.cells = *sp.cells;
        lb.cell = cell;
        lb.resolution = resolution;
        VoxelGrid g = voxelize_beam(lb);
        if (defected()) {
            const auto nodes = lattice_junctions(lb);
            g = inject_defects(g, *defects, build_direction, nodes, cell.material_hu);
        }
        return g;
    }
};

struct SpecimenOutcome {
    std::string name;
    bool ok = false;
    std::string message;
    double height = 0.0;
    double width = 0.0;
    double porosity = 0.0;
    RigidityResult result;
};

struct StudyReport {
    std::vector<SpecimenOutcome> specimens;
    double effective_E = 0.0;
    std::string effective_E_source;
    double effective_G = 0.0;
    std::optional<beams::GFit> fit_eb;
    std::optional<beams::GFit> fit_timoshenko;
    int failures = 0;
};

namespace detail {

inline std::string sci(double v) { return beams::format_sci(v); }

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << text;
}

} // namespace detail

/// Runs every specimen, then writes porosity.csv, rigidity.csv,
/// normalized.csv, curves.csv, gfit.txt and status.csv into out_dir.
inline StudyReport run_study(const StudyConfig& sc, const std::filesystem::path& out_dir) {
    using namespace beams;
    std::filesystem::create_directories(out_dir);
    StudyReport report;
    const SampleSource source = sc.defected() ? SampleSource::FcmCt : SampleSource::FcmCad;
    std::vector<RigiditySample> samples;
    std::optional<VoxelGrid> thickest;
    double thickest_h = -1.0;

    for (const auto& sp : sc.specimens) {
        SpecimenOutcome oc;
        oc.name = sp.name;
        try {
            VoxelGrid grid = sc.specimen_grid(sp);
            const Vec3 ext = grid.extent();
            oc.height = ext[2];
            oc.width = ext[0];
            oc.porosity = porosity(grid, sc.settings.threshold);
            BendingScenario bs;
            bs.grid = &grid;
            bs.span = sc.span;
            bs.support_strip_width = sc.support_strip_width;
            bs.load_strip_width = sc.load_strip_width;
            bs.applied_load = sc.applied_load;
            bs.settings = sc.settings;
            oc.result = run_bending(bs);
            oc.ok = true;
            samples.push_back({oc.height, oc.result.rigidity, source});
            if (oc.height > thickest_h) {
                thickest_h = oc.height;
                thickest = std::move(grid);
            }
        } catch (const std::exception& e) {
            oc.message = e.what();
            ++report.failures;
        }
        report.specimens.push_back(std::move(oc));
    }

    std::string por = "specimen,height_mm,porosity\n";
    std::string status = "specimen,status,message\n";
    for (const auto& oc : report.specimens) {
        if (oc.ok || oc.height > 0.0) por += oc.name + "," + detail::sci(oc.height) + "," + detail::sci(oc.porosity) + "\n";
        std::string msg = oc.message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        status += oc.name + "," + (oc.ok ? "ok" : "failed") + "," + msg + "\n";
    }
    detail::write_text(out_dir / "porosity.csv", por);
    detail::write_text(out_dir / "status.csv", status);
    {
        std::ostringstream os;
        write_samples_csv(samples, os);
        detail::write_text(out_dir / "rigidity.csv", os.str());
    }
    if (samples.empty()) return report;

    report.effective_G = sc.effective_G;
    if (sc.effective_E) {
        report.effective_E = *sc.effective_E;
        report.effective_E_source = "config";
    } else {
        try {
            report.effective_E = run_virtual_tensile(*thickest, sc.settings, sc.tensile_strain).effective_E;
            report.effective_E_source = "virtual-tensile";
        } catch (const std::exception& e) {
            ++report.failures;
            detail::write_text(out_dir / "gfit.txt", std::string("error=") + e.what() + "\n");
            return report;
        }
    }

    const double width = report.specimens.front().width > 0.0 ? report.specimens.front().width : 1.0;
    const BeamSpec reference(report.effective_E, report.effective_G, sc.span, width, thickest_h);
    try {
        report.fit_eb = fit_g(samples, reference, Model::EulerBernoulli);
        report.fit_timoshenko = fit_g(samples, reference, Model::Timoshenko);
    } catch (const std::invalid_argument& e) {
        ++report.failures;
        detail::write_text(out_dir / "gfit.txt", std::string("error=") + e.what() + "\n");
        return report;
    }

    std::string norm = "height_mm,normalized_rigidity,source\n";
    for (const auto& s : samples) {
        norm += detail::sci(s.height) + "," + detail::sci(normalized_rigidity(s, reference)) + "," + to_string(s.source) + "\n";
    }
    detail::write_text(out_dir / "normalized.csv", norm);

    double hmin = samples.front().height, hmax = samples.front().height;
    for (const auto& s : samples) {
        hmin = std::min(hmin, s.height);
        hmax = std::max(hmax, s.height);
    }
    const double lo = 0.5 * hmin, hi = 1.25 * hmax;
    std::string curves = "height_mm,eb,timoshenko,gradient_eb,gradient_timoshenko\n";
    for (int i = 0; i < 50; ++i) {
        const double h = lo + (hi - lo) * i / 49.0;
        const BeamSpec b = reference.with_height(h);
        const double eb = rigidity_eb(b);
        curves += detail::sci(h) + "," + detail::sci(1.0) + "," + detail::sci(rigidity_timoshenko(b) / eb) + "," +
                  detail::sci(rigidity_gradient({b, report.fit_eb->g}, Model::EulerBernoulli) / eb) + "," +
                  detail::sci(rigidity_gradient({b, report.fit_timoshenko->g}, Model::Timoshenko) / eb) + "\n";
    }
    detail::write_text(out_dir / "curves.csv", curves);

    std::string gfit = format_fit(*report.fit_eb) + "\n" + format_fit(*report.fit_timoshenko) + "\n";
    gfit += "effective_E_MPa=" + detail::sci(report.effective_E) + "\n";
    gfit += "effective_E_source=" + report.effective_E_source + "\n";
    gfit += "effective_G_MPa=" + detail::sci(report.effective_G) + "\n";
    gfit += "span_mm=" + detail::sci(sc.span) + "\n";
    gfit += "width_mm=" + detail::sci(width) + "\n";
    detail::write_text(out_dir / "gfit.txt", gfit);
    return report;
}

} // namespace fcmlat
