// Command-line front end: lattice generation, porosity, bending and tensile
// solves, closed-form beam formulas, g calibration, studies and field export.

#include "fcmlat/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace fcmlat;

namespace {

enum Exit { Ok = 0, StageFailure = 1, BadConfig = 2 };

void kv(const std::string& key, double value) { std::cout << key << '=' << beams::format_sci(value) << '\n'; }

Axis parse_axis(const std::string& s) {
    if (s == "x") return Axis::X;
    if (s == "y") return Axis::Y;
    if (s == "z") return Axis::Z;
    throw ConfigError("build direction must be x, y or z");
}

std::filesystem::path parent_of(const std::string& path) { return std::filesystem::path(path).parent_path(); }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Voxel finite cell toolkit for octet-truss lattice beams"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Voxelize an octet-truss beam into a CVOL file");
    std::vector<int> cells{2, 32, 1};
    OctetCellSpec cell;
    double resolution = 0.1;
    DefectSpec defects;
    std::string build_dir = "z", gen_out;
    int material_hu = cell.material_hu, void_hu = cell.void_hu;
    gen->add_option("--cells", cells, "Cell counts nx ny nz")->expected(3);
    gen->add_option("--cell-size", cell.cell_size, "Unit cell edge (mm)");
    gen->add_option("--diameter", cell.strut_diameter, "Strut diameter (mm)");
    gen->add_option("--resolution", resolution, "Voxel edge (mm)");
    gen->add_option("--material-hu", material_hu);
    gen->add_option("--void-hu", void_hu);
    gen->add_option("--dilation", defects.strut_dilation, "Strut dilation (mm)");
    gen->add_option("--node-blob", defects.node_blob_radius, "Junction blob radius (mm)");
    gen->add_option("--particle-density", defects.particle_density, "Adhered particles per mm^2 of down-facing surface");
    gen->add_option("--particle-radius", defects.particle_radius, "Adhered particle radius (mm)");
    gen->add_option("--seed", defects.rng_seed);
    gen->add_option("--build-direction", build_dir)->check(CLI::IsMember({"x", "y", "z"}));
    gen->add_option("-o,--output", gen_out)->required();

    // porosity
    auto* por = app.add_subcommand("porosity", "Porosity of a CVOL grid");
    std::string por_in;
    int threshold = -1;
    por->add_option("grid", por_in)->required();
    por->add_option("--threshold", threshold, "HU threshold")->required();

    // bend
    auto* bend = app.add_subcommand("bend", "Three-point bending rigidity of a CVOL grid");
    std::string bend_in, bend_cfg, bend_sol;
    bend->add_option("grid", bend_in)->required();
    bend->add_option("-c,--config", bend_cfg, "Config file with a [bending] section")->required();
    bend->add_option("--save-solution", bend_sol, "Write the solution cache (CSOL)");

    // tensile
    auto* ten = app.add_subcommand("tensile", "Effective Young's modulus by a virtual tensile test");
    std::string ten_in, ten_cfg;
    ten->add_option("grid", ten_in)->required();
    ten->add_option("-c,--config", ten_cfg, "Config file with a [tensile] section")->required();

    // beams
    auto* bm = app.add_subcommand("beams", "Evaluate a closed-form beam formula");
    std::string formula;
    double E = 0, G = 0, L = 0, b = 0, h = 0, g = 0, force = 1.0;
    bm->add_option("formula", formula)
        ->required()
        ->check(CLI::IsMember({"deflection-eb", "deflection-timoshenko", "deflection-gradient-eb",
                               "deflection-gradient-timoshenko", "rigidity-eb", "rigidity-timoshenko",
                               "rigidity-gradient-eb", "rigidity-gradient-timoshenko"}));
    bm->add_option("--E", E, "Effective Young's modulus (MPa)")->required();
    bm->add_option("--G", G, "Effective shear modulus (MPa)")->required();
    bm->add_option("--span", L, "Span (mm)")->required();
    bm->add_option("--width", b, "Width (mm)")->required();
    bm->add_option("--height", h, "Height (mm)")->required();
    bm->add_option("--g", g, "Intrinsic length (mm)");
    bm->add_option("--force", force, "Load (N)");

    // fit-g
    auto* fit = app.add_subcommand("fit-g", "Calibrate g from a rigidity CSV");
    std::string fit_in, fit_model = "both";
    double fE = 0, fG = 0, fL = 0, fb = 0;
    fit->add_option("samples", fit_in)->required();
    fit->add_option("--E", fE)->required();
    fit->add_option("--G", fG)->required();
    fit->add_option("--span", fL)->required();
    fit->add_option("--width", fb)->required();
    fit->add_option("--model", fit_model)->check(CLI::IsMember({"eb", "timoshenko", "both"}));

    // study
    auto* st = app.add_subcommand("study", "Run a configured bending study");
    std::string st_cfg, st_out;
    st->add_option("config", st_cfg)->required();
    st->add_option("-o,--output", st_out, "Report directory")->required();

    // export-fields
    auto* ex = app.add_subcommand("export-fields", "Sample displacement and von Mises stress from a CSOL cache");
    std::string ex_in, ex_out;
    double spacing = 0.0;
    ex->add_option("solution", ex_in)->required();
    ex->add_option("--spacing", spacing, "Sample spacing (mm)")->required();
    ex->add_option("-o,--output", ex_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? Ok : BadConfig;
    }

    try {
        if (*gen) {
            LatticeBeamSpec spec;
            spec.cells = {cells[0], cells[1], cells[2]};
            spec.cell = cell;
            spec.cell.material_hu = HU(material_hu);
            spec.cell.void_hu = HU(void_hu);
            spec.resolution = resolution;
            try {
                spec.validate();
                defects.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            VoxelGrid grid = voxelize_beam(spec);
            const auto nodes = lattice_junctions(spec);
            grid = inject_defects(grid, defects, parse_axis(build_dir), nodes, spec.cell.material_hu);
            write_volume(grid, gen_out);
            std::cout << "dims=" << grid.dims()[0] << ' ' << grid.dims()[1] << ' ' << grid.dims()[2] << '\n';
            kv("porosity", porosity(grid, HU((int(spec.cell.material_hu) + spec.cell.void_hu + 1) / 2)));
        } else if (*por) {
            if (threshold < 0 || threshold > 65535) throw ConfigError("threshold must lie in [0, 65535]");
            kv("porosity", porosity(read_volume(por_in), HU(threshold)));
        } else if (*bend) {
            const Config cfg = Config::load(bend_cfg);
            const VoxelGrid grid = read_volume(bend_in);
            BendingScenario sc;
            sc.grid = &grid;
            sc.settings = SimulationSettings::from_config(cfg, "bending");
            sc.span = cfg.get_double("bending", "span_mm");
            sc.support_strip_width = cfg.get_double("bending", "support_strip_mm", 0.0);
            sc.load_strip_width = cfg.get_double("bending", "load_strip_mm", 0.0);
            sc.applied_load = cfg.get_double("bending", "applied_load_N", 1.0);
            std::vector<double> u;
            BendingModel model;
            const RigidityResult r = run_bending(sc, &u, &model);
            kv("rigidity_N_per_mm", r.rigidity);
            kv("midspan_deflection_mm", r.midspan_deflection);
            kv("porosity", r.porosity);
            std::cout << "dofs=" << r.n_dofs << '\n';
            std::cout << "iterations=" << r.solve.iterations << '\n';
            kv("final_relative_residual", r.solve.final_relative_residual);
            kv("wall_time_s", r.solve.wall_time);
            for (const auto& w : r.warnings) std::cout << "warning=" << w << '\n';
            if (!bend_sol.empty()) write_solution({model.mesh, sc.settings.material, std::move(u)}, bend_sol);
        } else if (*ten) {
            const Config cfg = Config::load(ten_cfg);
            const VoxelGrid grid = read_volume(ten_in);
            const SimulationSettings s = SimulationSettings::from_config(cfg, "tensile");
            const double strain = cfg.get_double("tensile", "strain", 1e-3);
            const TensileResult r = run_virtual_tensile(grid, s, strain);
            kv("effective_E_MPa", r.effective_E);
            kv("reaction_N", r.reaction);
            std::cout << "iterations=" << r.solve.iterations << '\n';
            kv("wall_time_s", r.solve.wall_time);
        } else if (*bm) {
            beams::BeamSpec spec;
            try {
                spec = beams::BeamSpec(E, G, L, b, h);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            if (g < 0.0) throw ConfigError("g must be >= 0");
            const beams::GradientBeamSpec gs(spec, g);
            using namespace beams;
            double v = 0.0;
            if (formula == "deflection-eb") v = deflection_eb(spec, force);
            else if (formula == "deflection-timoshenko") v = deflection_timoshenko(spec, force);
            else if (formula == "deflection-gradient-eb") v = deflection_gradient_eb(gs, force);
            else if (formula == "deflection-gradient-timoshenko") v = deflection_gradient_timoshenko(gs, force);
            else if (formula == "rigidity-eb") v = rigidity_eb(spec);
            else if (formula == "rigidity-timoshenko") v = rigidity_timoshenko(spec);
            else if (formula == "rigidity-gradient-eb") v = rigidity_gradient(gs, Model::EulerBernoulli);
            else v = rigidity_gradient(gs, Model::Timoshenko);
            kv("value", v);
        } else if (*fit) {
            std::ifstream in(fit_in);
            if (!in) throw std::runtime_error("cannot open '" + fit_in + "'");
            const auto samples = beams::read_samples_csv(in);
            if (samples.empty()) throw FormatError(fit_in + ": no samples");
            beams::BeamSpec ref;
            try {
                ref = beams::BeamSpec(fE, fG, fL, fb, samples.front().height);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            if (fit_model != "timoshenko") std::cout << beams::format_fit(beams::fit_g(samples, ref, beams::Model::EulerBernoulli));
            if (fit_model == "both") std::cout << '\n';
            if (fit_model != "eb") std::cout << beams::format_fit(beams::fit_g(samples, ref, beams::Model::Timoshenko));
        } else if (*st) {
            const StudyConfig sc = StudyConfig::from_config(Config::load(st_cfg), parent_of(st_cfg));
            const StudyReport rep = run_study(sc, st_out);
            for (const auto& oc : rep.specimens) {
                std::cout << "specimen=" << oc.name << (oc.ok ? " ok" : " failed: " + oc.message) << '\n';
            }
            if (rep.fit_eb) kv("g_mm_eb", rep.fit_eb->g);
            if (rep.fit_timoshenko) kv("g_mm_timoshenko", rep.fit_timoshenko->g);
            return rep.failures == 0 ? Ok : StageFailure;
        } else if (*ex) {
            if (!(spacing > 0.0)) throw ConfigError("spacing must be > 0");
            const SolutionCache c = read_solution(ex_in);
            export_fields(c.mesh, c.solution, c.material, spacing, ex_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return BadConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return StageFailure;
    }
    return Ok;
}
