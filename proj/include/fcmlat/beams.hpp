#pragma once

// Closed-form three-point-bending solutions of classical and strain-gradient
// Euler-Bernoulli / Timoshenko beams, normalized rigidity and calibration of
// the intrinsic length g.

#include "fcmlat/error.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fcmlat::beams {

/// Homogenized solid rectangular section with the outer dimensions of the lattice.
struct BeamSpec {
    double effective_E = 0.0; // MPa
    double effective_G = 0.0; // MPa
    double length = 0.0;      // span between supports, mm
    double width = 0.0;       // b, mm
    double height = 0.0;      // h, mm

    BeamSpec() = default;
    BeamSpec(double E, double G, double L, double b, double h)
        : effective_E(E), effective_G(G), length(L), width(b), height(h) {
        validate();
    }

    void validate() const {
        if (!(effective_E > 0.0 && effective_G > 0.0 && length > 0.0 && width > 0.0 && height > 0.0)) {
            throw std::invalid_argument("BeamSpec: all fields must be > 0");
        }
    }

    double area() const { return width * height; }
    double moment_of_inertia() const { return width * height * height * height / 12.0; }

    BeamSpec with_height(double h) const {
        BeamSpec s = *this;
        s.height = h;
        s.validate();
        return s;
    }
};

struct GradientBeamSpec {
    BeamSpec base;
    double g = 0.0; // intrinsic length, mm

    GradientBeamSpec() = default;
    GradientBeamSpec(BeamSpec b, double g_mm) : base(b), g(g_mm) {
        if (!(g >= 0.0)) throw std::invalid_argument("GradientBeamSpec: g must be >= 0");
    }
};

enum class Model { EulerBernoulli, Timoshenko };

inline std::string to_string(Model m) { return m == Model::EulerBernoulli ? "EB" : "Timoshenko"; }

inline Model parse_model(const std::string& s) {
    if (s == "EB" || s == "eb" || s == "euler-bernoulli") return Model::EulerBernoulli;
    if (s == "T" || s == "timoshenko" || s == "Timoshenko") return Model::Timoshenko;
    throw ConfigError("unknown beam model '" + s + "' (expected EB or timoshenko)");
}

/// F L^3 / (48 E* I)
inline double deflection_eb(const BeamSpec& s, double force) {
    return force * s.length * s.length * s.length / (48.0 * s.effective_E * s.moment_of_inertia());
}

/// F L^3 / (48 E* I) + F L / (4 G* A)
inline double deflection_timoshenko(const BeamSpec& s, double force) {
    return deflection_eb(s, force) + force * s.length / (4.0 * s.effective_G * s.area());
}

/// 4 E* b h^3 / L^3
inline double rigidity_eb(const BeamSpec& s) {
    const double h = s.height, L = s.length;
    return 4.0 * s.effective_E * s.width * h * h * h / (L * L * L);
}

inline double rigidity_timoshenko(const BeamSpec& s) {
    const double ratio = s.height / s.length;
    return rigidity_eb(s) / (1.0 + s.effective_E / s.effective_G * ratio * ratio);
}

/// F L^3 / (48 (E* I + E* A g^2))
inline double deflection_gradient_eb(const GradientBeamSpec& s, double force) {
    const BeamSpec& b = s.base;
    const double L = b.length;
    return force * L * L * L /
           (48.0 * (b.effective_E * b.moment_of_inertia() + b.effective_E * b.area() * s.g * s.g));
}

inline double deflection_gradient_timoshenko(const GradientBeamSpec& s, double force) {
    const BeamSpec& b = s.base;
    return deflection_gradient_eb(s, force) + force * b.length / (4.0 * b.effective_G * b.area());
}

inline double classical_rigidity(const BeamSpec& s, Model model) {
    return model == Model::EulerBernoulli ? rigidity_eb(s) : rigidity_timoshenko(s);
}

/// Size-effect factor 1 + 12 (g/h)^2.
inline double gradient_factor(double g, double h) {
    const double r = g / h;
    return 1.0 + 12.0 * r * r;
}

/// EB: D^EB (1 + 12 (g/h)^2). Timoshenko: F / w_gr^T, i.e. the gradient factor
/// stiffens the bending compliance only. D^T (1 + 12 (g/h)^2) differs from it
/// by (factor - 1) times the shear share of the compliance (0.03% for an
/// h = 4 mm, L = 120 mm octet beam at g = 0.387 mm).
inline double rigidity_gradient(const GradientBeamSpec& s, Model model) {
    const BeamSpec& b = s.base;
    const double bending = rigidity_eb(b) * gradient_factor(s.g, b.height);
    if (model == Model::EulerBernoulli) return bending;
    return 1.0 / (1.0 / bending + b.length / (4.0 * b.effective_G * b.area()));
}

enum class SampleSource { Experimental, FcmCt, FcmCad };

inline std::string to_string(SampleSource s) {
    switch (s) {
    case SampleSource::Experimental: return "experimental";
    case SampleSource::FcmCt: return "fcm-ct";
    case SampleSource::FcmCad: return "fcm-cad";
    }
    return "";
}

inline SampleSource parse_source(const std::string& s) {
    if (s == "experimental") return SampleSource::Experimental;
    if (s == "fcm-ct") return SampleSource::FcmCt;
    if (s == "fcm-cad") return SampleSource::FcmCad;
    throw FormatError("unknown rigidity sample source '" + s + "'");
}

struct RigiditySample {
    double height = 0.0;   // mm
    double rigidity = 0.0; // N/mm
    SampleSource source = SampleSource::FcmCad;
};

/// D / D^EB evaluated at the sample's height.
inline double normalized_rigidity(const RigiditySample& sample, const BeamSpec& reference) {
    return sample.rigidity / rigidity_eb(reference.with_height(sample.height));
}

struct GFit {
    double g = 0.0;            // mm
    double rms_residual = 0.0; // normalized-rigidity units
    Model model = Model::EulerBernoulli;
    bool degenerate = false;   // every sample at or below the classical prediction
};

/// Least squares in g^2 on B_i / D^EB(h_i) - 1 = 12 g^2 / h_i^2, clamped at
/// g^2 >= 0. B_i is the sample rigidity for EB; for Timoshenko it is the
/// bending part left after removing the shear compliance L / (4 G* A).
inline GFit fit_g(const std::vector<RigiditySample>& samples, const BeamSpec& reference, Model model) {
    if (samples.empty()) throw std::invalid_argument("fit_g: need at least one sample");
    double num = 0.0, den = 0.0;
    std::vector<double> a(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!(s.height > 0.0 && s.rigidity > 0.0)) throw std::invalid_argument("fit_g: samples must be positive");
        const BeamSpec b = reference.with_height(s.height);
        double bending = s.rigidity;
        if (model == Model::Timoshenko) {
            const double c = 1.0 / s.rigidity - b.length / (4.0 * b.effective_G * b.area());
            if (!(c > 0.0)) {
                throw std::invalid_argument("fit_g: sample stiffer than the Timoshenko shear compliance allows");
            }
            bending = 1.0 / c;
        }
        a[i] = 12.0 / (s.height * s.height);
        const double y = bending / rigidity_eb(b) - 1.0;
        num += a[i] * y;
        den += a[i] * a[i];
    }
    GFit fit;
    fit.model = model;
    double g2 = num / den;
    if (g2 < 0.0) {
        g2 = 0.0;
        fit.degenerate = true;
    }
    fit.g = std::sqrt(g2);
    double ss = 0.0;
    for (const auto& s : samples) {
        const BeamSpec b = reference.with_height(s.height);
        const double r = (rigidity_gradient(GradientBeamSpec(b, fit.g), model) - s.rigidity) / rigidity_eb(b);
        ss += r * r;
    }
    fit.rms_residual = std::sqrt(ss / double(samples.size()));
    return fit;
}

// CSV: height_mm,rigidity_N_per_mm,source

inline std::string format_sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.11e", v);
    return buf;
}

inline void write_samples_csv(const std::vector<RigiditySample>& samples, std::ostream& out) {
    out << "height_mm,rigidity_N_per_mm,source\n";
    for (const auto& s : samples) out << format_sci(s.height) << ',' << format_sci(s.rigidity) << ',' << to_string(s.source) << '\n';
}

inline std::vector<RigiditySample> read_samples_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty rigidity CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "height_mm,rigidity_N_per_mm,source") {
        throw FormatError("bad CSV header: expected 'height_mm,rigidity_N_per_mm,source'");
    }
    std::vector<RigiditySample> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string h, d, src;
        if (!std::getline(ss, h, ',') || !std::getline(ss, d, ',') || !std::getline(ss, src)) {
            throw FormatError("line " + std::to_string(lineno) + ": expected three columns");
        }
        RigiditySample s;
        try {
            std::size_t pos = 0;
            s.height = std::stod(h, &pos);
            if (pos != h.size()) throw std::invalid_argument(h);
            s.rigidity = std::stod(d, &pos);
            if (pos != d.size()) throw std::invalid_argument(d);
        } catch (const std::logic_error&) {
            throw FormatError("line " + std::to_string(lineno) + ": invalid number");
        }
        if (!(s.height > 0.0 && s.rigidity > 0.0)) {
            throw FormatError("line " + std::to_string(lineno) + ": height and rigidity must be > 0");
        }
        s.source = parse_source(src);
        out.push_back(s);
    }
    return out;
}

inline std::string format_fit(const GFit& fit) {
    std::string s;
    s += "g_mm=" + format_sci(fit.g) + "\n";
    s += "rms_residual=" + format_sci(fit.rms_residual) + "\n";
    s += "model=" + to_string(fit.model) + "\n";
    if (fit.degenerate) s += "warning=all samples at or below the classical prediction; g clamped to 0\n";
    return s;
}

} // namespace fcmlat::beams
