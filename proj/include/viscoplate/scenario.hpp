#pragma once

// Scenario files, end-to-end runs with verdicts, refinement studies and parameter sweeps.
//
// Config format: flat `key = value` lines grouped under [section] headers, '#' starts a comment.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "viscoplate/diagnostics.hpp"
#include "viscoplate/dynamics.hpp"
#include "viscoplate/error.hpp"
#include "viscoplate/kernels.hpp"
#include "viscoplate/numerics.hpp"
#include "viscoplate/spectral.hpp"

namespace viscoplate {

struct Scenario {
    std::string name = "scenario";
    // [domain]
    int spatial_dim = 1;
    int n = 8;
    double L = 1.0;
    int quad_order = 0; // 0: default_quad_order(n)
    // [time]
    double dt = 1e-3;
    double T = 1.0;
    // [physics]
    double rho = 0.0;
    double k = 0.0;
    double sigma = 1e-8;
    std::string kernel = "none";
    std::string damping = "none";
    std::string xi = "auto";
    std::string modulus = "auto";
    // [initial]
    std::string u0 = "mode(1,0.1)";
    std::string v0 = "zero";
    bool scale_to_well = false;
    // [diagnostics]
    int stride = 1;
    std::string envelope = "auto";
    double eps0 = kDefaultEps0;
    double eps1 = 1.0;
    double t0 = 0.0;
    std::optional<double> t1; // default T/4
    double c1 = 1.0;
    double delta = 0.5;
    double lyapunov_eps = 0.1;
    std::optional<double> well_a; // default: midpoint of the admissible window
    double newton_tol = 1e-10;
    // [output]
    std::string out = "out";

    bool operator==(const Scenario&) const = default;

    [[nodiscard]] int resolved_quad_order() const { return quad_order > 0 ? quad_order : default_quad_order(n); }
    [[nodiscard]] double resolved_t1() const { return t1.value_or(0.25 * T); }
};

/// Every problem found in a config, each prefixed with its line or key.
class ConfigError : public InputError {
public:
    explicit ConfigError(std::vector<std::string> issues)
        : InputError(join(issues)), issues_(std::move(issues)) {}
    [[nodiscard]] const std::vector<std::string>& issues() const { return issues_; }

private:
    static std::string join(const std::vector<std::string>& xs) {
        std::string out;
        for (const auto& x : xs) {
            if (!out.empty()) out += "\n";
            out += x;
        }
        return out;
    }
    std::vector<std::string> issues_;
};

namespace detail {

struct KeySpec {
    std::string_view section;
    std::string_view key;
};

inline constexpr std::array kScenarioKeys = {
    KeySpec{"scenario", "name"},
    KeySpec{"domain", "dim"},          KeySpec{"domain", "n"},
    KeySpec{"domain", "L"},            KeySpec{"domain", "quad_order"},
    KeySpec{"time", "dt"},             KeySpec{"time", "T"},
    KeySpec{"physics", "rho"},         KeySpec{"physics", "k"},
    KeySpec{"physics", "sigma"},       KeySpec{"physics", "kernel"},
    KeySpec{"physics", "damping"},     KeySpec{"physics", "xi"},
    KeySpec{"physics", "modulus"},
    KeySpec{"initial", "u0"},          KeySpec{"initial", "v0"},
    KeySpec{"initial", "scale_to_well"},
    KeySpec{"diagnostics", "stride"},  KeySpec{"diagnostics", "envelope"},
    KeySpec{"diagnostics", "eps0"},    KeySpec{"diagnostics", "eps1"},
    KeySpec{"diagnostics", "t0"},      KeySpec{"diagnostics", "t1"},
    KeySpec{"diagnostics", "c1"},      KeySpec{"diagnostics", "delta"},
    KeySpec{"diagnostics", "lyapunov_eps"},
    KeySpec{"diagnostics", "well_a"},  KeySpec{"diagnostics", "newton_tol"},
    KeySpec{"output", "dir"},
};

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline double to_double(std::string_view s) {
    s = trim(s);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw InputError("expected a number, got '" + std::string(s) + "'");
    return v;
}

inline int to_int(std::string_view s) {
    s = trim(s);
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw InputError("expected an integer, got '" + std::string(s) + "'");
    return v;
}

inline bool to_bool(std::string_view s) {
    s = trim(s);
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    throw InputError("expected true/false, got '" + std::string(s) + "'");
}

inline std::optional<double> to_optional_double(std::string_view s) {
    if (trim(s) == "auto") return std::nullopt;
    return to_double(s);
}

inline std::string num17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Splits on `sep` outside parentheses.
inline std::vector<std::string> split_top_level(std::string_view s, char sep) {
    std::vector<std::string> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '(') ++depth;
        else if (s[i] == ')') --depth;
        else if (s[i] == sep && depth == 0) {
            out.emplace_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    out.emplace_back(trim(s.substr(start)));
    return out;
}

inline const KeySpec* find_key(std::string_view name) {
    // accepts "key" or "section.key"
    const auto dot = name.find('.');
    for (const auto& spec : kScenarioKeys) {
        if (dot == std::string_view::npos) {
            if (spec.key == name) return &spec;
        } else if (spec.section == name.substr(0, dot) && spec.key == name.substr(dot + 1)) {
            return &spec;
        }
    }
    return nullptr;
}

/// Rewrites one parameter of a kernel preset: exp(b0,a), power(b0,q).
inline std::string set_kernel_param(const std::string& kernel, std::string_view param, double value) {
    auto call = parse_preset_call(kernel);
    std::size_t idx = 0;
    if (param == "b0") idx = 0;
    else if ((call.name == "exp" && param == "a") || (call.name == "power" && param == "q")) idx = 1;
    else throw InputError("kernel '" + kernel + "' has no parameter '" + std::string(param) + "'");
    if (call.args.size() != 2) throw InputError("kernel '" + kernel + "' has no parameters");
    call.args[idx] = value;
    return call.name + "(" + num17(call.args[0]) + "," + num17(call.args[1]) + ")";
}

} // namespace detail

/// Sets one key ("key", "section.key" or "kernel.b0|a|q") from its textual value.
inline void apply_setting(Scenario& sc, std::string_view name, std::string_view raw) {
    using namespace detail;
    const std::string value(trim(raw));
    if (name.starts_with("kernel.")) {
        sc.kernel = set_kernel_param(sc.kernel, name.substr(7), to_double(value));
        return;
    }
    const KeySpec* spec = find_key(name);
    if (!spec) throw InputError("unknown key '" + std::string(name) + "'");
    const auto key = spec->key;
    if (key == "name") sc.name = value;
    else if (key == "dim") sc.spatial_dim = to_int(value);
    else if (key == "n") sc.n = to_int(value);
    else if (key == "L") sc.L = to_double(value);
    else if (key == "quad_order") sc.quad_order = value == "auto" ? 0 : to_int(value);
    else if (key == "dt") sc.dt = to_double(value);
    else if (key == "T") sc.T = to_double(value);
    else if (key == "rho") sc.rho = to_double(value);
    else if (key == "k") sc.k = to_double(value);
    else if (key == "sigma") sc.sigma = to_double(value);
    else if (key == "kernel") sc.kernel = value;
    else if (key == "damping") sc.damping = value;
    else if (key == "xi") sc.xi = value;
    else if (key == "modulus") sc.modulus = value;
    else if (key == "u0") sc.u0 = value;
    else if (key == "v0") sc.v0 = value;
    else if (key == "scale_to_well") sc.scale_to_well = to_bool(value);
    else if (key == "stride") sc.stride = to_int(value);
    else if (key == "envelope") sc.envelope = value;
    else if (key == "eps0") sc.eps0 = to_double(value);
    else if (key == "eps1") sc.eps1 = to_double(value);
    else if (key == "t0") sc.t0 = to_double(value);
    else if (key == "t1") sc.t1 = to_optional_double(value);
    else if (key == "c1") sc.c1 = to_double(value);
    else if (key == "delta") sc.delta = to_double(value);
    else if (key == "lyapunov_eps") sc.lyapunov_eps = to_double(value);
    else if (key == "well_a") sc.well_a = to_optional_double(value);
    else if (key == "newton_tol") sc.newton_tol = to_double(value);
    else if (key == "dir") sc.out = value;
}

// ---------------------------------------------------------------------------------------------
// Initial data
// ---------------------------------------------------------------------------------------------

/// "zero", sums of "mode(j,c)" (flat 1-based index) or "mode(i,j,c)" (2D), or "table(path)" with
/// lines "x,u" (1D, projected after linear interpolation).
inline FieldCoeffs initial_coeffs(std::string_view spec, const Basis& basis, const GramSet& grams) {
    const auto m = basis.dim();
    FieldCoeffs g = FieldCoeffs::Zero(m);
    for (const auto& term : detail::split_top_level(spec, '+')) {
        if (term.empty()) throw InputError("empty term in initial data '" + std::string(spec) + "'");
        if (term.starts_with("table(")) {
            if (basis.spatial_dim != 1) throw InputError("tabulated initial data is 1D only");
            if (term.back() != ')') throw InputError("malformed '" + term + "'");
            const std::string path(detail::trim(std::string_view(term).substr(6, term.size() - 7)));
            std::ifstream in(path);
            if (!in) throw InputError("cannot open initial-data table '" + path + "'");
            std::vector<double> xs, us;
            std::string line;
            while (std::getline(in, line)) {
                const auto body = detail::trim(line.substr(0, line.find('#')));
                if (body.empty()) continue;
                const auto parts = detail::split_top_level(body, ',');
                if (parts.size() != 2) throw InputError("table line '" + line + "' is not 'x,u'");
                xs.push_back(detail::to_double(parts[0]));
                us.push_back(detail::to_double(parts[1]));
            }
            if (xs.size() < 2) throw InputError("initial-data table needs at least two rows");
            for (std::size_t i = 1; i < xs.size(); ++i)
                if (!(xs[i] > xs[i - 1])) throw InputError("initial-data table x must increase");
            g += project_initial(
                [&](double x, double) { return numerics::interp_linear(xs, us, x); }, basis, grams);
            continue;
        }
        const auto call = parse_preset_call(term);
        if (call.name == "zero" && call.args.empty()) continue;
        if (call.name != "mode") throw InputError("unknown initial-data term '" + term + "'");
        auto index_of = [&](double x) {
            if (x != std::floor(x) || x < 1.0) throw InputError("mode index must be a positive integer");
            return static_cast<Eigen::Index>(x) - 1;
        };
        Eigen::Index j = 0;
        double c = 0.0;
        if (call.args.size() == 2) {
            j = index_of(call.args[0]);
            c = call.args[1];
        } else if (call.args.size() == 3 && basis.spatial_dim == 2) {
            const auto ix = index_of(call.args[0]), iy = index_of(call.args[1]);
            if (ix >= basis.modes_per_axis || iy >= basis.modes_per_axis)
                throw InputError("mode index beyond the basis in '" + term + "'");
            j = ix * basis.modes_per_axis + iy;
            c = call.args[2];
        } else {
            throw InputError("mode term '" + term + "' needs (j,c) or, in 2D, (i,j,c)");
        }
        if (j >= m) throw InputError("mode index beyond the basis in '" + term + "'");
        g(j) += c;
    }
    return g;
}

// ---------------------------------------------------------------------------------------------
// Parsing, validation, effective config
// ---------------------------------------------------------------------------------------------

/// Semantic problems with a scenario; empty when valid.
inline std::vector<std::string> validate_scenario(const Scenario& sc) {
    std::vector<std::string> issues;
    auto need = [&](bool ok, std::string what) {
        if (!ok) issues.push_back(std::move(what));
    };
    need(sc.spatial_dim == 1 || sc.spatial_dim == 2, "dim: must be 1 or 2");
    need(sc.n >= 1, "n: must be >= 1");
    need(sc.L > 0.0, "L: must be > 0");
    need(sc.quad_order == 0 || sc.quad_order >= 2 * sc.n + 4, "quad_order: must be >= 2n+4 or auto");
    need(sc.dt > 0.0, "dt: must be > 0");
    need(sc.T >= 0.0, "T: must be >= 0");
    need(sc.rho >= 0.0, "rho: must be >= 0");
    need(sc.k >= 0.0, "k: must be >= 0");
    need(sc.sigma >= 0.0, "sigma: must be >= 0");
    need(sc.sigma > 0.0 || sc.rho == 0.0 || sc.rho >= 1.0, "sigma: 0 is only allowed for rho = 0 or rho >= 1");
    need(sc.stride >= 1, "stride: must be >= 1");
    need(sc.eps0 > 0.0 && sc.eps0 < 1.0, "eps0: must lie in (0,1)");
    need(sc.eps1 > 0.0, "eps1: must be > 0");
    need(sc.t0 >= 0.0, "t0: must be >= 0");
    need(!sc.t1 || *sc.t1 >= 0.0, "t1: must be >= 0");
    need(sc.c1 > 0.0, "c1: must be > 0");
    need(sc.delta > 0.0 && sc.delta < 1.0, "delta: must lie in (0,1)");
    need(sc.lyapunov_eps > 0.0, "lyapunov_eps: must be > 0");
    need(!sc.well_a || *sc.well_a > 0.0, "well_a: must be > 0");
    need(sc.newton_tol > 0.0, "newton_tol: must be > 0");
    need(!sc.out.empty(), "dir: must not be empty");
    auto try_parse = [&](const char* key, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            issues.push_back(std::string(key) + ": " + e.what());
        }
    };
    std::optional<RelaxationKernel> kernel;
    try_parse("kernel", [&] { kernel = parse_kernel_spec(sc.kernel); });
    try_parse("damping", [&] { (void)parse_damping_spec(sc.damping); });
    if (kernel && !kernel->is_zero()) {
        try_parse("xi", [&] { (void)parse_xi_spec(sc.xi, *kernel); });
        try_parse("modulus", [&] { (void)parse_modulus_spec(sc.modulus, *kernel); });
    }
    const std::array<std::string_view, 5> envelopes{"auto", "none", "linear-B", "nonlinear-B",
                                                    "nonlinear-both"};
    need(std::find(envelopes.begin(), envelopes.end(), sc.envelope) != envelopes.end(),
         "envelope: must be auto, none, linear-B, nonlinear-B or nonlinear-both");
    for (const auto* key : {"u0", "v0"}) {
        const std::string& spec = std::string_view(key) == "u0" ? sc.u0 : sc.v0;
        try_parse(key, [&] {
            for (const auto& term : detail::split_top_level(spec, '+')) {
                if (term.starts_with("table(")) continue;
                const auto call = parse_preset_call(term);
                if (!(call.name == "zero" || call.name == "mode"))
                    throw InputError("unknown initial-data term '" + term + "'");
            }
        });
    }
    return issues;
}

/// Strict parse of config text. Unknown sections/keys, duplicates and malformed lines are all
/// reported together with their line numbers, followed by semantic issues.
inline Scenario parse_scenario_text(std::string_view text) {
    Scenario sc;
    std::vector<std::string> issues;
    std::string section;
    std::map<std::string, int> seen;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        const auto eol = text.find('\n', pos);
        auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++lineno;
        const auto hash = line.find('#');
        line = detail::trim(line.substr(0, hash));
        if (line.empty()) continue;
        const auto where = "line " + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') {
                issues.push_back(where + "malformed section header");
                continue;
            }
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            const bool known = std::any_of(detail::kScenarioKeys.begin(), detail::kScenarioKeys.end(),
                                           [&](const auto& k) { return k.section == section; });
            if (!known) issues.push_back(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            issues.push_back(where + "expected 'key = value'");
            continue;
        }
        const std::string key(detail::trim(line.substr(0, eq)));
        const auto value = line.substr(eq + 1);
        if (section.empty()) {
            issues.push_back(where + "key '" + key + "' appears before any [section]");
            continue;
        }
        const auto* spec = detail::find_key(section + "." + key);
        if (!spec) {
            issues.push_back(where + "unknown key '" + key + "' in section [" + section + "]");
            continue;
        }
        const auto full = section + "." + key;
        if (auto it = seen.find(full); it != seen.end()) {
            issues.push_back(where + "duplicate key '" + key + "' (first on line " +
                             std::to_string(it->second) + ")");
            continue;
        }
        seen[full] = lineno;
        try {
            apply_setting(sc, full, value);
        } catch (const std::exception& e) {
            issues.push_back(where + key + ": " + e.what());
        }
    }
    if (issues.empty()) issues = validate_scenario(sc);
    if (!issues.empty()) throw ConfigError(std::move(issues));
    return sc;
}

inline Scenario parse_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open scenario file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario_text(ss.str());
}

/// Complete config with every key spelled out; keys still at their default are marked.
inline std::string effective_config(const Scenario& sc) {
    const Scenario def;
    using detail::num17;
    auto opt = [](const std::optional<double>& x) { return x ? num17(*x) : std::string("auto"); };
    auto qo = [](int q) { return q > 0 ? std::to_string(q) : std::string("auto"); };
    std::ostringstream os;
    auto put = [&](const char* key, const std::string& v, bool is_default) {
        os << key << " = " << v;
        if (is_default) os << "  # default";
        os << "\n";
    };
    os << "# effective configuration\n";
    os << "[scenario]\n";
    put("name", sc.name, sc.name == def.name);
    os << "\n[domain]\n";
    put("dim", std::to_string(sc.spatial_dim), sc.spatial_dim == def.spatial_dim);
    put("n", std::to_string(sc.n), sc.n == def.n);
    put("L", num17(sc.L), sc.L == def.L);
    put("quad_order", qo(sc.quad_order), sc.quad_order == def.quad_order);
    os << "\n[time]\n";
    put("dt", num17(sc.dt), sc.dt == def.dt);
    put("T", num17(sc.T), sc.T == def.T);
    os << "\n[physics]\n";
    put("rho", num17(sc.rho), sc.rho == def.rho);
    put("k", num17(sc.k), sc.k == def.k);
    put("sigma", num17(sc.sigma), sc.sigma == def.sigma);
    put("kernel", sc.kernel, sc.kernel == def.kernel);
    put("damping", sc.damping, sc.damping == def.damping);
    put("xi", sc.xi, sc.xi == def.xi);
    put("modulus", sc.modulus, sc.modulus == def.modulus);
    os << "\n[initial]\n";
    put("u0", sc.u0, sc.u0 == def.u0);
    put("v0", sc.v0, sc.v0 == def.v0);
    put("scale_to_well", sc.scale_to_well ? "true" : "false", sc.scale_to_well == def.scale_to_well);
    os << "\n[diagnostics]\n";
    put("stride", std::to_string(sc.stride), sc.stride == def.stride);
    put("envelope", sc.envelope, sc.envelope == def.envelope);
    put("eps0", num17(sc.eps0), sc.eps0 == def.eps0);
    put("eps1", num17(sc.eps1), sc.eps1 == def.eps1);
    put("t0", num17(sc.t0), sc.t0 == def.t0);
    put("t1", opt(sc.t1), sc.t1 == def.t1);
    put("c1", num17(sc.c1), sc.c1 == def.c1);
    put("delta", num17(sc.delta), sc.delta == def.delta);
    put("lyapunov_eps", num17(sc.lyapunov_eps), sc.lyapunov_eps == def.lyapunov_eps);
    put("well_a", opt(sc.well_a), sc.well_a == def.well_a);
    put("newton_tol", num17(sc.newton_tol), sc.newton_tol == def.newton_tol);
    os << "\n[output]\n";
    put("dir", sc.out, sc.out == def.out);
    return os.str();
}

// ---------------------------------------------------------------------------------------------
// Resolution into model objects
// ---------------------------------------------------------------------------------------------

struct ResolvedScenario {
    Scenario sc;
    std::shared_ptr<const Basis> basis;
    std::shared_ptr<const GramSet> grams;
    PhysicalParams params;
    std::optional<XiWeight> xi;
    std::optional<ConvexModulus> modulus;
    FieldCoeffs g0, v0;
    double cp = 0.0;
    double l = 1.0; // 1 when there is no memory
};

inline ResolvedScenario resolve(const Scenario& sc) {
    if (auto issues = validate_scenario(sc); !issues.empty()) throw ConfigError(std::move(issues));
    ResolvedScenario r;
    r.sc = sc;
    auto basis = std::make_shared<Basis>(build_basis(sc.spatial_dim, sc.n, sc.L, sc.resolved_quad_order()));
    auto grams = std::make_shared<GramSet>(assemble_grams(*basis));
    r.basis = basis;
    r.grams = grams;
    r.params.rho = sc.rho;
    r.params.k = sc.k;
    r.params.sigma = sc.sigma;
    r.params.kernel = parse_kernel_spec(sc.kernel);
    r.params.damping = parse_damping_spec(sc.damping);
    if (!r.params.kernel.is_zero()) {
        r.xi = parse_xi_spec(sc.xi, r.params.kernel);
        r.modulus = parse_modulus_spec(sc.modulus, r.params.kernel);
        r.l = r.params.kernel.residual_stiffness();
    }
    r.g0 = initial_coeffs(sc.u0, *basis, *grams);
    r.v0 = initial_coeffs(sc.v0, *basis, *grams);
    r.cp = estimate_cp(*grams);
    return r;
}

// ---------------------------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------------------------

enum class Verdict { pass, fail, not_applicable };

inline std::string to_string(Verdict v) {
    switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::not_applicable: return "n/a";
    }
    return "?";
}

struct Check {
    std::string name;
    Verdict verdict = Verdict::not_applicable;
    std::string detail;
};

struct RefinementLevel {
    double dt = 0.0;
    double max_rate_residual = 0.0;
};

inline constexpr double kMonotoneTol = 1e-10;
inline constexpr double kLogSobolevTol = 1e-8;
inline constexpr double kMemoryCsTol = 1e-10;
inline constexpr double kOvershootTol = 1e-6;
inline constexpr double kOrderTol = 0.1;

struct RunReport {
    std::string name;
    std::vector<Check> checks;
    double l = 1.0;
    double cp = 0.0;
    double k0 = 0.0;
    double m2_condition = 0.0;
    std::optional<WellConstants> well;
    std::optional<double> well_scale;
    WellReport well_report;
    std::size_t steps = 0;
    bool simulated = false;
    bool diverged = false;
    std::string failure;
    double E0 = 0.0;
    double E_final = 0.0;
    double max_energy_increase = 0.0;
    double max_rate_residual = 0.0;
    double max_dissipation_rate = 0.0; // should be <= 0
    double min_log_sobolev_gap = 0.0;
    double min_cs_b_gap = 0.0;
    double min_cs_db_gap = 0.0;
    double max_tail_ratio = 0.0; // max tail_lhs / tail_rhs over samples with eta < 1
    std::size_t tail_excluded = 0;
    LyapunovReport lyapunov;
    std::string envelope = "none";
    std::optional<FitReport> fit;
    std::vector<RefinementLevel> refinement;
    std::optional<double> refinement_slope;
    double wall_clock_seconds = 0.0;

    [[nodiscard]] const Check* find(std::string_view check) const {
        for (const auto& c : checks)
            if (c.name == check) return &c;
        return nullptr;
    }
    [[nodiscard]] int exit_code() const {
        if (diverged) return 2;
        for (const auto& c : checks)
            if (c.verdict == Verdict::fail) return 1;
        return 0;
    }
};

struct RunResult {
    RunReport report;
    std::vector<DiagnosticRecord> records;
    std::vector<double> rate_residual;
    std::vector<double> log_sobolev_gaps;
};

namespace detail {

inline std::vector<double> uniform_grid(double hi, std::size_t count) {
    std::vector<double> g(count);
    for (std::size_t i = 0; i < count; ++i) g[i] = hi * static_cast<double>(i) / static_cast<double>(count - 1);
    return g;
}

inline std::vector<double> symmetric_grid(double hi, std::size_t half) {
    std::vector<double> g(2 * half + 1);
    for (std::size_t i = 0; i <= 2 * half; ++i)
        g[i] = hi * (static_cast<double>(i) - static_cast<double>(half)) / static_cast<double>(half);
    g[half] = 0.0;
    return g;
}

inline Check from_validation(std::string name, const ValidationReport& rep) {
    Check c{std::move(name), rep.passed ? Verdict::pass : Verdict::fail, {}};
    for (const auto& v : rep.violations) c.detail += (c.detail.empty() ? "" : "; ") + v;
    return c;
}

inline std::string resolve_envelope_case(const ResolvedScenario& r) {
    if (r.sc.envelope != "auto") return r.sc.envelope;
    if (r.params.kernel.is_zero() || !r.modulus) return "none";
    if (r.modulus->is_linear()) return "linear-B";
    if (!r.params.damping.is_zero() && !r.params.damping.h1_is_linear()) return "nonlinear-both";
    return "nonlinear-B";
}

inline std::optional<DecayEnvelope> build_envelope(const ResolvedScenario& r, const std::string& kind) {
    if (kind == "none" || !r.xi || !r.modulus) return std::nullopt;
    const auto& sc = r.sc;
    if (kind == "linear-B") return envelope_linear_B(*r.xi, sc.eps0, 1.0, sc.t0);
    if (kind == "nonlinear-B")
        return envelope_nonlinear_B(*r.xi, sc.eps0, sc.eps1, 1.0, sc.c1, sc.t0, sc.resolved_t1(),
                                    *r.modulus);
    if (kind == "nonlinear-both")
        return envelope_nonlinear_both(*r.xi, sc.eps0, sc.eps1, 1.0, sc.t0, *r.modulus,
                                       r.params.damping.convexifier());
    return std::nullopt;
}

inline SimulationSetup make_setup(const ResolvedScenario& r, double scale) {
    SimulationSetup setup;
    setup.basis = r.basis;
    setup.grams = r.grams;
    setup.params = r.params;
    setup.dt = r.sc.dt;
    setup.T = r.sc.T;
    setup.g0 = scale * r.g0;
    setup.v0 = scale * r.v0;
    setup.newton_tol = r.sc.newton_tol;
    return setup;
}

inline std::vector<DiagnosticRecord> simulate(const ResolvedScenario& r, double scale,
                                              Trajectory* traj_out = nullptr) {
    const auto setup = make_setup(r, scale);
    std::optional<TailSettings> tail;
    if (r.modulus && r.xi) tail = TailSettings{*r.modulus, *r.xi, r.sc.resolved_t1(), r.sc.delta};
    DiagnosticsMonitor monitor(r.params, r.basis, r.grams, r.sc.dt, tail);
    auto traj = run(setup, [&](const PlateState& s, const HistoryBuffer& h) { monitor(s, h); });
    if (traj_out) *traj_out = std::move(traj);
    return monitor.take();
}

} // namespace detail

/// Hypothesis checks, simulation, diagnostics and decay fit for one scenario (no file output).
inline RunResult execute(const Scenario& sc) {
    const auto start = std::chrono::steady_clock::now();
    RunResult out;
    RunReport& rep = out.report;
    rep.name = sc.name;
    const auto r = resolve(sc);
    rep.cp = r.cp;
    rep.l = r.l;
    rep.m2_condition = r.grams->m2_condition;
    rep.k0 = 2.0 * std::numbers::pi * r.l * std::exp(3.0) / r.cp;

    // (H1)-(H4)
    const auto grid = detail::uniform_grid(std::max(sc.T, 1.0), 4001);
    bool hyp_ok = true;
    auto add = [&](Check c) {
        if (c.verdict == Verdict::fail) hyp_ok = false;
        rep.checks.push_back(std::move(c));
    };
    if (r.params.kernel.is_zero()) {
        add({"H1", Verdict::not_applicable, "no memory kernel"});
        add({"H2", Verdict::not_applicable, "no memory kernel"});
    } else {
        add(detail::from_validation("H1", validate_h1(r.params.kernel, grid)));
        try {
            add(detail::from_validation("H2", validate_h2(r.params.kernel, *r.modulus, *r.xi, grid)));
        } catch (const DomainError& e) {
            add({"H2", Verdict::fail, e.what()});
        }
    }
    if (r.params.damping.is_zero()) {
        add({"H3", Verdict::not_applicable, "no damping"});
    } else {
        const double smax = std::max(2.0, 4.0 * r.params.damping.eps());
        add(detail::from_validation("H3", validate_h3(r.params.damping, detail::symmetric_grid(smax, 1000))));
    }
    add({"H4", sc.k < rep.k0 ? Verdict::pass : Verdict::fail,
         "k=" + detail::num17(sc.k) + " k0=" + detail::num17(rep.k0)});

    const char* later[] = {"well",           "monotone", "log_sobolev", "memory_cs",
                           "tail_bound",     "dissipation_sign", "lyapunov", "decay_fit"};
    if (!hyp_ok) {
        for (const char* name : later) rep.checks.push_back({name, Verdict::not_applicable, "not run: hypothesis failed"});
        rep.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return out;
    }

    // potential-well constants and optional rescaling of the data into the well
    double scale = 1.0;
    if (sc.k > 0.0) {
        rep.well = well_constants(sc.k, r.l, r.cp, sc.well_a);
        if (sc.scale_to_well) {
            rep.well_scale = well_scaling_search(r.g0, r.v0, r.params, *r.grams, *r.basis, *rep.well);
            if (rep.well_scale) scale = *rep.well_scale;
        }
    }

    Trajectory traj;
    out.records = detail::simulate(r, scale, &traj);
    rep.simulated = true;
    rep.diverged = traj.diverged;
    rep.failure = traj.failure;
    rep.steps = out.records.empty() ? 0 : out.records.size() - 1;
    const auto& recs = out.records;
    rep.E0 = recs.front().e.E;
    rep.E_final = recs.back().e.E;

    // well
    if (rep.well) {
        rep.well_report = check_well(recs, *rep.well, sc.rho);
        if (!rep.well_report.certified)
            rep.checks.push_back({"well", Verdict::not_applicable, "not certified: " + rep.well_report.reason});
        else
            rep.checks.push_back({"well", rep.well_report.holds ? Verdict::pass : Verdict::fail,
                                  rep.well_report.holds ? "" : rep.well_report.violated});
    } else {
        rep.checks.push_back({"well", Verdict::not_applicable, "k = 0"});
    }

    // energy monotonicity and the dissipation identity
    const auto mono = check_monotone(recs, kMonotoneTol);
    rep.max_energy_increase = recs.size() > 1 ? mono.max_increase : 0.0;
    rep.checks.push_back({"monotone", mono.holds ? Verdict::pass : Verdict::fail,
                          "max increase " + detail::num17(rep.max_energy_increase)});
    out.rate_residual = energy_rate_residual(recs, sc.dt);
    rep.max_rate_residual = max_abs_finite(out.rate_residual);
    rep.max_dissipation_rate = -std::numeric_limits<double>::infinity();
    for (const auto& rec : recs) rep.max_dissipation_rate = std::max(rep.max_dissipation_rate, dissipation_rate(rec));
    rep.checks.push_back({"dissipation_sign", rep.max_dissipation_rate <= 0.0 ? Verdict::pass : Verdict::fail,
                          "max " + detail::num17(rep.max_dissipation_rate)});

    // logarithmic Sobolev gap on every snapshot (a = well a when defined, else 1)
    const double a_ls = rep.well ? rep.well->a : 1.0;
    rep.min_log_sobolev_gap = std::numeric_limits<double>::infinity();
    out.log_sobolev_gaps.reserve(traj.states.size());
    for (const auto& s : traj.states) {
        const double gap = log_sobolev_gap(s.g, a_ls, r.cp, *r.basis, *r.grams);
        out.log_sobolev_gaps.push_back(gap);
        rep.min_log_sobolev_gap = std::min(rep.min_log_sobolev_gap, gap);
    }
    rep.checks.push_back({"log_sobolev", rep.min_log_sobolev_gap >= -kLogSobolevTol ? Verdict::pass : Verdict::fail,
                          "min gap " + detail::num17(rep.min_log_sobolev_gap)});

    // memory estimates
    if (r.params.kernel.is_zero()) {
        rep.checks.push_back({"memory_cs", Verdict::not_applicable, "no memory kernel"});
        rep.checks.push_back({"tail_bound", Verdict::not_applicable, "no memory kernel"});
    } else {
        rep.min_cs_b_gap = rep.min_cs_db_gap = std::numeric_limits<double>::infinity();
        std::size_t tail_count = 0;
        for (const auto& rec : recs) {
            rep.min_cs_b_gap = std::min(rep.min_cs_b_gap, rec.cs.b_gap);
            rep.min_cs_db_gap = std::min(rep.min_cs_db_gap, rec.cs.db_gap);
            if (!std::isfinite(rec.damp.tail_rhs) || !(rec.damp.tail_lhs > 0.0)) continue;
            if (rec.damp.tail_eta >= 1.0) {
                ++rep.tail_excluded;
                continue;
            }
            ++tail_count;
            rep.max_tail_ratio = std::max(rep.max_tail_ratio, rec.damp.tail_lhs / rec.damp.tail_rhs);
        }
        const bool cs_ok = rep.min_cs_b_gap >= -kMemoryCsTol && rep.min_cs_db_gap >= -kMemoryCsTol;
        rep.checks.push_back({"memory_cs", cs_ok ? Verdict::pass : Verdict::fail,
                              "min gaps " + detail::num17(rep.min_cs_b_gap) + ", " +
                                  detail::num17(rep.min_cs_db_gap)});
        const std::string excluded = std::to_string(rep.tail_excluded) + " sample(s) with eta >= 1 skipped";
        if (tail_count == 0)
            rep.checks.push_back({"tail_bound", Verdict::not_applicable, "no usable samples past t1; " + excluded});
        else
            rep.checks.push_back({"tail_bound", rep.max_tail_ratio <= 1.0 + 1e-12 ? Verdict::pass : Verdict::fail,
                                  "max lhs/rhs " + detail::num17(rep.max_tail_ratio) + "; " + excluded});
    }

    // Lyapunov functional
    rep.lyapunov = lyapunov_search(recs, sc.lyapunov_eps);
    if (rep.lyapunov.ratio_count == 0)
        rep.checks.push_back({"lyapunov", Verdict::not_applicable, "no samples with E > 1e-14"});
    else
        rep.checks.push_back({"lyapunov", rep.lyapunov.equivalent() ? Verdict::pass : Verdict::fail,
                              "N=" + detail::num17(rep.lyapunov.N) + " L/E in [" +
                                  detail::num17(rep.lyapunov.min_ratio) + ", " +
                                  detail::num17(rep.lyapunov.max_ratio) + "]"});

    // decay envelope: constant fitted and bound checked on the tail window [T/2, T]
    rep.envelope = detail::resolve_envelope_case(r);
    const auto env = detail::build_envelope(r, rep.envelope);
    if (!env) {
        rep.checks.push_back({"decay_fit", Verdict::not_applicable, "no envelope"});
    } else {
        std::vector<double> ts, es;
        ts.reserve(recs.size());
        es.reserve(recs.size());
        for (const auto& rec : recs) {
            ts.push_back(rec.e.t);
            es.push_back(rec.e.E);
        }
        FitWindows win{0.5 * sc.T, sc.T, 0.5 * sc.T, sc.T};
        rep.fit = fit_decay(ts, es, *env, win);
        if (!rep.fit->fitted)
            rep.checks.push_back({"decay_fit", Verdict::not_applicable, rep.fit->skipped_reason});
        else
            rep.checks.push_back({"decay_fit", rep.fit->overshoot <= kOvershootTol ? Verdict::pass : Verdict::fail,
                                  "overshoot " + detail::num17(rep.fit->overshoot)});
    }
    if (rep.diverged) rep.checks.push_back({"completed", Verdict::fail, rep.failure});
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

/// Max energy-rate residual at dt, dt/2, ..., dt/2^{levels-1} and the log-log slope against dt.
inline std::pair<std::vector<RefinementLevel>, double> refinement_study(const Scenario& sc, int levels) {
    if (levels < 2) throw InputError("refinement needs at least 2 levels");
    std::vector<RefinementLevel> out;
    Scenario cur = sc;
    for (int i = 0; i < levels; ++i) {
        const auto r = resolve(cur);
        const auto recs = detail::simulate(r, 1.0);
        out.push_back({cur.dt, max_abs_finite(energy_rate_residual(recs, cur.dt))});
        cur.dt *= 0.5;
    }
    std::vector<double> x, y;
    for (const auto& lv : out) {
        x.push_back(std::log(lv.dt));
        y.push_back(std::log(lv.max_rate_residual));
    }
    return {out, numerics::ls_slope(x, y)};
}

/// Attaches a refinement study to a report, with a verdict on the order 2 +- 0.1.
inline void add_refinement(RunReport& rep, const Scenario& sc, int levels) {
    auto [lv, slope] = refinement_study(sc, levels);
    rep.refinement = std::move(lv);
    rep.refinement_slope = slope;
    rep.checks.push_back({"rate_order", std::abs(slope - 2.0) <= kOrderTol ? Verdict::pass : Verdict::fail,
                          "slope " + detail::num17(slope)});
}

// ---------------------------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------------------------

inline constexpr std::string_view kTimeseriesHeader =
    "t,E,J,I,kin_rho,bend,bend_rate,mass,logterm,memory,psi1,psi2,L,G,M,dissipation,rate_residual";

inline void write_timeseries(std::ostream& os, const RunResult& res, int stride) {
    os << kTimeseriesHeader << "\n";
    const auto& lv = res.report.lyapunov;
    const double N = lv.N > 0.0 ? lv.N : 1.0;
    const double eps = lv.eps > 0.0 ? lv.eps : 0.1;
    for (std::size_t i = 0; i < res.records.size(); i += static_cast<std::size_t>(stride)) {
        const auto& r = res.records[i];
        const double rate = i < res.rate_residual.size() ? res.rate_residual[i]
                                                         : std::numeric_limits<double>::quiet_NaN();
        const double vals[] = {r.e.t,    r.e.E,         r.e.J,      r.e.I,
                               r.e.kin_rho, r.e.bend,   r.e.bend_rate, r.e.mass,
                               r.e.logterm, r.e.memory, r.psi1,     r.psi2,
                               N * r.e.E + eps * r.psi1 + r.psi2,   r.damp.G,
                               r.damp.M, r.damp.dissipation, rate};
        bool first = true;
        for (double v : vals) {
            if (!first) os << ',';
            first = false;
            os << detail::num17(v);
        }
        os << "\n";
    }
}

inline nlohmann::ordered_json report_json(const RunReport& rep) {
    using nlohmann::ordered_json;
    auto num = [](double x) -> ordered_json {
        if (std::isfinite(x)) return x;
        return nullptr;
    };
    ordered_json j;
    j["scenario"] = rep.name;
    j["exit_code"] = rep.exit_code();
    ordered_json checks = ordered_json::object();
    for (const auto& c : rep.checks) checks[c.name] = {{"verdict", to_string(c.verdict)}, {"detail", c.detail}};
    j["checks"] = checks;
    j["constants"] = {{"l", num(rep.l)}, {"c_p", num(rep.cp)}, {"k0", num(rep.k0)},
                      {"m2_condition", num(rep.m2_condition)}};
    if (rep.well) {
        const auto& w = *rep.well;
        j["well"] = {{"a", num(w.a)},
                     {"Q0", num(w.Q0)},
                     {"rho_bar", num(w.rho_bar)},
                     {"d", num(w.d)},
                     {"a_window", {num(w.a_lo), num(w.a_hi)}},
                     {"a_hi_alt", num(w.a_hi_alt)},
                     {"window_empty", w.window_empty},
                     {"d_nonpositive", w.d_nonpositive},
                     {"scale", rep.well_scale ? num(*rep.well_scale) : ordered_json(nullptr)},
                     {"certified", rep.well_report.certified},
                     {"reason", rep.well_report.reason},
                     {"holds", rep.well_report.holds},
                     {"first_violation_time", rep.well_report.first_violation_time
                                                  ? num(*rep.well_report.first_violation_time)
                                                  : ordered_json(nullptr)}};
    }
    j["run"] = {{"simulated", rep.simulated}, {"steps", rep.steps},   {"diverged", rep.diverged},
                {"failure", rep.failure},     {"E0", num(rep.E0)},    {"E_final", num(rep.E_final)}};
    j["energy"] = {{"max_increase", num(rep.max_energy_increase)},
                   {"max_rate_residual", num(rep.max_rate_residual)},
                   {"max_dissipation_rate", num(rep.max_dissipation_rate)},
                   {"min_log_sobolev_gap", num(rep.min_log_sobolev_gap)},
                   {"min_memory_cs_gap_b", num(rep.min_cs_b_gap)},
                   {"min_memory_cs_gap_db", num(rep.min_cs_db_gap)},
                   {"max_tail_ratio", num(rep.max_tail_ratio)},
                   {"tail_samples_eta_ge_1", rep.tail_excluded}};
    j["lyapunov"] = {{"N", num(rep.lyapunov.N)},
                     {"eps", num(rep.lyapunov.eps)},
                     {"samples", rep.lyapunov.ratio_count},
                     {"min_ratio", num(rep.lyapunov.min_ratio)},
                     {"max_ratio", num(rep.lyapunov.max_ratio)}};
    ordered_json fit = {{"case", rep.envelope}};
    if (rep.fit) {
        fit["fitted"] = rep.fit->fitted;
        fit["skipped_reason"] = rep.fit->skipped_reason;
        fit["fit_samples"] = rep.fit->fit_samples;
        fit["check_samples"] = rep.fit->check_samples;
        fit["c"] = num(rep.fit->c);
        fit["c_ls"] = num(rep.fit->c_ls);
        fit["overshoot"] = num(rep.fit->overshoot);
        fit["exponent"] = num(rep.fit->exponent);
    }
    j["decay_fit"] = fit;
    if (!rep.refinement.empty()) {
        ordered_json levels = ordered_json::array();
        for (const auto& lv : rep.refinement)
            levels.push_back({{"dt", num(lv.dt)}, {"max_rate_residual", num(lv.max_rate_residual)}});
        j["refinement"] = {{"levels", levels},
                           {"slope", rep.refinement_slope ? num(*rep.refinement_slope) : ordered_json(nullptr)}};
    }
    j["wall_clock_seconds"] = rep.wall_clock_seconds;
    return j;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Mat& m) {
    std::ofstream os(path);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << detail::num17(m(i, j));
        os << "\n";
    }
}

struct RunOptions {
    int refine = 0; // levels; 0 or 1 = none
    bool dump_grams = false;
    std::optional<int> stride;
    std::optional<std::string> out;
};

struct ScenarioOutcome {
    int exit_code = 2;
    std::optional<RunReport> report;
    std::string error;
    std::filesystem::path dir;
};

/// Full run with artifacts: effective.cfg, timeseries.csv, report.json (and Gram CSVs on request).
/// Exit code 0 when every applicable verdict passes, 1 when one fails, 2 on execution errors.
inline ScenarioOutcome run_scenario(Scenario sc, const RunOptions& opt = {}) {
    ScenarioOutcome outcome;
    if (opt.stride) sc.stride = *opt.stride;
    if (opt.out) sc.out = *opt.out;
    namespace fs = std::filesystem;
    outcome.dir = sc.out;
    try {
        fs::create_directories(outcome.dir);
        {
            std::ofstream cfg(outcome.dir / "effective.cfg");
            cfg << effective_config(sc);
        }
        auto res = execute(sc);
        if (opt.refine >= 2 && res.report.simulated && !res.report.diverged)
            add_refinement(res.report, sc, opt.refine);
        if (opt.dump_grams) {
            const auto r = resolve(sc);
            write_matrix_csv(outcome.dir / "M0.csv", r.grams->M0);
            write_matrix_csv(outcome.dir / "M1.csv", r.grams->M1);
            write_matrix_csv(outcome.dir / "M2.csv", r.grams->M2);
        }
        {
            std::ofstream ts(outcome.dir / "timeseries.csv");
            write_timeseries(ts, res, sc.stride);
        }
        {
            std::ofstream js(outcome.dir / "report.json");
            js << report_json(res.report).dump(2) << "\n";
        }
        outcome.exit_code = res.report.exit_code();
        outcome.report = std::move(res.report);
    } catch (const std::exception& e) {
        outcome.exit_code = 2;
        outcome.error = e.what();
        std::ofstream err(outcome.dir / "error.txt");
        err << e.what() << "\n";
    }
    return outcome;
}

// ---------------------------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------------------------

struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

/// "key=v1,v2,..." with commas inside parentheses kept (e.g. kernel=exp(0.5,1),exp(0.5,2)).
inline SweepAxis parse_axis(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw InputError("axis '" + std::string(text) + "' is not key=values");
    SweepAxis axis;
    axis.key = std::string(detail::trim(text.substr(0, eq)));
    axis.values = detail::split_top_level(text.substr(eq + 1), ',');
    for (const auto& v : axis.values)
        if (v.empty()) throw InputError("axis '" + axis.key + "' has an empty value");
    if (!axis.key.starts_with("kernel.") && !detail::find_key(axis.key))
        throw InputError("unknown axis key '" + axis.key + "'");
    return axis;
}

struct SweepCell {
    std::size_t index = 0;
    std::vector<std::string> values; // one per axis
    ScenarioOutcome outcome;
};

inline unsigned sweep_threads() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VISCOPLATE_THREADS")) {
        try {
            const int cap = std::stoi(env);
            if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
        } catch (const std::exception&) {
        }
    }
    return n;
}

/// Runs the Cartesian product of the axes on a bounded pool. Cell i writes to <out>/cell_<i>;
/// summary.csv in <out> has one row per cell in index order.
inline std::vector<SweepCell> sweep(const Scenario& tmpl, const std::vector<SweepAxis>& axes,
                                    const RunOptions& opt = {}, unsigned threads = 0) {
    namespace fs = std::filesystem;
    const fs::path root = opt.out ? fs::path(*opt.out) : fs::path(tmpl.out);
    std::size_t total = 1;
    for (const auto& ax : axes) total *= ax.values.size();
    std::vector<SweepCell> cells(total);
    std::vector<Scenario> scenarios(total, tmpl);
    std::vector<std::string> setup_errors(total);
    for (std::size_t i = 0; i < total; ++i) {
        cells[i].index = i;
        std::size_t rem = i;
        for (std::size_t a = axes.size(); a-- > 0;) {
            const auto& ax = axes[a];
            const auto& v = ax.values[rem % ax.values.size()];
            rem /= ax.values.size();
            cells[i].values.insert(cells[i].values.begin(), v);
            try {
                apply_setting(scenarios[i], ax.key, v);
            } catch (const std::exception& e) {
                setup_errors[i] += e.what();
            }
        }
        char name[32];
        std::snprintf(name, sizeof name, "cell_%03zu", i);
        scenarios[i].out = (root / name).string();
        scenarios[i].name = tmpl.name + "/" + name;
    }
    if (threads == 0) threads = sweep_threads();
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(total, 1)));
    std::atomic<std::size_t> next{0};
    RunOptions cell_opt = opt;
    cell_opt.out.reset();
    auto worker = [&] {
        for (std::size_t i = next++; i < total; i = next++) {
            if (!setup_errors[i].empty()) {
                cells[i].outcome.exit_code = 2;
                cells[i].outcome.error = setup_errors[i];
                cells[i].outcome.dir = scenarios[i].out;
                continue;
            }
            cells[i].outcome = run_scenario(scenarios[i], cell_opt);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    fs::create_directories(root);
    std::ofstream os(root / "summary.csv");
    os << "cell";
    for (const auto& ax : axes) os << "," << ax.key;
    os << ",exit_code,E0,E_final,decay_exponent,fit_c,overshoot,max_rate_residual\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& cell : cells) {
        os << cell.index;
        for (const auto& v : cell.values) os << ",\"" << v << "\"";
        const auto& rep = cell.outcome.report;
        const bool fit = rep && rep->fit && rep->fit->fitted;
        os << "," << cell.outcome.exit_code << "," << detail::num17(rep ? rep->E0 : nan) << ","
           << detail::num17(rep ? rep->E_final : nan) << ","
           << detail::num17(fit ? rep->fit->exponent : nan) << ","
           << detail::num17(fit ? rep->fit->c : nan) << ","
           << detail::num17(fit ? rep->fit->overshoot : nan) << ","
           << detail::num17(rep ? rep->max_rate_residual : nan) << "\n";
    }
    return cells;
}

} // namespace viscoplate
