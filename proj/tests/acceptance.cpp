// Acceptance run: one PASS/FAIL line per criterion. Exit status 1 if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "viscoplate/viscoplate.hpp"

using namespace viscoplate;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
    std::printf("%s %2d  %s: %s\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(double x, int digits = 6) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, x);
    return buf;
}

Scenario preset(const std::string& name) { return parse_scenario(fs::path(VISCOPLATE_CONFIGS) / (name + ".cfg")); }

const Check* find_check(const RunReport& rep, const std::string& name) {
    for (const auto& c : rep.checks)
        if (c.name == name) return &c;
    return nullptr;
}

bool hypotheses_pass(const RunReport& rep) {
    for (const char* h : {"H1", "H2", "H3", "H4"}) {
        const auto* c = find_check(rep, h);
        if (c && c->verdict == Verdict::fail) return false;
    }
    return rep.simulated && !rep.diverged;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Independent oracles -------------------------------------------------------------------------

// sup_{s>0} (s|ln s| - s^2)/s^{1-eps} on a dense log grid refined once around the best node.
double oracle_d(double eps) {
    auto f = [eps](double s) { return (s * std::abs(std::log(s)) - s * s) / std::pow(s, 1.0 - eps); };
    double best = -1.0, best_x = 0.0;
    const int N = 200000;
    for (int i = 0; i <= N; ++i) {
        const double x = -80.0 + 80.0 * i / N; // x = ln s in [-80, 0]
        const double v = f(std::exp(x));
        if (v > best) best = v, best_x = x;
    }
    const double h = 80.0 / N;
    for (int i = -2000; i <= 2000; ++i) best = std::max(best, f(std::exp(best_x + h * i / 1000.0)));
    return best;
}

long double oracle_beam_root(int n) {
    auto f = [](long double b) { return std::cos(b) * std::cosh(b) - 1.0L; };
    long double lo = (n + 0.25L) * std::numbers::pi_v<long double>, hi = (n + 0.75L) * std::numbers::pi_v<long double>;
    const bool lo_neg = f(lo) < 0;
    for (int i = 0; i < 200; ++i) {
        const long double mid = 0.5L * (lo + hi);
        ((f(mid) < 0) == lo_neg ? lo : hi) = mid;
    }
    return 0.5L * (lo + hi);
}

template <class F>
long double oracle_invert(F f, long double y) {
    long double lo = 0.0L, hi = 1.0L;
    while (f(hi) < y) hi *= 2.0L;
    for (int i = 0; i < 400; ++i) {
        const long double mid = 0.5L * (lo + hi);
        (f(mid) < y ? lo : hi) = mid;
    }
    return 0.5L * (lo + hi);
}

// Criteria --------------------------------------------------------------------------------------

void criterion_1() {
    const auto sc = preset("exp-linear");
    const auto t0 = std::chrono::steady_clock::now();
    const auto [levels, slope] = refinement_study(sc, 3);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string detail = "residuals";
    for (const auto& lv : levels) detail += " " + fmt(lv.max_rate_residual) + "@dt=" + fmt(lv.dt);
    detail += ", slope " + fmt(slope) + ", " + fmt(secs) + " s";
    report(1, std::abs(slope - 2.0) <= 0.1 && secs < 60.0, "dissipation identity rate order 2 +- 0.1", detail);
}

struct PresetRun {
    std::string name;
    Scenario sc;
    RunResult res;
};

void criterion_2(const std::vector<PresetRun>& runs) {
    int passing = 0;
    bool ok = true;
    std::map<std::string, bool> families;
    std::string detail;
    for (const auto& r : runs) {
        if (!hypotheses_pass(r.res.report) || r.sc.kernel == "none" || r.sc.damping == "none") continue;
        ++passing;
        const auto& recs = r.res.records;
        double worst = -INFINITY;
        for (std::size_t i = 1; i < recs.size(); ++i) worst = std::max(worst, recs[i].e.E - recs[i - 1].e.E);
        ok &= worst <= 1e-10;
        const std::string fam = parse_kernel_spec(r.sc.kernel).family() == KernelFamily::power ? "power" : "exp";
        const std::string damp = parse_damping_spec(r.sc.damping).form() == DampingForm::linear ? "linear" : "cubic";
        families[fam + "/" + damp] = true;
        detail += r.name + " " + fmt(worst) + "; ";
    }
    detail += std::to_string(passing) + " presets, " + std::to_string(families.size()) + " kernel/damping classes";
    report(2, ok && passing >= 6 && families.size() == 4, "energy monotone (increase <= 1e-10)", detail);
}

void criterion_3(const std::vector<PresetRun>& runs) {
    for (const auto& r : runs) {
        if (r.name != "conservative") continue;
        const auto& sc = r.sc;
        const bool setup = sc.kernel == "none" && sc.damping == "none" && sc.k == 0.0 && sc.dt == 1e-3 &&
                           sc.T >= 10 * 2 * std::numbers::pi - 1e-9;
        const double E0 = r.res.records.front().e.E;
        double drift = 0.0;
        for (const auto& rec : r.res.records) drift = std::max(drift, std::abs(rec.e.E - E0));
        report(3, setup && drift <= 1e-6 * E0, "conservative drift <= 1e-6 E(0) over 10 periods",
               "E0 " + fmt(E0) + ", max drift " + fmt(drift) + " (" + fmt(drift / E0) + " relative)");
        return;
    }
    report(3, false, "conservative drift", "preset missing");
}

void criterion_4(const std::vector<PresetRun>& runs) {
    for (const auto& r : runs) {
        if (r.name != "well") continue;
        const auto& rep = r.res.report;
        const auto& w = rep.well_report;
        const bool ok = rep.well && rep.well_scale && w.certified && w.holds && r.sc.T >= 10.0 &&
                        w.samples == r.res.records.size();
        std::string detail = "scale " + (rep.well_scale ? fmt(*rep.well_scale) : std::string("none"));
        if (rep.well)
            detail += ", rho_bar " + fmt(rep.well->rho_bar) + ", d " + fmt(rep.well->d) + ", E0 " + fmt(rep.E0);
        detail += ", samples " + std::to_string(w.samples) + (w.holds ? ", no violations" : ", violated: " + w.violated + w.reason);
        report(4, ok, "potential well invariance over T=10", detail);
        return;
    }
    report(4, false, "potential well", "preset missing");
}

void criterion_5(const std::vector<PresetRun>& runs) {
    double worst = INFINITY;
    std::size_t snapshots = 0;
    for (const auto& r : runs)
        for (double g : r.res.log_sobolev_gaps) {
            worst = std::min(worst, g);
            ++snapshots;
        }
    double worst_random = INFINITY;
    std::mt19937_64 rng(20261018);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ln_norm(std::log(1e-3), std::log(1e3));
    for (int dim : {1, 2}) {
        const int n = dim == 1 ? 8 : 3;
        const auto basis = build_basis(dim, n, 1.0, default_quad_order(n));
        const auto grams = assemble_grams(basis);
        const double cp = estimate_cp(grams);
        for (int i = 0; i < 100; ++i) {
            Vec g(basis.dim());
            for (auto& x : g) x = nd(rng);
            g *= std::exp(ln_norm(rng)) / std::sqrt(g.dot(grams.M0 * g));
            worst_random = std::min(worst_random, log_sobolev_gap(g, 1.0, cp, basis, grams));
        }
    }
    report(5, worst >= -1e-8 && worst_random >= -1e-8, "log-Sobolev gap >= -1e-8",
           std::to_string(snapshots) + " snapshots min " + fmt(worst) + "; 200 random vectors (1D and 2D) min " +
               fmt(worst_random));
}

void criterion_6() {
    bool ok = true;
    std::string detail;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> ln_s(std::log(1e-8), std::log(1e3));
    for (double eps : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        const double d = s_log_constant(eps);
        const double d_oracle = oracle_d(eps);
        ok &= std::abs(d - d_oracle) <= 1e-8 * d_oracle;
        double worst = INFINITY;
        for (int i = 0; i < 100000; ++i) {
            const double s = std::exp(ln_s(rng));
            const double rhs = s * s + d * std::pow(s, 1.0 - eps);
            worst = std::min(worst, (rhs - s * std::abs(std::log(s))) / rhs);
        }
        ok &= worst >= -1e-12;
        detail += "eps " + fmt(eps) + ": d " + fmt(d) + " min rel gap " + fmt(worst) + "; ";
    }
    const double d_half = oracle_d(0.5);
    ok &= std::abs(d_half - 0.696) <= 1e-2;
    detail += "oracle d_1/2 " + fmt(d_half);
    report(6, ok, "s|ln s| <= s^2 + d s^{1-eps} on 1e5 samples", detail);
}

void criterion_7(const std::vector<PresetRun>& runs) {
    bool ok = true;
    std::string notes;
    for (const char* kernel : {"exp(0.5,1)", "power(0.5,2)"}) {
        auto sc = preset("exp-linear");
        sc.kernel = kernel;
        sc.T = 1.0;
        const auto r = resolve(sc);
        SimulationSetup setup = detail::make_setup(r, 1.0);
        const auto traj = run(setup);
        const auto& H = traj.history;
        if (H.size() != 1001) ok = false;
        std::mt19937_64 rng(7);
        std::uniform_int_distribution<std::size_t> pick(1, H.size() - 1);
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t j = pick(rng);
            const Vec lib = memory_term(H, r.params.kernel, *r.grams, j);
            // brute force: every entry re-summed in long double from scratch
            const auto m = lib.size();
            std::vector<long double> acc(m, 0.0L);
            for (std::size_t i = 0; i <= j; ++i) {
                const long double w = (i == 0 || i == j) ? 0.5L * sc.dt : sc.dt;
                const long double b = r.params.kernel.value(static_cast<double>(j - i) * sc.dt);
                for (Eigen::Index c = 0; c < m; ++c) acc[c] += w * b * H[i](c);
            }
            double scale = 0.0, err = 0.0;
            for (Eigen::Index row = 0; row < m; ++row) {
                long double v = 0.0L;
                for (Eigen::Index c = 0; c < m; ++c) v += static_cast<long double>(r.grams->M2(row, c)) * acc[c];
                err = std::max(err, static_cast<double>(std::abs(v - lib(row))));
                scale = std::max(scale, static_cast<double>(std::abs(v)));
            }
            worst = std::max(worst, err / std::max(scale, 1e-300));
        }
        ok &= worst <= 1e-13;
        notes += std::string(kernel) + " max rel err " + fmt(worst) + "; ";
    }
    double gap_b = INFINITY, gap_db = INFINITY;
    for (const auto& run : runs) {
        if (run.sc.kernel == "none") continue;
        for (const auto& rec : run.res.records) {
            gap_b = std::min(gap_b, rec.cs.b_gap);
            gap_db = std::min(gap_db, rec.cs.db_gap);
        }
    }
    ok &= gap_b >= -1e-10 && gap_db >= -1e-10;
    notes += "min CS gaps " + fmt(gap_b) + ", " + fmt(gap_db);
    report(7, ok, "memory trapezoid vs brute force (1e-13) and Cauchy-Schwarz gaps", notes);
}

void criterion_8(const std::vector<PresetRun>& runs) {
    bool ok = true;
    std::string detail;
    for (const char* name : {"exp-linear", "power-linear"}) {
        const PresetRun* r = nullptr;
        for (const auto& x : runs)
            if (x.name == name) r = &x;
        if (!r || !r->res.report.fit || !r->res.report.fit->fitted) {
            ok = false;
            detail += std::string(name) + " not fitted; ";
            continue;
        }
        const auto& fit = *r->res.report.fit;
        const std::string want = std::string(name) == "exp-linear" ? "linear-B" : "nonlinear-B";
        ok &= r->res.report.envelope == want && fit.overshoot <= 1e-12 && fit.check_samples >= kMinFitSamples;
        detail += std::string(name) + " [" + r->res.report.envelope + "] c " + fmt(fit.c) + " overshoot " +
                  fmt(fit.overshoot) + " on " + std::to_string(fit.check_samples) + " samples; ";
    }
    std::vector<double> ts, es;
    for (int i = 0; i <= 2000; ++i) {
        ts.push_back(i * 0.005);
        es.push_back(5.0 * std::exp(-2.0 * ts.back()));
    }
    const auto env = envelope_linear_B(XiWeight::constant(1.0), 0.5, 1.0, 0.0);
    const auto syn = fit_decay(ts, es, env, FitWindows{0.0, 10.0, 0.0, 10.0});
    ok &= syn.fitted && std::abs(syn.exponent - 2.0) <= 0.02 && syn.overshoot <= 1e-12;
    detail += "synthetic 5e^{-2t} exponent " + fmt(syn.exponent);
    report(8, ok, "decay envelopes dominate the fitted energy on [T/2, T]", detail);
}

void criterion_9() {
    bool ok = true;
    std::mt19937_64 rng(9);
    double young = INFINITY, round_trip = 0.0;
    for (double p : {1.25, 1.5, 2.0, 3.0}) {
        const auto K = ConvexModulus::power(p, 2.0);
        const double top = K.derivative(2.0);
        std::uniform_real_distribution<double> ua(1e-6 * top, top * (1.0 - 1e-9)), ub(0.0, 2.0);
        for (int i = 0; i < 2500; ++i) {
            const double a = ua(rng), b = ub(rng);
            young = std::min(young, convex_conjugate(K, a) + K.value(b) - a * b);
            round_trip = std::max(round_trip, std::abs(K.derivative(K.derivative_inverse(a)) - a) / a);
        }
    }
    ok &= young >= -1e-12 && round_trip <= 1e-10;

    // K1 for B = s^p: K(t) = t^{p(1+eps)}, K1(t) = t K'(eps1 t); W2 for B = s^p, H = s^r
    double k1_err = 0.0, w2_err = 0.0;
    const double eps = 0.5, eps1 = 0.8;
    for (double p : {1.5, 2.0, 3.0}) {
        const long double q = p * (1.0 + eps);
        auto K1 = [&](long double t) { return t * q * std::pow(eps1 * t, q - 1.0L); };
        RootComposedProfile prof({ConvexModulus::power(p, 1e3)}, eps, eps1);
        for (double y : {1e-4, 1e-2, 0.5, 3.0}) {
            const long double closed = std::pow(y / (q * std::pow((long double)eps1, q - 1.0L)), 1.0L / q);
            const long double bis = oracle_invert(K1, y);
            k1_err = std::max(k1_err, static_cast<double>(std::abs(closed - bis) / closed));
            k1_err = std::max(k1_err, static_cast<double>(std::abs(prof.scaled_inverse(y) - closed) / closed));
        }
        for (double r : {p, 2.5}) {
            // W^{-1}(y) = y^{1/(p(1+eps))} + y^{1/(r(1+eps))}
            auto Winv = [&](long double y) {
                return std::pow(y, 1.0L / (p * (1.0L + eps))) + std::pow(y, 1.0L / (r * (1.0L + eps)));
            };
            auto dWinv = [&](long double y) {
                const long double a = 1.0L / (p * (1.0L + eps)), b = 1.0L / (r * (1.0L + eps));
                return a * std::pow(y, a - 1.0L) + b * std::pow(y, b - 1.0L);
            };
            auto W = [&](long double t) { return oracle_invert(Winv, t); };
            auto W2 = [&](long double t) { return t / dWinv(W(eps1 * t)); };
            RootComposedProfile wprof({ConvexModulus::power(p, 1e3), ConvexModulus::power(r, 1e3)}, eps, eps1);
            for (double y : {1e-3, 0.1, 2.0}) {
                const long double ref = oracle_invert(W2, y);
                w2_err = std::max(w2_err, static_cast<double>(std::abs(wprof.scaled_inverse(y) - ref) / ref));
                if (r == p) {
                    // W(t) = (t/2)^q, W2(t) = (q/2) eps1^{q-1} t^q / 2^{q-1}
                    const long double closed =
                        std::pow(y * std::pow(2.0L, q) / (q * std::pow((long double)eps1, q - 1.0L)), 1.0L / q);
                    w2_err = std::max(w2_err, static_cast<double>(std::abs(closed - ref) / ref));
                }
            }
        }
    }
    ok &= k1_err <= 1e-10 && w2_err <= 1e-10;
    report(9, ok, "convexity machinery",
           "10^4 Young pairs min " + fmt(young) + ", (K')^{-1} round trip " + fmt(round_trip) + ", K1^{-1} err " +
               fmt(k1_err) + ", W2^{-1} err " + fmt(w2_err));
}

void criterion_10() {
    bool ok = true;
    const auto roots = beam_roots(16);
    double root_err = 0.0;
    for (int n = 1; n <= 16; ++n)
        root_err = std::max(root_err, std::abs(roots[n - 1] - static_cast<double>(oracle_beam_root(n))));
    // the quoted 4.7300408 is double-rounded from 4.730040745, so the quoted digits are held to one unit in the last place
    ok &= root_err <= 1e-10 && std::abs(roots[0] - 4.7300408) <= 1e-7 && std::abs(roots[1] - 7.8532046) <= 1e-7;
    double m2_err = 0.0;
    for (double L : {1.0, 2.0}) {
        const auto b = build_basis(1, 16, L, default_quad_order(16));
        const auto g = assemble_grams(b);
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) {
                const double expect = i == j ? std::pow(b.roots[i] / L, 4) : 0.0;
                m2_err = std::max(m2_err, std::abs(g.M2(i, j) - expect) / std::pow(b.roots[std::max(i, j)] / L, 4));
            }
    }
    ok &= m2_err <= 1e-8;
    const double c16 = estimate_cp(assemble_grams(build_basis(1, 16, 1.0, default_quad_order(16))));
    const double c32 = estimate_cp(assemble_grams(build_basis(1, 32, 1.0, default_quad_order(32))));
    const double change = std::abs(c32 - c16) / c32;
    ok &= change < 1e-3;
    report(10, ok, "spectral layer",
           "root err " + fmt(root_err) + " (beta1 " + fmt(roots[0], 12) + ", beta2 " + fmt(roots[1], 12) + "), M2 rel err " +
               fmt(m2_err) + ", c_p " + fmt(c16) + " -> " + fmt(c32) + " (rel change " + fmt(change) + ")");
}

void criterion_11(const fs::path& scratch) {
    auto sc = preset("power-cubic");
    sc.T = 1.0;
    RunOptions opt;
    std::vector<std::string> files;
    for (const char* tag : {"a", "b"}) {
        opt.out = (scratch / tag).string();
        run_scenario(sc, opt);
        files.push_back(slurp(scratch / tag / "timeseries.csv"));
    }
    opt.out = (scratch / "sweep").string();
    sweep(sc, {parse_axis("rho=1")}, opt, 2);
    files.push_back(slurp(scratch / "sweep" / "cell_000" / "timeseries.csv"));
    const bool ok = !files[0].empty() && files[0] == files[1] && files[0] == files[2];
    report(11, ok, "byte-identical timeseries.csv across repeated runs",
           std::to_string(files[0].size()) + " bytes, 2 direct runs + 1 sweep cell");
}

} // namespace

int main() {
    const auto scratch = fs::temp_directory_path() / "viscoplate_acceptance";
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    std::vector<PresetRun> runs;
    for (const auto& entry : fs::directory_iterator(VISCOPLATE_CONFIGS))
        if (entry.path().extension() == ".cfg") runs.push_back({entry.path().stem().string(), {}, {}});
    std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    for (auto& r : runs) {
        r.sc = preset(r.name);
        r.res = execute(r.sc);
        std::printf("  preset %-18s exit %d  (%.2f s)\n", r.name.c_str(), r.res.report.exit_code(),
                    r.res.report.wall_clock_seconds);
    }

    criterion_1();
    criterion_2(runs);
    criterion_3(runs);
    criterion_4(runs);
    criterion_5(runs);
    criterion_6();
    criterion_7(runs);
    criterion_8(runs);
    criterion_9();
    criterion_10();
    criterion_11(scratch / "determinism");

    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
