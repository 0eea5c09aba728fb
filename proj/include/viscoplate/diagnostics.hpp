#pragma once

// Scalar functionals along a trajectory: energy and its parts, the dissipation identity, the
// logarithmic Sobolev gap, potential-well constants, Lyapunov functionals, memory and damping
// estimates, and decay-envelope fitting.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "viscoplate/dynamics.hpp"
#include "viscoplate/kernels.hpp"
#include "viscoplate/numerics.hpp"
#include "viscoplate/spectral.hpp"

namespace viscoplate {

inline constexpr double kEnergyFloor = 1e-14;

struct EnergySample {
    double t = 0.0;
    double kin_rho = 0.0;   // ||u_t||_{rho+2}^{rho+2} / (rho+2)
    double bend = 0.0;      // ||Delta u||^2
    double bend_rate = 0.0; // ||Delta u_t||^2
    double mass = 0.0;      // ||u||^2
    double logterm = 0.0;   // \int u^2 ln|u|
    double memory = 0.0;    // (b o Delta u)(t)
    double E = 0.0;
    double J = 0.0;
    double I = 0.0;
};

namespace detail {

struct Pointwise {
    Vec u, v;
};

inline Pointwise pointwise(const PlateState& s, const Basis& basis) {
    return {basis.phi * s.g, basis.phi * s.v};
}

inline double abs_pow(double x, double p) { return p == 0.0 ? 1.0 : std::pow(std::abs(x), p); }

/// Fills everything except the memory-dependent fields and E, J, I.
inline EnergySample local_energy_parts(const PlateState& s, const PhysicalParams& params,
                                       const GramSet& grams, const Basis& basis) {
    EnergySample e;
    e.t = s.t;
    const auto pw = pointwise(s, basis);
    double kin = 0.0, logt = 0.0;
    for (Eigen::Index q = 0; q < pw.u.size(); ++q) {
        const double w = basis.weights(q);
        kin += w * abs_pow(pw.v(q), params.rho + 2.0);
        const double u = pw.u(q);
        if (u != 0.0) logt += w * u * u * std::log(std::abs(u));
    }
    e.kin_rho = kin / (params.rho + 2.0);
    e.logterm = logt;
    e.bend = s.g.dot(grams.M2 * s.g);
    e.bend_rate = s.v.dot(grams.M2 * s.v);
    e.mass = s.g.dot(grams.M0 * s.g);
    return e;
}

/// Completes E, J and I once the memory form is known.
inline void close_energy(EnergySample& e, const PhysicalParams& params) {
    const double stiff = 1.0 - params.kernel.integral(e.t);
    const double k = params.k;
    e.E = e.kin_rho +
          0.5 * (stiff * e.bend + e.bend_rate - k * e.logterm + e.mass + e.memory) +
          0.25 * k * e.mass;
    e.I = e.bend_rate + stiff * e.bend + e.mass + e.memory - k * e.logterm;
    e.J = 0.5 * e.I + 0.25 * k * e.mass;
}

/// sum_i w_i f(t_j - t_i) ||Delta u(t_i) - Delta u(t_j)||^2 over history[0..j].
template <class KernelFn>
double memory_form(const HistoryBuffer& history, std::size_t j, KernelFn&& weight) {
    const double dt = history.dt();
    const Vec& zj = history.transformed(j);
    double acc = 0.0;
    for (std::size_t i = 0; i < j; ++i) {
        const double w = trapezoid_weight(i, j, dt);
        acc += w * weight(static_cast<double>(j - i) * dt) * (history.transformed(i) - zj).squaredNorm();
    }
    return acc;
}

/// sum_i w_i f(t_j - t_i) (g(t_j) - g(t_i)).
template <class KernelFn>
Vec convolution_difference(const HistoryBuffer& history, std::size_t j, KernelFn&& weight) {
    const double dt = history.dt();
    Vec acc = Vec::Zero(history[j].size());
    for (std::size_t i = 0; i < j; ++i) {
        const double w = trapezoid_weight(i, j, dt);
        acc += (w * weight(static_cast<double>(j - i) * dt)) * (history[j] - history[i]);
    }
    return acc;
}

inline std::size_t history_index(const PlateState& s, const HistoryBuffer& history) {
    const auto j = static_cast<std::size_t>(s.step_index);
    if (history.empty() || j > history.last())
        throw InputError("state is not covered by the history buffer");
    return j;
}

} // namespace detail

/// All energy functionals at one state. The memory form uses the history up to the state's step.
inline EnergySample energy(const PlateState& s, const PhysicalParams& params, const GramSet& grams,
                           const Basis& basis, const HistoryBuffer& history) {
    auto e = detail::local_energy_parts(s, params, grams, basis);
    if (!params.kernel.is_zero()) {
        const auto j = detail::history_index(s, history);
        e.memory = detail::memory_form(history, j, [&](double lag) { return params.kernel.value(lag); });
    }
    detail::close_energy(e, params);
    return e;
}

/// Psi1 = (1/(rho+1)) \int |u_t|^rho u_t u + \int Delta u Delta u_t.
inline double psi1(const PlateState& s, const PhysicalParams& params, const GramSet& grams,
                   const Basis& basis) {
    const auto pw = detail::pointwise(s, basis);
    double acc = 0.0;
    for (Eigen::Index q = 0; q < pw.u.size(); ++q)
        acc += basis.weights(q) * detail::abs_pow(pw.v(q), params.rho) * pw.v(q) * pw.u(q);
    return acc / (params.rho + 1.0) + s.g.dot(grams.M2 * s.v);
}

/// Psi2 = -\int (Delta^2 u_t + |u_t|^rho u_t/(rho+1)) \int_0^t b(t-s)(u(t)-u(s)) ds; the bending
/// part is taken weakly as v^T M2 C.
inline double psi2(const PlateState& s, const PhysicalParams& params, const GramSet& grams,
                   const Basis& basis, const HistoryBuffer& history) {
    if (params.kernel.is_zero()) return 0.0;
    const auto j = detail::history_index(s, history);
    const Vec C = detail::convolution_difference(history, j,
                                                 [&](double lag) { return params.kernel.value(lag); });
    const Vec cq = basis.phi * C;
    const Vec vq = basis.phi * s.v;
    double acc = 0.0;
    for (Eigen::Index q = 0; q < vq.size(); ++q)
        acc += basis.weights(q) * detail::abs_pow(vq(q), params.rho) * vq(q) * cq(q);
    return -(s.v.dot(grams.M2 * C) + acc / (params.rho + 1.0));
}

struct MemoryCsGaps {
    double b_gap = 0.0;  // (1-l)(b o Delta u) - ||\int b (Delta u(t) - Delta u(s))||^2
    double db_gap = 0.0; // b(0)(-(b' o Delta u)) - ||\int b' (Delta u(t) - Delta u(s))||^2
};

/// Cauchy-Schwarz estimates on the memory convolution; both gaps must be >= 0 up to round-off.
inline MemoryCsGaps memory_cs_check(const PlateState& s, const HistoryBuffer& history,
                                    const RelaxationKernel& kernel, const GramSet& grams) {
    if (history.empty()) throw InputError("memory_cs_check needs a nonempty history");
    MemoryCsGaps gaps;
    if (kernel.is_zero()) return gaps;
    const auto j = detail::history_index(s, history);
    auto b = [&](double lag) { return kernel.value(lag); };
    auto db = [&](double lag) { return kernel.derivative(lag); };
    const Vec C = detail::convolution_difference(history, j, b);
    const Vec Cd = detail::convolution_difference(history, j, db);
    const double form_b = detail::memory_form(history, j, b);
    const double form_db = detail::memory_form(history, j, db);
    gaps.b_gap = kernel.total_integral() * form_b - C.dot(grams.M2 * C);
    gaps.db_gap = kernel.value(0.0) * (-form_db) - Cd.dot(grams.M2 * Cd);
    return gaps;
}

struct DampingDiagnostics {
    double t = 0.0;
    double G = 0.0;
    double omega1_fraction = 0.0; // |Omega_1| / |Omega|
    bool omega1_empty = false;
    double M = 0.0;
    double dissipation = 0.0;
    double tail_lhs = 0.0; // \int_{t1}^t b(s) ||Delta u(t) - Delta u(t-s)||^2 ds
    double tail_rhs = std::numeric_limits<double>::quiet_NaN();
    // delta/(t-t1) \int_{t1}^t ||Delta u(t) - Delta u(t-s)||^2 ds; the tail bound rests on a
    // Jensen step that needs tail_eta < 1
    double tail_eta = std::numeric_limits<double>::quiet_NaN();
};

struct TailSettings {
    ConvexModulus modulus = ConvexModulus::linear(1.0);
    XiWeight xi = XiWeight::constant(1.0);
    double t1 = 0.0;
    double delta = 0.5;
};

namespace detail {

inline void damping_pointwise(DampingDiagnostics& out, const Vec& vq, const Basis& basis,
                              const DampingLaw& damping) {
    double omega = 0.0, g_acc = 0.0, diss = 0.0, total = 0.0;
    for (Eigen::Index q = 0; q < vq.size(); ++q) {
        const double w = basis.weights(q);
        const double e = vq(q) * damping.value(vq(q));
        total += w;
        diss += w * e;
        if (std::abs(vq(q)) <= damping.eps()) {
            omega += w;
            g_acc += w * e;
        }
    }
    out.dissipation = diss;
    out.omega1_fraction = omega / total;
    out.omega1_empty = omega == 0.0;
    out.G = out.omega1_empty ? 0.0 : g_acc / omega;
}

inline double tail_bound(double t, double M, const TailSettings& tail) {
    const double span = t - tail.t1;
    if (!(span > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const auto ext = extend_modulus(tail.modulus);
    return span / tail.delta * ext.inverse(tail.delta * M / (span * tail.xi.value(t)));
}

} // namespace detail

/// G on Omega_1 = {|u_t| <= eps} (quadrature-node membership), the tail quantity M and the tail
/// bound (t-t1)/delta * Bbar^{-1}(delta M / ((t-t1) xi(t))).
inline DampingDiagnostics damping_diag(const PlateState& s, const PhysicalParams& params,
                                       const Basis& basis, const HistoryBuffer& history,
                                       const TailSettings& tail) {
    DampingDiagnostics out;
    out.t = s.t;
    detail::damping_pointwise(out, basis.phi * s.v, basis, params.damping);
    if (params.kernel.is_zero() || !(s.t > tail.t1)) return out;
    const auto j = detail::history_index(s, history);
    const double dt = history.dt();
    const auto lag_lo = static_cast<std::size_t>(std::ceil(tail.t1 / dt - 1e-9));
    if (lag_lo >= j) return out;
    const Vec& zj = history.transformed(j);
    // lag index m runs over [lag_lo, j]; snapshot index is j - m
    double M = 0.0, lhs = 0.0, mass = 0.0;
    for (std::size_t m = lag_lo; m <= j; ++m) {
        const double w = (m == lag_lo || m == j) ? 0.5 * dt : dt;
        const double lag = static_cast<double>(m) * dt;
        const double d2 = (zj - history.transformed(j - m)).squaredNorm();
        M -= w * params.kernel.derivative(lag) * d2;
        lhs += w * params.kernel.value(lag) * d2;
        mass += w * d2;
    }
    out.M = M;
    out.tail_lhs = lhs;
    out.tail_rhs = detail::tail_bound(s.t, M, tail);
    out.tail_eta = tail.delta * mass / (s.t - tail.t1);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Per-step monitor (single history pass per step)
// ---------------------------------------------------------------------------------------------

struct DiagnosticRecord {
    EnergySample e;
    double memory_rate = 0.0; // (b' o Delta u)(t) <= 0
    double b_t = 0.0;         // b(t)
    double psi1 = 0.0;
    double psi2 = 0.0;
    DampingDiagnostics damp;
    MemoryCsGaps cs;
    double vnorm_rho = 0.0; // ||u_t||_{rho+2}^{rho+2}
};

/// Step observer computing a DiagnosticRecord for every state. Equivalent to calling energy,
/// psi1, psi2, memory_cs_check and damping_diag separately, fused into one pass over the history.
class DiagnosticsMonitor {
public:
    DiagnosticsMonitor(PhysicalParams params, std::shared_ptr<const Basis> basis,
                       std::shared_ptr<const GramSet> grams, double dt,
                       std::optional<TailSettings> tail = std::nullopt)
        : params_(std::move(params)), basis_(std::move(basis)), grams_(std::move(grams)),
          lags_(params_.kernel, dt), tail_(std::move(tail)) {}

    void operator()(const PlateState& s, const HistoryBuffer& history) {
        const Basis& basis = *basis_;
        const GramSet& grams = *grams_;
        DiagnosticRecord r;
        r.e = detail::local_energy_parts(s, params_, grams, basis);
        r.vnorm_rho = r.e.kin_rho * (params_.rho + 2.0);
        r.b_t = params_.kernel.value(s.t);
        r.damp.t = s.t;
        const Vec vq = basis.phi * s.v;
        detail::damping_pointwise(r.damp, vq, basis, params_.damping);

        Vec C = Vec::Zero(s.g.size());
        if (!params_.kernel.is_zero()) {
            const auto j = detail::history_index(s, history);
            const double dt = history.dt();
            lags_.ensure(j + 1);
            const Vec& zj = history.transformed(j);
            const Vec& gj = history[j];
            // C = sum w b (g_j - g_i) is accumulated as (sum w b) g_j - sum w b g_i
            Vec Cd = Vec::Zero(s.g.size());
            double form_b = 0.0, form_db = 0.0, M = 0.0, tail_lhs = 0.0, tail_mass = 0.0;
            double sb = 0.0, sdb = 0.0;
            std::size_t lag_lo = j + 1;
            if (tail_ && s.t > tail_->t1)
                lag_lo = static_cast<std::size_t>(std::ceil(tail_->t1 / dt - 1e-9));
            for (std::size_t i = 0; i < j; ++i) {
                const std::size_t lag = j - i;
                const double w = trapezoid_weight(i, j, dt);
                const double d2 = (history.transformed(i) - zj).squaredNorm();
                const double b = lags_.b(lag), db = lags_.db(lag);
                form_b += w * b * d2;
                form_db += w * db * d2;
                sb += w * b;
                sdb += w * db;
                C.noalias() -= (w * b) * history[i];
                Cd.noalias() -= (w * db) * history[i];
                if (lag >= lag_lo) {
                    const double wt = (lag == lag_lo || lag == j) ? 0.5 * dt : dt;
                    M -= wt * db * d2;
                    tail_lhs += wt * b * d2;
                    tail_mass += wt * d2;
                }
            }
            C += sb * gj;
            Cd += sdb * gj;
            r.e.memory = form_b;
            r.memory_rate = form_db;
            r.cs.b_gap = params_.kernel.total_integral() * form_b - C.dot(grams.M2 * C);
            r.cs.db_gap = lags_.b(0) * (-form_db) - Cd.dot(grams.M2 * Cd);
            if (lag_lo < j) {
                r.damp.M = M;
                r.damp.tail_lhs = tail_lhs;
                r.damp.tail_rhs = detail::tail_bound(s.t, M, *tail_);
                r.damp.tail_eta = tail_->delta * tail_mass / (s.t - tail_->t1);
            }
        }
        detail::close_energy(r.e, params_);

        const Vec uq = basis.phi * s.g;
        const Vec cq = basis.phi * C;
        double p1 = 0.0, p2 = 0.0;
        for (Eigen::Index q = 0; q < uq.size(); ++q) {
            const double inertia = detail::abs_pow(vq(q), params_.rho) * vq(q);
            p1 += basis.weights(q) * inertia * uq(q);
            p2 += basis.weights(q) * inertia * cq(q);
        }
        r.psi1 = p1 / (params_.rho + 1.0) + s.g.dot(grams.M2 * s.v);
        r.psi2 = params_.kernel.is_zero() ? 0.0 : -(s.v.dot(grams.M2 * C) + p2 / (params_.rho + 1.0));
        records_.push_back(r);
    }

    [[nodiscard]] const std::vector<DiagnosticRecord>& records() const { return records_; }
    std::vector<DiagnosticRecord> take() { return std::move(records_); }

private:
    PhysicalParams params_;
    std::shared_ptr<const Basis> basis_;
    std::shared_ptr<const GramSet> grams_;
    KernelLagTable lags_;
    std::optional<TailSettings> tail_;
    std::vector<DiagnosticRecord> records_;
};

// ---------------------------------------------------------------------------------------------
// Series diagnostics
// ---------------------------------------------------------------------------------------------

/// Right-hand side of the dissipation identity; <= 0 under the sign hypotheses.
inline double dissipation_rate(const DiagnosticRecord& rec) {
    return 0.5 * rec.memory_rate - 0.5 * rec.b_t * rec.e.bend - rec.damp.dissipation;
}

/// r_n = (E_{n+1} - E_{n-1})/(2 dt) - [(b' o Du)/2 - b(t_n)||Du||^2/2 - \int u_t h(u_t)].
/// End points are NaN.
inline std::vector<double> energy_rate_residual(std::span<const DiagnosticRecord> records, double dt) {
    const auto n = records.size();
    std::vector<double> r(n, std::numeric_limits<double>::quiet_NaN());
    if (n < 3) return r;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const auto& rec = records[i];
        const double rate = (records[i + 1].e.E - records[i - 1].e.E) / (2.0 * dt);
        r[i] = rate - dissipation_rate(rec);
    }
    return r;
}

inline double max_abs_finite(std::span<const double> xs) {
    double m = 0.0;
    for (double x : xs)
        if (std::isfinite(x)) m = std::max(m, std::abs(x));
    return m;
}

struct MonotonicityReport {
    bool holds = true;
    double max_increase = -std::numeric_limits<double>::infinity();
    std::optional<double> first_violation_time;
};

inline MonotonicityReport check_monotone(std::span<const DiagnosticRecord> records, double tol = 1e-10) {
    MonotonicityReport rep;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const double inc = records[i].e.E - records[i - 1].e.E;
        rep.max_increase = std::max(rep.max_increase, inc);
        if (inc > tol && rep.holds) {
            rep.holds = false;
            rep.first_violation_time = records[i].e.t;
        }
    }
    return rep;
}

/// RHS - LHS of the logarithmic Sobolev inequality with ||grad u||^2 bounded by c_p ||Delta u||^2.
inline double log_sobolev_gap(const FieldCoeffs& g, double a, double cp, const Basis& basis,
                              const GramSet& grams) {
    if (!(a > 0.0)) throw InputError("log_sobolev_gap needs a > 0");
    const double mass = g.dot(grams.M0 * g);
    if (mass == 0.0) return 0.0;
    const double bend = g.dot(grams.M2 * g);
    const Vec uq = basis.phi * g;
    double logt = 0.0;
    for (Eigen::Index q = 0; q < uq.size(); ++q)
        if (uq(q) != 0.0) logt += basis.weights(q) * uq(q) * uq(q) * std::log(std::abs(uq(q)));
    const double rhs = 0.5 * mass * std::log(mass) + cp * a * a / (2.0 * std::numbers::pi) * bend -
                       (1.0 + std::log(a)) * mass;
    return rhs - logt;
}

/// d_{eps0} = sup_{s>0} (s|ln s| - s^2) / s^{1-eps0}, by golden section in ln s on (0, 1];
/// beyond s = 1 the numerator is negative.
inline double s_log_constant(double eps0) {
    if (!(eps0 > 0.0 && eps0 < 1.0)) throw DomainError("eps0 must lie in (0,1)");
    auto ratio = [eps0](double x) { // x = ln s <= 0
        return std::exp(eps0 * x) * (-x) - std::exp((1.0 + eps0) * x);
    };
    const auto [x, val] = numerics::golden_section_max(ratio, -200.0, 0.0, 1e-12);
    (void)x;
    return val;
}

// ---------------------------------------------------------------------------------------------
// Potential well
// ---------------------------------------------------------------------------------------------

struct WellConstants {
    double k = 0.0;
    double l = 0.0;
    double cp = 0.0;
    double a = 0.0;
    double Q0 = 0.0;
    double rho_bar = 0.0;
    double d = 0.0;
    double k0 = 0.0;
    double a_lo = 0.0;        // e^{-3/2}
    double a_hi = 0.0;        // sqrt(2 pi l / (k c_p))
    double a_hi_alt = 0.0;    // sqrt(2 pi c_p l / k), the other printed form
    bool window_empty = false;
    bool d_nonpositive = false;
};

/// Q0, rho_bar, d and k0. `a` defaults to the midpoint of (e^{-3/2}, sqrt(2 pi l/(k c_p))).
inline WellConstants well_constants(double k, double l, double cp, std::optional<double> a = {}) {
    if (!(k > 0.0)) throw InputError("well_constants needs k > 0");
    if (!(cp > 0.0) || !(l > 0.0)) throw InputError("well_constants needs c_p > 0 and l > 0");
    WellConstants wc;
    wc.k = k;
    wc.l = l;
    wc.cp = cp;
    wc.k0 = 2.0 * std::numbers::pi * l * std::exp(3.0) / cp;
    if (k >= wc.k0) throw HypothesisError("k >= k0: log-source strength violates the bound");
    wc.a_lo = std::exp(-1.5);
    wc.a_hi = std::sqrt(2.0 * std::numbers::pi * l / (k * cp));
    wc.a_hi_alt = std::sqrt(2.0 * std::numbers::pi * cp * l / k);
    wc.window_empty = !(wc.a_hi > wc.a_lo);
    wc.a = a.value_or(0.5 * (wc.a_lo + wc.a_hi));
    if (!(wc.a > 0.0)) throw InputError("well_constants needs a > 0");
    wc.Q0 = 0.5 * (k + 2.0) + k * (1.0 + std::log(wc.a));
    wc.rho_bar = std::exp((2.0 * wc.Q0 - k) / k);
    const double r2 = wc.rho_bar * wc.rho_bar;
    wc.d = 0.5 * wc.Q0 * r2 - 0.25 * k * r2 * std::log(r2);
    wc.d_nonpositive = !(wc.d > 0.0);
    return wc;
}

struct WellReport {
    bool certified = false;   // preconditions ||u0|| < rho_bar and 0 < E(0) < d hold
    std::string reason;       // why not certified
    bool holds = false;       // certified and no violation along the trajectory
    std::optional<double> first_violation_time;
    std::string violated;
    std::size_t samples = 0;
};

inline WellReport check_well(std::span<const DiagnosticRecord> records, const WellConstants& wc,
                             double rho) {
    WellReport rep;
    if (records.empty()) {
        rep.reason = "empty trajectory";
        return rep;
    }
    const auto& first = records.front().e;
    const double E0 = first.E;
    if (wc.d_nonpositive) rep.reason = "d <= 0";
    else if (!(std::sqrt(first.mass) < wc.rho_bar)) rep.reason = "||u0|| >= rho_bar";
    else if (!(E0 > 0.0)) rep.reason = "E(0) <= 0";
    else if (!(E0 < wc.d)) rep.reason = "E(0) >= d";
    if (!rep.reason.empty()) return rep;
    rep.certified = true;
    rep.holds = true;
    for (const auto& rec : records) {
        ++rep.samples;
        std::string what;
        if (!(std::sqrt(rec.e.mass) < wc.rho_bar)) what = "||u|| >= rho_bar";
        else if (!(rec.e.I > 0.0) && rec.e.mass > 0.0) what = "I <= 0";
        else if (rec.vnorm_rho > (rho + 2.0) * E0) what = "||u_t||_{rho+2}^{rho+2} > (rho+2) E(0)";
        else if (rec.e.bend_rate > 2.0 * E0) what = "||Delta u_t||^2 > 2 E(0)";
        if (!what.empty()) {
            rep.holds = false;
            rep.first_violation_time = rec.e.t;
            rep.violated = what;
            break;
        }
    }
    return rep;
}

/// Energy of an initial state (empty memory).
inline EnergySample initial_energy(const FieldCoeffs& g0, const FieldCoeffs& v0,
                                   const PhysicalParams& params, const GramSet& grams,
                                   const Basis& basis) {
    PlateState s;
    s.g = g0;
    s.v = v0;
    auto e = detail::local_energy_parts(s, params, grams, basis);
    detail::close_energy(e, params);
    return e;
}

/// Largest factor 2^{-j}, j = 0..60, for which the scaled data satisfy ||u0|| < rho_bar and
/// 0 < E(0) < d. Empty if the constants are unusable or no factor works.
inline std::optional<double> well_scaling_search(const FieldCoeffs& g0, const FieldCoeffs& v0,
                                                 const PhysicalParams& params,
                                                 const GramSet& grams, const Basis& basis,
                                                 const WellConstants& wc) {
    if (wc.d_nonpositive) return std::nullopt;
    double scale = 1.0;
    for (int j = 0; j <= 60; ++j, scale *= 0.5) {
        const auto e = initial_energy(scale * g0, scale * v0, params, grams, basis);
        if (std::sqrt(e.mass) < wc.rho_bar && e.E > 0.0 && e.E < wc.d) return scale;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------------------------
// Lyapunov functional
// ---------------------------------------------------------------------------------------------

struct LyapunovSample {
    double t = 0.0;
    double psi1 = 0.0;
    double psi2 = 0.0;
    double L = 0.0;
};

struct LyapunovReport {
    double N = 0.0;
    double eps = 0.0;
    std::vector<LyapunovSample> samples;
    std::size_t ratio_count = 0;
    double min_ratio = std::numeric_limits<double>::quiet_NaN();
    double max_ratio = std::numeric_limits<double>::quiet_NaN();
    [[nodiscard]] bool equivalent() const {
        return ratio_count > 0 && min_ratio > 0.0 && std::isfinite(max_ratio);
    }
};

/// L = N E + eps Psi1 + Psi2 and the range of L/E over samples with E > 1e-14.
inline LyapunovReport lyapunov_series(std::span<const DiagnosticRecord> records, double N, double eps) {
    if (!(N > 0.0) || !(eps > 0.0)) throw InputError("lyapunov_series needs N > 0 and eps > 0");
    LyapunovReport rep;
    rep.N = N;
    rep.eps = eps;
    rep.samples.reserve(records.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& rec : records) {
        LyapunovSample s{rec.e.t, rec.psi1, rec.psi2, N * rec.e.E + eps * rec.psi1 + rec.psi2};
        rep.samples.push_back(s);
        if (rec.e.E > kEnergyFloor) {
            const double ratio = s.L / rec.e.E;
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
            ++rep.ratio_count;
        }
    }
    if (rep.ratio_count > 0) {
        rep.min_ratio = lo;
        rep.max_ratio = hi;
    }
    return rep;
}

/// Doubles N from 1 until min(L/E) > 0 or N exceeds 2^10.
inline LyapunovReport lyapunov_search(std::span<const DiagnosticRecord> records, double eps) {
    LyapunovReport rep;
    for (double N = 1.0; N <= 1024.0; N *= 2.0) {
        rep = lyapunov_series(records, N, eps);
        if (rep.ratio_count == 0 || rep.min_ratio > 0.0) break;
    }
    return rep;
}

// ---------------------------------------------------------------------------------------------
// Decay fitting
// ---------------------------------------------------------------------------------------------

struct FitWindows {
    double fit_from = 0.0;
    double fit_to = std::numeric_limits<double>::infinity();
    double check_from = 0.0;
    double check_to = std::numeric_limits<double>::infinity();
};

struct FitReport {
    bool fitted = false;
    std::string skipped_reason;
    EnvelopeCase kind = EnvelopeCase::linear_B;
    std::size_t fit_samples = 0;
    std::size_t check_samples = 0;
    double c = 0.0;    // sup E / shape over the fit window
    double c_ls = 0.0; // least-squares constant in log space
    double overshoot = 0.0; // max over the check window of E/(c shape) - 1, floored at 0
    double exponent = std::numeric_limits<double>::quiet_NaN(); // slope of -ln E over all used samples
};

inline constexpr std::size_t kMinFitSamples = 50;

/// Fits the single leading constant of E(t) <= c shape(t). c is the max ratio on the fit window;
/// the bound is then checked on the check window.
inline FitReport fit_decay(std::span<const double> times, std::span<const double> energies,
                           const DecayEnvelope& envelope, const FitWindows& win) {
    FitReport rep;
    rep.kind = envelope.kind();
    if (times.size() != energies.size()) throw InputError("fit_decay: series length mismatch");
    bool any_positive = false;
    for (double e : energies) any_positive |= e > 0.0;
    if (!any_positive) {
        rep.skipped_reason = "all-zero energy";
        return rep;
    }
    double c = 0.0, log_sum = 0.0;
    std::vector<double> ts, logs;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i], e = energies[i];
        if (t < win.fit_from || t > win.fit_to || !(e > kEnergyFloor) || !envelope.in_domain(t))
            continue;
        const double shape = envelope.shape(t);
        c = std::max(c, e / shape);
        log_sum += std::log(e / shape);
        ++rep.fit_samples;
        ts.push_back(t);
        logs.push_back(-std::log(e));
    }
    if (rep.fit_samples < kMinFitSamples) {
        rep.skipped_reason = "fewer than 50 positive-energy samples in the fit window";
        return rep;
    }
    rep.c = c;
    rep.c_ls = std::exp(log_sum / static_cast<double>(rep.fit_samples));
    double worst = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i], e = energies[i];
        if (t < win.check_from || t > win.check_to || !(e > kEnergyFloor) || !envelope.in_domain(t))
            continue;
        worst = std::max(worst, e / (c * envelope.shape(t)) - 1.0);
        ++rep.check_samples;
        if (t > win.fit_to || t < win.fit_from) {
            ts.push_back(t);
            logs.push_back(-std::log(e));
        }
    }
    rep.overshoot = worst;
    if (ts.size() >= 2) rep.exponent = numerics::ls_slope(ts, logs);
    rep.fitted = true;
    return rep;
}

} // namespace viscoplate
