#pragma once

// Time integration of the Galerkin system
//   N_rho(v) a + M2 a + (M2 + M0) g - M2 \int_0^t b(t-s) g(s) ds + P(h(v)) - k P(u ln|u|) = 0
// with Newmark average acceleration and a product-trapezoid memory convolution.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "viscoplate/error.hpp"
#include "viscoplate/kernels.hpp"
#include "viscoplate/spectral.hpp"

namespace viscoplate {

struct PhysicalParams {
    double rho = 0.0;    // inertia exponent
    double k = 0.0;      // log-source strength
    double sigma = 1e-8; // |v|^rho is evaluated as (v^2 + sigma^2)^{rho/2}
    RelaxationKernel kernel;
    DampingLaw damping;
};

struct PlateState {
    double t = 0.0;
    FieldCoeffs g; // u
    FieldCoeffs v; // u_t
    FieldCoeffs a; // u_tt
    long step_index = 0;
};

/// Uniformly spaced displacement snapshots g(0), g(dt), ... plus their images z = U g under the
/// Cholesky factor M2 = U^T U, so that ||Delta u(s) - Delta u(t)||^2 = |z(s) - z(t)|^2.
class HistoryBuffer {
public:
    HistoryBuffer() = default;
    HistoryBuffer(double dt, const GramSet& grams)
        : dt_(dt), factor_(grams.chol_M2.matrixU()) {
        if (!(dt > 0.0)) throw InputError("history spacing must be > 0");
    }

    void push(const FieldCoeffs& g) {
        g_.push_back(g);
        z_.push_back(factor_ * g);
    }

    [[nodiscard]] double dt() const { return dt_; }
    [[nodiscard]] std::size_t size() const { return g_.size(); }
    [[nodiscard]] bool empty() const { return g_.empty(); }
    [[nodiscard]] const FieldCoeffs& operator[](std::size_t i) const { return g_[i]; }
    [[nodiscard]] const Vec& transformed(std::size_t i) const { return z_[i]; }
    [[nodiscard]] double time(std::size_t i) const { return static_cast<double>(i) * dt_; }
    [[nodiscard]] std::size_t last() const { return g_.size() - 1; }

private:
    double dt_ = 0.0;
    Mat factor_;
    std::vector<FieldCoeffs> g_;
    std::vector<Vec> z_;
};

/// b(j dt) and b'(j dt), grown on demand.
class KernelLagTable {
public:
    KernelLagTable(RelaxationKernel kernel, double dt) : kernel_(std::move(kernel)), dt_(dt) {}

    void ensure(std::size_t count) {
        while (b_.size() < count) {
            const double t = static_cast<double>(b_.size()) * dt_;
            b_.push_back(kernel_.value(t));
            db_.push_back(kernel_.derivative(t));
        }
    }
    [[nodiscard]] double b(std::size_t lag) const { return b_[lag]; }
    [[nodiscard]] double db(std::size_t lag) const { return db_[lag]; }
    [[nodiscard]] const RelaxationKernel& kernel() const { return kernel_; }

private:
    RelaxationKernel kernel_;
    double dt_;
    std::vector<double> b_, db_;
};

/// Trapezoid weight of history index i when integrating over [0, t_last].
inline double trapezoid_weight(std::size_t i, std::size_t last, double dt) {
    if (last == 0) return 0.0;
    return (i == 0 || i == last) ? 0.5 * dt : dt;
}

/// Memory at time t >= t_last split as known + self_weight * g(t): trapezoid over the stored
/// history on [0, t_last] plus one trapezoid panel on [t_last, t].
struct MemorySplit {
    Vec known;
    double self_weight = 0.0;
};

inline MemorySplit memory_split(const HistoryBuffer& history, const RelaxationKernel& kernel,
                                double t) {
    MemorySplit out;
    const auto m = history[0].size();
    out.known = Vec::Zero(m);
    if (kernel.is_zero()) return out;
    const std::size_t n = history.last();
    const double dt = history.dt();
    for (std::size_t i = 0; i <= n; ++i) {
        const double w = trapezoid_weight(i, n, dt);
        if (w != 0.0) out.known += (w * kernel.value(t - history.time(i))) * history[i];
    }
    const double h = t - history.time(n);
    if (h > 0.0) {
        out.known += (0.5 * h * kernel.value(h)) * history[n];
        out.self_weight = 0.5 * h * kernel.value(0.0);
    }
    return out;
}

/// M2 \int_0^{t_j} b(t_j - s) g(s) ds by trapezoid over history[0..j]. Empty history -> zero.
inline Vec memory_term(const HistoryBuffer& history, const RelaxationKernel& kernel,
                       const GramSet& grams, std::size_t j) {
    const auto m = grams.M2.rows();
    if (history.empty() || kernel.is_zero()) return Vec::Zero(m);
    if (j > history.last()) throw InputError("memory_term: index beyond stored history");
    Vec acc = Vec::Zero(m);
    const double dt = history.dt();
    for (std::size_t i = 0; i <= j; ++i) {
        const double w = trapezoid_weight(i, j, dt);
        if (w != 0.0) acc += (w * kernel.value(static_cast<double>(j - i) * dt)) * history[i];
    }
    return grams.M2 * acc;
}

/// Implicit stage: g(a) = g_pred + g_coef a, v(a) = v_pred + v_coef a and
/// memory(a) = memory_known + memory_self g(a). Zero coefficients freeze the state.
struct AccelStage {
    double t = 0.0;
    Vec g_pred, v_pred;
    double g_coef = 0.0, v_coef = 0.0;
    Vec memory_known;
    double memory_self = 0.0;

    [[nodiscard]] Vec g(const Vec& a) const { return g_pred + g_coef * a; }
    [[nodiscard]] Vec v(const Vec& a) const { return v_pred + v_coef * a; }
};

/// Stage with the state frozen at (g, v); the memory is the full trapezoid sum on the history.
inline AccelStage frozen_stage(const PlateState& s, const HistoryBuffer& history,
                               const RelaxationKernel& kernel) {
    AccelStage st;
    st.t = s.t;
    st.g_pred = s.g;
    st.v_pred = s.v;
    st.memory_known = memory_split(history, kernel, history.time(history.last())).known;
    return st;
}

namespace detail {

inline constexpr double kLogFloor = 1e-300;

/// u ln|u| with 0 ln 0 := 0.
inline double u_log_u(double u) { return u == 0.0 ? 0.0 : u * std::log(std::abs(u)); }

inline double inertia_weight(double v, double rho, double sigma) {
    if (rho == 0.0) return 1.0;
    return std::pow(v * v + sigma * sigma, 0.5 * rho);
}

inline double inertia_weight_dv(double v, double rho, double sigma) {
    if (rho == 0.0) return 0.0;
    const double r2 = v * v + sigma * sigma;
    if (r2 == 0.0) return 0.0;
    return rho * v * std::pow(r2, 0.5 * rho - 1.0);
}

} // namespace detail

/// R(a) for the stage.
inline Vec residual(const Vec& a, const AccelStage& st, const PhysicalParams& params,
                    const GramSet& grams, const Basis& basis) {
    const Vec g = st.g(a), v = st.v(a);
    const Vec un = basis.phi * g, vn = basis.phi * v, an = basis.phi * a;
    Vec f(un.size());
    for (Eigen::Index q = 0; q < un.size(); ++q) {
        f(q) = detail::inertia_weight(vn(q), params.rho, params.sigma) * an(q) +
               params.damping.value(vn(q)) - params.k * detail::u_log_u(un(q));
    }
    Vec r = basis.phi.transpose() * basis.weights.cwiseProduct(f);
    r += grams.M2 * a + grams.M2 * g + grams.M0 * g;
    r -= grams.M2 * (st.memory_known + st.memory_self * g);
    if (!r.allFinite()) throw DivergedError("residual produced non-finite values");
    return r;
}

/// dR/da for the stage, including the dependence of g and v on a.
inline Mat residual_jacobian(const Vec& a, const AccelStage& st, const PhysicalParams& params,
                             const GramSet& grams, const Basis& basis) {
    const Vec g = st.g(a), v = st.v(a);
    const Vec un = basis.phi * g, vn = basis.phi * v, an = basis.phi * a;
    Vec d(un.size());
    for (Eigen::Index q = 0; q < un.size(); ++q) {
        double val = detail::inertia_weight(vn(q), params.rho, params.sigma);
        if (st.v_coef != 0.0)
            val += st.v_coef * (detail::inertia_weight_dv(vn(q), params.rho, params.sigma) * an(q) +
                                params.damping.derivative(vn(q)));
        if (st.g_coef != 0.0 && params.k != 0.0)
            val -= st.g_coef * params.k *
                   (std::log(std::max(std::abs(un(q)), detail::kLogFloor)) + 1.0);
        d(q) = basis.weights(q) * val;
    }
    Mat J = basis.phi.transpose() * d.asDiagonal() * basis.phi + grams.M2;
    if (st.g_coef != 0.0)
        J += st.g_coef * ((1.0 - st.memory_self) * grams.M2 + grams.M0);
    return J;
}

struct NewtonResult {
    Vec a;
    int iterations = 0;
    bool converged = false;
    double residual_norm = 0.0;
};

inline constexpr int kNewtonMaxIter = 25;

/// Newton on R(a) = 0. Converged once ||R||_inf <= tol + 64 eps ||M2 g||_inf; the second term only
/// matters for states whose stiffness load is so large that tol is below round-off.
inline NewtonResult newton_solve_accel(const AccelStage& st, const PhysicalParams& params,
                                       const GramSet& grams, const Basis& basis,
                                       const Vec& guess, double tol = 1e-10) {
    NewtonResult res;
    res.a = guess;
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() *
                         (grams.M2 * st.g_pred).lpNorm<Eigen::Infinity>();
    for (int it = 0; it <= kNewtonMaxIter; ++it) {
        const Vec r = residual(res.a, st, params, grams, basis);
        res.residual_norm = r.lpNorm<Eigen::Infinity>();
        res.iterations = it;
        if (res.residual_norm <= tol + floor) {
            res.converged = true;
            return res;
        }
        if (it == kNewtonMaxIter) break;
        const Mat J = residual_jacobian(res.a, st, params, grams, basis);
        Eigen::LDLT<Mat> ldlt(J);
        Vec delta;
        if (ldlt.info() == Eigen::Success) delta = ldlt.solve(-r);
        if (ldlt.info() != Eigen::Success || !delta.allFinite()) delta = J.partialPivLu().solve(-r);
        res.a += delta;
        if (!res.a.allFinite()) throw DivergedError("Newton iterate became non-finite");
    }
    return res;
}

struct SimulationSetup {
    std::shared_ptr<const Basis> basis;
    std::shared_ptr<const GramSet> grams;
    PhysicalParams params;
    double dt = 1e-3;
    double T = 0.0;
    FieldCoeffs g0;
    FieldCoeffs v0;
    double newton_tol = 1e-10;
};

inline constexpr int kMaxStepHalvings = 3;

/// Sequential Newmark (gamma = 1/2, beta = 1/4) integrator owning the state and history.
class Simulator {
public:
    explicit Simulator(SimulationSetup setup)
        : setup_(std::move(setup)), history_(setup_.dt, *setup_.grams),
          lags_(setup_.params.kernel, setup_.dt) {
        const auto m = setup_.basis->dim();
        if (setup_.g0.size() != m || setup_.v0.size() != m)
            throw InputError("initial data has wrong dimension");
        if (!(setup_.dt > 0.0)) throw InputError("dt must be > 0");
        state_.t = 0.0;
        state_.g = setup_.g0;
        state_.v = setup_.v0;
        history_.push(state_.g);
        const auto st = frozen_stage(state_, history_, setup_.params.kernel);
        const auto nr = newton_solve_accel(st, setup_.params, *setup_.grams, *setup_.basis,
                                           Vec::Zero(m), setup_.newton_tol);
        if (!nr.converged) throw DivergedError("initial acceleration solve did not converge");
        state_.a = nr.a;
    }

    [[nodiscard]] const PlateState& state() const { return state_; }
    [[nodiscard]] const HistoryBuffer& history() const { return history_; }
    [[nodiscard]] const SimulationSetup& setup() const { return setup_; }
    [[nodiscard]] KernelLagTable& lags() { return lags_; }

    /// Advances one dt and appends g_{n+1} to the history.
    const PlateState& step() {
        const double dt = setup_.dt;
        const std::size_t n = history_.last();
        AccelStage st = newmark_stage(state_, dt);
        st.t = history_.time(n + 1);
        lags_.ensure(n + 2);
        st.memory_known = Vec::Zero(state_.g.size());
        if (!setup_.params.kernel.is_zero()) {
            for (std::size_t i = 0; i <= n; ++i) {
                // weight dt/2 at i = 0, dt elsewhere (the panel [t_n, t_{n+1}] completes i = n)
                const double w = (i == 0) ? 0.5 * dt : dt;
                st.memory_known += (w * lags_.b(n + 1 - i)) * history_[i];
            }
            st.memory_self = 0.5 * dt * lags_.b(0);
        }
        const auto nr = newton_solve_accel(st, setup_.params, *setup_.grams, *setup_.basis,
                                           state_.a, setup_.newton_tol);
        if (nr.converged) {
            commit(st, nr.a);
        } else {
            substep_fallback();
        }
        return state_;
    }

private:
    static AccelStage newmark_stage(const PlateState& s, double h) {
        AccelStage st;
        st.g_pred = s.g + h * s.v + (0.25 * h * h) * s.a;
        st.v_pred = s.v + (0.5 * h) * s.a;
        st.g_coef = 0.25 * h * h;
        st.v_coef = 0.5 * h;
        return st;
    }

    void commit(const AccelStage& st, const Vec& a) {
        state_.g = st.g(a);
        state_.v = st.v(a);
        state_.a = a;
        ++state_.step_index;
        state_.t = history_.time(history_.last() + 1);
        history_.push(state_.g);
    }

    // Retries the step as 2, 4, 8 substeps; intermediate states are not stored in the history.
    void substep_fallback() {
        const double dt = setup_.dt;
        const double t_last = history_.time(history_.last());
        for (int halving = 1; halving <= kMaxStepHalvings; ++halving) {
            const int pieces = 1 << halving;
            const double h = dt / pieces;
            PlateState s = state_;
            bool ok = true;
            AccelStage st;
            for (int p = 1; p <= pieces && ok; ++p) {
                st = newmark_stage(s, h);
                st.t = t_last + p * h;
                const auto split = memory_split(history_, setup_.params.kernel, st.t);
                st.memory_known = split.known;
                st.memory_self = split.self_weight;
                const auto nr = newton_solve_accel(st, setup_.params, *setup_.grams,
                                                   *setup_.basis, s.a, setup_.newton_tol);
                ok = nr.converged;
                if (ok) {
                    s.g = st.g(nr.a);
                    s.v = st.v(nr.a);
                    s.a = nr.a;
                }
            }
            if (ok) {
                state_.g = s.g;
                state_.v = s.v;
                state_.a = s.a;
                ++state_.step_index;
                state_.t = history_.time(history_.last() + 1);
                history_.push(state_.g);
                return;
            }
        }
        throw DivergedError("Newton failed after " + std::to_string(kMaxStepHalvings) +
                            " step halvings at t=" + std::to_string(state_.t));
    }

    SimulationSetup setup_;
    PlateState state_;
    HistoryBuffer history_;
    KernelLagTable lags_;
};

struct Trajectory {
    std::vector<PlateState> states;
    HistoryBuffer history;
    bool diverged = false;
    std::string failure;
};

using StepObserver = std::function<void(const PlateState&, const HistoryBuffer&)>;

/// Integrates from 0 to T (round(T/dt) steps). The observer sees the initial state and every step.
/// On divergence the trajectory keeps the last good state and records the failure.
inline Trajectory run(const SimulationSetup& setup, const StepObserver& observer = {}) {
    if (!(setup.T >= 0.0)) throw InputError("T must be >= 0");
    Trajectory traj;
    Simulator sim(setup);
    const auto steps = static_cast<long>(std::llround(setup.T / setup.dt));
    traj.states.reserve(static_cast<std::size_t>(steps) + 1);
    traj.states.push_back(sim.state());
    if (observer) observer(sim.state(), sim.history());
    try {
        for (long n = 0; n < steps; ++n) {
            sim.step();
            traj.states.push_back(sim.state());
            if (observer) observer(sim.state(), sim.history());
        }
    } catch (const DivergedError& e) {
        traj.diverged = true;
        traj.failure = e.what();
    }
    traj.history = sim.history();
    return traj;
}

} // namespace viscoplate
