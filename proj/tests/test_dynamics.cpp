#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "viscoplate/dynamics.hpp"

using namespace viscoplate;

namespace {

struct Fixture {
    std::shared_ptr<const Basis> basis;
    std::shared_ptr<const GramSet> grams;
};

Fixture make(int n, int dim = 1) {
    auto b = std::make_shared<const Basis>(build_basis(dim, n, 1.0, default_quad_order(n)));
    auto g = std::make_shared<const GramSet>(assemble_grams(*b));
    return {b, g};
}

Vec random_vec(int m, unsigned seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    Vec v(m);
    for (int i = 0; i < m; ++i) v(i) = nd(rng);
    return v;
}

// Plain trapezoid of b(t_j - s) g(s) over samples 0..j, written without the library helpers.
Vec oracle_memory(const std::vector<Vec>& hist, const RelaxationKernel& k, const Mat& M2, std::size_t j,
                  double dt) {
    Vec acc = Vec::Zero(hist[0].size());
    if (j == 0) return acc;
    for (std::size_t i = 0; i <= j; ++i) {
        const double w = (i == 0 || i == j) ? 0.5 * dt : dt;
        acc += w * k.value((static_cast<double>(j) - static_cast<double>(i)) * dt) * hist[i];
    }
    return M2 * acc;
}

} // namespace

TEST(Memory, MatchesTrapezoidOracle) {
    const auto fx = make(5);
    const double dt = 0.01;
    HistoryBuffer h(dt, *fx.grams);
    std::vector<Vec> raw;
    for (int i = 0; i < 200; ++i) {
        Vec g = random_vec(5, 100 + i);
        raw.push_back(g);
        h.push(g);
    }
    for (const auto& k : {RelaxationKernel::exponential(0.5, 1.0), RelaxationKernel::power(0.5, 2.0)})
        for (std::size_t j : {0, 1, 2, 57, 199}) {
            const Vec lib = memory_term(h, k, *fx.grams, j);
            const Vec ref = oracle_memory(raw, k, fx.grams->M2, j, dt);
            EXPECT_LE((lib - ref).lpNorm<Eigen::Infinity>(), 1e-13 * (1.0 + ref.lpNorm<Eigen::Infinity>())) << j;
        }
    EXPECT_THROW(memory_term(h, RelaxationKernel::exponential(0.5, 1.0), *fx.grams, 200), InputError);
}

TEST(Memory, ConstantHistoryClosedForm) {
    const auto fx = make(4);
    const double dt = 1e-3;
    HistoryBuffer h(dt, *fx.grams);
    const Vec g0 = random_vec(4, 9);
    for (int i = 0; i <= 2000; ++i) h.push(g0);
    const auto k = RelaxationKernel::exponential(0.5, 1.0);
    for (std::size_t j : {500, 1000, 2000}) {
        const double t = static_cast<double>(j) * dt;
        const Vec expect = 0.5 * (1.0 - std::exp(-t)) * (fx.grams->M2 * g0);
        const Vec got = memory_term(h, k, *fx.grams, j);
        // trapezoid error t dt^2 max|b''| / 12
        EXPECT_LE((got - expect).lpNorm<Eigen::Infinity>(),
                  (t * dt * dt * 0.5 / 12.0 + 1e-14) * (fx.grams->M2 * g0).lpNorm<Eigen::Infinity>());
    }
}

TEST(Memory, ZeroKernelAndEmptyHistory) {
    const auto fx = make(3);
    HistoryBuffer h(0.1, *fx.grams);
    EXPECT_TRUE(memory_term(h, RelaxationKernel::exponential(0.5, 1.0), *fx.grams, 0).isZero());
    h.push(Vec::Ones(3));
    h.push(Vec::Ones(3));
    EXPECT_TRUE(memory_term(h, RelaxationKernel::none(), *fx.grams, 1).isZero());
}

TEST(HistoryBufferTest, TransformedNormIsBendingNorm) {
    const auto fx = make(6);
    HistoryBuffer h(0.1, *fx.grams);
    const Vec a = random_vec(6, 1), b = random_vec(6, 2);
    h.push(a);
    h.push(b);
    const Vec d = a - b;
    EXPECT_NEAR((h.transformed(0) - h.transformed(1)).squaredNorm(), d.dot(fx.grams->M2 * d),
                1e-10 * d.dot(fx.grams->M2 * d));
    EXPECT_THROW(HistoryBuffer(0.0, *fx.grams), InputError);
}

TEST(Residual, JacobianMatchesFiniteDifferences) {
    const auto fx = make(5);
    PhysicalParams p;
    p.rho = 1.0;
    p.k = 0.5;
    p.sigma = 1e-3;
    p.kernel = RelaxationKernel::exponential(0.5, 1.0);
    p.damping = DampingLaw::origin_power(3.0, 0.5);
    AccelStage st;
    st.g_pred = random_vec(5, 11, 0.3);
    st.v_pred = random_vec(5, 12, 0.3);
    st.g_coef = 0.25 * 1e-2 * 1e-2 * 100; // exaggerated so every term contributes
    st.v_coef = 0.05;
    st.memory_known = random_vec(5, 13, 0.1);
    st.memory_self = 0.3;
    const Vec a = random_vec(5, 14);
    const Mat J = residual_jacobian(a, st, p, *fx.grams, *fx.basis);
    Mat fd(5, 5);
    for (int j = 0; j < 5; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(a(j)));
        Vec ap = a, am = a;
        ap(j) += h;
        am(j) -= h;
        fd.col(j) = (residual(ap, st, p, *fx.grams, *fx.basis) - residual(am, st, p, *fx.grams, *fx.basis)) / (2 * h);
    }
    EXPECT_LE((J - fd).cwiseAbs().maxCoeff(), 1e-6 * J.cwiseAbs().maxCoeff());
}

TEST(Newton, LinearProblemConvergesInOneIteration) {
    const auto fx = make(6);
    PhysicalParams p;
    p.rho = 0.0;
    p.k = 0.0;
    p.kernel = RelaxationKernel::exponential(0.5, 2.0);
    p.damping = DampingLaw::linear(1.5);
    AccelStage st;
    st.g_pred = random_vec(6, 21);
    st.v_pred = random_vec(6, 22);
    st.g_coef = 2.5e-5;
    st.v_coef = 5e-3;
    st.memory_known = random_vec(6, 23);
    st.memory_self = 5e-3;
    const auto nr = newton_solve_accel(st, p, *fx.grams, *fx.basis, Vec::Zero(6), 1e-8);
    EXPECT_TRUE(nr.converged);
    EXPECT_EQ(nr.iterations, 1);
}

TEST(Simulator, ScalarOscillatorMatchesNewmarkRecurrence) {
    // one mode, no kernel, damping or source: (1 + k^4)(a + g) = 0, so omega = 1 exactly.
    // Average acceleration advances the phase by Omega dt with cos(Omega dt) = (1 - w^2/4)/(1 + w^2/4).
    const auto fx = make(1);
    SimulationSetup s;
    s.basis = fx.basis;
    s.grams = fx.grams;
    s.params.rho = 0.0;
    s.params.k = 0.0;
    s.dt = 0.05;
    s.T = 20.0;
    s.g0 = Vec::Constant(1, 0.7);
    s.v0 = Vec::Zero(1);
    const auto traj = run(s);
    ASSERT_FALSE(traj.diverged);
    const double w = s.dt;
    const double Omega = std::acos((1 - w * w / 4) / (1 + w * w / 4)) / s.dt;
    for (std::size_t i = 0; i < traj.states.size(); i += 37)
        EXPECT_NEAR(traj.states[i].g(0), 0.7 * std::cos(Omega * traj.states[i].t), 1e-10);
    // the discrete frequency approaches 1 at second order
    EXPECT_NEAR(Omega, 1.0, s.dt * s.dt / 12.0 * 1.01);
}

TEST(Simulator, ZeroStateStaysZero) {
    const auto fx = make(4);
    SimulationSetup s;
    s.basis = fx.basis;
    s.grams = fx.grams;
    s.params.rho = 1.0;
    s.params.k = 0.5;
    s.params.sigma = 0.0;
    s.params.kernel = RelaxationKernel::exponential(0.5, 1.0);
    s.params.damping = DampingLaw::origin_power(3.0, 0.5);
    s.dt = 0.01;
    s.T = 0.5;
    s.g0 = Vec::Zero(4);
    s.v0 = Vec::Zero(4);
    const auto traj = run(s);
    ASSERT_FALSE(traj.diverged);
    for (const auto& st : traj.states) {
        EXPECT_TRUE(st.g.isZero(0.0));
        EXPECT_TRUE(st.v.isZero(0.0));
    }
}

TEST(Simulator, ZeroHorizonReturnsInitialState) {
    const auto fx = make(3);
    SimulationSetup s;
    s.basis = fx.basis;
    s.grams = fx.grams;
    s.dt = 0.01;
    s.T = 0.0;
    s.g0 = random_vec(3, 5);
    s.v0 = random_vec(3, 6);
    const auto traj = run(s);
    ASSERT_EQ(traj.states.size(), 1u);
    EXPECT_EQ(traj.states[0].g, s.g0);
    EXPECT_EQ(traj.history.size(), 1u);
    s.T = -1.0;
    EXPECT_THROW(run(s), InputError);
}

TEST(Simulator, RejectsBadSetup) {
    const auto fx = make(3);
    SimulationSetup s;
    s.basis = fx.basis;
    s.grams = fx.grams;
    s.g0 = Vec::Zero(2);
    s.v0 = Vec::Zero(3);
    EXPECT_THROW(Simulator{s}, InputError);
}

TEST(Simulator, StepMemoryEqualsHistoryTrapezoid) {
    // the implicit stage memory must be the trapezoid on the committed history
    const auto fx = make(4);
    SimulationSetup s;
    s.basis = fx.basis;
    s.grams = fx.grams;
    s.params.rho = 0.0;
    s.params.k = 0.0;
    s.params.kernel = RelaxationKernel::exponential(0.5, 1.0);
    s.dt = 0.01;
    s.T = 0.3;
    s.g0 = random_vec(4, 31, 0.2);
    s.v0 = random_vec(4, 32, 0.2);
    const auto traj = run(s);
    const auto& H = traj.history;
    ASSERT_EQ(H.size(), traj.states.size());
    // linear problem: residual of each committed state with the frozen memory vanishes
    for (std::size_t j = 1; j < H.size(); j += 7) {
        std::vector<Vec> raw;
        for (std::size_t i = 0; i <= j; ++i) raw.push_back(H[i]);
        const Vec mem = oracle_memory(raw, s.params.kernel, fx.grams->M2, j, s.dt);
        const auto& st = traj.states[j];
        const Vec r = fx.grams->M0 * st.a + fx.grams->M2 * st.a + (fx.grams->M2 + fx.grams->M0) * st.g - mem;
        EXPECT_LE(r.lpNorm<Eigen::Infinity>(), 1e-9) << j;
    }
}
