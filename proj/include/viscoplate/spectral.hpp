#pragma once

// Clamped Galerkin space: clamped-clamped Euler beam modes on (0,L) and their tensor products on
// (0,L)^2, with Gauss-Legendre quadrature tables and the mass/gradient/bending Gram matrices.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "viscoplate/error.hpp"
#include "viscoplate/numerics.hpp"

namespace viscoplate {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Coordinates g_j of a field in the basis.
using FieldCoeffs = Vec;

/// First `count` positive roots of cos(b) cosh(b) = 1, bracketed in ((n+1/4)pi, (n+3/4)pi).
inline std::vector<double> beam_roots(int count) {
    if (count < 1) throw InputError("beam_roots: count must be >= 1");
    std::vector<double> roots;
    roots.reserve(count);
    // cos(b) - 1/cosh(b) has the same roots and stays O(1) for large b
    auto f = [](double b) { return std::cos(b) - 1.0 / std::cosh(b); };
    for (int n = 1; n <= count; ++n) {
        double lo = (n + 0.25) * std::numbers::pi;
        double hi = (n + 0.75) * std::numbers::pi;
        double flo = f(lo);
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (hi - lo <= 1e-15 * mid || mid <= lo || mid >= hi) break;
            const double fm = f(mid);
            if ((fm < 0.0) == (flo < 0.0)) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        roots.push_back(0.5 * (lo + hi));
    }
    return roots;
}

/// Value and first three derivatives of one L^2-normalized clamped beam mode.
class BeamMode {
public:
    BeamMode(double beta, double length) : beta_(beta), length_(length), k_(beta / length) {
        const double e = std::exp(-beta);
        const double s = std::sin(beta), c = std::cos(beta);
        const double dhat = 1.0 - e * e - 2.0 * s * e; // 2 e^{-b} (sinh b - sin b)
        sigma_ = (1.0 + e * e - 2.0 * c * e) / dhat;
        grow_ = (c - s - e) / dhat;
        decay_ = (1.0 - e * (s + c)) / dhat;
        norm_ = 1.0 / std::sqrt(length);
    }

    [[nodiscard]] double beta() const { return beta_; }
    [[nodiscard]] double wavenumber() const { return k_; }

    /// d^order/dx^order of the mode at x (order 0..4).
    [[nodiscard]] double eval(double x, int order) const {
        const double z = k_ * x;
        // cosh z - sigma sinh z = A + Bm, sinh z - sigma cosh z = A - Bm, evaluated without
        // the O(e^beta) cancellation
        const double A = grow_ * std::exp(z - beta_);
        const double Bm = decay_ * std::exp(-z);
        const double sz = std::sin(z), cz = std::cos(z);
        double v = 0.0;
        switch (order % 4) {
        case 0: v = (A + Bm) - cz + sigma_ * sz; break;
        case 1: v = (A - Bm) + sz + sigma_ * cz; break;
        case 2: v = (A + Bm) + cz - sigma_ * sz; break;
        case 3: v = (A - Bm) - sz - sigma_ * cz; break;
        }
        return norm_ * std::pow(k_, order) * v;
    }

private:
    double beta_, length_, k_;
    double sigma_ = 0.0, grow_ = 0.0, decay_ = 0.0, norm_ = 1.0;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Galerkin basis with its quadrature tables. Immutable after build_basis.
struct Basis {
    int spatial_dim = 1;
    int modes_per_axis = 0;
    double length = 1.0;
    int quad_order = 0;
    std::vector<double> roots;
    std::vector<BeamMode> modes;
    numerics::QuadratureRule rule_1d;

    Vec weights;  // tensor quadrature weights, one per node
    std::vector<Point> nodes;
    Mat phi;      // node x mode values
    Mat laplace;  // node x mode Laplacians
    Mat grad_x;   // node x mode d/dx
    Mat grad_y;   // node x mode d/dy (2D only)

    [[nodiscard]] int dim() const {
        return spatial_dim == 1 ? modes_per_axis : modes_per_axis * modes_per_axis;
    }
    [[nodiscard]] Eigen::Index node_count() const { return weights.size(); }

    /// Axis mode indices of flat mode j (2D flat index = ix * n + iy).
    [[nodiscard]] std::pair<int, int> axis_modes(int j) const {
        if (spatial_dim == 1) return {j, 0};
        return {j / modes_per_axis, j % modes_per_axis};
    }
};

/// Default Gauss order: 2n+4 is the floor, but the modes are not polynomials and at 2n+4 the Gram
/// matrices are off by ~1e-5; 3n+8 brings them to round-off for n up to 32.
inline int default_quad_order(int n) { return 3 * n + 8; }

/// 1D: w_j(x) from the beam roots, L^2-normalized. 2D: w_i(x) w_j(y).
inline Basis build_basis(int spatial_dim, int n, double length, int quad_order) {
    if (spatial_dim != 1 && spatial_dim != 2) throw InputError("spatial_dim must be 1 or 2");
    if (n < 1) throw InputError("modes per axis must be >= 1");
    if (!(length > 0.0)) throw InputError("domain length must be > 0");
    if (quad_order < 2 * n + 4)
        throw InputError("quad_order must be >= 2n+4 to resolve the highest mode products");

    Basis b;
    b.spatial_dim = spatial_dim;
    b.modes_per_axis = n;
    b.length = length;
    b.quad_order = quad_order;
    b.roots = beam_roots(n);
    for (double beta : b.roots) b.modes.emplace_back(beta, length);
    b.rule_1d = numerics::gauss_legendre(quad_order, 0.0, length);

    const int q = quad_order;
    Mat v1(q, n), d1(q, n), d2(q, n);
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < n; ++j) {
            v1(i, j) = b.modes[j].eval(b.rule_1d.nodes[i], 0);
            d1(i, j) = b.modes[j].eval(b.rule_1d.nodes[i], 1);
            d2(i, j) = b.modes[j].eval(b.rule_1d.nodes[i], 2);
        }

    if (spatial_dim == 1) {
        b.weights = Eigen::Map<const Vec>(b.rule_1d.weights.data(), q);
        for (double x : b.rule_1d.nodes) b.nodes.push_back({x, 0.0});
        b.phi = v1;
        b.laplace = d2;
        b.grad_x = d1;
        b.grad_y = Mat::Zero(q, n);
        return b;
    }

    const int m = n * n;
    const Eigen::Index nq = static_cast<Eigen::Index>(q) * q;
    b.weights.resize(nq);
    b.phi.resize(nq, m);
    b.laplace.resize(nq, m);
    b.grad_x.resize(nq, m);
    b.grad_y.resize(nq, m);
    for (int ix = 0; ix < q; ++ix)
        for (int iy = 0; iy < q; ++iy) {
            const Eigen::Index node = static_cast<Eigen::Index>(ix) * q + iy;
            b.weights(node) = b.rule_1d.weights[ix] * b.rule_1d.weights[iy];
            b.nodes.push_back({b.rule_1d.nodes[ix], b.rule_1d.nodes[iy]});
            for (int jx = 0; jx < n; ++jx)
                for (int jy = 0; jy < n; ++jy) {
                    const int j = jx * n + jy;
                    b.phi(node, j) = v1(ix, jx) * v1(iy, jy);
                    b.laplace(node, j) = d2(ix, jx) * v1(iy, jy) + v1(ix, jx) * d2(iy, jy);
                    b.grad_x(node, j) = d1(ix, jx) * v1(iy, jy);
                    b.grad_y(node, j) = v1(ix, jx) * d1(iy, jy);
                }
        }
    return b;
}

/// Mass, gradient and bending Gram matrices.
struct GramSet {
    Mat M0;
    Mat M1;
    Mat M2;
    Eigen::LLT<Mat> chol_M0;
    Eigen::LLT<Mat> chol_M2;
    double m2_condition = 0.0;
};

inline Mat weighted_gram(const Mat& a, const Vec& w, const Mat& b) {
    return a.transpose() * w.asDiagonal() * b;
}

inline GramSet assemble_grams(const Basis& basis) {
    GramSet g;
    const Vec& w = basis.weights;
    g.M0 = weighted_gram(basis.phi, w, basis.phi);
    g.M1 = weighted_gram(basis.grad_x, w, basis.grad_x);
    if (basis.spatial_dim == 2) g.M1 += weighted_gram(basis.grad_y, w, basis.grad_y);
    g.M2 = weighted_gram(basis.laplace, w, basis.laplace);
    for (Mat* m : {&g.M0, &g.M1, &g.M2}) *m = 0.5 * (*m + m->transpose());

    g.chol_M0.compute(g.M0);
    g.chol_M2.compute(g.M2);
    Eigen::LLT<Mat> chol_M1(g.M1);
    if (g.chol_M0.info() != Eigen::Success || g.chol_M2.info() != Eigen::Success ||
        chol_M1.info() != Eigen::Success)
        throw AssemblyError("Gram matrix is not SPD (quadrature underresolved?)");

    Eigen::SelfAdjointEigenSolver<Mat> eig(g.M2, Eigen::EigenvaluesOnly);
    g.m2_condition = eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff();
    return g;
}

/// L^2 projection: M0^{-1} [\int f w_j].
inline FieldCoeffs project_initial(const std::function<double(double, double)>& field,
                                   const Basis& basis, const GramSet& grams) {
    Vec f(basis.node_count());
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = field(basis.nodes[i].x, basis.nodes[i].y);
    const Vec load = basis.phi.transpose() * basis.weights.cwiseProduct(f);
    return grams.chol_M0.solve(load);
}

/// Largest generalized eigenvalue of M1 x = lambda M2 x by power iteration on M2^{-1} M1.
inline double estimate_cp(const GramSet& grams, double tol = 1e-10, int max_iter = 100000) {
    const Eigen::Index m = grams.M1.rows();
    Vec x(m);
    for (Eigen::Index j = 0; j < m; ++j) x(j) = 1.0 / (1.0 + static_cast<double>(j));
    double lambda = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vec y = grams.chol_M2.solve(grams.M1 * x);
        const double next = y.dot(grams.M1 * y) / y.dot(grams.M2 * y);
        x = y / std::sqrt(y.dot(grams.M2 * y));
        if (it > 0 && std::abs(next - lambda) <= tol * std::abs(next)) return next;
        lambda = next;
    }
    return lambda;
}

namespace detail {
inline void require_inside(const Basis& basis, const Point& p) {
    const double L = basis.length;
    const double tol = 1e-12 * L;
    auto bad = [&](double c) { return !(c >= -tol && c <= L + tol); };
    if (bad(p.x) || (basis.spatial_dim == 2 && bad(p.y)))
        throw InputError("evaluation point outside the domain");
}

template <class ModeFn>
Vec synthesize(const FieldCoeffs& coeffs, const Basis& basis, std::span<const Point> points,
               ModeFn&& mode_value) {
    if (coeffs.size() != basis.dim()) throw InputError("coefficient vector has wrong length");
    Vec out(static_cast<Eigen::Index>(points.size()));
    for (std::size_t p = 0; p < points.size(); ++p) {
        require_inside(basis, points[p]);
        double acc = 0.0;
        for (int j = 0; j < basis.dim(); ++j) acc += coeffs(j) * mode_value(j, points[p]);
        out(static_cast<Eigen::Index>(p)) = acc;
    }
    return out;
}
} // namespace detail

/// sum_j g_j w_j at the given points.
inline Vec eval_field(const FieldCoeffs& coeffs, const Basis& basis, std::span<const Point> points) {
    return detail::synthesize(coeffs, basis, points, [&](int j, const Point& p) {
        const auto [ix, iy] = basis.axis_modes(j);
        if (basis.spatial_dim == 1) return basis.modes[ix].eval(p.x, 0);
        return basis.modes[ix].eval(p.x, 0) * basis.modes[iy].eval(p.y, 0);
    });
}

/// sum_j g_j Laplacian(w_j) at the given points.
inline Vec eval_laplacian(const FieldCoeffs& coeffs, const Basis& basis,
                          std::span<const Point> points) {
    return detail::synthesize(coeffs, basis, points, [&](int j, const Point& p) {
        const auto [ix, iy] = basis.axis_modes(j);
        if (basis.spatial_dim == 1) return basis.modes[ix].eval(p.x, 2);
        return basis.modes[ix].eval(p.x, 2) * basis.modes[iy].eval(p.y, 0) +
               basis.modes[ix].eval(p.x, 0) * basis.modes[iy].eval(p.y, 2);
    });
}

/// Outward normal derivative of mode j at a boundary point.
inline double mode_normal_derivative(const Basis& basis, int j, const Point& p) {
    const auto [ix, iy] = basis.axis_modes(j);
    const double L = basis.length;
    if (basis.spatial_dim == 1) {
        const double d = basis.modes[ix].eval(p.x, 1);
        return p.x < 0.5 * L ? -d : d;
    }
    const bool on_x_edge = std::abs(p.x) < 1e-14 || std::abs(p.x - L) < 1e-14;
    if (on_x_edge) {
        const double d = basis.modes[ix].eval(p.x, 1) * basis.modes[iy].eval(p.y, 0);
        return p.x < 0.5 * L ? -d : d;
    }
    const double d = basis.modes[ix].eval(p.x, 0) * basis.modes[iy].eval(p.y, 1);
    return p.y < 0.5 * L ? -d : d;
}

} // namespace viscoplate
