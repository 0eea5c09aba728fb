#pragma once

// Relaxation kernels, convexity moduli, damping laws and the decay envelopes built from them.
// Every object here is immutable once constructed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "viscoplate/error.hpp"
#include "viscoplate/numerics.hpp"

namespace viscoplate {

using ScalarFn = std::function<double(double)>;

// ---------------------------------------------------------------------------------------------
// RelaxationKernel
// ---------------------------------------------------------------------------------------------

enum class KernelFamily { none, exponential, power, tabulated };

/// Memory kernel b(t): b0 e^{-a t}, b0 (1+t)^{-q}, or a piecewise-linear table that is zero past
/// its horizon.
class RelaxationKernel {
public:
    RelaxationKernel() = default;

    static RelaxationKernel none() { return {}; }

    static RelaxationKernel exponential(double b0, double a) {
        if (!(b0 >= 0.0) || !(a > 0.0)) throw InputError("exp kernel needs b0 >= 0 and a > 0");
        RelaxationKernel k;
        k.family_ = KernelFamily::exponential;
        k.params_ = {b0, a};
        return k;
    }

    static RelaxationKernel power(double b0, double q) {
        if (!(b0 >= 0.0)) throw InputError("power kernel needs b0 >= 0");
        if (!(q > 1.0)) throw InputError("power kernel needs q > 1 (integrability)");
        RelaxationKernel k;
        k.family_ = KernelFamily::power;
        k.params_ = {b0, q};
        return k;
    }

    static RelaxationKernel tabulated(std::vector<double> times, std::vector<double> values) {
        if (times.size() < 2 || times.size() != values.size())
            throw InputError("tabulated kernel needs >= 2 matching samples");
        if (times.front() != 0.0) throw InputError("tabulated kernel must start at t = 0");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1])) throw InputError("tabulated kernel times must increase");
        RelaxationKernel k;
        k.family_ = KernelFamily::tabulated;
        k.table_ = std::make_shared<const Table>(Table{std::move(times), std::move(values)});
        return k;
    }

    [[nodiscard]] KernelFamily family() const { return family_; }
    [[nodiscard]] const std::vector<double>& params() const { return params_; }
    [[nodiscard]] bool is_zero() const {
        return family_ == KernelFamily::none ||
               (family_ != KernelFamily::tabulated && params_[0] == 0.0);
    }

    /// Time beyond which b is identically zero (infinite for the analytic families).
    [[nodiscard]] double horizon() const {
        return family_ == KernelFamily::tabulated ? table_->t.back()
                                                  : std::numeric_limits<double>::infinity();
    }

    [[nodiscard]] double value(double t) const {
        switch (family_) {
        case KernelFamily::none: return 0.0;
        case KernelFamily::exponential: return params_[0] * std::exp(-params_[1] * t);
        case KernelFamily::power: return params_[0] * std::pow(1.0 + t, -params_[1]);
        case KernelFamily::tabulated:
            if (t > table_->t.back()) return 0.0;
            return numerics::interp_linear(table_->t, table_->b, t);
        }
        return 0.0;
    }
    double operator()(double t) const { return value(t); }

    /// b'(t); right derivative at table knots.
    [[nodiscard]] double derivative(double t) const {
        switch (family_) {
        case KernelFamily::none: return 0.0;
        case KernelFamily::exponential: return -params_[1] * value(t);
        case KernelFamily::power:
            return -params_[1] * params_[0] * std::pow(1.0 + t, -params_[1] - 1.0);
        case KernelFamily::tabulated: {
            const auto& tab = *table_;
            if (t >= tab.t.back()) return 0.0;
            auto it = std::upper_bound(tab.t.begin(), tab.t.end(), t);
            const auto i = static_cast<std::size_t>(it - tab.t.begin()) - 1;
            return (tab.b[i + 1] - tab.b[i]) / (tab.t[i + 1] - tab.t[i]);
        }
        }
        return 0.0;
    }

    /// \int_0^t b(s) ds.
    [[nodiscard]] double integral(double t) const {
        switch (family_) {
        case KernelFamily::none: return 0.0;
        case KernelFamily::exponential:
            return params_[0] * (-std::expm1(-params_[1] * t)) / params_[1];
        case KernelFamily::power: {
            const double q = params_[1];
            return params_[0] * (1.0 - std::pow(1.0 + t, 1.0 - q)) / (q - 1.0);
        }
        case KernelFamily::tabulated: {
            const auto& tab = *table_;
            double acc = 0.0;
            for (std::size_t i = 0; i + 1 < tab.t.size() && tab.t[i] < t; ++i) {
                const double hi = std::min(t, tab.t[i + 1]);
                const double bhi = numerics::interp_linear(tab.t, tab.b, hi);
                acc += 0.5 * (tab.b[i] + bhi) * (hi - tab.t[i]);
            }
            return acc;
        }
        }
        return 0.0;
    }

    [[nodiscard]] double total_integral() const {
        switch (family_) {
        case KernelFamily::none: return 0.0;
        case KernelFamily::exponential: return params_[0] / params_[1];
        case KernelFamily::power: return params_[0] / (params_[1] - 1.0);
        case KernelFamily::tabulated: return integral(table_->t.back());
        }
        return 0.0;
    }

    /// l = 1 - \int_0^\infty b.
    [[nodiscard]] double residual_stiffness() const { return 1.0 - total_integral(); }

    [[nodiscard]] std::string describe() const;

private:
    struct Table {
        std::vector<double> t;
        std::vector<double> b;
    };
    KernelFamily family_ = KernelFamily::none;
    std::vector<double> params_;
    std::shared_ptr<const Table> table_;
};

// ---------------------------------------------------------------------------------------------
// ConvexModulus
// ---------------------------------------------------------------------------------------------

enum class ModulusForm { linear, power, custom };

/// B on (0, r1] (linear alpha*s, or coef*s^p with p > 1, or user supplied), optionally carrying
/// the C^2 quadratic continuation beyond r1 produced by extend_modulus.
class ConvexModulus {
public:
    struct Extension {
        double value;
        double slope;
        double curvature;
    };
    struct CustomForm {
        ScalarFn value;
        ScalarFn derivative;
        ScalarFn second_derivative;
    };

    static ConvexModulus linear(double slope) {
        if (!(slope > 0.0)) throw InputError("linear modulus needs slope > 0");
        ConvexModulus m;
        m.form_ = ModulusForm::linear;
        m.slope_ = slope;
        m.r1_ = std::numeric_limits<double>::infinity();
        return m;
    }

    static ConvexModulus power(double exponent, double r1, double coef = 1.0) {
        if (!(exponent > 1.0)) throw InputError("power modulus needs exponent > 1");
        if (!(r1 > 0.0) || !(coef > 0.0)) throw InputError("power modulus needs r1 > 0, coef > 0");
        ConvexModulus m;
        m.form_ = ModulusForm::power;
        m.exponent_ = exponent;
        m.slope_ = coef;
        m.r1_ = r1;
        return m;
    }

    static ConvexModulus custom(CustomForm fns, double r1) {
        if (!fns.value || !fns.derivative || !fns.second_derivative)
            throw InputError("custom modulus needs value, derivative and second derivative");
        if (!(r1 > 0.0)) throw InputError("custom modulus needs r1 > 0");
        ConvexModulus m;
        m.form_ = ModulusForm::custom;
        m.custom_ = std::make_shared<const CustomForm>(std::move(fns));
        m.r1_ = r1;
        return m;
    }

    [[nodiscard]] ModulusForm form() const { return form_; }
    [[nodiscard]] bool is_linear() const { return form_ == ModulusForm::linear; }
    [[nodiscard]] double r1() const { return r1_; }
    [[nodiscard]] double exponent() const { return exponent_; }
    [[nodiscard]] double coefficient() const { return slope_; }
    [[nodiscard]] const std::optional<Extension>& extension() const { return extension_; }

    [[nodiscard]] double value(double s) const {
        if (extension_ && s > r1_) {
            const double d = s - r1_;
            return extension_->value + extension_->slope * d + 0.5 * extension_->curvature * d * d;
        }
        return base_value(s);
    }
    double operator()(double s) const { return value(s); }

    [[nodiscard]] double derivative(double s) const {
        if (extension_ && s > r1_) return extension_->slope + extension_->curvature * (s - r1_);
        switch (form_) {
        case ModulusForm::linear: return slope_;
        case ModulusForm::power: return slope_ * exponent_ * std::pow(s, exponent_ - 1.0);
        case ModulusForm::custom: return custom_->derivative(s);
        }
        return 0.0;
    }

    [[nodiscard]] double second_derivative(double s) const {
        if (extension_ && s > r1_) return extension_->curvature;
        switch (form_) {
        case ModulusForm::linear: return 0.0;
        case ModulusForm::power:
            return slope_ * exponent_ * (exponent_ - 1.0) * std::pow(s, exponent_ - 2.0);
        case ModulusForm::custom: return custom_->second_derivative(s);
        }
        return 0.0;
    }

    /// Inverse of the (extended) modulus; closed form for linear and power, bisection otherwise.
    [[nodiscard]] double inverse(double y) const {
        if (y <= 0.0) return 0.0;
        switch (form_) {
        case ModulusForm::linear: return y / slope_;
        case ModulusForm::power: {
            if (extension_ && y > extension_->value) {
                const auto& e = *extension_;
                const double disc = e.slope * e.slope + 2.0 * e.curvature * (y - e.value);
                return r1_ + 2.0 * (y - e.value) / (e.slope + std::sqrt(disc));
            }
            return std::pow(y / slope_, 1.0 / exponent_);
        }
        case ModulusForm::custom:
            return numerics::invert_increasing([this](double s) { return value(s); }, y, 0.0,
                                               std::isfinite(r1_) ? r1_ : 1.0, 0.0);
        }
        return 0.0;
    }

    /// (B')^{-1}(tau) on (0, r1] by bisection.
    [[nodiscard]] double derivative_inverse(double tau) const {
        if (is_linear()) throw DomainError("derivative of a linear modulus is not invertible");
        return numerics::bisect_increasing([&](double s) { return derivative(s) - tau; }, 0.0, r1_);
    }

    [[nodiscard]] std::string describe() const;

private:
    friend ConvexModulus extend_modulus(const ConvexModulus& modulus);

    [[nodiscard]] double base_value(double s) const {
        switch (form_) {
        case ModulusForm::linear: return slope_ * s;
        case ModulusForm::power: return s <= 0.0 ? 0.0 : slope_ * std::pow(s, exponent_);
        case ModulusForm::custom: return custom_->value(s);
        }
        return 0.0;
    }

    ModulusForm form_ = ModulusForm::linear;
    double slope_ = 1.0;
    double exponent_ = 1.0;
    double r1_ = std::numeric_limits<double>::infinity();
    std::shared_ptr<const CustomForm> custom_;
    std::optional<Extension> extension_;
};

inline constexpr double kExtensionCurvatureFloor = 1e-8;

/// C^2 quadratic continuation of B beyond r1. Linear moduli are returned unchanged.
inline ConvexModulus extend_modulus(const ConvexModulus& modulus) {
    if (modulus.is_linear()) return modulus;
    const double r = modulus.r1_;
    const double curv = modulus.second_derivative(r);
    if (!std::isfinite(curv)) throw DomainError("extend_modulus: B''(r1) is not finite");
    if (!(modulus.derivative(r) > 0.0)) throw DomainError("extend_modulus: B'(r1) must be > 0");
    ConvexModulus out = modulus;
    out.extension_ = ConvexModulus::Extension{modulus.base_value(r), modulus.derivative(r),
                                              std::max(curv, kExtensionCurvatureFloor)};
    return out;
}

/// Young conjugate K*(tau) = tau (K')^{-1}(tau) - K((K')^{-1}(tau)) for tau in (0, K'(r1)).
inline double convex_conjugate(const ConvexModulus& K, double tau) {
    if (K.is_linear()) throw DomainError("convex_conjugate: modulus must be strictly convex");
    const double upper = K.derivative(K.r1());
    if (!(tau > 0.0) || !(tau < upper))
        throw DomainError("convex_conjugate: tau outside (0, K'(r))");
    const double s = K.derivative_inverse(tau);
    return tau * s - K.value(s);
}

// ---------------------------------------------------------------------------------------------
// XiWeight
// ---------------------------------------------------------------------------------------------

enum class XiForm { constant, rational, tabulated };

/// Positive nonincreasing weight xi(t): constant, scale/(1+t)^theta, or a table.
class XiWeight {
public:
    static XiWeight constant(double xi0) {
        if (!(xi0 > 0.0)) throw InputError("xi constant must be > 0");
        XiWeight x;
        x.form_ = XiForm::constant;
        x.scale_ = xi0;
        return x;
    }

    static XiWeight rational(double theta, double scale = 1.0) {
        if (!(theta > 0.0 && theta <= 1.0)) throw InputError("xi rational needs 0 < theta <= 1");
        if (!(scale > 0.0)) throw InputError("xi rational needs scale > 0");
        XiWeight x;
        x.form_ = XiForm::rational;
        x.scale_ = scale;
        x.theta_ = theta;
        return x;
    }

    static XiWeight tabulated(std::vector<double> times, std::vector<double> values) {
        if (times.size() < 2 || times.size() != values.size())
            throw InputError("tabulated xi needs >= 2 matching samples");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1])) throw InputError("tabulated xi times must increase");
        for (double v : values)
            if (!(v > 0.0)) throw InputError("tabulated xi must be positive");
        XiWeight x;
        x.form_ = XiForm::tabulated;
        x.table_t_ = std::make_shared<const std::vector<double>>(std::move(times));
        x.table_v_ = std::make_shared<const std::vector<double>>(std::move(values));
        return x;
    }

    [[nodiscard]] XiForm form() const { return form_; }
    [[nodiscard]] double scale() const { return scale_; }
    [[nodiscard]] double theta() const { return theta_; }

    [[nodiscard]] double value(double t) const {
        switch (form_) {
        case XiForm::constant: return scale_;
        case XiForm::rational: return scale_ * std::pow(1.0 + t, -theta_);
        case XiForm::tabulated: return numerics::interp_linear(*table_t_, *table_v_, t);
        }
        return 0.0;
    }
    double operator()(double t) const { return value(t); }

    /// \int_{t0}^{t1} xi(s)^p ds (closed form for constant/rational, adaptive Simpson otherwise).
    [[nodiscard]] double power_integral(double t0, double t1, double p = 1.0) const {
        if (t1 <= t0) return 0.0;
        switch (form_) {
        case XiForm::constant: return std::pow(scale_, p) * (t1 - t0);
        case XiForm::rational: {
            const double e = theta_ * p;
            const double sp = std::pow(scale_, p);
            if (std::abs(e - 1.0) < 1e-14) return sp * (std::log1p(t1) - std::log1p(t0));
            return sp * (std::pow(1.0 + t1, 1.0 - e) - std::pow(1.0 + t0, 1.0 - e)) / (1.0 - e);
        }
        case XiForm::tabulated: {
            // integrate knot to knot so the interpolant's kinks never sit inside a panel
            const auto& ts = *table_t_;
            std::vector<double> cuts{t0};
            for (double k : ts)
                if (k > t0 && k < t1) cuts.push_back(k);
            cuts.push_back(t1);
            double acc = 0.0;
            auto f = [&](double s) { return std::pow(value(s), p); };
            for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
                acc += numerics::adaptive_simpson(f, cuts[i], cuts[i + 1], 1e-13);
            return acc;
        }
        }
        return 0.0;
    }

    [[nodiscard]] double integral(double t0, double t1) const { return power_integral(t0, t1, 1.0); }

    [[nodiscard]] std::string describe() const;

private:
    XiForm form_ = XiForm::constant;
    double scale_ = 1.0;
    double theta_ = 0.0;
    std::shared_ptr<const std::vector<double>> table_t_, table_v_;
};

// ---------------------------------------------------------------------------------------------
// DampingLaw
// ---------------------------------------------------------------------------------------------

enum class DampingForm { none, linear, origin_power, custom };

/// Frictional nonlinearity h together with its origin profile h1, the growth constants c1, c2
/// valid for |s| >= eps, and the convexifier H(s) = sqrt(s) h1(sqrt(s)) on (0, r2].
class DampingLaw {
public:
    struct CustomForm {
        ScalarFn h;
        ScalarFn dh;
        ScalarFn h1;
        ScalarFn h1_inverse;
        double c1 = 1.0;
        double c2 = 1.0;
        double eps = 1.0;
        double r2 = 1.0;
        bool h1_linear = false;
    };

    static DampingLaw none() { return {}; }

    /// h(s) = c s, with h1(s) = min(c, 1/c) s so that the origin sandwich holds.
    static DampingLaw linear(double c) {
        if (!(c > 0.0)) throw InputError("linear damping needs c > 0");
        DampingLaw d;
        d.form_ = DampingForm::linear;
        d.coef_ = c;
        d.c1_ = d.c2_ = c;
        d.eps_ = 1.0;
        d.r2_ = 1.0;
        return d;
    }

    /// h(s) = |s|^{p-1} s for |s| <= eps, continued linearly as eps^{p-1} s beyond.
    static DampingLaw origin_power(double p, double eps) {
        if (!(p > 1.0)) throw InputError("origin-power damping needs p > 1");
        if (!(eps > 0.0 && eps <= 1.0)) throw InputError("origin-power damping needs 0 < eps <= 1");
        DampingLaw d;
        d.form_ = DampingForm::origin_power;
        d.exponent_ = p;
        d.eps_ = eps;
        d.c1_ = d.c2_ = std::pow(eps, p - 1.0);
        d.r2_ = eps * eps;
        return d;
    }

    static DampingLaw custom(CustomForm fns) {
        if (!fns.h || !fns.dh || !fns.h1 || !fns.h1_inverse)
            throw InputError("custom damping needs h, h', h1 and h1^{-1}");
        DampingLaw d;
        d.form_ = DampingForm::custom;
        d.c1_ = fns.c1;
        d.c2_ = fns.c2;
        d.eps_ = fns.eps;
        d.r2_ = fns.r2;
        d.custom_ = std::make_shared<const CustomForm>(std::move(fns));
        return d;
    }

    [[nodiscard]] DampingForm form() const { return form_; }
    [[nodiscard]] bool is_zero() const { return form_ == DampingForm::none; }
    [[nodiscard]] double c1() const { return c1_; }
    [[nodiscard]] double c2() const { return c2_; }
    [[nodiscard]] double eps() const { return eps_; }
    [[nodiscard]] double r2() const { return r2_; }
    [[nodiscard]] double coefficient() const { return coef_; }
    [[nodiscard]] double exponent() const { return exponent_; }
    [[nodiscard]] bool h1_is_linear() const {
        switch (form_) {
        case DampingForm::none:
        case DampingForm::linear: return true;
        case DampingForm::origin_power: return false;
        case DampingForm::custom: return custom_->h1_linear;
        }
        return true;
    }

    [[nodiscard]] double value(double s) const {
        switch (form_) {
        case DampingForm::none: return 0.0;
        case DampingForm::linear: return coef_ * s;
        case DampingForm::origin_power:
            if (std::abs(s) <= eps_) return std::pow(std::abs(s), exponent_ - 1.0) * s;
            return c1_ * s;
        case DampingForm::custom: return custom_->h(s);
        }
        return 0.0;
    }
    double operator()(double s) const { return value(s); }

    [[nodiscard]] double derivative(double s) const {
        switch (form_) {
        case DampingForm::none: return 0.0;
        case DampingForm::linear: return coef_;
        case DampingForm::origin_power:
            if (std::abs(s) <= eps_) return exponent_ * std::pow(std::abs(s), exponent_ - 1.0);
            return c1_;
        case DampingForm::custom: return custom_->dh(s);
        }
        return 0.0;
    }

    [[nodiscard]] double h1(double s) const {
        switch (form_) {
        case DampingForm::none: return 0.0;
        case DampingForm::linear: return std::min(coef_, 1.0 / coef_) * s;
        case DampingForm::origin_power: return std::pow(s, exponent_);
        case DampingForm::custom: return custom_->h1(s);
        }
        return 0.0;
    }

    [[nodiscard]] double h1_inverse(double s) const {
        switch (form_) {
        case DampingForm::none: return 0.0;
        case DampingForm::linear: return s / std::min(coef_, 1.0 / coef_);
        case DampingForm::origin_power: return std::pow(s, 1.0 / exponent_);
        case DampingForm::custom: return custom_->h1_inverse(s);
        }
        return 0.0;
    }

    /// H(s) = sqrt(s) h1(sqrt(s)).
    [[nodiscard]] double convexifier_value(double s) const {
        const double r = std::sqrt(s);
        return r * h1(r);
    }

    /// H as a modulus object (power s^{(p+1)/2} for the origin-power law).
    [[nodiscard]] ConvexModulus convexifier() const {
        switch (form_) {
        case DampingForm::none: throw DomainError("no damping: convexifier undefined");
        case DampingForm::linear: return ConvexModulus::linear(std::min(coef_, 1.0 / coef_));
        case DampingForm::origin_power:
            return ConvexModulus::power(0.5 * (exponent_ + 1.0), r2_);
        case DampingForm::custom: {
            auto self = *this;
            auto H = [self](double s) { return self.convexifier_value(s); };
            auto dH = [H](double s) {
                const double h = 1e-6 * std::max(s, 1e-6);
                return (H(s + h) - H(std::max(s - h, 0.0))) / (s + h - std::max(s - h, 0.0));
            };
            auto d2H = [H](double s) {
                const double h = 1e-4 * std::max(s, 1e-4);
                return (H(s + h) - 2.0 * H(s) + H(std::max(s - h, 0.0))) / (h * h);
            };
            return ConvexModulus::custom({H, dH, d2H}, r2_);
        }
        }
        throw DomainError("unknown damping form");
    }

    [[nodiscard]] std::string describe() const;

private:
    DampingForm form_ = DampingForm::none;
    double coef_ = 0.0;
    double exponent_ = 1.0;
    double c1_ = 0.0, c2_ = 0.0, eps_ = 1.0, r2_ = 1.0;
    std::shared_ptr<const CustomForm> custom_;
};

// ---------------------------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------------------------

struct ValidationReport {
    bool passed = true;
    std::vector<std::string> violations;
    std::optional<double> l;
    double max_violation = 0.0;

    void fail(std::string what) {
        passed = false;
        violations.push_back(std::move(what));
    }
};

namespace detail {
inline std::string fmt_num(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

inline void require_time_grid(std::span<const double> grid) {
    if (grid.empty()) throw InputError("empty time grid");
    if (grid.front() != 0.0) throw InputError("time grid must start at 0");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw InputError("time grid must be strictly increasing");
}
} // namespace detail

/// Checks b(0) > 0, b nonincreasing on the grid and 0 < l < 1.
inline ValidationReport validate_h1(const RelaxationKernel& kernel, std::span<const double> grid) {
    detail::require_time_grid(grid);
    ValidationReport rep;
    const double l = kernel.residual_stiffness();
    rep.l = l;
    if (!(kernel.value(0.0) > 0.0)) rep.fail("b(0) <= 0");
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double prev = kernel.value(grid[i - 1]);
        const double cur = kernel.value(grid[i]);
        if (cur > prev) {
            rep.max_violation = std::max(rep.max_violation, cur - prev);
            if (rep.passed || rep.violations.back().rfind("b increases", 0) != 0)
                rep.fail("b increases at t=" + detail::fmt_num(grid[i]));
        }
    }
    if (!(l > 0.0)) rep.fail("l <= 0 (l=" + detail::fmt_num(l) + ")");
    if (!(l < 1.0)) rep.fail("l >= 1 (b vanishes)");
    return rep;
}

inline constexpr double kH2RelTol = 1e-12;

/// Checks b'(t) <= -xi(t) B(b(t)) pointwise on the grid at relative tolerance 1e-12.
inline ValidationReport validate_h2(const RelaxationKernel& kernel, const ConvexModulus& modulus,
                                    const XiWeight& xi, std::span<const double> grid) {
    detail::require_time_grid(grid);
    if (!modulus.is_linear() && kernel.value(0.0) > modulus.r1() * (1.0 + 1e-15))
        throw DomainError("modulus domain (0, r1] does not contain the range of b");
    ValidationReport rep;
    rep.l = kernel.residual_stiffness();
    bool reported = false;
    for (double t : grid) {
        const double lhs = kernel.derivative(t);
        const double rhs = -xi.value(t) * modulus.value(kernel.value(t));
        const double excess = lhs - rhs;
        const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
        if (excess > kH2RelTol * scale) {
            rep.max_violation = std::max(rep.max_violation, excess / scale);
            if (!reported) {
                rep.fail("b' > -xi B(b) at t=" + detail::fmt_num(t));
                reported = true;
            }
        }
    }
    return rep;
}

/// Checks monotonicity, the sign condition, both sandwich regimes and convexity of H on (0, r2].
inline ValidationReport validate_h3(const DampingLaw& damping, std::span<const double> grid) {
    if (grid.empty()) throw InputError("empty value grid");
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (std::abs(grid[i] + grid[grid.size() - 1 - i]) > 1e-12 * (1.0 + std::abs(grid[i])))
            throw InputError("value grid must be symmetric about 0");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw InputError("value grid must be strictly increasing");

    ValidationReport rep;
    constexpr double rel = 1e-12;
    bool mono_ok = true, sign_ok = true, small_ok = true, large_ok = true;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double s = grid[i];
        const double h = damping.value(s);
        if (i > 0 && h < damping.value(grid[i - 1])) mono_ok = false;
        if (s == 0.0) {
            if (h != 0.0) sign_ok = false;
            continue;
        }
        if (!(s * h > 0.0)) sign_ok = false;
        const double as = std::abs(s), ah = std::abs(h);
        if (as <= damping.eps()) {
            if (damping.h1(as) > ah * (1.0 + rel) || ah > damping.h1_inverse(as) * (1.0 + rel))
                small_ok = false;
        }
        if (as >= damping.eps()) {
            if (damping.c1() * as > ah * (1.0 + rel) || ah > damping.c2() * as * (1.0 + rel))
                large_ok = false;
        }
    }
    if (!mono_ok) rep.fail("h is not nondecreasing");
    if (!sign_ok) rep.fail("sign condition s h(s) > 0 violated");
    if (!small_ok) rep.fail("h1(|s|) <= |h(s)| <= h1^{-1}(|s|) violated for |s| <= eps");
    if (!large_ok) rep.fail("c1|s| <= |h(s)| <= c2|s| violated for |s| >= eps");

    if (!damping.h1_is_linear() && damping.r2() > 0.0) {
        constexpr int n = 400;
        const double ds = damping.r2() / n;
        double worst = std::numeric_limits<double>::infinity();
        for (int i = 1; i + 1 <= n; ++i) {
            const double s = i * ds;
            const double d2 = damping.convexifier_value(s + ds) - 2.0 * damping.convexifier_value(s) +
                              damping.convexifier_value(s - ds);
            worst = std::min(worst, d2);
        }
        if (!(worst > 0.0)) rep.fail("H is not strictly convex on (0, r2]");
    }
    return rep;
}

// ---------------------------------------------------------------------------------------------
// Root-composed profiles and decay envelopes
// ---------------------------------------------------------------------------------------------

/// Profile P = (sum_k (M_k^{-1})^{1/(1+eps)})^{-1}, plus its scaled form P1(t) = t P'(eps1 t).
/// With one modulus this is K of the nonlinear-B estimate; with B and H it is W.
class RootComposedProfile {
public:
    RootComposedProfile(std::vector<ConvexModulus> moduli, double eps, double eps1)
        : moduli_(std::move(moduli)), power_(1.0 / (1.0 + eps)), eps1_(eps1) {
        if (moduli_.empty()) throw InputError("profile needs at least one modulus");
        if (!(eps > 0.0)) throw DomainError("profile exponent eps must be > 0");
        if (!(eps1 > 0.0)) throw DomainError("eps1 must be > 0");
        for (auto& m : moduli_) m = extend_modulus(m);
    }

    /// sum_k M_k^{-1}(y)^{1/(1+eps)}.
    [[nodiscard]] double composed_inverse(double y) const {
        double acc = 0.0;
        for (const auto& m : moduli_) acc += std::pow(m.inverse(y), power_);
        return acc;
    }

    [[nodiscard]] double composed_inverse_derivative(double y) const {
        double acc = 0.0;
        for (const auto& m : moduli_) {
            const double x = m.inverse(y);
            acc += power_ * std::pow(x, power_ - 1.0) / m.derivative(x);
        }
        return acc;
    }

    /// P(t): the y with composed_inverse(y) = t.
    [[nodiscard]] double value(double t) const {
        if (t <= 0.0) return 0.0;
        return numerics::invert_increasing([this](double y) { return composed_inverse(y); }, t,
                                           0.0, 1.0, 0.0);
    }

    [[nodiscard]] double derivative(double t) const {
        if (t <= 0.0) return 0.0;
        return 1.0 / composed_inverse_derivative(value(t));
    }

    /// P1(t) = t P'(eps1 t).
    [[nodiscard]] double scaled(double t) const { return t <= 0.0 ? 0.0 : t * derivative(eps1_ * t); }

    [[nodiscard]] double scaled_inverse(double y) const {
        if (y <= 0.0) return 0.0;
        return numerics::invert_increasing([this](double t) { return scaled(t); }, y, 0.0, 1.0);
    }

private:
    std::vector<ConvexModulus> moduli_;
    double power_;
    double eps1_;
};

enum class EnvelopeCase { linear_B, nonlinear_B, nonlinear_both };

inline std::string to_string(EnvelopeCase c) {
    switch (c) {
    case EnvelopeCase::linear_B: return "linear-B";
    case EnvelopeCase::nonlinear_B: return "nonlinear-B";
    case EnvelopeCase::nonlinear_both: return "nonlinear-both";
    }
    return "?";
}

/// Upper-bound curve c * shape(t). The leading constant c is the only free scale; constants
/// inside the shape are fixed at construction.
class DecayEnvelope {
public:
    DecayEnvelope(EnvelopeCase kind, double scale, double valid_after, bool inclusive,
                  std::function<double(double)> shape)
        : kind_(kind), scale_(scale), valid_after_(valid_after), inclusive_(inclusive),
          shape_(std::move(shape)) {}

    [[nodiscard]] EnvelopeCase kind() const { return kind_; }
    [[nodiscard]] double scale() const { return scale_; }
    [[nodiscard]] double valid_after() const { return valid_after_; }
    [[nodiscard]] bool in_domain(double t) const {
        return inclusive_ ? t >= valid_after_ : t > valid_after_;
    }

    [[nodiscard]] double shape(double t) const {
        if (!in_domain(t)) throw DomainError("envelope evaluated outside its validity domain");
        return shape_(t);
    }
    double operator()(double t) const { return scale_ * shape(t); }

    [[nodiscard]] DecayEnvelope with_scale(double c) const {
        DecayEnvelope e = *this;
        e.scale_ = c;
        return e;
    }

private:
    EnvelopeCase kind_;
    double scale_;
    double valid_after_;
    bool inclusive_;
    std::function<double(double)> shape_;
};

inline constexpr double kDefaultEps0 = 0.5;

/// t -> c (1 + \int_{t0}^t xi^{1+eps0})^{-1/eps0}, t >= t0.
inline DecayEnvelope envelope_linear_B(const XiWeight& xi, double eps0, double c, double t0) {
    if (!(eps0 > 0.0 && eps0 < 1.0)) throw DomainError("eps0 must lie in (0,1)");
    if (!(c > 0.0) || !(t0 >= 0.0)) throw DomainError("envelope needs c > 0 and t0 >= 0");
    auto shape = [xi, eps0, t0](double t) {
        return std::pow(1.0 + xi.power_integral(t0, t, 1.0 + eps0), -1.0 / eps0);
    };
    return {EnvelopeCase::linear_B, c, t0, true, shape};
}

/// t -> c (t-t0)^{1/(1+eps0)} K1^{-1}(c1 / ((t-t0)^{1/(1+eps0)} \int_{t1}^t xi)), t > t1.
inline DecayEnvelope envelope_nonlinear_B(const XiWeight& xi, double eps0, double eps1, double c,
                                          double c1, double t0, double t1,
                                          const ConvexModulus& modulus) {
    if (modulus.is_linear()) throw DomainError("nonlinear-B envelope needs a nonlinear modulus");
    if (!(t1 > t0)) throw DomainError("nonlinear-B envelope needs t1 > t0");
    if (!(eps0 > 0.0 && eps0 < 1.0)) throw DomainError("eps0 must lie in (0,1)");
    if (!(c > 0.0) || !(c1 > 0.0)) throw DomainError("envelope constants must be > 0");
    auto profile = std::make_shared<const RootComposedProfile>(
        std::vector<ConvexModulus>{modulus}, eps0, eps1);
    const double a = 1.0 / (1.0 + eps0);
    auto shape = [xi, profile, a, c1, t0, t1](double t) {
        const double lead = std::pow(t - t0, a);
        return lead * profile->scaled_inverse(c1 / (lead * xi.integral(t1, t)));
    };
    return {EnvelopeCase::nonlinear_B, c, t1, false, shape};
}

/// t -> c (t-t0)^{1/(1+eps)} W2^{-1}(c / ((t-t0)^{1/(1+eps)} \int_{t0}^t xi)), t > t0.
inline DecayEnvelope envelope_nonlinear_both(const XiWeight& xi, double eps, double eps1, double c,
                                             double t0, const ConvexModulus& modulus_b,
                                             const ConvexModulus& modulus_h) {
    if (modulus_b.is_linear() || modulus_h.is_linear())
        throw DomainError("nonlinear-both envelope needs both moduli nonlinear");
    if (!(eps > 0.0)) throw DomainError("eps must be > 0");
    if (!(c > 0.0)) throw DomainError("envelope constant must be > 0");
    auto profile = std::make_shared<const RootComposedProfile>(
        std::vector<ConvexModulus>{modulus_b, modulus_h}, eps, eps1);
    const double a = 1.0 / (1.0 + eps);
    auto shape = [xi, profile, a, c, t0](double t) {
        const double lead = std::pow(t - t0, a);
        return lead * profile->scaled_inverse(c / (lead * xi.integral(t0, t)));
    };
    return {EnvelopeCase::nonlinear_both, c, t0, false, shape};
}

// ---------------------------------------------------------------------------------------------
// Preset catalog
// ---------------------------------------------------------------------------------------------

struct PresetCall {
    std::string name;
    std::vector<double> args;
};

/// Parses "name(a,b,...)" or a bare "name".
inline PresetCall parse_preset_call(std::string_view text) {
    auto trim = [](std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    };
    text = trim(text);
    PresetCall call;
    const auto open = text.find('(');
    if (open == std::string_view::npos) {
        call.name = std::string(text);
        if (call.name.empty()) throw InputError("empty preset name");
        return call;
    }
    if (text.back() != ')') throw InputError("malformed preset '" + std::string(text) + "'");
    call.name = std::string(trim(text.substr(0, open)));
    auto inner = text.substr(open + 1, text.size() - open - 2);
    while (!inner.empty()) {
        const auto comma = inner.find(',');
        auto tok = trim(inner.substr(0, comma));
        if (tok.empty()) throw InputError("empty argument in preset '" + std::string(text) + "'");
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(std::string(tok), &used);
        } catch (const std::exception&) {
            throw InputError("non-numeric argument '" + std::string(tok) + "' in preset");
        }
        if (used != tok.size()) throw InputError("non-numeric argument '" + std::string(tok) + "'");
        call.args.push_back(v);
        if (comma == std::string_view::npos) break;
        inner.remove_prefix(comma + 1);
    }
    return call;
}

namespace detail {
inline void require_args(const PresetCall& c, std::size_t n) {
    if (c.args.size() != n)
        throw InputError("preset '" + c.name + "' expects " + std::to_string(n) + " argument(s)");
}
inline std::string args_str(std::initializer_list<double> xs) {
    std::string out;
    for (double x : xs) {
        if (!out.empty()) out += ",";
        out += fmt_num(x);
    }
    return out;
}
} // namespace detail

/// "exp(b0,a)", "power(b0,q)", "none".
inline RelaxationKernel parse_kernel_spec(std::string_view text) {
    const auto c = parse_preset_call(text);
    if (c.name == "none") return RelaxationKernel::none();
    if (c.name == "exp") {
        detail::require_args(c, 2);
        return RelaxationKernel::exponential(c.args[0], c.args[1]);
    }
    if (c.name == "power") {
        detail::require_args(c, 2);
        return RelaxationKernel::power(c.args[0], c.args[1]);
    }
    throw InputError("unknown kernel preset '" + c.name + "'");
}

/// "damp-linear(c)", "damp-cubic(eps)", "damp-power(p,eps)", "none".
inline DampingLaw parse_damping_spec(std::string_view text) {
    const auto c = parse_preset_call(text);
    if (c.name == "none") return DampingLaw::none();
    if (c.name == "damp-linear") {
        detail::require_args(c, 1);
        return DampingLaw::linear(c.args[0]);
    }
    if (c.name == "damp-cubic") {
        detail::require_args(c, 1);
        return DampingLaw::origin_power(3.0, c.args[0]);
    }
    if (c.name == "damp-power") {
        detail::require_args(c, 2);
        return DampingLaw::origin_power(c.args[0], c.args[1]);
    }
    throw InputError("unknown damping preset '" + c.name + "'");
}

/// Weight matched to the kernel family: xi = a for exp, q b0^{-1/q} for power.
inline XiWeight auto_xi(const RelaxationKernel& kernel) {
    switch (kernel.family()) {
    case KernelFamily::exponential: return XiWeight::constant(kernel.params()[1]);
    case KernelFamily::power: {
        const double b0 = kernel.params()[0], q = kernel.params()[1];
        return XiWeight::constant(q * std::pow(b0, -1.0 / q));
    }
    default: throw InputError("no automatic xi for this kernel family");
    }
}

/// Modulus matched to the kernel family: B(s) = s for exp, s^{1+1/q} on (0, b0] for power.
inline ConvexModulus auto_modulus(const RelaxationKernel& kernel) {
    switch (kernel.family()) {
    case KernelFamily::exponential: return ConvexModulus::linear(1.0);
    case KernelFamily::power:
        return ConvexModulus::power(1.0 + 1.0 / kernel.params()[1], kernel.params()[0]);
    default: throw InputError("no automatic modulus for this kernel family");
    }
}

/// "const(x)", "rational(theta)" or "rational(theta,scale)", "auto".
inline XiWeight parse_xi_spec(std::string_view text, const RelaxationKernel& kernel) {
    const auto c = parse_preset_call(text);
    if (c.name == "auto") return auto_xi(kernel);
    if (c.name == "const") {
        detail::require_args(c, 1);
        return XiWeight::constant(c.args[0]);
    }
    if (c.name == "rational") {
        if (c.args.size() == 1) return XiWeight::rational(c.args[0]);
        detail::require_args(c, 2);
        return XiWeight::rational(c.args[0], c.args[1]);
    }
    throw InputError("unknown xi preset '" + c.name + "'");
}

/// "linear(alpha)", "power(p,r1)", "auto".
inline ConvexModulus parse_modulus_spec(std::string_view text, const RelaxationKernel& kernel) {
    const auto c = parse_preset_call(text);
    if (c.name == "auto") return auto_modulus(kernel);
    if (c.name == "linear") {
        detail::require_args(c, 1);
        return ConvexModulus::linear(c.args[0]);
    }
    if (c.name == "power") {
        detail::require_args(c, 2);
        return ConvexModulus::power(c.args[0], c.args[1]);
    }
    throw InputError("unknown modulus preset '" + c.name + "'");
}

inline std::string RelaxationKernel::describe() const {
    switch (family_) {
    case KernelFamily::none: return "none";
    case KernelFamily::exponential: return "exp(" + detail::args_str({params_[0], params_[1]}) + ")";
    case KernelFamily::power: return "power(" + detail::args_str({params_[0], params_[1]}) + ")";
    case KernelFamily::tabulated: return "table(" + std::to_string(table_->t.size()) + ")";
    }
    return "?";
}

inline std::string ConvexModulus::describe() const {
    switch (form_) {
    case ModulusForm::linear: return "linear(" + detail::fmt_num(slope_) + ")";
    case ModulusForm::power: return "power(" + detail::args_str({exponent_, r1_}) + ")";
    case ModulusForm::custom: return "custom";
    }
    return "?";
}

inline std::string XiWeight::describe() const {
    switch (form_) {
    case XiForm::constant: return "const(" + detail::fmt_num(scale_) + ")";
    case XiForm::rational: return "rational(" + detail::args_str({theta_, scale_}) + ")";
    case XiForm::tabulated: return "table";
    }
    return "?";
}

inline std::string DampingLaw::describe() const {
    switch (form_) {
    case DampingForm::none: return "none";
    case DampingForm::linear: return "damp-linear(" + detail::fmt_num(coef_) + ")";
    case DampingForm::origin_power:
        if (exponent_ == 3.0) return "damp-cubic(" + detail::fmt_num(eps_) + ")";
        return "damp-power(" + detail::args_str({exponent_, eps_}) + ")";
    case DampingForm::custom: return "custom";
    }
    return "?";
}

} // namespace viscoplate
