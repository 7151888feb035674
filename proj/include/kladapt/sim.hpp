#pragma once

// Closed-loop assembly and numerical integration. The integrator is an adaptive
// Dormand-Prince 5(4) pair with the classical quartic dense-output interpolant;
// trajectories are reported on a uniform grid decoupled from the adaptive steps.
// Blow-up (step-size underflow / non-finite state) is reported in the trajectory
// metadata rather than thrown: unstable open-loop runs are valid experiments.

#include <atomic>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <thread>

#include "kladapt/model.hpp"
#include "kladapt/model_io.hpp"
#include "kladapt/program.hpp"

namespace kladapt {

struct ClosedLoop {
    int n = 0;
    int p = 0;
    std::vector<Expr> field;                  // n + p components in (x, theta_hat)
    std::map<std::string, Expr> diag;         // includes "u"
    std::map<std::string, double> constants;  // system constants plus theta1..thetap
    Program field_prog;
    Program diag_prog;
    std::vector<std::string> diag_names;

    void compile() {
        field_prog = Program(field, n, p, constants);
        diag_names.clear();
        std::vector<Expr> diag_exprs;
        for (const auto& [name, e] : diag) {
            diag_names.push_back(name);
            diag_exprs.push_back(e);
        }
        diag_prog = Program(diag_exprs, n, p, constants);
    }
};

namespace detail {

inline void check_controller_dimensions(const AdaptiveController& ctrl, int n, int p) {
    if (static_cast<int>(ctrl.w.size()) != p)
        throw Error(Error::Code::DimensionMismatch, "controller update law has wrong dimension");
    auto check = [&](const Expr& e, const std::string& label) {
        SymbolUse u = scan_symbols(e);
        if (u.max_state_index > n || u.max_estimate_index > p)
            throw Error(Error::Code::DimensionMismatch, label + " references out-of-range symbols");
        for (const auto& name : u.named)
            if (name.rfind("theta", 0) == 0)
                throw Error(Error::Code::Config,
                            label + " references true parameter '" + name +
                                "'; controllers may read only (x, theta_hat)");
    };
    check(ctrl.u, "controller u");
    for (std::size_t j = 0; j < ctrl.w.size(); ++j)
        check(ctrl.w[j], "controller w[" + std::to_string(j + 1) + "]");
}

}  // namespace detail

inline ClosedLoop build_closed_loop(const StrictFeedbackSystem& sys, const AdaptiveController& ctrl,
                                    const TrueParameters& theta_true) {
    if (static_cast<int>(theta_true.theta.size()) != sys.p)
        throw Error(Error::Code::DimensionMismatch, "theta_true has wrong dimension");
    detail::check_controller_dimensions(ctrl, sys.n, sys.p);
    ClosedLoop cl;
    cl.n = sys.n;
    cl.p = sys.p;
    cl.constants = sys.constants;
    for (int j = 1; j <= sys.p; ++j) {
        const std::string name = detail::theta_const_name(j);
        if (cl.constants.count(name))
            throw Error(Error::Code::Config, "system constants must not shadow '" + name + "'");
        cl.constants[name] = theta_true.theta[static_cast<std::size_t>(j - 1)];
    }
    for (int i = 1; i <= sys.n; ++i) {
        Expr next = i < sys.n ? Expr::state(i + 1) : ctrl.u;
        Expr rhs = sys.f[static_cast<std::size_t>(i - 1)] + sys.g[static_cast<std::size_t>(i - 1)] * next;
        for (int j = 1; j <= sys.p; ++j)
            rhs = rhs + sys.phi[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)] *
                            Expr::named(detail::theta_const_name(j));
        cl.field.push_back(simplify(rhs));
    }
    for (const Expr& wj : ctrl.w) cl.field.push_back(wj);
    cl.diag["u"] = ctrl.u;
    for (const auto& [name, e] : ctrl.diagnostics) cl.diag[name] = e;
    cl.compile();
    return cl;
}

inline ClosedLoop build_closed_loop(const MatchedSystem& sys, const AdaptiveController& ctrl,
                                    const TrueParameters& theta_true) {
    if (static_cast<int>(theta_true.theta.size()) != sys.p)
        throw Error(Error::Code::DimensionMismatch, "theta_true has wrong dimension");
    detail::check_controller_dimensions(ctrl, sys.n, sys.p);
    ClosedLoop cl;
    cl.n = sys.n;
    cl.p = sys.p;
    cl.constants = sys.constants;
    for (int j = 1; j <= sys.p; ++j) {
        const std::string name = detail::theta_const_name(j);
        if (cl.constants.count(name))
            throw Error(Error::Code::Config, "system constants must not shadow '" + name + "'");
        cl.constants[name] = theta_true.theta[static_cast<std::size_t>(j - 1)];
    }
    Expr phi_theta = Expr::constant(0.0);
    for (int j = 1; j <= sys.p; ++j)
        phi_theta = phi_theta + sys.phi[static_cast<std::size_t>(j - 1)] * Expr::named(detail::theta_const_name(j));
    for (int i = 1; i <= sys.n; ++i) {
        Expr rhs = sys.f[static_cast<std::size_t>(i - 1)] +
                   sys.g[static_cast<std::size_t>(i - 1)] * (ctrl.u + phi_theta);
        cl.field.push_back(simplify(rhs));
    }
    for (const Expr& wj : ctrl.w) cl.field.push_back(wj);
    cl.diag["u"] = ctrl.u;
    for (const auto& [name, e] : ctrl.diagnostics) cl.diag[name] = e;
    cl.compile();
    return cl;
}

struct IntegratorStats {
    long n_steps = 0;
    long n_rejected = 0;
    double err_accum = 0.0;  // crude global-error estimate: sum of local error magnitudes
    bool completed = false;
    double fail_time = 0.0;
    std::string fail_reason;
};

struct Trajectory {
    std::vector<double> t;
    std::vector<std::vector<double>> x;          // n columns
    std::vector<std::vector<double>> theta_hat;  // p columns
    std::vector<double> u;
    std::vector<std::pair<std::string, std::vector<double>>> diag;
    IntegratorStats meta;

    [[nodiscard]] std::size_t size() const { return t.size(); }
    [[nodiscard]] std::vector<double> state_at(std::size_t k) const {
        std::vector<double> s;
        for (const auto& col : x) s.push_back(col[k]);
        return s;
    }
    [[nodiscard]] std::vector<double> estimate_at(std::size_t k) const {
        std::vector<double> s;
        for (const auto& col : theta_hat) s.push_back(col[k]);
        return s;
    }
    [[nodiscard]] double state_norm_at(std::size_t k) const {
        double s = 0.0;
        for (const auto& col : x) s += col[k] * col[k];
        return std::sqrt(s);
    }
    [[nodiscard]] const std::vector<double>* diag_column(const std::string& name) const {
        for (const auto& [n_, col] : diag)
            if (n_ == name) return &col;
        return nullptr;
    }
};

namespace detail {

struct Dopri5 {
    // Dormand-Prince 5(4) tableau with FSAL and the quartic dense-output weights.
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                            a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
};

}  // namespace detail

inline Trajectory integrate(const ClosedLoop& cl, std::span<const double> x0,
                            std::span<const double> theta_hat0, double t_end, double rtol = 1e-8,
                            double atol = 1e-10, int n_report = 2000) {
    if (t_end <= 0.0) throw Error(Error::Code::Config, "t_end must be > 0");
    if (rtol <= 0.0 || atol <= 0.0) throw Error(Error::Code::Config, "tolerances must be > 0");
    if (static_cast<int>(x0.size()) != cl.n || static_cast<int>(theta_hat0.size()) != cl.p)
        throw Error(Error::Code::DimensionMismatch, "initial condition has wrong dimension");
    if (n_report < 2) throw Error(Error::Code::Config, "n_report must be >= 2");

    const std::size_t dim = static_cast<std::size_t>(cl.n + cl.p);
    using Vec = std::vector<double>;
    Vec y(dim);
    for (int i = 0; i < cl.n; ++i) y[static_cast<std::size_t>(i)] = x0[static_cast<std::size_t>(i)];
    for (int j = 0; j < cl.p; ++j) y[static_cast<std::size_t>(cl.n + j)] = theta_hat0[static_cast<std::size_t>(j)];

    std::vector<double> work;
    auto deriv = [&](const Vec& state, Vec& out) -> bool {
        std::span<const double> xs(state.data(), static_cast<std::size_t>(cl.n));
        std::span<const double> ts(state.data() + cl.n, static_cast<std::size_t>(cl.p));
        EvalFault fault = cl.field_prog.eval(xs, ts, out, work);
        if (fault != EvalFault::None) return false;
        for (double v : out)
            if (!std::isfinite(v)) return false;
        return true;
    };

    Trajectory traj;
    traj.x.resize(static_cast<std::size_t>(cl.n));
    traj.theta_hat.resize(static_cast<std::size_t>(cl.p));
    for (const auto& name : cl.diag_names) traj.diag.emplace_back(name, Vec{});

    std::vector<double> diag_out(cl.diag_names.size());
    auto record = [&](double t, const Vec& state) -> bool {
        for (double v : state)
            if (!std::isfinite(v)) return false;
        std::span<const double> xs(state.data(), static_cast<std::size_t>(cl.n));
        std::span<const double> ts(state.data() + cl.n, static_cast<std::size_t>(cl.p));
        if (cl.diag_prog.eval(xs, ts, diag_out, work) != EvalFault::None) return false;
        for (double v : diag_out)
            if (!std::isfinite(v)) return false;
        traj.t.push_back(t);
        for (int i = 0; i < cl.n; ++i) traj.x[static_cast<std::size_t>(i)].push_back(state[static_cast<std::size_t>(i)]);
        for (int j = 0; j < cl.p; ++j)
            traj.theta_hat[static_cast<std::size_t>(j)].push_back(state[static_cast<std::size_t>(cl.n + j)]);
        for (std::size_t d = 0; d < diag_out.size(); ++d) traj.diag[d].second.push_back(diag_out[d]);
        const std::vector<double>* ucol = nullptr;
        for (std::size_t d = 0; d < cl.diag_names.size(); ++d)
            if (cl.diag_names[d] == "u") ucol = &traj.diag[d].second;
        if (ucol) traj.u.push_back(ucol->back());
        return true;
    };

    using D = detail::Dopri5;
    Vec k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim), ytmp(dim), ynew(dim);
    Vec cont1(dim), cont2(dim), cont3(dim), cont4(dim), cont5(dim);

    auto fail_out = [&](double t, const std::string& why) {
        traj.meta.completed = false;
        traj.meta.fail_time = t;
        traj.meta.fail_reason = why;
        return traj;
    };

    double t = 0.0;
    if (!deriv(y, k1)) return fail_out(0.0, "field not finite at initial condition");
    if (!record(0.0, y)) return fail_out(0.0, "diagnostics not finite at initial condition");

    // initial step heuristic (Hairer's hinit, simplified)
    double h;
    {
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            double sc = atol + rtol * std::abs(y[i]);
            d0 += (y[i] / sc) * (y[i] / sc);
            d1 += (k1[i] / sc) * (k1[i] / sc);
        }
        d0 = std::sqrt(d0 / static_cast<double>(dim));
        d1 = std::sqrt(d1 / static_cast<double>(dim));
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, t_end);
        for (std::size_t i = 0; i < dim; ++i) ytmp[i] = y[i] + h0 * k1[i];
        double h1 = h0;
        if (deriv(ytmp, k2)) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                double sc = atol + rtol * std::abs(y[i]);
                d2 += ((k2[i] - k1[i]) / sc) * ((k2[i] - k1[i]) / sc);
            }
            d2 = std::sqrt(d2 / static_cast<double>(dim)) / h0;
            double dm = std::max(d1, d2);
            h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
        }
        h = std::min({100.0 * h0, h1, t_end});
        h = std::max(h, 1e-13);  // let the error controller shrink further if needed
    }

    const int next_report_start = 1;
    int next_report = next_report_start;
    auto report_time = [&](int k) { return t_end * static_cast<double>(k) / (n_report - 1); };

    while (t < t_end) {
        if (h < 1e-15 * std::max(1.0, std::abs(t)))
            return fail_out(t, "step size underflow (finite escape suspected)");
        if (t + h > t_end) h = t_end - t;

        bool ok = true;
        for (std::size_t i = 0; i < dim; ++i) ytmp[i] = y[i] + h * D::a21 * k1[i];
        ok = ok && deriv(ytmp, k2);
        if (ok) {
            for (std::size_t i = 0; i < dim; ++i)
                ytmp[i] = y[i] + h * (D::a31 * k1[i] + D::a32 * k2[i]);
            ok = deriv(ytmp, k3);
        }
        if (ok) {
            for (std::size_t i = 0; i < dim; ++i)
                ytmp[i] = y[i] + h * (D::a41 * k1[i] + D::a42 * k2[i] + D::a43 * k3[i]);
            ok = deriv(ytmp, k4);
        }
        if (ok) {
            for (std::size_t i = 0; i < dim; ++i)
                ytmp[i] = y[i] + h * (D::a51 * k1[i] + D::a52 * k2[i] + D::a53 * k3[i] + D::a54 * k4[i]);
            ok = deriv(ytmp, k5);
        }
        if (ok) {
            for (std::size_t i = 0; i < dim; ++i)
                ytmp[i] = y[i] + h * (D::a61 * k1[i] + D::a62 * k2[i] + D::a63 * k3[i] +
                                      D::a64 * k4[i] + D::a65 * k5[i]);
            ok = deriv(ytmp, k6);
        }
        if (ok) {
            for (std::size_t i = 0; i < dim; ++i)
                ynew[i] = y[i] + h * (D::a71 * k1[i] + D::a73 * k3[i] + D::a74 * k4[i] +
                                      D::a75 * k5[i] + D::a76 * k6[i]);
            ok = deriv(ynew, k7);
        }

        double err = std::numeric_limits<double>::infinity();
        double sc_scale = 0.0;
        if (ok) {
            err = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                double ei = h * (D::e1 * k1[i] + D::e3 * k3[i] + D::e4 * k4[i] + D::e5 * k5[i] +
                                 D::e6 * k6[i] + D::e7 * k7[i]);
                double sc = atol + rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
                err += (ei / sc) * (ei / sc);
                sc_scale += sc;
            }
            err = std::sqrt(err / static_cast<double>(dim));
            sc_scale /= static_cast<double>(dim);
            if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
        }

        if (err <= 1.0) {
            // dense output over (t, t+h]
            for (std::size_t i = 0; i < dim; ++i) {
                double ydiff = ynew[i] - y[i];
                double bspl = h * k1[i] - ydiff;
                cont1[i] = y[i];
                cont2[i] = ydiff;
                cont3[i] = bspl;
                cont4[i] = ydiff - h * k7[i] - bspl;
                cont5[i] = h * (D::d1 * k1[i] + D::d3 * k3[i] + D::d4 * k4[i] + D::d5 * k5[i] +
                                D::d6 * k6[i] + D::d7 * k7[i]);
            }
            while (next_report < n_report && report_time(next_report) <= t + h + 1e-15 * t_end) {
                double tr = std::min(report_time(next_report), t + h);
                double th = (tr - t) / h;
                double th1 = 1.0 - th;
                for (std::size_t i = 0; i < dim; ++i)
                    ytmp[i] = cont1[i] +
                              th * (cont2[i] + th1 * (cont3[i] + th * (cont4[i] + th1 * cont5[i])));
                if (!record(tr, ytmp)) return fail_out(tr, "non-finite state at report point");
                ++next_report;
            }
            t += h;
            y = ynew;
            k1 = k7;  // FSAL
            ++traj.meta.n_steps;
            traj.meta.err_accum += err * sc_scale;
            double fac = err <= 1e-30 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
            h *= fac;
        } else {
            ++traj.meta.n_rejected;
            h *= ok ? std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.5) : 0.25;
        }
    }

    traj.meta.completed = true;
    return traj;
}

/// Initial-condition batch: runs are independent; results are ordered by input index
/// regardless of execution order. KLADAPT_THREADS caps the worker count.
inline std::vector<Trajectory> sweep(const ClosedLoop& cl,
                                     const std::vector<std::pair<std::vector<double>, std::vector<double>>>& initials,
                                     double t_end, double rtol = 1e-8, double atol = 1e-10,
                                     int n_report = 2000) {
    std::vector<Trajectory> out(initials.size());
    if (initials.empty()) return out;
    unsigned n_threads = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("KLADAPT_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) n_threads = static_cast<unsigned>(v);
    }
    n_threads = std::max(1u, std::min<unsigned>(n_threads, static_cast<unsigned>(initials.size())));
    if (n_threads == 1) {
        for (std::size_t i = 0; i < initials.size(); ++i)
            out[i] = integrate(cl, initials[i].first, initials[i].second, t_end, rtol, atol, n_report);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < n_threads; ++w) {
        workers.emplace_back([&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= initials.size()) break;
                out[i] = integrate(cl, initials[i].first, initials[i].second, t_end, rtol, atol, n_report);
            }
        });
    }
    for (auto& th : workers) th.join();
    return out;
}

/// Points evenly spaced on the circle of given radius in the (x1, x2) plane,
/// used by phase-portrait batches and uniformity probes for 2-state systems.
inline std::vector<std::vector<double>> circle_points(double radius, int count, int n_state) {
    std::vector<std::vector<double>> pts;
    for (int k = 0; k < count; ++k) {
        double ang = 2.0 * std::numbers::pi * k / count;
        std::vector<double> x(static_cast<std::size_t>(n_state), 0.0);
        x[0] = radius * std::cos(ang);
        if (n_state > 1) x[1] = radius * std::sin(ang);
        pts.push_back(std::move(x));
    }
    return pts;
}

}  // namespace kladapt
