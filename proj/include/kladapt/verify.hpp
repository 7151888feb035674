#pragma once

// Numerical verification of the Lyapunov inequalities and KL-type estimates along
// simulated trajectories, plus empirical output-stability probes. Margins are
// computed from symbolic derivatives evaluated at the recorded states (the chain
// rule against the closed-loop field), so integration error enters only through
// the state values, never through numerical differencing of the trajectory.

#include "kladapt/matched.hpp"
#include "kladapt/sim.hpp"

namespace kladapt {

struct Check {
    std::string name;
    bool pass = false;
    double worst_margin = 0.0;
    double worst_time = 0.0;
    double tolerance = 0.0;
    std::vector<double> margins;  // per report point when applicable

    [[nodiscard]] std::string line() const {
        std::string s = pass ? "PASS " : "FAIL ";
        s += name + "  worst margin ";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3e", worst_margin);
        s += buf;
        std::snprintf(buf, sizeof buf, "%.4f", worst_time);
        s += " at t=" + std::string(buf);
        std::snprintf(buf, sizeof buf, "%.1e", tolerance);
        s += " (tol " + std::string(buf) + ")";
        return s;
    }
};

struct VerificationReport {
    std::vector<Check> checks;

    [[nodiscard]] bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
    [[nodiscard]] std::string to_text() const {
        std::string s;
        for (const auto& c : checks) s += c.line() + "\n";
        return s;
    }
};

/// Time derivative of e along the closed loop, as an Expr in (x, theta_hat).
inline Expr ddt_along(const Expr& e, const ClosedLoop& cl) {
    Expr s = Expr::constant(0.0);
    for (int i = 1; i <= cl.n; ++i)
        s = s + partial(e, DiffVar::state(i)) * cl.field[static_cast<std::size_t>(i - 1)];
    for (int j = 1; j <= cl.p; ++j)
        s = s + partial(e, DiffVar::estimate(j)) * cl.field[static_cast<std::size_t>(cl.n + j - 1)];
    return simplify(s);
}

/// Evaluates expressions at every report point of a trajectory.
inline std::vector<std::vector<double>> eval_along(const ClosedLoop& cl, const Trajectory& traj,
                                                   std::span<const Expr> exprs) {
    Program prog(exprs, cl.n, cl.p, cl.constants);
    std::vector<std::vector<double>> out(exprs.size(), std::vector<double>(traj.size()));
    std::vector<double> vals(exprs.size()), work, xs(static_cast<std::size_t>(cl.n)),
        ths(static_cast<std::size_t>(cl.p));
    for (std::size_t k = 0; k < traj.size(); ++k) {
        for (int i = 0; i < cl.n; ++i) xs[static_cast<std::size_t>(i)] = traj.x[static_cast<std::size_t>(i)][k];
        for (int j = 0; j < cl.p; ++j) ths[static_cast<std::size_t>(j)] = traj.theta_hat[static_cast<std::size_t>(j)][k];
        if (prog.eval(xs, ths, vals, work) != EvalFault::None)
            throw Error(Error::Code::NonFiniteResult, "evaluation fault along trajectory");
        for (std::size_t e = 0; e < exprs.size(); ++e) out[e][k] = vals[e];
    }
    return out;
}

[[nodiscard]] inline std::vector<double> true_theta_of(const ClosedLoop& cl) {
    std::vector<double> th;
    for (int j = 1;; ++j) {
        auto it = cl.constants.find(detail::theta_const_name(j));
        if (it == cl.constants.end()) break;
        th.push_back(it->second);
    }
    return th;
}

[[nodiscard]] inline double residual_term(std::span<const double> theta, double epsilon, double r) {
    double nsq = 0.0;
    for (double v : theta) nsq += v * v;
    return epsilon * std::max(nsq - r, 0.0);
}

namespace detail {

inline Check margin_check(std::string name, const std::vector<double>& t,
                          std::vector<double> margins, double tol) {
    Check c;
    c.name = std::move(name);
    c.tolerance = tol;
    c.worst_margin = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < margins.size(); ++k) {
        if (margins[k] < c.worst_margin) {
            c.worst_margin = margins[k];
            c.worst_time = t[k];
        }
    }
    c.pass = c.worst_margin >= -tol;
    c.margins = std::move(margins);
    return c;
}

}  // namespace detail

/// margin(t) = bound - dV/dt evaluated pointwise; passes iff margin >= -tol everywhere.
inline Check check_lyapunov(const ClosedLoop& cl, const Trajectory& traj, const Expr& V,
                            const Expr& bound, double tol = 1e-6,
                            const std::string& name = "lyapunov") {
    Expr vdot = ddt_along(V, cl);
    std::vector<Expr> exprs{vdot, bound};
    auto vals = eval_along(cl, traj, exprs);
    std::vector<double> margins(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) margins[k] = vals[1][k] - vals[0][k];
    return detail::margin_check(name, traj.t, std::move(margins), tol);
}

/// d/dt(1/2 |T|^2) <= -omega |T|^2 + epsilon (|theta|^2 - r)^+, pointwise.
inline Check check_ios(const ClosedLoop& cl, const Trajectory& traj, std::span<const Expr> T,
                       double omega, double epsilon, double r, double tol = 1e-6,
                       const std::string& name = "ios") {
    Expr S = Expr::constant(0.0);
    for (const Expr& c : T) S = S + pow(c, 2);
    S = simplify(S);
    Expr half_S_dot = simplify(Expr::constant(0.5) * ddt_along(S, cl));
    double resid = residual_term(true_theta_of(cl), epsilon, r);
    std::vector<Expr> exprs{half_S_dot, S};
    auto vals = eval_along(cl, traj, exprs);
    std::vector<double> margins(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k)
        margins[k] = (-omega * vals[1][k] + resid) - vals[0][k];
    return detail::margin_check(name, traj.t, std::move(margins), tol);
}

/// (|T(t)|^2 - omega^{-1} eps (|theta|^2-r)^+)^+ <= exp(-2 omega t) (|T(0)|^2 - ...)^+ * slack.
inline Check check_exponential_envelope(const ClosedLoop& cl, const Trajectory& traj,
                                        std::span<const Expr> T, double omega, double epsilon,
                                        double r, double slack = 1.0 + 1e-4,
                                        const std::string& name = "exp-envelope") {
    Expr S = Expr::constant(0.0);
    for (const Expr& c : T) S = S + pow(c, 2);
    S = simplify(S);
    double level = residual_term(true_theta_of(cl), epsilon, r) / omega;
    std::vector<Expr> exprs{S};
    auto vals = eval_along(cl, traj, exprs);
    double head = std::max(vals[0][0] - level, 0.0);
    std::vector<double> margins(traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        double lhs = std::max(vals[0][k] - level, 0.0);
        double rhs = std::exp(-2.0 * omega * traj.t[k]) * head * slack;
        margins[k] = rhs - lhs;
    }
    // the envelope is multiplicative; a tiny absolute floor absorbs roundoff when
    // the right side has decayed to the double-precision noise level
    double tol = 1e-12 * std::max(1.0, head);
    return detail::margin_check(name, traj.t, std::move(margins), tol);
}

/// Theorem-1 machinery on a matched closed loop: the comparison inequality, the
/// region implication, monotonicity of (P - alpha)^+, and the comparison-ODE
/// envelope for W = ((P - alpha)^+)^2 / 2.
inline std::vector<Check> check_theorem1_comparison(const ClosedLoop& cl, const Trajectory& traj,
                                                    const Expr& P, const RhoEnvelope& rho,
                                                    double alpha, const DesignConstants& consts,
                                                    double tol = 1e-6) {
    std::vector<Check> out;
    Expr pdot = ddt_along(P, cl);
    std::vector<Expr> exprs{P, pdot};
    auto vals = eval_along(cl, traj, exprs);
    const auto& Pv = vals[0];
    const auto& Pd = vals[1];
    auto theta = true_theta_of(cl);
    double excess = residual_term(theta, 1.0, consts.r);

    std::vector<double> comparison(traj.size()), implication(traj.size()), monotone(traj.size());
    double run_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < traj.size(); ++k) {
        comparison[k] = (-0.5 * rho(Pv[k]) + excess / (2.0 * consts.delta)) - Pd[k];
        bool active = Pv[k] > alpha;
        implication[k] = active ? (-0.5 * consts.lambda * rho(Pv[k]) - Pd[k])
                                : std::numeric_limits<double>::infinity();
        double plus = std::max(Pv[k] - alpha, 0.0);
        run_min = std::min(run_min, plus);
        monotone[k] = run_min - plus + tol;  // nonincreasing up to tol
    }
    out.push_back(detail::margin_check("thm1.comparison", traj.t, std::move(comparison), tol));
    out.push_back(detail::margin_check("thm1.implication", traj.t, std::move(implication), tol));
    out.push_back(detail::margin_check("thm1.monotone", traj.t, std::move(monotone), tol));

    // comparison ODE: Wc' = -rho~(Wc), rho~(s) = lambda sqrt(s/2) rho(sqrt(2 s))
    auto rho_tilde = [&](double s) {
        if (s <= 0.0) return 0.0;
        return consts.lambda * std::sqrt(0.5 * s) * rho(std::sqrt(2.0 * s));
    };
    std::vector<double> wmargins(traj.size());
    double w0 = 0.5 * std::max(Pv[0] - alpha, 0.0) * std::max(Pv[0] - alpha, 0.0);
    double wc = w0;
    const double w_slack = 1.0 + 1e-3;
    wmargins[0] = wc * w_slack - w0;
    for (std::size_t k = 1; k < traj.size(); ++k) {
        double dt = (traj.t[k] - traj.t[k - 1]) / 16.0;
        for (int s = 0; s < 16; ++s) {
            // RK4 on the scalar comparison ODE
            double k1 = -rho_tilde(wc);
            double k2 = -rho_tilde(std::max(wc + 0.5 * dt * k1, 0.0));
            double k3 = -rho_tilde(std::max(wc + 0.5 * dt * k2, 0.0));
            double k4 = -rho_tilde(std::max(wc + dt * k3, 0.0));
            wc = std::max(wc + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 0.0);
        }
        double plus = std::max(Pv[k] - alpha, 0.0);
        double w_traj = 0.5 * plus * plus;
        wmargins[k] = wc * w_slack - w_traj + 1e-12 * std::max(1.0, w0);
    }
    out.push_back(detail::margin_check("thm1.comparison-ode", traj.t, std::move(wmargins), 0.0));
    return out;
}

/// The closed-loop field must vanish on the equilibrium set {(0, theta_hat)}.
inline Check check_equilibrium(const ClosedLoop& cl, int samples = 100, double tol = 1e-12,
                               std::uint64_t seed = 2026) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    std::vector<double> xs(static_cast<std::size_t>(cl.n), 0.0), ths(static_cast<std::size_t>(cl.p)),
        out(static_cast<std::size_t>(cl.n + cl.p)), work;
    double worst = 0.0;
    Check c;
    c.name = "equilibrium";
    c.tolerance = tol;
    for (int s = 0; s < samples; ++s) {
        for (auto& v : ths) v = dist(rng);
        if (cl.field_prog.eval(xs, ths, out, work) != EvalFault::None) {
            c.pass = false;
            c.worst_margin = -std::numeric_limits<double>::infinity();
            return c;
        }
        for (double v : out) worst = std::max(worst, std::abs(v));
    }
    c.worst_margin = -worst;
    c.pass = worst <= tol;
    return c;
}

/// Least-squares decay rate of log(sum T_i^2) over [t0, t1]; returns the positive rate.
inline double fit_decay_rate(const ClosedLoop& cl, const Trajectory& traj, std::span<const Expr> T,
                             double t0, double t1) {
    Expr S = Expr::constant(0.0);
    for (const Expr& c : T) S = S + pow(c, 2);
    S = simplify(S);
    std::vector<Expr> exprs{S};
    auto vals = eval_along(cl, traj, exprs);
    double sum_t = 0.0, sum_y = 0.0, sum_tt = 0.0, sum_ty = 0.0;
    long cnt = 0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        if (traj.t[k] < t0 || traj.t[k] > t1) continue;
        double v = vals[0][k];
        if (v <= 0.0) continue;
        double y = std::log(v);
        sum_t += traj.t[k];
        sum_y += y;
        sum_tt += traj.t[k] * traj.t[k];
        sum_ty += traj.t[k] * y;
        ++cnt;
    }
    if (cnt < 8) throw Error(Error::Code::Config, "too few points for a rate fit");
    double denom = static_cast<double>(cnt) * sum_tt - sum_t * sum_t;
    double slope = (static_cast<double>(cnt) * sum_ty - sum_t * sum_y) / denom;
    return -slope;
}

/// Empirical uniform-attainment probe: samples initial states on the radius-R circle
/// (theta_hat starting at zero), records the first report time after which |x| stays
/// within eps. `attained` is false for runs that never settle by t_end.
struct UniformityProbe {
    double R = 0.0;
    double eps = 0.0;
    std::vector<double> hit_times;  // NaN when not attained
    bool all_attained = false;
    double T_max = 0.0;  // max over attained samples
};

inline std::vector<UniformityProbe> uniformity_probe(const ClosedLoop& cl, double R,
                                                     std::span<const double> eps_list, int n_samples,
                                                     double t_end, double rtol = 1e-8,
                                                     double atol = 1e-10) {
    if (n_samples < 8) throw Error(Error::Code::Config, "uniformity probe needs at least 8 samples");
    std::vector<std::pair<std::vector<double>, std::vector<double>>> initials;
    for (auto& x0 : circle_points(R, n_samples, cl.n))
        initials.emplace_back(std::move(x0), std::vector<double>(static_cast<std::size_t>(cl.p), 0.0));
    auto runs = sweep(cl, initials, t_end, rtol, atol);
    std::vector<UniformityProbe> probes;
    for (double eps : eps_list) {
        UniformityProbe pr;
        pr.R = R;
        pr.eps = eps;
        pr.all_attained = true;
        for (const auto& traj : runs) {
            if (!traj.meta.completed) {
                pr.hit_times.push_back(std::numeric_limits<double>::quiet_NaN());
                pr.all_attained = false;
                continue;
            }
            // suffix max of |x| over the report grid; hit time = first t with suffix max <= eps
            std::vector<double> suffix(traj.size());
            double run_max = 0.0;
            for (std::size_t k = traj.size(); k-- > 0;) {
                run_max = std::max(run_max, traj.state_norm_at(k));
                suffix[k] = run_max;
            }
            double hit = std::numeric_limits<double>::quiet_NaN();
            for (std::size_t k = 0; k < traj.size(); ++k) {
                if (suffix[k] <= eps) {
                    hit = traj.t[k];
                    break;
                }
            }
            pr.hit_times.push_back(hit);
            if (std::isnan(hit))
                pr.all_attained = false;
            else
                pr.T_max = std::max(pr.T_max, hit);
        }
        probes.push_back(std::move(pr));
    }
    return probes;
}

}  // namespace kladapt
