#pragma once

// Controller synthesis for the matched-uncertainty class: the standard adaptive
// scheme, the nonlinear-damping scheme whose gain depends on both x and theta_hat,
// the ball projection, the numeric comparison function rho fitted from (P, Q)
// samples, and the residual radius alpha it induces.

#include "kladapt/model.hpp"
#include "kladapt/model_io.hpp"
#include "kladapt/rho.hpp"

namespace kladapt {

namespace detail {

inline Expr grad_P_dot_g(const MatchedSystem& sys) {
    Expr s = Expr::constant(0.0);
    for (int i = 1; i <= sys.n; ++i)
        s = s + partial(sys.P, DiffVar::state(i)) * sys.g[static_cast<std::size_t>(i - 1)];
    return simplify(s);
}

inline std::vector<std::vector<double>> invert_spd(std::vector<std::vector<double>> a) {
    // small dense inverse via Gauss-Jordan; sizes here are p x p with p tiny
    const std::size_t n = a.size();
    std::vector<std::vector<double>> inv(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-14)
            throw Error(Error::Code::Config, "adaptation matrix is singular");
        std::swap(a[piv], a[col]);
        std::swap(inv[piv], inv[col]);
        double d = a[col][col];
        for (std::size_t c = 0; c < n; ++c) {
            a[col][c] /= d;
            inv[col][c] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double m = a[r][col];
            for (std::size_t c = 0; c < n; ++c) {
                a[r][c] -= m * a[col][c];
                inv[r][c] -= m * inv[col][c];
            }
        }
    }
    return inv;
}

/// V = P + (1/2)(theta_hat - theta)' Gamma^{-1} (theta_hat - theta), with the true
/// parameters appearing as named constants theta1..thetap (diagnostics only).
inline Expr matched_lyapunov(const MatchedSystem& sys, const std::vector<std::vector<double>>& Gamma) {
    auto Ginv = invert_spd(Gamma);
    Expr quad = Expr::constant(0.0);
    for (int a = 1; a <= sys.p; ++a) {
        Expr ea = Expr::estimate(a) - Expr::named(theta_const_name(a));
        for (int b = 1; b <= sys.p; ++b) {
            double coef = Ginv[static_cast<std::size_t>(a - 1)][static_cast<std::size_t>(b - 1)];
            if (coef == 0.0) continue;
            Expr eb = Expr::estimate(b) - Expr::named(theta_const_name(b));
            quad = quad + Expr::constant(0.5 * coef) * ea * eb;
        }
    }
    return simplify(sys.P + quad);
}

inline std::vector<Expr> adaptation_law(const MatchedSystem& sys,
                                        const std::vector<std::vector<double>>& Gamma) {
    Expr lg = grad_P_dot_g(sys);
    std::vector<Expr> w;
    for (int j = 1; j <= sys.p; ++j) {
        Expr s = Expr::constant(0.0);
        for (int k = 1; k <= sys.p; ++k) {
            double coef = Gamma[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k - 1)];
            if (coef == 0.0) continue;
            s = s + Expr::constant(coef) * sys.phi[static_cast<std::size_t>(k - 1)];
        }
        w.push_back(simplify(lg * s));
    }
    return w;
}

}  // namespace detail

/// Standard certainty-equivalence scheme: u = k0 - phi' theta_hat, w = Gamma grad(P) g phi.
inline AdaptiveController standard_controller(const MatchedSystem& sys,
                                              const std::vector<std::vector<double>>& Gamma) {
    AdaptiveController ctrl;
    Expr phi_th = Expr::constant(0.0);
    for (int j = 1; j <= sys.p; ++j)
        phi_th = phi_th + sys.phi[static_cast<std::size_t>(j - 1)] * Expr::estimate(j);
    ctrl.u = simplify(sys.k0 - phi_th);
    ctrl.w = detail::adaptation_law(sys, Gamma);
    ctrl.diagnostics["V"] = detail::matched_lyapunov(sys, Gamma);
    ctrl.diagnostics["P"] = sys.P;
    ctrl.diagnostics["bound"] = simplify(-sys.Q);
    return ctrl;
}

/// Damping scheme: subtracts (delta/2 |phi|^2 + mu (r + |theta_hat|^2)) grad(P).g from
/// the standard law; the gain depends on both the state and the estimate.
inline AdaptiveController damped_controller(const MatchedSystem& sys, const DesignConstants& consts) {
    consts.validate(sys.p);
    AdaptiveController ctrl;
    auto Gamma = consts.gamma_matrix(sys.p);
    Expr phi_th = Expr::constant(0.0);
    Expr phi_sq = Expr::constant(0.0);
    for (int j = 1; j <= sys.p; ++j) {
        phi_th = phi_th + sys.phi[static_cast<std::size_t>(j - 1)] * Expr::estimate(j);
        phi_sq = phi_sq + pow(sys.phi[static_cast<std::size_t>(j - 1)], 2);
    }
    Expr est_sq = Expr::constant(0.0);
    for (int j = 1; j <= sys.p; ++j) est_sq = est_sq + pow(Expr::estimate(j), 2);
    Expr gain = Expr::constant(consts.delta / 2.0) * phi_sq +
                sys.mu * (Expr::constant(consts.r) + est_sq);
    Expr lg = detail::grad_P_dot_g(sys);
    ctrl.u = simplify(sys.k0 - phi_th - gain * lg);
    ctrl.w = detail::adaptation_law(sys, Gamma);
    ctrl.diagnostics["V"] = detail::matched_lyapunov(sys, Gamma);
    ctrl.diagnostics["P"] = sys.P;
    ctrl.diagnostics["bound"] = simplify(-sys.Q);
    return ctrl;
}

/// Projection of theta on the closed ball of radius sqrt(r).
inline std::vector<double> project_ball(std::span<const double> theta, double r) {
    if (r < 0.0) throw Error(Error::Code::Config, "r must be >= 0");
    double norm_sq = 0.0;
    for (double v : theta) norm_sq += v * v;
    std::vector<double> out(theta.begin(), theta.end());
    if (norm_sq <= r || norm_sq == 0.0) return out;
    double scale = std::sqrt(r / norm_sq);
    for (double& v : out) v *= scale;
    return out;
}

/// Piecewise-linear nondecreasing comparison function with rho(0) = 0 and
/// rho(P(x)) <= Q(x) on the fitted grid; extrapolates with the last slope.
struct RhoEnvelope {
    std::vector<double> knots_s;  // increasing, starts at 0
    std::vector<double> knots_v;  // nondecreasing, starts at 0
    double worst_margin = 0.0;    // min over check grid of Q(x) - rho(P(x))

    [[nodiscard]] double operator()(double s) const {
        if (s <= 0.0) return 0.0;
        if (s >= knots_s.back()) {
            // linear extension with the final slope
            std::size_t m = knots_s.size();
            double slope = (knots_v[m - 1] - knots_v[m - 2]) / (knots_s[m - 1] - knots_s[m - 2]);
            return knots_v[m - 1] + slope * (s - knots_s[m - 1]);
        }
        auto it = std::upper_bound(knots_s.begin(), knots_s.end(), s);
        std::size_t hi = static_cast<std::size_t>(it - knots_s.begin());
        std::size_t lo = hi - 1;
        double w = (s - knots_s[lo]) / (knots_s[hi] - knots_s[lo]);
        return knots_v[lo] + w * (knots_v[hi] - knots_v[lo]);
    }

    /// Inverse by bisection to 1e-10 absolute; monotonicity makes it well defined.
    /// Values beyond the fitted range are refused: the envelope is only certified
    /// against Q on the sampled region.
    [[nodiscard]] double inverse(double target) const {
        if (target <= 0.0) return 0.0;
        if (target > knots_v.back())
            throw Error(Error::Code::ArgumentAboveRange,
                        "rho envelope was fitted up to " + std::to_string(knots_v.back()) +
                            "; cannot invert " + std::to_string(target));
        double lo = 0.0;
        double hi = knots_s.back();
        while (hi - lo > 1e-10) {
            double mid = 0.5 * (lo + hi);
            if ((*this)(mid) < target)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    }
};

/// Fits the lower envelope of {(P(x_i), Q(x_i))} over the grid into a piecewise-linear
/// nondecreasing rho, then verifies rho(P) <= Q on a denser check grid.
inline RhoEnvelope fit_rho_envelope(const Expr& P, const Expr& Q, int n_state,
                                    const std::map<std::string, double>& constants,
                                    const GridSpec& grid = {}) {
    auto pts = detail::validation_grid(n_state, grid);
    if (pts.empty()) throw Error(Error::Code::Config, "empty fitting grid");
    std::vector<Expr> roots{P, Q};
    Program prog(roots, n_state, 0, constants);
    std::vector<double> out(2), work;
    std::vector<std::pair<double, double>> samples;  // (P, Q)
    for (const auto& x : pts) {
        if (prog.eval(x, {}, out, work) != EvalFault::None)
            throw Error(Error::Code::Config, "P/Q evaluation fault during envelope fit");
        if (detail::norm2(x) <= 1e-12) continue;
        samples.emplace_back(out[0], out[1]);
    }
    if (samples.size() < 3) throw Error(Error::Code::EnvelopeDegenerate, "too few envelope samples");
    std::sort(samples.begin(), samples.end());
    // m(s) = min{Q(x) : P(x) >= s} via suffix minima, collapsing duplicate P values
    std::vector<double> ps, ms;
    double suffix_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = samples.size(); i-- > 0;) {
        suffix_min = std::min(suffix_min, samples[i].second);
        if (!ps.empty() && samples[i].first == ps.back()) {
            ms.back() = suffix_min;
            continue;
        }
        ps.push_back(samples[i].first);
        ms.push_back(suffix_min);
    }
    std::reverse(ps.begin(), ps.end());
    std::reverse(ms.begin(), ms.end());
    // strictly increasing staircase knots
    std::vector<double> ks, kv;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!ks.empty() && (ps[i] <= ks.back() || ms[i] <= kv.back())) continue;
        if (ps[i] <= 0.0 || ms[i] <= 0.0) continue;
        ks.push_back(ps[i]);
        kv.push_back(ms[i]);
    }
    if (ks.size() < 3)
        throw Error(Error::Code::EnvelopeDegenerate,
                    "envelope is not strictly increasing (flat Q level sets?)");
    // One-knot shift: on [P_i, P_{i+1}] the fitted value interpolates m_{i-1} -> m_i,
    // so it never exceeds m_i = min{Q : P >= P_i}, which bounds Q at every point of
    // the segment. Chord interpolation through the raw staircase would overshoot
    // convex Q-vs-P curves between knots.
    RhoEnvelope env;
    env.knots_s.push_back(0.0);
    env.knots_v.push_back(0.0);
    env.knots_s.push_back(ks[0]);
    env.knots_v.push_back(0.0);
    for (std::size_t i = 1; i < ks.size(); ++i) {
        env.knots_s.push_back(ks[i]);
        env.knots_v.push_back(kv[i - 1]);
    }
    // verification on a denser grid
    GridSpec check = grid;
    check.points_per_axis = grid.points_per_axis * 2 + 1;
    check.seed = grid.seed + 1;
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& x : detail::validation_grid(n_state, check)) {
        if (prog.eval(x, {}, out, work) != EvalFault::None) continue;
        worst = std::min(worst, out[1] - env(out[0]));
    }
    env.worst_margin = worst;
    if (worst < -1e-9)
        throw Error(Error::Code::EnvelopeDegenerate,
                    "fitted envelope violates rho(P) <= Q on the check grid");
    return env;
}

/// alpha = rho^{-1}((1-lambda)^{-1} delta^{-1} (|theta|^2 - r)^+); zero whenever
/// the parameter norm is within the budget.
struct ResidualRadius {
    double alpha_val = 0.0;
    double lambda = 0.0;
    double delta = 0.0;
    double r = 0.0;
    double theta_norm_sq = 0.0;
};

inline ResidualRadius residual_radius(std::span<const double> theta_true,
                                      const DesignConstants& consts, const RhoEnvelope& rho) {
    ResidualRadius out;
    out.lambda = consts.lambda;
    out.delta = consts.delta;
    out.r = consts.r;
    for (double v : theta_true) out.theta_norm_sq += v * v;
    double excess = std::max(out.theta_norm_sq - consts.r, 0.0);
    if (excess == 0.0) {
        out.alpha_val = 0.0;
        return out;
    }
    double arg = excess / ((1.0 - consts.lambda) * consts.delta);
    out.alpha_val = rho.inverse(arg);
    return out;
}

}  // namespace kladapt
