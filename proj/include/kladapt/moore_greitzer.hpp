#pragma once

// The two-state jet-engine surge example: the plant, the classical adaptive
// backstepping controller (A), the nonlinear-damping controller (B) whose gain
// depends on the estimate as well as the state, and the figure datasets comparing
// them. Controller B guarantees dW/dt <= -mu U and dU/dt <= -mu U + eps(|theta|^2-r)^+
// for U = x1^2/2 + Q z^2/2; both are verified pointwise by the test suite rather
// than assumed from the transcription.

#include "kladapt/sim.hpp"
#include "kladapt/verify.hpp"

namespace kladapt::moore_greitzer {

struct ExampleConfig {
    double Q = 1.0;
    double gamma1 = 1.0;
    double gamma2 = 1.0;
    double mu = 1.0;
    double epsilon = 1.0;
    double r = 2.0;
    std::vector<double> theta_true{-1.5, -0.5};
    std::vector<double> x0{0.4, -1.0};
    std::vector<double> theta_hat0{0.0, 0.0};

    void validate() const {
        if (Q <= 0 || gamma1 <= 0 || gamma2 <= 0 || mu <= 0 || epsilon <= 0)
            throw Error(Error::Code::Config, "Q, gamma, mu, epsilon must be > 0");
        if (r < 0) throw Error(Error::Code::Config, "r must be >= 0");
        if (theta_true.size() != 2 || x0.size() != 2 || theta_hat0.size() != 2)
            throw Error(Error::Code::Config, "example vectors must have dimension 2");
    }

    [[nodiscard]] DesignConstants constants() const {
        DesignConstants c;
        c.r = r;
        c.alpha = mu;
        c.omega = mu;
        c.epsilon = epsilon;
        c.gamma = {gamma1, gamma2};
        return c;
    }
};

/// x1' = theta1 x1^2 + theta2 x1^3 + x2,  x2' = u.
inline StrictFeedbackSystem system() {
    StrictFeedbackSystem sys;
    sys.n = 2;
    sys.p = 2;
    Expr x1 = Expr::state(1);
    sys.f = {Expr::constant(0.0), Expr::constant(0.0)};
    sys.g = {Expr::constant(1.0), Expr::constant(1.0)};
    sys.phi = {{pow(x1, 2), pow(x1, 3)}, {Expr::constant(0.0), Expr::constant(0.0)}};
    return sys;
}

namespace detail_mg {

inline Expr tracked_error(const ExampleConfig& cfg) {
    // z = x2 + th1 x1^2 + th2 x1^3 + mu x1 (controller A coordinates)
    Expr x1 = Expr::state(1);
    return Expr::state(2) + Expr::estimate(1) * pow(x1, 2) + Expr::estimate(2) * pow(x1, 3) +
           Expr::constant(cfg.mu) * x1;
}

inline Expr estimate_error_quad(const ExampleConfig& cfg) {
    Expr e1 = Expr::estimate(1) - Expr::named("theta1");
    Expr e2 = Expr::estimate(2) - Expr::named("theta2");
    return Expr::constant(0.5 / cfg.gamma1) * pow(e1, 2) +
           Expr::constant(0.5 / cfg.gamma2) * pow(e2, 2);
}

}  // namespace detail_mg

/// Classical design: u and the update law of the tuning-functions scheme.
inline AdaptiveController controller_a(const ExampleConfig& cfg) {
    cfg.validate();
    Expr x1 = Expr::state(1), x2 = Expr::state(2);
    Expr th1 = Expr::estimate(1), th2 = Expr::estimate(2);
    const double Q = cfg.Q, mu = cfg.mu;
    Expr z = detail_mg::tracked_error(cfg);
    Expr tuning = 2.0 * th1 * x1 + 3.0 * th2 * pow(x1, 2) + Expr::constant(mu);
    Expr w1 = simplify(Expr::constant(cfg.gamma1 * Q) * pow(x1, 2) * z * tuning +
                       Expr::constant(cfg.gamma1) * pow(x1, 3));
    Expr w2 = simplify(Expr::constant(cfg.gamma2 * Q) * pow(x1, 3) * z * tuning +
                       Expr::constant(cfg.gamma2) * pow(x1, 4));
    Expr u = -(Expr::constant(1.0 / Q + mu * mu)) * x1 - w1 * pow(x1, 2) - w2 * pow(x1, 3) -
             (2.0 * th1 * x1 + 3.0 * th2 * pow(x1, 2) + Expr::constant(2.0 * mu)) *
                 (th1 * pow(x1, 2) + th2 * pow(x1, 3) + x2);

    AdaptiveController ctrl;
    ctrl.u = simplify(u);
    ctrl.w = {w1, w2};
    Expr V = Expr::constant(0.5) * pow(x1, 2) + Expr::constant(Q / 2.0) * pow(z, 2) +
             detail_mg::estimate_error_quad(cfg);
    ctrl.diagnostics["V"] = simplify(V);
    ctrl.diagnostics["z"] = simplify(z);
    ctrl.diagnostics["bound"] =
        simplify(Expr::constant(-mu) * pow(x1, 2) + Expr::constant(-mu * Q) * pow(z, 2));
    ctrl.diagnostics["T1"] = x1;
    ctrl.diagnostics["T2"] = simplify(Expr::constant(std::sqrt(Q)) * z);
    ctrl.diagnostics["U"] =
        simplify(Expr::constant(0.5) * pow(x1, 2) + Expr::constant(Q / 2.0) * pow(z, 2));
    return ctrl;
}

/// Damping design: the gain M depends on both x1 and the estimate, z uses M in
/// place of the constant mu, and G dominates the estimation cross terms.
inline AdaptiveController controller_b(const ExampleConfig& cfg) {
    cfg.validate();
    Expr x1 = Expr::state(1), x2 = Expr::state(2);
    Expr th1 = Expr::estimate(1), th2 = Expr::estimate(2);
    const double Q = cfg.Q, mu = cfg.mu, eps = cfg.epsilon, r = cfg.r;

    Expr est_sq_r = pow(th1, 2) + pow(th2, 2) + Expr::constant(r);
    Expr M = Expr::constant(2.0 * mu) + Expr::constant(0.5) * est_sq_r + pow(x1, 2) +
             Expr::constant(1.0 + 1.0 / (2.0 * eps)) * pow(x1, 4) +
             Expr::constant(1.0 / (2.0 * eps)) * pow(x1, 6);
    Expr z = x2 + th1 * pow(x1, 2) + th2 * pow(x1, 3) + M * x1;
    // phi_gain equals dz/dx1; named to avoid colliding with the regressor phi_{i,j}
    Expr phi_gain = 2.0 * th1 * x1 + 3.0 * th2 * pow(x1, 2) + M +
                    pow(x1, 2) * (Expr::constant(2.0) +
                                  Expr::constant(2.0 * (2.0 * eps + 1.0) / eps) * pow(x1, 2) +
                                  Expr::constant(3.0 / eps) * pow(x1, 4));
    Expr G = Expr::constant(mu) +
             Expr::constant(Q) * pow(x1, 2) * (Expr::constant(1.0) + pow(x1, 2)) * pow(phi_gain, 2) *
                 (Expr::constant(1.0 / (2.0 * eps)) * pow(x1, 2) + Expr::constant(1.0 / mu) * est_sq_r);
    Expr w1 = simplify(Expr::constant(cfg.gamma1) * pow(x1, 2) * (Expr::constant(Q) * z * phi_gain + x1));
    Expr w2 = simplify(Expr::constant(cfg.gamma2) * pow(x1, 3) * (Expr::constant(Q) * z * phi_gain + x1));
    Expr u = -x1 * Expr::constant(1.0 / Q) - (x1 + th1) * x1 * w1 - (pow(x1, 2) + th2) * x1 * w2 -
             G * z + phi_gain * (M * x1 - z);

    AdaptiveController ctrl;
    ctrl.u = simplify(u);
    ctrl.w = {w1, w2};
    Expr U = Expr::constant(0.5) * pow(x1, 2) + Expr::constant(Q / 2.0) * pow(z, 2);
    ctrl.diagnostics["U"] = simplify(U);
    ctrl.diagnostics["W"] = simplify(U + detail_mg::estimate_error_quad(cfg));
    ctrl.diagnostics["V"] = ctrl.diagnostics["W"];
    ctrl.diagnostics["z"] = simplify(z);
    ctrl.diagnostics["M"] = simplify(M);
    ctrl.diagnostics["bound"] = simplify(Expr::constant(-mu) * U);
    ctrl.diagnostics["T1"] = x1;
    ctrl.diagnostics["T2"] = simplify(Expr::constant(std::sqrt(Q)) * z);
    return ctrl;
}

/// IOS decay rate exposed by controller B's U: dU/dt <= -mu U with U = |T|^2/2
/// gives omega = mu/2 for T = (x1, sqrt(Q) z).
inline double ios_omega(const ExampleConfig& cfg) { return cfg.mu / 2.0; }

// ---- figure datasets -----------------------------------------------------------

struct Series {
    std::string label;
    std::vector<double> xs;
    std::vector<double> ys;
};

struct FigureData {
    int which = 0;
    std::string xlabel;
    std::string ylabel;
    std::vector<Series> series;
};

/// Initial states for the phase-plane portraits: twelve points on the circle of
/// radius 1.2 plus the two captioned initial conditions.
inline std::vector<std::vector<double>> phase_initials() {
    auto pts = circle_points(1.2, 12, 2);
    pts.push_back({0.4, -1.0});
    pts.push_back({0.6, 0.5});
    return pts;
}

inline FigureData figure_dataset(int which, const ExampleConfig& cfg, double rtol = 1e-8,
                                 double atol = 1e-10) {
    cfg.validate();
    if (which < 1 || which > 6)
        throw Error(Error::Code::Config, "figure index must lie in 1..6");
    StrictFeedbackSystem sys = system();
    TrueParameters theta{cfg.theta_true};
    FigureData fig;
    fig.which = which;

    auto label_ic = [](const std::vector<double>& x0) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "x0=(%.3g,%.3g)", x0[0], x0[1]);
        return std::string(buf);
    };

    if (which == 1 || which == 2) {
        AdaptiveController ctrl = which == 1 ? controller_a(cfg) : controller_b(cfg);
        ClosedLoop cl = build_closed_loop(sys, ctrl, theta);
        fig.xlabel = "x1";
        fig.ylabel = "x2";
        std::vector<std::pair<std::vector<double>, std::vector<double>>> initials;
        for (const auto& x0 : phase_initials()) initials.emplace_back(x0, cfg.theta_hat0);
        auto runs = sweep(cl, initials, 20.0, rtol, atol, 1200);
        for (std::size_t i = 0; i < runs.size(); ++i) {
            Series s;
            s.label = label_ic(initials[i].first);
            s.xs = runs[i].x[0];
            s.ys = runs[i].x[1];
            fig.series.push_back(std::move(s));
        }
        return fig;
    }

    const std::vector<double> x0 = (which == 3 || which == 5) ? std::vector<double>{0.4, -1.0}
                                                              : std::vector<double>{0.6, 0.5};
    const double t_end = (which <= 4) ? 20.0 : 50.0;
    fig.xlabel = "t";
    fig.ylabel = which <= 4 ? "|x(t)|" : "|theta_hat(t)-theta|";
    for (int c = 0; c < 2; ++c) {
        AdaptiveController ctrl = c == 0 ? controller_a(cfg) : controller_b(cfg);
        ClosedLoop cl = build_closed_loop(sys, ctrl, theta);
        Trajectory traj = integrate(cl, x0, cfg.theta_hat0, t_end, rtol, atol);
        Series s;
        s.label = c == 0 ? "controller-a" : "controller-b";
        s.xs = traj.t;
        for (std::size_t k = 0; k < traj.size(); ++k) {
            if (which <= 4) {
                s.ys.push_back(traj.state_norm_at(k));
            } else {
                double d1 = traj.theta_hat[0][k] - cfg.theta_true[0];
                double d2 = traj.theta_hat[1][k] - cfg.theta_true[1];
                s.ys.push_back(std::hypot(d1, d2));
            }
        }
        fig.series.push_back(std::move(s));
    }
    return fig;
}

}  // namespace kladapt::moore_greitzer
