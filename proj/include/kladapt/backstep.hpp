#pragma once

// Recursive controller synthesis for strict-feedback systems. The base stage
// stabilizes the x1 subsystem with a damping gain built from constructive growth
// bounds on the regressors; each later stage adds one integrator, transforming
// coordinates by the stacked diffeomorphism (T, y - k), extending the update law,
// and cancelling the estimate-linear cross terms so that the two closed-loop
// inequalities (Lyapunov decrease and the IOS-type decay with residual
// eps (|theta|^2 - r)^+) survive with the residual coefficient doubling per stage.
// The base stage starts the budget at 2^-n eps, so the final coefficient is at
// most eps/2.

#include "kladapt/model.hpp"
#include "kladapt/model_io.hpp"
#include "kladapt/rho.hpp"
#include "kladapt/verify.hpp"

namespace kladapt {

struct SynthesisOptions {
    int quad_order = 16;
    std::size_t node_cap = 20000;      // trace warning threshold for the damping gain
    std::size_t hard_node_cap = 2000000;  // abort threshold
    // optional user-supplied growth bounds, outer index = stage (0-based), inner = j;
    // empty entries fall back to the quadrature construction
    std::vector<std::vector<Expr>> rho_override;
};

struct Stage {
    int dim = 0;                  // current chain length
    std::vector<Expr> T;          // dim components in (x, theta_hat)
    std::vector<Expr> T_inv;      // dim components in (z, theta_hat); z reuses the x symbols
    Expr k;                       // virtual (or final) control
    std::vector<Expr> w;          // p update-law components
    Expr M_gain;
    std::vector<Expr> rho_bounds;  // p growth bounds used in M_gain
    double eps_budget = 0.0;       // residual coefficient achieved by this stage
};

struct StageReport {
    int stage = 0;
    std::size_t k_nodes_raw = 0;   // distinct DAG nodes before the final simplify
    std::size_t k_nodes = 0;
    std::size_t k_tree_raw = 0;    // written-out node count before the final simplify
    std::size_t k_tree = 0;
    std::size_t M_nodes = 0;
    std::vector<double> rho_probe;  // rho_j at a fixed probe point
    bool node_cap_exceeded = false;
};

struct SynthesisTrace {
    std::vector<StageReport> stages;

    [[nodiscard]] std::string to_text() const {
        std::string s = "synthesis trace\n";
        for (const auto& st : stages) {
            s += "stage " + std::to_string(st.stage) + ": k nodes " + std::to_string(st.k_nodes_raw) +
                 " -> " + std::to_string(st.k_nodes) + " after simplify, M nodes " +
                 std::to_string(st.M_nodes);
            if (st.node_cap_exceeded) s += " (over node cap)";
            s += ", rho probe =";
            for (double r : st.rho_probe) {
                char buf[32];
                std::snprintf(buf, sizeof buf, " %.6g", r);
                s += buf;
            }
            s += "\n";
        }
        return s;
    }
};

namespace detail {

inline Expr bound_sys_expr(const Expr& e, const std::map<std::string, double>& consts) {
    return simplify(bind_constants(e, consts));
}

/// (1/2)(1 + 2 sqrt(r) + th_j^2) = sqrt(r) + 1/2 + th_j^2/2, the coefficient that
/// dominates |P̄_j(theta)| and |th_j| against one growth bound.
inline Expr damping_coefficient(int j, double r) {
    return Expr::constant(std::sqrt(r) + 0.5) + Expr::constant(0.5) * pow(Expr::estimate(j), 2);
}

}  // namespace detail

inline Stage synthesize_base(const StrictFeedbackSystem& sys, const DesignConstants& consts,
                             const SynthesisOptions& opts = {}) {
    consts.validate(sys.p);
    if (sys.n < 1) throw Error(Error::Code::Config, "need n >= 1");
    const double eps_base = std::ldexp(consts.epsilon, -sys.n);  // 2^-n eps
    Stage st;
    st.dim = 1;
    st.eps_budget = eps_base;
    st.T = {Expr::state(1)};
    st.T_inv = {Expr::state(1)};

    Expr f1 = detail::bound_sys_expr(sys.f[0], sys.constants);
    Expr g1 = detail::bound_sys_expr(sys.g[0], sys.constants);
    std::vector<Expr> phi1;
    for (int j = 0; j < sys.p; ++j)
        phi1.push_back(detail::bound_sys_expr(sys.phi[0][static_cast<std::size_t>(j)], sys.constants));

    Expr M = Expr::constant(consts.alpha + consts.omega);
    Expr young = Expr::constant(0.0);
    for (int j = 0; j < sys.p; ++j) young = young + pow(phi1[static_cast<std::size_t>(j)], 2);
    M = M + Expr::constant(1.0 / (4.0 * eps_base)) * young;
    for (int j = 1; j <= sys.p; ++j) {
        Expr rho_j;
        if (static_cast<int>(opts.rho_override.size()) >= 1 &&
            static_cast<int>(opts.rho_override[0].size()) >= j)
            rho_j = opts.rho_override[0][static_cast<std::size_t>(j - 1)];
        else
            rho_j = ray_quadrature_rho(phi1[static_cast<std::size_t>(j - 1)], 1, opts.quad_order).rho;
        st.rho_bounds.push_back(rho_j);
        M = M + detail::damping_coefficient(j, consts.r) * rho_j;
    }
    st.M_gain = simplify(M);

    Expr numer = f1 + st.M_gain * Expr::state(1);
    for (int j = 1; j <= sys.p; ++j)
        numer = numer + phi1[static_cast<std::size_t>(j - 1)] * Expr::estimate(j);
    st.k = simplify(-quotient(numer, g1));
    for (int j = 1; j <= sys.p; ++j)
        st.w.push_back(simplify(Expr::constant(consts.gamma[static_cast<std::size_t>(j - 1)]) *
                                Expr::state(1) * phi1[static_cast<std::size_t>(j - 1)]));
    return st;
}

inline Stage backstep_stage(const Stage& prev, const StrictFeedbackSystem& sys, int stage_index,
                            const DesignConstants& consts, const SynthesisOptions& opts = {},
                            StageReport* report = nullptr) {
    if (stage_index != prev.dim + 1 || stage_index > sys.n)
        throw Error(Error::Code::Config, "stage index must be prev.dim + 1 and at most n");
    const int i = stage_index;
    const int p = sys.p;
    Stage st;
    st.dim = i;
    st.eps_budget = 2.0 * prev.eps_budget;

    Expr y = Expr::state(i);
    Expr fi = detail::bound_sys_expr(sys.f[static_cast<std::size_t>(i - 1)], sys.constants);
    Expr gi = detail::bound_sys_expr(sys.g[static_cast<std::size_t>(i - 1)], sys.constants);
    std::vector<Expr> phii;  // phi_{i,j}(x1..xi)
    for (int j = 0; j < p; ++j)
        phii.push_back(detail::bound_sys_expr(sys.phi[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)],
                                              sys.constants));

    Expr e = simplify(y - prev.k);

    std::vector<Expr> dk_dx;  // m = 1..i-1
    for (int m = 1; m < i; ++m) dk_dx.push_back(partial(prev.k, DiffVar::state(m)));
    std::vector<Expr> dk_dth;
    for (int j = 1; j <= p; ++j) dk_dth.push_back(partial(prev.k, DiffVar::estimate(j)));

    // psi_j = phi_{i,j}(x, y) - sum_m dk/dx_m phi_{m,j}(x): the regressor mismatch
    // the new error channel sees
    std::vector<Expr> psi;
    for (int j = 0; j < p; ++j) {
        Expr s = phii[static_cast<std::size_t>(j)];
        for (int m = 1; m < i; ++m) {
            Expr phi_mj = detail::bound_sys_expr(
                sys.phi[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)], sys.constants);
            s = s - dk_dx[static_cast<std::size_t>(m - 1)] * phi_mj;
        }
        psi.push_back(simplify(s));
    }

    // update law extension
    for (int j = 0; j < p; ++j)
        st.w.push_back(simplify(prev.w[static_cast<std::size_t>(j)] +
                                Expr::constant(consts.gamma[static_cast<std::size_t>(j)]) * e *
                                    psi[static_cast<std::size_t>(j)]));

    // growth bounds |psi_j| <= rho_j |T~| via composition with the stacked inverse
    Substitution to_x_space;  // z -> x through T~^{-1}
    for (int m = 1; m < i; ++m) to_x_space.set_state(m, prev.T_inv[static_cast<std::size_t>(m - 1)]);
    Substitution prev_inv_sub;
    for (int m = 1; m < i; ++m) prev_inv_sub.set_state(m, prev.T_inv[static_cast<std::size_t>(m - 1)]);
    Expr k_of_Tinv = simplify(substitute(prev.k, prev_inv_sub));
    to_x_space.set_state(i, simplify(Expr::state(i) + k_of_Tinv));

    Substitution to_z_space;  // x -> z through T~
    for (int m = 1; m < i; ++m) to_z_space.set_state(m, prev.T[static_cast<std::size_t>(m - 1)]);
    to_z_space.set_state(i, e);

    for (int j = 0; j < p; ++j) {
        Expr rho_j;
        if (static_cast<int>(opts.rho_override.size()) >= i &&
            static_cast<int>(opts.rho_override[static_cast<std::size_t>(i - 1)].size()) > j) {
            rho_j = opts.rho_override[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)];
        } else {
            Expr h_tilde = simplify(substitute(psi[static_cast<std::size_t>(j)], to_x_space));
            try {
                RayBound rb = ray_quadrature_rho(h_tilde, i, opts.quad_order);
                rho_j = simplify(substitute(rb.rho, to_z_space));
            } catch (const Error& e) {
                if (e.code() == Error::Code::NonvanishingAtOrigin)
                    throw Error(Error::Code::RhoPreconditionFailed,
                                "stage " + std::to_string(i) + ", regressor " + std::to_string(j + 1) +
                                    ": " + e.what());
                throw;
            }
        }
        st.rho_bounds.push_back(rho_j);
    }

    // damping gain: alpha + omega + ((r + |th|_smooth)/omega)(sum rho_j)^2
    //               + sum_j (sqrt(r) + 1/2 + th_j^2/2) rho_j + (1/4 eps) sum_j psi_j^2
    Expr est_sq = Expr::constant(0.0);
    for (int j = 1; j <= p; ++j) est_sq = est_sq + pow(Expr::estimate(j), 2);
    Expr smooth_norm = sqrt_of(Expr::constant(1.0) + est_sq);  // smooth over-bound of |theta_hat|
    Expr rho_sum = Expr::constant(0.0);
    for (const Expr& r : st.rho_bounds) rho_sum = rho_sum + r;
    Expr M = Expr::constant(consts.alpha + consts.omega);
    M = M + quotient(Expr::constant(consts.r) + smooth_norm, Expr::constant(consts.omega)) * pow(rho_sum, 2);
    for (int j = 1; j <= p; ++j)
        M = M + detail::damping_coefficient(j, consts.r) * st.rho_bounds[static_cast<std::size_t>(j - 1)];
    Expr young = Expr::constant(0.0);
    for (int j = 0; j < p; ++j) young = young + pow(psi[static_cast<std::size_t>(j)], 2);
    M = M + Expr::constant(1.0 / (4.0 * prev.eps_budget)) * young;
    st.M_gain = simplify(M);

    // feedback law
    Expr kbar = -fi - st.M_gain * e;
    for (int j = 1; j <= p; ++j)
        kbar = kbar - phii[static_cast<std::size_t>(j - 1)] * Expr::estimate(j);
    for (int m = 1; m < i; ++m) {
        Expr fm = detail::bound_sys_expr(sys.f[static_cast<std::size_t>(m - 1)], sys.constants);
        Expr gm = detail::bound_sys_expr(sys.g[static_cast<std::size_t>(m - 1)], sys.constants);
        Expr est_rate = fm + gm * Expr::state(m + 1);
        for (int j = 1; j <= p; ++j) {
            Expr phi_mj = detail::bound_sys_expr(
                sys.phi[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j - 1)], sys.constants);
            est_rate = est_rate + phi_mj * Expr::estimate(j);
        }
        kbar = kbar + dk_dx[static_cast<std::size_t>(m - 1)] * est_rate;
    }
    for (int j = 0; j < p; ++j)
        kbar = kbar + dk_dth[static_cast<std::size_t>(j)] * st.w[static_cast<std::size_t>(j)];
    for (int j = 1; j <= p; ++j) {
        Expr TdT = Expr::constant(0.0);
        for (int l = 0; l < prev.dim; ++l)
            TdT = TdT + prev.T[static_cast<std::size_t>(l)] *
                            partial(prev.T[static_cast<std::size_t>(l)], DiffVar::estimate(j));
        if (TdT.is_constant(0.0)) continue;
        kbar = kbar - TdT * Expr::constant(consts.gamma[static_cast<std::size_t>(j - 1)]) *
                          psi[static_cast<std::size_t>(j - 1)];
    }
    {
        Expr g_prev = detail::bound_sys_expr(sys.g[static_cast<std::size_t>(i - 2)], sys.constants);
        Expr TdT = Expr::constant(0.0);
        for (int l = 0; l < prev.dim; ++l)
            TdT = TdT + prev.T[static_cast<std::size_t>(l)] *
                            partial(prev.T[static_cast<std::size_t>(l)], DiffVar::state(i - 1));
        kbar = kbar - g_prev * TdT;
    }
    std::size_t raw_nodes = dag_size(kbar);
    std::size_t raw_tree = static_cast<std::size_t>(kbar.node()->tree_size);
    st.k = simplify(quotient(kbar, gi));

    st.T = prev.T;
    st.T.push_back(e);
    st.T_inv = prev.T_inv;
    st.T_inv.push_back(simplify(Expr::state(i) + k_of_Tinv));

    if (report) {
        report->stage = i;
        report->k_nodes_raw = raw_nodes;
        report->k_nodes = dag_size(st.k);
        report->k_tree_raw = raw_tree;
        report->k_tree = static_cast<std::size_t>(st.k.node()->tree_size);
        report->M_nodes = dag_size(st.M_gain);
        report->node_cap_exceeded = report->M_nodes > opts.node_cap;
        Point probe;
        probe.x.assign(static_cast<std::size_t>(i), 0.5);
        probe.theta_hat.assign(static_cast<std::size_t>(p), 0.25);
        for (const Expr& r : st.rho_bounds) report->rho_probe.push_back(eval(r, probe));
    }
    if (dag_size(st.k) > opts.hard_node_cap)
        throw Error(Error::Code::Config, "synthesized feedback exceeds the hard node cap");
    return st;
}

inline std::pair<AdaptiveController, SynthesisTrace> synthesize(const StrictFeedbackSystem& sys,
                                                                const DesignConstants& consts,
                                                                const SynthesisOptions& opts = {}) {
    ValidationReport vr = validate_strict_feedback(sys);
    if (!vr.valid())
        throw Error(Error::Code::Config, "system fails validation:\n" + vr.summary());
    consts.validate(sys.p);

    SynthesisTrace trace;
    Stage st = synthesize_base(sys, consts, opts);
    {
        StageReport rep;
        rep.stage = 1;
        rep.k_nodes_raw = rep.k_nodes = dag_size(st.k);
        rep.k_tree_raw = rep.k_tree = static_cast<std::size_t>(st.k.node()->tree_size);
        rep.M_nodes = dag_size(st.M_gain);
        rep.node_cap_exceeded = rep.M_nodes > opts.node_cap;
        Point probe;
        probe.x.assign(1, 0.5);
        probe.theta_hat.assign(static_cast<std::size_t>(sys.p), 0.25);
        for (const Expr& r : st.rho_bounds) rep.rho_probe.push_back(eval(r, probe));
        trace.stages.push_back(std::move(rep));
    }
    for (int i = 2; i <= sys.n; ++i) {
        StageReport rep;
        st = backstep_stage(st, sys, i, consts, opts, &rep);
        trace.stages.push_back(std::move(rep));
    }

    AdaptiveController ctrl;
    ctrl.u = st.k;
    ctrl.w = st.w;
    Expr S = Expr::constant(0.0);
    for (int l = 0; l < sys.n; ++l) {
        ctrl.diagnostics["T" + std::to_string(l + 1)] = st.T[static_cast<std::size_t>(l)];
        S = S + pow(st.T[static_cast<std::size_t>(l)], 2);
    }
    S = simplify(S);
    ctrl.diagnostics["U"] = simplify(Expr::constant(0.5) * S);
    Expr V = Expr::constant(0.5) * S;
    for (int j = 1; j <= sys.p; ++j)
        V = V + Expr::constant(0.5 / consts.gamma[static_cast<std::size_t>(j - 1)]) *
                    pow(Expr::estimate(j) - Expr::named(detail::theta_const_name(j)), 2);
    ctrl.diagnostics["V"] = simplify(V);
    ctrl.diagnostics["bound"] = simplify(Expr::constant(-consts.alpha) * S);

    // sampled sanity: T_inv(T(x, th), th) = (x, th)-identity, and the equilibrium
    // normalizations k(0, th) = 0, w(0, th) = 0
    {
        std::mt19937_64 rng(0xb5u);
        std::uniform_real_distribution<double> dist(-2.0, 2.0);
        for (int s = 0; s < 32; ++s) {
            Point pt;
            pt.x.resize(static_cast<std::size_t>(sys.n));
            pt.theta_hat.resize(static_cast<std::size_t>(sys.p));
            for (auto& v : pt.x) v = dist(rng);
            for (auto& v : pt.theta_hat) v = dist(rng);
            Point zpt = pt;
            for (int l = 0; l < sys.n; ++l)
                zpt.x[static_cast<std::size_t>(l)] = eval(st.T[static_cast<std::size_t>(l)], pt);
            for (int l = 0; l < sys.n; ++l) {
                double back = eval(st.T_inv[static_cast<std::size_t>(l)], zpt);
                if (std::abs(back - pt.x[static_cast<std::size_t>(l)]) >
                    1e-9 * std::max(1.0, std::abs(pt.x[static_cast<std::size_t>(l)])))
                    throw Error(Error::Code::Config, "stacked diffeomorphism fails round-trip check");
            }
            Point origin = pt;
            origin.x.assign(static_cast<std::size_t>(sys.n), 0.0);
            if (std::abs(eval(ctrl.u, origin)) > 1e-9)
                throw Error(Error::Code::Config, "synthesized k(0, theta_hat) != 0");
            for (const Expr& wj : ctrl.w)
                if (std::abs(eval(wj, origin)) > 1e-9)
                    throw Error(Error::Code::Config, "synthesized w(0, theta_hat) != 0");
        }
    }
    return {std::move(ctrl), std::move(trace)};
}

}  // namespace kladapt
