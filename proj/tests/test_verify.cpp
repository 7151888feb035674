#include "doctest.h"
#include "kladapt/matched.hpp"
#include "kladapt/moore_greitzer.hpp"
#include "kladapt/verify.hpp"

using namespace kladapt;

namespace {

Expr x(int i) { return Expr::state(i); }

MatchedSystem scalar_demo() {
    MatchedSystem sys;
    sys.n = 1;
    sys.p = 1;
    sys.f = {-x(1)};
    sys.g = {Expr::constant(1.0)};
    sys.phi = {x(1)};
    sys.P = Expr::constant(0.5) * pow(x(1), 2);
    sys.Q = pow(x(1), 2);
    sys.k0 = Expr::constant(0.0);
    sys.mu = Expr::constant(1.0);
    return sys;
}

DesignConstants demo_constants(double r) {
    DesignConstants c;
    c.r = r;
    c.gamma = {1.0};
    c.delta = 1.0;
    c.lambda = 0.5;
    return c;
}

RhoEnvelope demo_envelope(const MatchedSystem& sys) {
    GridSpec dense;
    dense.points_per_axis = 401;
    dense.lo = -6.0;
    dense.hi = 6.0;
    return fit_rho_envelope(sys.P, sys.Q, 1, sys.constants, dense);
}

}  // namespace

TEST_SUITE("verify") {

TEST_CASE("lyapunov equality case passes with zero margin") {
    ClosedLoop cl;
    cl.n = 1;
    cl.p = 0;
    cl.field = {-x(1)};
    cl.diag["u"] = Expr::constant(0.0);
    cl.compile();
    Trajectory traj = integrate(cl, std::vector<double>{2.0}, std::vector<double>{}, 5.0);
    Check c = check_lyapunov(cl, traj, Expr::constant(0.5) * pow(x(1), 2), -pow(x(1), 2), 1e-6);
    CHECK(c.pass);
    CHECK(std::abs(c.worst_margin) < 1e-9);
}

TEST_CASE("deliberately wrong bound fails and reports the worst point") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto ctrl = moore_greitzer::controller_a(cfg);
    auto cl = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{cfg.theta_true});
    Trajectory traj = integrate(cl, cfg.x0, cfg.theta_hat0, 20.0);
    Check good = check_lyapunov(cl, traj, ctrl.diagnostics.at("V"), ctrl.diagnostics.at("bound"), 1e-6);
    CHECK(good.pass);
    Check bad = check_lyapunov(cl, traj, ctrl.diagnostics.at("V"),
                               simplify(Expr::constant(2.0) * ctrl.diagnostics.at("bound")), 1e-6,
                               "lyapunov-falsified");
    CHECK_FALSE(bad.pass);
    CHECK(bad.worst_margin < -1e-6);
    CHECK(bad.worst_time >= 0.0);
    CHECK(bad.worst_time <= traj.t.back());
}

TEST_CASE("checks are monotone in tolerance") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto ctrl = moore_greitzer::controller_b(cfg);
    auto cl = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{cfg.theta_true});
    Trajectory traj = integrate(cl, cfg.x0, cfg.theta_hat0, 10.0);
    std::vector<Expr> T{ctrl.diagnostics.at("T1"), ctrl.diagnostics.at("T2")};
    Check tight = check_ios(cl, traj, T, moore_greitzer::ios_omega(cfg), cfg.epsilon, cfg.r, 1e-9);
    Check loose = check_ios(cl, traj, T, moore_greitzer::ios_omega(cfg), cfg.epsilon, cfg.r, 1e-3);
    CHECK(tight.worst_margin == loose.worst_margin);
    if (tight.pass) CHECK(loose.pass);
}

TEST_CASE("theorem 1 machinery: damped scalar demo with alpha = 0") {
    auto sys = scalar_demo();
    auto consts = demo_constants(1.0);  // r = 1 >= |theta|^2 = 0.25
    auto ctrl = damped_controller(sys, consts);
    auto cl = build_closed_loop(sys, ctrl, TrueParameters{{0.5}});
    Trajectory traj = integrate(cl, std::vector<double>{2.0}, std::vector<double>{0.0}, 20.0);
    REQUIRE(traj.meta.completed);
    auto env = demo_envelope(sys);
    auto rr = residual_radius(std::vector<double>{0.5}, consts, env);
    CHECK(rr.alpha_val == 0.0);
    auto checks = check_theorem1_comparison(cl, traj, sys.P, env, rr.alpha_val, consts, 1e-6);
    for (const auto& c : checks) {
        INFO(c.line());
        CHECK(c.pass);
    }
    CHECK(std::abs(traj.x[0].back()) < 1e-6);  // regulation by t = 20
}

TEST_CASE("theorem 1 machinery: r = 0 gives a positive residual radius") {
    auto sys = scalar_demo();
    auto consts = demo_constants(0.0);
    auto ctrl = damped_controller(sys, consts);
    auto cl = build_closed_loop(sys, ctrl, TrueParameters{{0.5}});
    Trajectory traj = integrate(cl, std::vector<double>{2.0}, std::vector<double>{0.0}, 10.0);
    auto env = demo_envelope(sys);
    auto rr = residual_radius(std::vector<double>{0.5}, consts, env);
    CHECK(rr.alpha_val > 0.0);
    CHECK(rr.alpha_val == doctest::Approx(0.25).epsilon(0.05));  // rho = 2s exactly
    auto checks = check_theorem1_comparison(cl, traj, sys.P, env, rr.alpha_val, consts, 1e-6);
    for (const auto& c : checks) {
        INFO(c.line());
        CHECK(c.pass);
    }
}

TEST_CASE("theorem 1 machinery: trajectory from the origin is a vacuous pass") {
    auto sys = scalar_demo();
    auto consts = demo_constants(1.0);
    auto ctrl = damped_controller(sys, consts);
    auto cl = build_closed_loop(sys, ctrl, TrueParameters{{0.5}});
    Trajectory traj = integrate(cl, std::vector<double>{0.0}, std::vector<double>{0.3}, 5.0);
    auto env = demo_envelope(sys);
    auto checks = check_theorem1_comparison(cl, traj, sys.P, env, 0.0, consts, 1e-6);
    for (const auto& c : checks) CHECK(c.pass);
}

TEST_CASE("theorem 1 falsification: standard controller with a large parameter") {
    auto sys = scalar_demo();
    auto consts = demo_constants(0.0);
    auto ctrl = standard_controller(sys, consts.gamma_matrix(1));
    auto cl = build_closed_loop(sys, ctrl, TrueParameters{{3.0}});
    Trajectory traj = integrate(cl, std::vector<double>{5.0}, std::vector<double>{0.0}, 10.0);
    REQUIRE(traj.meta.completed);
    GridSpec wide;
    wide.points_per_axis = 801;
    wide.lo = -8.0;
    wide.hi = 8.0;
    auto env = fit_rho_envelope(sys.P, sys.Q, 1, sys.constants, wide);
    auto rr = residual_radius(std::vector<double>{3.0}, consts, env);
    auto checks = check_theorem1_comparison(cl, traj, sys.P, env, rr.alpha_val, consts, 1e-6);
    bool implication_failed = false;
    for (const auto& c : checks)
        if (c.name == "thm1.implication" && !c.pass) implication_failed = true;
    CHECK(implication_failed);
}

TEST_CASE("uniformity probe: controller B within the parameter budget") {
    moore_greitzer::ExampleConfig cfg;
    cfg.theta_true = {-1.0, -0.5};  // |theta|^2 = 1.25 <= r = 2
    auto ctrl = moore_greitzer::controller_b(cfg);
    auto cl = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{cfg.theta_true});
    std::vector<double> eps_list{0.05};
    auto probes = uniformity_probe(cl, 2.0, eps_list, 32, 30.0);
    REQUIRE(probes.size() == 1);
    CHECK(probes[0].all_attained);
    CHECK(probes[0].T_max > 0.0);
    double tmin = 1e9;
    for (double t : probes[0].hit_times) tmin = std::min(tmin, t);
    CHECK(probes[0].T_max - tmin < 30.0);
}

TEST_CASE("uniformity probe: epsilon above the peak norm gives zero hitting times") {
    moore_greitzer::ExampleConfig cfg;
    auto ctrl = moore_greitzer::controller_b(cfg);
    auto cl = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{cfg.theta_true});
    std::vector<double> eps_list{50.0};
    auto probes = uniformity_probe(cl, 1.0, eps_list, 8, 5.0);
    for (double t : probes[0].hit_times) CHECK(t == 0.0);
}

TEST_CASE("margins come from symbolic derivatives, not trajectory differencing") {
    // coarse report grids must not change pointwise margins at the recorded states
    auto cfg = moore_greitzer::ExampleConfig{};
    auto ctrl = moore_greitzer::controller_b(cfg);
    auto cl = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{cfg.theta_true});
    Trajectory coarse = integrate(cl, cfg.x0, cfg.theta_hat0, 10.0, 1e-8, 1e-10, 40);
    std::vector<Expr> T{ctrl.diagnostics.at("T1"), ctrl.diagnostics.at("T2")};
    Check c = check_ios(cl, coarse, T, moore_greitzer::ios_omega(cfg), cfg.epsilon, cfg.r, 1e-6);
    CHECK(c.pass);
    CHECK(c.margins.size() == coarse.size());
}

}  // TEST_SUITE verify
