#include <random>

#include "doctest.h"
#include "kladapt/backstep.hpp"
#include "kladapt/moore_greitzer.hpp"
#include "kladapt/output.hpp"
#include "kladapt/sim.hpp"

using namespace kladapt;

namespace {

ClosedLoop hand_loop(int n, int p, std::vector<Expr> field, std::map<std::string, Expr> diag) {
    ClosedLoop cl;
    cl.n = n;
    cl.p = p;
    cl.field = std::move(field);
    cl.diag = std::move(diag);
    if (!cl.diag.count("u")) cl.diag["u"] = Expr::constant(0.0);
    cl.compile();
    return cl;
}

AdaptiveController open_loop_controller() {
    AdaptiveController ctrl;
    ctrl.u = Expr::constant(0.0);
    ctrl.w = {Expr::constant(0.0), Expr::constant(0.0)};
    return ctrl;
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("linear decay matches the closed form") {
    ClosedLoop cl = hand_loop(1, 0, {-Expr::state(1)}, {});
    Trajectory traj = integrate(cl, std::vector<double>{1.0}, std::vector<double>{}, 1.0, 1e-10, 1e-12);
    REQUIRE(traj.meta.completed);
    CHECK(traj.t.back() == doctest::Approx(1.0));
    CHECK(traj.x[0].back() == doctest::Approx(std::exp(-1.0)).epsilon(1e-8));
}

TEST_CASE("harmonic oscillator energy drift stays below 1e-6 over t=100") {
    Expr E = Expr::constant(0.5) * (pow(Expr::state(1), 2) + pow(Expr::state(2), 2));
    ClosedLoop cl = hand_loop(2, 0, {Expr::state(2), -Expr::state(1)}, {{"E", E}});
    Trajectory traj =
        integrate(cl, std::vector<double>{1.0, 0.0}, std::vector<double>{}, 100.0, 1e-9, 1e-12);
    REQUIRE(traj.meta.completed);
    const auto* e_col = traj.diag_column("E");
    REQUIRE(e_col != nullptr);
    double drift = 0.0;
    for (double e : *e_col) drift = std::max(drift, std::abs(e - 0.5));
    CHECK(drift < 1e-6);
}

TEST_CASE("surge example under controller A regulates from the captioned point") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_a(cfg),
                                TrueParameters{cfg.theta_true});
    Trajectory traj = integrate(cl, cfg.x0, cfg.theta_hat0, 20.0);
    REQUIRE(traj.meta.completed);
    CHECK(traj.state_norm_at(traj.size() - 1) < 1e-2);
}

TEST_CASE("open-loop unstable run reports blow-up instead of failing") {
    auto cl = build_closed_loop(moore_greitzer::system(), open_loop_controller(),
                                TrueParameters{{1.5, 0.5}});
    Trajectory traj =
        integrate(cl, std::vector<double>{2.0, 0.0}, std::vector<double>{0.0, 0.0}, 10.0);
    CHECK_FALSE(traj.meta.completed);
    CHECK(traj.meta.fail_time > 0.0);
    CHECK(traj.meta.fail_time < 10.0);
    for (const auto& col : traj.x)
        for (double v : col) CHECK(std::isfinite(v));
}

TEST_CASE("closed-loop field vanishes on the equilibrium set") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_b(cfg),
                                TrueParameters{cfg.theta_true});
    std::vector<double> xs{0.0, 0.0}, out(4), work;
    for (double t1 : {-3.0, 0.0, 2.0})
        for (double t2 : {-1.0, 0.5}) {
            std::vector<double> ths{t1, t2};
            REQUIRE(cl.field_prog.eval(xs, ths, out, work) == EvalFault::None);
            for (double v : out) CHECK(std::abs(v) < 1e-12);
        }
}

TEST_CASE("controllers are independent of the true parameters") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto ctrl = moore_greitzer::controller_b(cfg);
    auto cl1 = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{{-1.5, -0.5}});
    auto cl2 = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{{2.0, 1.0}});
    Point pt{{0.3, -0.4}, {0.1, 0.2}, {}};
    Point p1 = pt, p2 = pt;
    p1.constants = cl1.constants;
    p2.constants = cl2.constants;
    CHECK(eval(cl1.diag.at("u"), p1) == eval(cl2.diag.at("u"), p2));
}

TEST_CASE("sweep: determinism, order, and the empty batch") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_b(cfg),
                                TrueParameters{cfg.theta_true});
    std::vector<std::pair<std::vector<double>, std::vector<double>>> initials;
    for (auto& x0 : circle_points(1.0, 8, 2)) initials.emplace_back(x0, std::vector<double>{0.0, 0.0});
    auto a = sweep(cl, initials, 5.0, 1e-8, 1e-10, 200);
    auto b = sweep(cl, initials, 5.0, 1e-8, 1e-10, 200);
    REQUIRE(a.size() == 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].meta.completed);
        REQUIRE(a[i].t.size() == b[i].t.size());
        for (std::size_t k = 0; k < a[i].t.size(); ++k) {
            CHECK(a[i].x[0][k] == b[i].x[0][k]);  // bitwise
            CHECK(a[i].x[1][k] == b[i].x[1][k]);
        }
    }
    CHECK(sweep(cl, {}, 5.0).empty());
}

TEST_CASE("bounded batch from the unit circle under controller B") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_b(cfg),
                                TrueParameters{cfg.theta_true});
    std::vector<std::pair<std::vector<double>, std::vector<double>>> initials;
    for (auto& x0 : circle_points(1.0, 64, 2)) initials.emplace_back(x0, std::vector<double>{0.0, 0.0});
    auto runs = sweep(cl, initials, 10.0, 1e-8, 1e-10, 400);
    for (const auto& traj : runs) {
        REQUIRE(traj.meta.completed);
        double maxnorm = 0.0;
        for (std::size_t k = 0; k < traj.size(); ++k)
            maxnorm = std::max(maxnorm, traj.state_norm_at(k));
        CHECK(maxnorm < 50.0);
    }
}

TEST_CASE("halving tolerances moves the terminal state less than 10x the error estimate") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_a(cfg),
                                TrueParameters{cfg.theta_true});
    for (double rtol : {1e-6, 1e-8}) {
        Trajectory t1 = integrate(cl, cfg.x0, cfg.theta_hat0, 10.0, rtol, rtol * 1e-2);
        Trajectory t2 = integrate(cl, cfg.x0, cfg.theta_hat0, 10.0, rtol / 2.0, rtol * 0.5e-2);
        double diff = 0.0;
        for (int i = 0; i < 2; ++i) {
            diff = std::max(diff, std::abs(t1.x[static_cast<std::size_t>(i)].back() -
                                           t2.x[static_cast<std::size_t>(i)].back()));
            diff = std::max(diff, std::abs(t1.theta_hat[static_cast<std::size_t>(i)].back() -
                                           t2.theta_hat[static_cast<std::size_t>(i)].back()));
        }
        CHECK(diff < 10.0 * t1.meta.err_accum);
    }
}

TEST_CASE("trajectory invariants: strictly increasing time, equal columns, finite") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_b(cfg),
                                TrueParameters{cfg.theta_true});
    Trajectory traj = integrate(cl, cfg.x0, cfg.theta_hat0, 20.0);
    REQUIRE(traj.meta.completed);
    CHECK(traj.size() == 2000);
    for (std::size_t k = 1; k < traj.size(); ++k) CHECK(traj.t[k] > traj.t[k - 1]);
    CHECK(traj.u.size() == traj.size());
    for (const auto& [name, col] : traj.diag) CHECK(col.size() == traj.size());
}

TEST_CASE("csv export shape") {
    ClosedLoop cl = hand_loop(1, 0, {-Expr::state(1)}, {});
    Trajectory traj = integrate(cl, std::vector<double>{1.0}, std::vector<double>{}, 1.0, 1e-8, 1e-10, 5);
    std::ostringstream os;
    write_trajectory_csv(os, traj);
    std::string text = os.str();
    CHECK(text.rfind("t,x1,u", 0) == 0);
    std::size_t lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    CHECK(lines == traj.size() + 1);
}

}  // TEST_SUITE sim

TEST_SUITE("sim_extra") {

TEST_CASE("tolerance halving bound also holds for controller B and the matched demo") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl_b = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_b(cfg),
                                  TrueParameters{cfg.theta_true});
    MatchedSystem msys;
    msys.n = 1;
    msys.p = 1;
    msys.f = {-Expr::state(1)};
    msys.g = {Expr::constant(1.0)};
    msys.phi = {Expr::state(1)};
    msys.P = Expr::constant(0.5) * pow(Expr::state(1), 2);
    msys.Q = pow(Expr::state(1), 2);
    msys.k0 = Expr::constant(0.0);
    msys.mu = Expr::constant(1.0);
    AdaptiveController mctrl;
    mctrl.u = simplify(-(Expr::state(1) * Expr::estimate(1)));
    mctrl.w = {pow(Expr::state(1), 2)};
    auto cl_m = build_closed_loop(msys, mctrl, TrueParameters{{0.5}});
    struct CaseDef {
        const ClosedLoop* cl;
        std::vector<double> x0;
        std::vector<double> th0;
    };
    for (const auto& c : {CaseDef{&cl_b, {0.6, 0.5}, {0.0, 0.0}}, CaseDef{&cl_m, {2.0}, {0.0}}}) {
        Trajectory t1 = integrate(*c.cl, c.x0, c.th0, 10.0, 1e-8, 1e-10);
        Trajectory t2 = integrate(*c.cl, c.x0, c.th0, 10.0, 0.5e-8, 0.5e-10);
        double diff = 0.0;
        for (std::size_t i = 0; i < c.x0.size(); ++i)
            diff = std::max(diff, std::abs(t1.x[i].back() - t2.x[i].back()));
        for (std::size_t j = 0; j < c.th0.size(); ++j)
            diff = std::max(diff, std::abs(t1.theta_hat[j].back() - t2.theta_hat[j].back()));
        CHECK(diff < 10.0 * t1.meta.err_accum);
    }
}

TEST_CASE("synthesized closed loops are forward complete on the radius-5 ball") {
    DesignConstants consts;
    consts.r = 2.0;
    consts.gamma = {1.0, 1.0};
    auto [ctrl, trace] = synthesize(moore_greitzer::system(), consts);
    std::vector<double> theta{-1.5, -0.5};
    auto cl = build_closed_loop(moore_greitzer::system(), ctrl, TrueParameters{theta});
    std::mt19937_64 rng(97);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    int done = 0;
    while (done < 8) {
        // |(x0, theta_hat0 - theta)| <= 5
        std::vector<double> v{unit(rng), unit(rng), unit(rng), unit(rng)};
        double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
        if (norm < 1e-3) continue;
        double scale = 5.0 * std::abs(unit(rng)) / norm;
        std::vector<double> x0{v[0] * scale, v[1] * scale};
        std::vector<double> th0{theta[0] + v[2] * scale, theta[1] + v[3] * scale};
        Trajectory traj = integrate(cl, x0, th0, 5.0, 1e-7, 1e-9, 500);
        CHECK(traj.meta.completed);
        ++done;
    }
}

}  // TEST_SUITE sim_extra

TEST_SUITE("sim_threads") {

TEST_CASE("sweep results are independent of the worker count") {
    auto cfg = moore_greitzer::ExampleConfig{};
    auto cl = build_closed_loop(moore_greitzer::system(), moore_greitzer::controller_b(cfg),
                                TrueParameters{cfg.theta_true});
    std::vector<std::pair<std::vector<double>, std::vector<double>>> initials;
    for (auto& x0 : circle_points(0.8, 6, 2)) initials.emplace_back(x0, std::vector<double>{0.0, 0.0});
    setenv("KLADAPT_THREADS", "1", 1);
    auto serial = sweep(cl, initials, 5.0, 1e-8, 1e-10, 100);
    setenv("KLADAPT_THREADS", "4", 1);
    auto parallel = sweep(cl, initials, 5.0, 1e-8, 1e-10, 100);
    unsetenv("KLADAPT_THREADS");
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i)
        for (std::size_t k = 0; k < serial[i].size(); ++k) {
            CHECK(serial[i].x[0][k] == parallel[i].x[0][k]);
            CHECK(serial[i].x[1][k] == parallel[i].x[1][k]);
        }
}

}  // TEST_SUITE sim_threads
