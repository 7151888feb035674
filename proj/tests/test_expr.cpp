#include <cmath>

#include "doctest.h"
#include "kladapt/expr.hpp"
#include "kladapt/program.hpp"
#include "kladapt/rho.hpp"
#include "kladapt/sexpr.hpp"
#include "kladapt/simplify.hpp"
#include "test_helpers.hpp"

using namespace kladapt;

namespace {
Expr x(int i) { return Expr::state(i); }
Expr th(int j) { return Expr::estimate(j); }
}  // namespace

TEST_SUITE("expr") {

TEST_CASE("eval: polynomial arithmetic") {
    Expr e = pow(x(1), 2) + 2.0;
    Point pt{{3.0}, {}, {}};
    CHECK(eval(e, pt) == doctest::Approx(11.0));
}

TEST_CASE("eval: zero factor") {
    Expr e = th(1) * x(1);
    Point pt{{0.0}, {5.0}, {}};
    CHECK(eval(e, pt) == doctest::Approx(0.0));
}

TEST_CASE("eval: example damping gain at the origin") {
    // M = 2*mu + (th1^2 + th2^2 + r)/2 + x1^2 + (1 + 1/(2 eps)) x1^4 + x1^6/(2 eps)
    Expr mu = Expr::named("mu"), r = Expr::named("r"), eps = Expr::named("epsilon");
    Expr M = 2.0 * mu + (pow(th(1), 2) + pow(th(2), 2) + r) / 2.0 + pow(x(1), 2) +
             (1.0 + 1.0 / (2.0 * eps)) * pow(x(1), 4) + pow(x(1), 6) / (2.0 * eps);
    Point pt{{0.0}, {0.0, 0.0}, {{"mu", 1.0}, {"r", 2.0}, {"epsilon", 1.0}}};
    CHECK(eval(M, pt) == doctest::Approx(3.0));
}

TEST_CASE("eval: errors") {
    Point pt{{1.0}, {}, {}};
    CHECK_THROWS_AS(eval(x(2), pt), Error);
    CHECK_THROWS_AS(eval(th(1), pt), Error);
    CHECK_THROWS_AS(eval(Expr::named("mu"), pt), Error);
    CHECK_THROWS_AS(eval(quotient(Expr::constant(1.0), x(1) - 1.0), pt), Error);
    CHECK_THROWS_AS(eval(sqrt_of(Expr::constant(-1.0)), pt), Error);
}

TEST_CASE("partial: regressor derivative matches the hand form") {
    Expr e = th(1) * pow(x(1), 2) + th(2) * pow(x(1), 3);
    Expr d = partial(e, DiffVar::state(1));
    Expr expected = simplify(2.0 * th(1) * x(1) + 3.0 * th(2) * pow(x(1), 2));
    CHECK(d == expected);
}

TEST_CASE("partial: absent symbol differentiates to zero") {
    CHECK(partial(pow(x(1), 3), DiffVar::state(2)).is_constant(0.0));
    CHECK(partial(Expr::constant(4.0), DiffVar::state(1)).is_constant(0.0));
    CHECK(partial(Expr::named("mu"), DiffVar::estimate(1)).is_constant(0.0));
}

TEST_CASE("partial: estimate derivative of the example z validated by finite differences") {
    // z = x2 + th1 x1^2 + th2 x1^3 + M x1 with the example M (mu=1, r=2, eps=1)
    Expr M = 2.0 + (pow(th(1), 2) + pow(th(2), 2) + 2.0) / 2.0 + pow(x(1), 2) +
             1.5 * pow(x(1), 4) + 0.5 * pow(x(1), 6);
    Expr z = x(2) + th(1) * pow(x(1), 2) + th(2) * pow(x(1), 3) + M * x(1);
    Expr dz = partial(z, DiffVar::estimate(1));
    Point pt{{0.3, -0.7}, {0.1, -0.2}, {}};
    auto fd = testing::finite_difference(z, DiffVar::estimate(1), pt);
    REQUIRE(fd.has_value());
    CHECK(eval(dz, pt) == doctest::Approx(*fd).epsilon(1e-6));
}

TEST_CASE("substitute: shift") {
    Substitution sub;
    sub.set_state(1, x(1) + 1.0);
    Expr e = substitute(pow(x(1), 2), sub);
    Point pt{{2.0}, {}, {}};
    CHECK(eval(e, pt) == doctest::Approx(9.0));
}

TEST_CASE("substitute: y -> k collapses y - k to zero after simplify") {
    // y is x2; k is an arbitrary expression in (x1, th)
    Expr k = -(th(1) * pow(x(1), 2) + 3.0 * x(1));
    Substitution sub;
    sub.set_state(2, k);
    Expr e = simplify(substitute(x(2) - k, sub));
    CHECK(e.is_constant(0.0));
}

TEST_CASE("substitute/eval commute on random expressions") {
    testing::ExprGen gen(42);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        Expr e = gen.gen(4);
        Expr b1 = gen.gen(2);
        Expr b2 = gen.gen(2);
        Substitution sub;
        sub.set_state(1, b1);
        sub.set_estimate(1, b2);
        Expr sub_e = substitute(e, sub);
        Point pt = gen.point();
        try {
            Point composed = pt;
            composed.x[0] = eval(b1, pt);
            composed.theta_hat[0] = eval(b2, pt);
            double direct = eval(sub_e, pt);
            double via = eval(e, composed);
            CHECK(direct == doctest::Approx(via).epsilon(1e-12));
            ++checked;
        } catch (const Error&) {
            continue;  // singular sample, skip
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("simplify: unit laws") {
    Expr e = Expr::constant(0.0) * x(1) + Expr::constant(1.0) * th(2);
    CHECK(simplify(e) == th(2));
}

TEST_CASE("simplify: power collection") {
    CHECK(simplify(x(1) * x(1)) == pow(x(1), 2));
}

TEST_CASE("simplify: collects identical monomials") {
    Expr e = 2.0 * x(1) * th(1) + th(1) * x(1) * 3.0;
    CHECK(simplify(e) == simplify(5.0 * x(1) * th(1)));
}

TEST_CASE("simplify: preserves value on random expressions") {
    testing::ExprGen gen(7);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        Expr e = gen.gen(5);
        Expr s = simplify(e);
        for (int k = 0; k < 5; ++k) {
            Point pt = gen.point();
            try {
                double a = eval(e, pt);
                double b = eval(s, pt);
                CHECK(std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}));
                ++checked;
            } catch (const Error&) {
                continue;
            }
        }
    }
    CHECK(checked > 500);
}

TEST_CASE("derivative correctness: random expressions vs central finite differences") {
    testing::ExprGen gen(1234);
    int checked = 0;
    while (checked < 1000) {
        Expr e = gen.gen(6);
        DiffVar v = gen.uniform_int(0, 1) == 0 ? DiffVar::state(gen.uniform_int(1, 3))
                                               : DiffVar::estimate(gen.uniform_int(1, 2));
        Expr d = partial(e, v);
        Point pt = gen.point();
        try {
            double sym = eval(d, pt);
            auto fd = testing::finite_difference(e, v, pt);
            if (!fd || !std::isfinite(*fd)) continue;
            if (std::abs(*fd) > 1e8) continue;  // FD unreliable at extreme magnitudes
            CHECK(std::abs(sym - *fd) <= 1e-5 * std::max({1.0, std::abs(sym), std::abs(*fd)}));
            ++checked;
        } catch (const Error&) {
            continue;
        }
    }
}

TEST_CASE("sexpr: documented form") {
    Expr e = sum_of({product_of({Expr::constant(2.0), pow(x(1), 2)}), th(1)});
    CHECK(to_sexpr(e) == "(+ (* 2 (^ x1 2)) th1)");
    CHECK(parse_sexpr("(+ (* 2 (^ x1 2)) th1)") == e);
}

TEST_CASE("sexpr: round-trips exactly on random expressions") {
    testing::ExprGen gen(99);
    for (int trial = 0; trial < 200; ++trial) {
        Expr e = gen.gen(5);
        Expr back = parse_sexpr(to_sexpr(e));
        CHECK(back == e);
    }
}

TEST_CASE("sexpr: sugar and errors") {
    CHECK(eval(parse_sexpr("(- x1)"), Point{{3.0}, {}, {}}) == doctest::Approx(-3.0));
    CHECK(eval(parse_sexpr("(- x1 1 1)"), Point{{3.0}, {}, {}}) == doctest::Approx(1.0));
    CHECK(eval(parse_sexpr("mu"), Point{{}, {}, {{"mu", 2.5}}}) == doctest::Approx(2.5));
    CHECK_THROWS_AS(static_cast<void>(parse_sexpr("(^ x1 -2)")), Error);
    CHECK_THROWS_AS(static_cast<void>(parse_sexpr("(+ x1")), Error);
    CHECK_THROWS_AS(static_cast<void>(parse_sexpr("(% x1 2)")), Error);
    CHECK_THROWS_AS(static_cast<void>(parse_sexpr("x1 x2")), Error);
}

TEST_CASE("program: matches one-shot evaluation") {
    testing::ExprGen gen(5);
    for (int trial = 0; trial < 100; ++trial) {
        Expr e = gen.gen(5);
        Program prog(std::span<const Expr>(&e, 1), 3, 2, {});
        std::vector<double> work;
        for (int k = 0; k < 3; ++k) {
            Point pt = gen.point();
            double out = 0.0;
            EvalFault fault = prog.eval(pt.x, pt.theta_hat, std::span<double>(&out, 1), work);
            try {
                double ref = eval(e, pt);
                REQUIRE(fault == EvalFault::None);
                CHECK(out == doctest::Approx(ref).epsilon(1e-13));
            } catch (const Error&) {
                CHECK(fault != EvalFault::None);
            }
        }
    }
}

TEST_CASE("program: binds named constants at compile time") {
    Expr e = Expr::named("mu") * x(1);
    Program prog(std::span<const Expr>(&e, 1), 1, 0, {{"mu", 2.0}});
    std::vector<double> work;
    double out = 0.0;
    std::vector<double> xs{3.0}, ths{};
    CHECK(prog.eval(xs, ths, std::span<double>(&out, 1), work) == EvalFault::None);
    CHECK(out == doctest::Approx(6.0));
    CHECK_THROWS_AS(Program(std::span<const Expr>(&e, 1), 1, 0, {}), Error);
}

}  // TEST_SUITE expr

TEST_SUITE("rho") {

TEST_CASE("linear h gives rho == sqrt(2)") {
    auto rb = ray_quadrature_rho(x(1), 1);
    Point pt{{0.7}, {}, {}};
    CHECK(rb(pt) == doctest::Approx(std::sqrt(2.0)));
    CHECK(std::abs(eval(x(1), pt)) <= rb(pt) * std::abs(pt.x[0]));
}

TEST_CASE("quadratic h: closed-form integral") {
    auto rb = ray_quadrature_rho(pow(x(1), 2), 1);
    Point pt{{2.0}, {}, {}};
    // rho(2) = (1 + 16/3)^(1/2)
    CHECK(rb(pt) == doctest::Approx(std::sqrt(1.0 + 16.0 / 3.0)).epsilon(1e-12));
    CHECK(4.0 <= rb(pt) * 2.0);
}

TEST_CASE("example regressor bound holds on a grid sweep") {
    Expr h = pow(x(1), 2);  // phi_{1,1} of the surge example
    auto rb = ray_quadrature_rho(h, 1);
    for (int i = 0; i <= 400; ++i) {
        double xv = -2.0 + 4.0 * i / 400.0;
        Point pt{{xv}, {}, {}};
        CHECK(std::abs(eval(h, pt)) <= rb(pt) * std::abs(xv) + 1e-15);
    }
}

TEST_CASE("rho >= 1 and bound soundness on random polynomial corpus") {
    testing::ExprGen gen(2024);
    std::vector<Expr> corpus = {
        pow(x(1), 2), pow(x(1), 3), x(1) * th(1) * th(1) + x(2),
        x(1) * x(2), pow(x(1), 2) * th(2) + 3.0 * x(2) * x(1),
    };
    for (const Expr& h : corpus) {
        auto rb = ray_quadrature_rho(h, 2);
        for (int k = 0; k < 2000; ++k) {
            Point pt = gen.point(-10.0, 10.0);
            pt.x.resize(2);
            double norm = std::hypot(pt.x[0], pt.x[1]);
            double hv = eval(h, pt);
            double rv = rb(pt);
            CHECK(rv >= 1.0);
            CHECK(std::abs(hv) <= rv * norm * (1.0 + 1e-12) + 1e-12);
        }
    }
}

TEST_CASE("precondition: h must vanish at the origin") {
    CHECK_THROWS_AS(ray_quadrature_rho(x(1) + 1.0, 1), Error);
    CHECK_THROWS_AS(ray_quadrature_rho(th(1), 1), Error);  // h(0,th)=th1 != 0
}

TEST_CASE("gauss-legendre nodes integrate polynomials exactly") {
    auto q = gauss_legendre(8);
    // int_0^1 lambda^k dlambda = 1/(k+1) for k <= 15
    for (int k = 0; k <= 15; ++k) {
        double s = 0.0;
        for (int i = 0; i < 8; ++i) s += q.weights[i] * std::pow(q.nodes[i], k);
        CHECK(s == doctest::Approx(1.0 / (k + 1)).epsilon(1e-13));
    }
}

}  // TEST_SUITE rho

TEST_SUITE("expr_properties") {

TEST_CASE("simplify is idempotent on random expressions") {
    kladapt::testing::ExprGen gen(314159);
    for (int trial = 0; trial < 150; ++trial) {
        Expr e = gen.gen(5);
        Expr once = simplify(e);
        Expr twice = simplify(once);
        CHECK(twice == once);
    }
}

TEST_CASE("partial of a sum distributes and constants vanish") {
    kladapt::testing::ExprGen gen(2718);
    for (int trial = 0; trial < 100; ++trial) {
        Expr a = gen.gen(4);
        Expr b = gen.gen(4);
        DiffVar v = DiffVar::state(gen.uniform_int(1, 3));
        Expr lhs = partial(a + b, v);
        Expr rhs = simplify(partial(a, v) + partial(b, v));
        Point pt = gen.point();
        try {
            CHECK(eval(lhs, pt) == doctest::Approx(eval(rhs, pt)).epsilon(1e-10));
        } catch (const Error&) {
            continue;
        }
    }
}

}  // TEST_SUITE expr_properties
