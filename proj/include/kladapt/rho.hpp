#pragma once

// Constructive growth bound: for smooth h with h(0, th) = 0, builds
//   rho(x, th) = (1 + sum_i \int_0^1 (dh/dx_i(lambda x, th))^2 dlambda)^(1/2)
// which satisfies |h(x, th)| <= rho(x, th) |x| and rho >= 1. The lambda integral
// is realized as a Gauss-Legendre sum applied symbolically, so rho is itself an
// Expr (differentiable, composable); for polynomial h of degree d the sum is the
// exact integral once 2*order - 1 >= 2*(d - 1).

#include <numbers>
#include <random>

#include "kladapt/expr.hpp"
#include "kladapt/simplify.hpp"

namespace kladapt {

struct GaussLegendre {
    std::vector<double> nodes;    // on [0, 1]
    std::vector<double> weights;  // sum to 1
};

/// Gauss-Legendre nodes/weights on [0,1], computed by Newton iteration on P_n.
inline GaussLegendre gauss_legendre(int order) {
    if (order < 1) throw Error(Error::Code::Config, "quadrature order must be >= 1");
    const int n = order;
    GaussLegendre q;
    q.nodes.resize(static_cast<std::size_t>(n));
    q.weights.resize(static_cast<std::size_t>(n));
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = n * (z * p1 - p0) / (z * z - 1.0);
            double dz = p1 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        double w = 2.0 / ((1.0 - z * z) * pp * pp);
        // map [-1,1] -> [0,1]; z is the i-th root from the upper end
        q.nodes[static_cast<std::size_t>(i)] = (1.0 - z) / 2.0;
        q.nodes[static_cast<std::size_t>(n - 1 - i)] = (1.0 + z) / 2.0;
        q.weights[static_cast<std::size_t>(i)] = w / 2.0;
        q.weights[static_cast<std::size_t>(n - 1 - i)] = w / 2.0;
    }
    return q;
}

/// Growth-bound callable: rho is a plain Expr evaluated pointwise; expr() exposes
/// it for symbolic composition (the backstepping gains differentiate through it).
struct RayBound {
    Expr rho;
    int quad_order = 0;

    [[nodiscard]] double operator()(const Point& pt) const { return eval(rho, pt); }
    [[nodiscard]] const Expr& expr() const { return rho; }
};

inline RayBound ray_quadrature_rho(const Expr& h, int n_state, int quad_order = 16) {
    SymbolUse use = scan_symbols(h);
    if (!use.named.empty())
        throw Error(Error::Code::Config,
                    "ray_quadrature_rho requires named constants to be bound first (found '" +
                        use.named.front() + "')");
    if (use.max_state_index > n_state)
        throw Error(Error::Code::DimensionMismatch,
                    "h references x" + std::to_string(use.max_state_index) +
                        " beyond declared state dimension " + std::to_string(n_state));

    // precondition: h(0, th) = 0 for all th, sampled
    {
        std::mt19937_64 rng(0x5eedULL);
        std::uniform_real_distribution<double> dist(-3.0, 3.0);
        const int p = std::max(use.max_estimate_index, 1);
        Point pt;
        pt.x.assign(static_cast<std::size_t>(n_state), 0.0);
        pt.theta_hat.resize(static_cast<std::size_t>(p));
        for (int s = 0; s < 16; ++s) {
            for (auto& v : pt.theta_hat) v = dist(rng);
            double v = eval(h, pt);
            if (std::abs(v) >= 1e-12)
                throw Error(Error::Code::NonvanishingAtOrigin,
                            "h(0, theta_hat) = " + std::to_string(v) + " != 0");
        }
    }

    GaussLegendre q = gauss_legendre(quad_order);
    std::vector<Expr> terms;
    for (int i = 1; i <= n_state; ++i) {
        Expr di = partial(h, DiffVar::state(i));
        if (di.is_constant(0.0)) continue;
        for (int k = 0; k < quad_order; ++k) {
            Substitution scale;
            for (int j = 1; j <= n_state; ++j)
                scale.set_state(j, Expr::constant(q.nodes[static_cast<std::size_t>(k)]) * Expr::state(j));
            Expr at_node = substitute(di, scale);
            terms.push_back(Expr::constant(q.weights[static_cast<std::size_t>(k)]) * pow(at_node, 2));
        }
    }
    Expr rho = sqrt_of(simplify(Expr::constant(1.0) + sum_of(std::move(terms))));
    return RayBound{simplify(rho), quad_order};
}

}  // namespace kladapt
