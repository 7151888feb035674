#pragma once

// System-model records for the two problem classes, design-constant bundles, and
// sampled well-formedness validation. Validation is deterministic given the grid
// spec; it checks the structural constraints exactly (symbol scans, origin values)
// and the inequality assumptions on a sampled grid, reporting worst margins.

#include <random>

#include "kladapt/expr.hpp"
#include "kladapt/program.hpp"
#include "kladapt/simplify.hpp"

namespace kladapt {

struct GridSpec {
    double lo = -3.0;
    double hi = 3.0;
    int points_per_axis = 41;
    int random_points = 1000;
    std::uint64_t seed = 0x6b6c61ULL;
    std::size_t max_lattice_points = 100000;  // per-axis count is reduced to respect this
};

struct Violation {
    std::string what;
    std::vector<double> witness_x;
    double margin = 0.0;
};

struct ValidationReport {
    std::vector<Violation> violations;
    double assumption1_worst = std::numeric_limits<double>::infinity();
    double assumption2_worst = std::numeric_limits<double>::infinity();

    [[nodiscard]] bool valid() const { return violations.empty(); }
    [[nodiscard]] std::string summary() const {
        if (violations.empty()) return "valid";
        std::string s;
        for (const auto& v : violations) {
            s += v.what;
            if (!v.witness_x.empty()) {
                s += " at x = (";
                for (std::size_t i = 0; i < v.witness_x.size(); ++i) {
                    if (i) s += ", ";
                    s += std::to_string(v.witness_x[i]);
                }
                s += ")";
            }
            s += "\n";
        }
        return s;
    }
};

/// Plant with the uncertainty in the span of the input:
///   xdot = f(x) + g(x) u + g(x) phi(x)' theta
/// plus the certificates required of it: a CLF pair (P, Q) with nominal feedback k0
/// and the growth function mu relating |phi|^2 to Q.
struct MatchedSystem {
    int n = 0;
    int p = 0;
    std::vector<Expr> f;    // n entries, state only
    std::vector<Expr> g;    // n entries, state only
    std::vector<Expr> phi;  // p entries, state only
    Expr P, Q, k0, mu;
    std::map<std::string, double> constants;
};

/// Triangular chain: xdot_i = f_i(x_1..x_i) + g_i(x_1..x_i) x_{i+1} + sum_j phi_ij(x_1..x_i) theta_j,
/// with x_{n+1} = u.
struct StrictFeedbackSystem {
    int n = 0;
    int p = 0;
    std::vector<Expr> f;                 // n entries
    std::vector<Expr> g;                 // n entries
    std::vector<std::vector<Expr>> phi;  // n x p
    std::map<std::string, double> constants;
};

struct DesignConstants {
    double r = 0.0;        // parameter-norm-squared budget
    double alpha = 1.0;    // Lyapunov decrease rate
    double omega = 1.0;    // IOS decay rate
    double epsilon = 1.0;  // residual margin
    std::vector<double> gamma;  // p adaptation gains
    // matched-case extras
    double delta = 1.0;
    double lambda = 0.5;
    std::vector<std::vector<double>> Gamma;  // p x p adaptation matrix; empty -> diag(gamma)

    void validate(int p_dim) const {
        if (r < 0.0) throw Error(Error::Code::Config, "r must be >= 0");
        if (alpha <= 0.0 || omega <= 0.0 || epsilon <= 0.0)
            throw Error(Error::Code::Config, "alpha, omega, epsilon must be > 0");
        if (static_cast<int>(gamma.size()) != p_dim)
            throw Error(Error::Code::Config, "gamma must have one entry per parameter");
        for (double gj : gamma)
            if (gj <= 0.0) throw Error(Error::Code::Config, "adaptation gains must be > 0");
        if (delta <= 0.0) throw Error(Error::Code::Config, "delta must be > 0");
        if (lambda <= 0.0 || lambda >= 1.0)
            throw Error(Error::Code::Config, "lambda must lie in (0,1)");
        if (!Gamma.empty()) {
            if (static_cast<int>(Gamma.size()) != p_dim)
                throw Error(Error::Code::Config, "Gamma must be p x p");
            for (const auto& row : Gamma)
                if (static_cast<int>(row.size()) != p_dim)
                    throw Error(Error::Code::Config, "Gamma must be p x p");
            cholesky(Gamma);  // throws if not positive definite
        }
    }

    [[nodiscard]] std::vector<std::vector<double>> gamma_matrix(int p_dim) const {
        if (!Gamma.empty()) return Gamma;
        std::vector<std::vector<double>> m(static_cast<std::size_t>(p_dim),
                                           std::vector<double>(static_cast<std::size_t>(p_dim), 0.0));
        for (int j = 0; j < p_dim; ++j) m[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)] = gamma[static_cast<std::size_t>(j)];
        return m;
    }

    static std::vector<std::vector<double>> cholesky(const std::vector<std::vector<double>>& a) {
        const std::size_t n = a.size();
        std::vector<std::vector<double>> l(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                double s = a[i][j];
                for (std::size_t k = 0; k < j; ++k) s -= l[i][k] * l[j][k];
                if (i == j) {
                    if (s <= 0.0)
                        throw Error(Error::Code::Config, "matrix is not positive definite");
                    l[i][i] = std::sqrt(s);
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        return l;
    }
};

/// Simulation-only ground truth. No synthesis operation accepts this type; it is
/// consumed only when assembling a closed loop.
struct TrueParameters {
    std::vector<double> theta;
};

// ---- validation ----------------------------------------------------------------

namespace detail {

inline std::string theta_const_name(int j) { return "theta" + std::to_string(j); }

inline std::vector<std::vector<double>> validation_grid(int n, const GridSpec& grid) {
    std::vector<std::vector<double>> pts;
    int per_axis = grid.points_per_axis;
    while (per_axis > 2 &&
           std::pow(static_cast<double>(per_axis), n) > static_cast<double>(grid.max_lattice_points))
        --per_axis;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    const std::size_t total = static_cast<std::size_t>(std::pow(static_cast<double>(per_axis), n));
    pts.reserve(total + static_cast<std::size_t>(grid.random_points));
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        std::vector<double> x(static_cast<std::size_t>(n));
        for (int d = 0; d < n; ++d) {
            int i = static_cast<int>(rem % static_cast<std::size_t>(per_axis));
            rem /= static_cast<std::size_t>(per_axis);
            x[static_cast<std::size_t>(d)] =
                grid.lo + (grid.hi - grid.lo) * (per_axis == 1 ? 0.5 : static_cast<double>(i) / (per_axis - 1));
        }
        pts.push_back(std::move(x));
    }
    std::mt19937_64 rng(grid.seed);
    std::uniform_real_distribution<double> dist(grid.lo, grid.hi);
    for (int k = 0; k < grid.random_points; ++k) {
        std::vector<double> x(static_cast<std::size_t>(n));
        for (auto& v : x) v = dist(rng);
        pts.push_back(std::move(x));
    }
    return pts;
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace detail

inline ValidationReport validate_matched(const MatchedSystem& sys, const GridSpec& grid = {}) {
    ValidationReport rep;
    auto fail = [&rep](std::string what, std::vector<double> x = {}, double margin = 0.0) {
        rep.violations.push_back({std::move(what), std::move(x), margin});
    };
    if (sys.n < 1 || sys.p < 1) {
        fail("dimensions must satisfy n >= 1, p >= 1");
        return rep;
    }
    if (static_cast<int>(sys.f.size()) != sys.n || static_cast<int>(sys.g.size()) != sys.n ||
        static_cast<int>(sys.phi.size()) != sys.p) {
        fail("field/regressor sizes do not match declared dimensions");
        return rep;
    }

    auto check_symbols = [&](const Expr& e, const std::string& label) {
        SymbolUse u = scan_symbols(e);
        if (u.max_state_index > sys.n)
            fail(label + " references x" + std::to_string(u.max_state_index) + " beyond n");
        if (u.max_estimate_index > 0) fail(label + " must not reference estimate symbols");
        for (const auto& name : u.named)
            if (!sys.constants.count(name)) fail(label + " references unbound constant '" + name + "'");
    };
    for (int i = 0; i < sys.n; ++i) {
        check_symbols(sys.f[static_cast<std::size_t>(i)], "f[" + std::to_string(i + 1) + "]");
        check_symbols(sys.g[static_cast<std::size_t>(i)], "g[" + std::to_string(i + 1) + "]");
    }
    for (int j = 0; j < sys.p; ++j) check_symbols(sys.phi[static_cast<std::size_t>(j)], "phi[" + std::to_string(j + 1) + "]");
    check_symbols(sys.P, "P");
    check_symbols(sys.Q, "Q");
    check_symbols(sys.k0, "k0");
    check_symbols(sys.mu, "mu");
    if (!rep.violations.empty()) return rep;

    Point origin;
    origin.x.assign(static_cast<std::size_t>(sys.n), 0.0);
    origin.constants = sys.constants;
    auto at_origin = [&origin](const Expr& e) { return eval(e, origin); };
    for (int i = 0; i < sys.n; ++i)
        if (std::abs(at_origin(sys.f[static_cast<std::size_t>(i)])) > 1e-12)
            fail("f[" + std::to_string(i + 1) + "](0) != 0");
    for (int j = 0; j < sys.p; ++j)
        if (std::abs(at_origin(sys.phi[static_cast<std::size_t>(j)])) > 1e-12)
            fail("phi[" + std::to_string(j + 1) + "](0) != 0");
    if (std::abs(at_origin(sys.P)) > 1e-12) fail("P(0) != 0");
    if (std::abs(at_origin(sys.Q)) > 1e-12) fail("Q(0) != 0");
    if (std::abs(at_origin(sys.k0)) > 1e-12) fail("k0(0) != 0");

    // assumption margins: grad(P).(f + g k0) + Q <= 0 and |phi|^2 - mu Q <= 0
    std::vector<Expr> gradP;
    for (int i = 1; i <= sys.n; ++i) gradP.push_back(partial(sys.P, DiffVar::state(i)));
    Expr lie = Expr::constant(0.0);
    for (int i = 0; i < sys.n; ++i)
        lie = lie + gradP[static_cast<std::size_t>(i)] *
                        (sys.f[static_cast<std::size_t>(i)] + sys.g[static_cast<std::size_t>(i)] * sys.k0);
    Expr a1_margin = simplify(-sys.Q - lie);
    Expr phi_sq = Expr::constant(0.0);
    for (const Expr& ph : sys.phi) phi_sq = phi_sq + pow(ph, 2);
    Expr a2_margin = simplify(sys.mu * sys.Q - phi_sq);

    std::vector<Expr> roots{a1_margin, a2_margin, sys.P, sys.Q, sys.mu};
    Program prog(roots, sys.n, 0, sys.constants);
    std::vector<double> out(roots.size()), work;
    double worst1 = std::numeric_limits<double>::infinity();
    double worst2 = worst1;
    std::optional<Violation> v1, v2, vP, vQ, vmu;
    for (const auto& x : detail::validation_grid(sys.n, grid)) {
        if (prog.eval(x, {}, out, work) != EvalFault::None) {
            fail("evaluation fault on validation grid", x);
            return rep;
        }
        bool off_origin = detail::norm2(x) > 1e-9;
        if (out[0] < worst1) {
            worst1 = out[0];
            if (out[0] < -1e-9) v1 = Violation{"Assumption 1 violated (grad P.(f+g k0) > -Q)", x, out[0]};
        }
        if (out[1] < worst2) {
            worst2 = out[1];
            if (out[1] < -1e-9) v2 = Violation{"Assumption 2 violated (|phi|^2 > mu Q)", x, out[1]};
        }
        if (off_origin && out[2] <= 0.0 && !vP) vP = Violation{"P not positive definite", x, out[2]};
        if (off_origin && out[3] <= 0.0 && !vQ) vQ = Violation{"Q not positive definite", x, out[3]};
        if (out[4] <= 0.0 && !vmu) vmu = Violation{"mu not positive", x, out[4]};
    }
    rep.assumption1_worst = worst1;
    rep.assumption2_worst = worst2;
    for (auto& v : {v1, v2, vP, vQ, vmu})
        if (v) rep.violations.push_back(*v);
    return rep;
}

inline ValidationReport validate_strict_feedback(const StrictFeedbackSystem& sys,
                                                 const GridSpec& grid = {}) {
    ValidationReport rep;
    auto fail = [&rep](std::string what, std::vector<double> x = {}, double margin = 0.0) {
        rep.violations.push_back({std::move(what), std::move(x), margin});
    };
    if (sys.n < 1 || sys.p < 1) {
        fail("dimensions must satisfy n >= 1, p >= 1");
        return rep;
    }
    if (static_cast<int>(sys.f.size()) != sys.n || static_cast<int>(sys.g.size()) != sys.n ||
        static_cast<int>(sys.phi.size()) != sys.n) {
        fail("field/regressor sizes do not match declared dimensions");
        return rep;
    }
    for (int i = 0; i < sys.n; ++i)
        if (static_cast<int>(sys.phi[static_cast<std::size_t>(i)].size()) != sys.p) {
            fail("phi[" + std::to_string(i + 1) + "] must have p entries");
            return rep;
        }

    // triangularity + symbol hygiene
    auto check_triangular = [&](const Expr& e, int i, const std::string& label) {
        SymbolUse u = scan_symbols(e);
        if (u.max_state_index > i)
            fail(label + " depends on x" + std::to_string(u.max_state_index) +
                 " (allowed up to x" + std::to_string(i) + ")");
        if (u.max_estimate_index > 0) fail(label + " must not reference estimate symbols");
        for (const auto& name : u.named)
            if (!sys.constants.count(name)) fail(label + " references unbound constant '" + name + "'");
    };
    for (int i = 1; i <= sys.n; ++i) {
        check_triangular(sys.f[static_cast<std::size_t>(i - 1)], i, "f" + std::to_string(i));
        check_triangular(sys.g[static_cast<std::size_t>(i - 1)], i, "g" + std::to_string(i));
        for (int j = 1; j <= sys.p; ++j)
            check_triangular(sys.phi[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)], i,
                             "phi" + std::to_string(i) + "," + std::to_string(j));
    }
    if (!rep.violations.empty()) return rep;

    Point origin;
    origin.x.assign(static_cast<std::size_t>(sys.n), 0.0);
    origin.constants = sys.constants;
    for (int i = 1; i <= sys.n; ++i) {
        if (std::abs(eval(sys.f[static_cast<std::size_t>(i - 1)], origin)) > 1e-12)
            fail("f" + std::to_string(i) + "(0) != 0");
        for (int j = 1; j <= sys.p; ++j) {
            double v = eval(sys.phi[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)], origin);
            if (std::abs(v) > 1e-12)
                fail("phi" + std::to_string(i) + "," + std::to_string(j) + "(0) = " +
                     std::to_string(v) + " != 0");
        }
    }

    // g_i nonvanishing on the grid
    Program gprog(sys.g, sys.n, 0, sys.constants);
    std::vector<double> out(static_cast<std::size_t>(sys.n)), work;
    for (const auto& x : detail::validation_grid(sys.n, grid)) {
        if (gprog.eval(x, {}, out, work) != EvalFault::None) {
            fail("evaluation fault on validation grid", x);
            return rep;
        }
        for (int i = 0; i < sys.n; ++i)
            if (std::abs(out[static_cast<std::size_t>(i)]) < 1e-9) {
                fail("g" + std::to_string(i + 1) + " vanishes", x, out[static_cast<std::size_t>(i)]);
                return rep;
            }
    }
    return rep;
}

}  // namespace kladapt
