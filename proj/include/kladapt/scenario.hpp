#pragma once

// Scenario presets: a line-oriented description of one experiment (system,
// controller, true parameters, initial state, horizon, outputs, checks) that the
// CLI runs or verifies. The same schema describes figure-reproduction presets and
// initial-condition sweeps.

#include <filesystem>
#include <fstream>

#include "kladapt/backstep.hpp"
#include "kladapt/keyfile.hpp"
#include "kladapt/matched.hpp"
#include "kladapt/moore_greitzer.hpp"
#include "kladapt/output.hpp"
#include "kladapt/sim.hpp"
#include "kladapt/verify.hpp"

namespace kladapt {

inline constexpr const char* kScenarioSchema = "kladapt-scenario-v1";

struct CheckSpec {
    std::string type;  // lyapunov | ios | exp-envelope | equilibrium | theorem1
    double tol = 1e-6;
    double slack = 1.0 + 1e-4;
    std::optional<double> omega;
    std::optional<double> epsilon;
    std::optional<double> r;
    int samples = 100;
    bool expect_pass = true;
};

struct Scenario {
    std::string kind = "run";  // run | verify | sweep | figure
    std::string system_name;   // builtin name; empty when a model file is given
    std::string model_path;
    std::string controller;  // standard | damped | backstep | example-a | example-b | none | file:<path>
    std::vector<double> theta_true;
    std::vector<double> x0;
    std::vector<double> theta_hat0;
    double t_end = 20.0;
    double rtol = 1e-8;
    double atol = 1e-10;
    int n_report = 2000;
    std::map<std::string, double> constants;
    std::string csv_path;
    std::string svg_path;
    std::vector<CheckSpec> checks;
    // sweep
    double circle_radius = 0.0;
    int circle_count = 0;
    std::vector<std::vector<double>> extra_points;
    // figure
    int figure = 0;
    std::string origin = "<scenario>";
};

inline Scenario parse_scenario(const KeySection& root, const std::string& origin) {
    Scenario sc;
    sc.origin = origin;
    if (root.get_or("schema", "") != kScenarioSchema)
        throw Error(Error::Code::Config, origin + ": expected schema = " + std::string(kScenarioSchema));
    sc.kind = root.get_or("kind", "run");
    if (sc.kind != "run" && sc.kind != "verify" && sc.kind != "sweep" && sc.kind != "figure")
        throw Error(Error::Code::Config, origin + ": unknown kind '" + sc.kind + "'");
    if (const std::string* m = root.find("model"))
        sc.model_path = *m;
    else
        sc.system_name = root.get_or("system", "moore-greitzer");
    sc.controller = root.get_or("controller", "example-b");
    if (const std::string* v = root.find("theta_true"))
        sc.theta_true = KeySection::parse_vector("theta_true", *v);
    if (const std::string* v = root.find("x0")) sc.x0 = KeySection::parse_vector("x0", *v);
    if (const std::string* v = root.find("theta_hat0"))
        sc.theta_hat0 = KeySection::parse_vector("theta_hat0", *v);
    sc.t_end = root.get_double_or("t_end", 20.0);
    sc.rtol = root.get_double_or("rtol", 1e-8);
    sc.atol = root.get_double_or("atol", 1e-10);
    sc.n_report = root.find("n_report") ? root.get_int("n_report") : 2000;
    sc.figure = root.find("figure") ? root.get_int("figure") : 0;
    if (const KeySection* c = root.find_section("constants"))
        for (const auto& [k, v] : c->entries) sc.constants[k] = KeySection::parse_double(k, v);
    if (const KeySection* o = root.find_section("outputs")) {
        sc.csv_path = o->get_or("csv", "");
        sc.svg_path = o->get_or("svg", "");
    }
    if (const KeySection* cs = root.find_section("checks")) {
        for (const auto& s : cs->sections) {
            if (s.name != "check")
                throw Error(Error::Code::Config, origin + ": unexpected section '" + s.name + "' in checks");
            CheckSpec spec;
            spec.type = s.get("type");
            spec.tol = s.get_double_or("tol", 1e-6);
            spec.slack = s.get_double_or("slack", 1.0 + 1e-4);
            if (s.find("omega")) spec.omega = s.get_double("omega");
            if (s.find("epsilon")) spec.epsilon = s.get_double("epsilon");
            if (s.find("r")) spec.r = s.get_double("r");
            spec.samples = s.find("samples") ? s.get_int("samples") : 100;
            std::string expect = s.get_or("expect", "pass");
            if (expect != "pass" && expect != "fail")
                throw Error(Error::Code::Config, origin + ": expect must be pass or fail");
            spec.expect_pass = expect == "pass";
            sc.checks.push_back(std::move(spec));
        }
    }
    if (const KeySection* is = root.find_section("initial_set")) {
        if (const KeySection* c = is->find_section("circle")) {
            sc.circle_radius = c->get_double("radius");
            sc.circle_count = c->get_int("count");
        }
        for (const auto& [k, v] : is->entries)
            if (k == "point") sc.extra_points.push_back(KeySection::parse_vector("point", v));
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    return parse_scenario(load_keyfile(path), path);
}

/// Everything a runnable scenario resolves to: the system, the controller, the
/// closed loop, and the expressions named by the checks.
struct ScenarioSetup {
    AnySystem system;
    AdaptiveController ctrl;
    ClosedLoop loop;
    int n = 0;
    int p = 0;
    double default_omega = 1.0;  // rate for the IOS-form checks
};

namespace detail {

inline double const_or(const std::map<std::string, double>& m, const std::string& k, double fb) {
    auto it = m.find(k);
    return it == m.end() ? fb : it->second;
}

inline MatchedSystem matched_scalar_demo() {
    MatchedSystem sys;
    sys.n = 1;
    sys.p = 1;
    Expr x1 = Expr::state(1);
    sys.f = {-x1};
    sys.g = {Expr::constant(1.0)};
    sys.phi = {x1};
    sys.P = Expr::constant(0.5) * pow(x1, 2);
    sys.Q = pow(x1, 2);
    sys.k0 = Expr::constant(0.0);
    sys.mu = Expr::constant(1.0);
    return sys;
}

inline DesignConstants scenario_constants(const Scenario& sc, int p) {
    DesignConstants c;
    c.r = const_or(sc.constants, "r", 0.0);
    c.alpha = const_or(sc.constants, "alpha", 1.0);
    c.omega = const_or(sc.constants, "omega", 1.0);
    c.epsilon = const_or(sc.constants, "epsilon", 1.0);
    c.delta = const_or(sc.constants, "delta", 1.0);
    c.lambda = const_or(sc.constants, "lambda", 0.5);
    for (int j = 1; j <= p; ++j)
        c.gamma.push_back(const_or(sc.constants, "gamma" + std::to_string(j), 1.0));
    return c;
}

inline moore_greitzer::ExampleConfig scenario_example_config(const Scenario& sc) {
    moore_greitzer::ExampleConfig cfg;
    cfg.Q = const_or(sc.constants, "Q", 1.0);
    cfg.gamma1 = const_or(sc.constants, "gamma1", 1.0);
    cfg.gamma2 = const_or(sc.constants, "gamma2", 1.0);
    cfg.mu = const_or(sc.constants, "mu", 1.0);
    cfg.epsilon = const_or(sc.constants, "epsilon", 1.0);
    cfg.r = const_or(sc.constants, "r", 2.0);
    if (!sc.theta_true.empty()) cfg.theta_true = sc.theta_true;
    if (!sc.x0.empty()) cfg.x0 = sc.x0;
    if (!sc.theta_hat0.empty()) cfg.theta_hat0 = sc.theta_hat0;
    return cfg;
}

}  // namespace detail

inline ScenarioSetup build_scenario(const Scenario& sc) {
    ScenarioSetup setup;
    if (!sc.model_path.empty()) {
        if (!std::filesystem::exists(sc.model_path))
            throw Error(Error::Code::Config, sc.origin + ": model file not found: " + sc.model_path);
        setup.system = load_model(sc.model_path);
    } else if (sc.system_name == "moore-greitzer") {
        setup.system = moore_greitzer::system();
    } else if (sc.system_name == "matched-scalar-demo") {
        setup.system = detail::matched_scalar_demo();
    } else {
        throw Error(Error::Code::Config, sc.origin + ": unknown builtin system '" + sc.system_name + "'");
    }
    std::visit([&](const auto& s) { setup.n = s.n; setup.p = s.p; }, setup.system);

    if (static_cast<int>(sc.theta_true.size()) != setup.p)
        throw Error(Error::Code::Config,
                    sc.origin + ": theta_true must have " + std::to_string(setup.p) + " entries");
    DesignConstants consts = detail::scenario_constants(sc, setup.p);
    setup.default_omega = consts.omega;

    const bool is_mg = sc.model_path.empty() && sc.system_name == "moore-greitzer";
    if (sc.controller == "example-a" || sc.controller == "example-b") {
        if (!is_mg)
            throw Error(Error::Code::Config,
                        sc.origin + ": controller '" + sc.controller + "' requires system = moore-greitzer");
        auto cfg = detail::scenario_example_config(sc);
        setup.ctrl = sc.controller == "example-a" ? moore_greitzer::controller_a(cfg)
                                                  : moore_greitzer::controller_b(cfg);
        if (sc.controller == "example-b") setup.default_omega = moore_greitzer::ios_omega(cfg);
        if (sc.controller == "example-a") setup.default_omega = cfg.mu;
    } else if (sc.controller == "backstep") {
        auto* sfs = std::get_if<StrictFeedbackSystem>(&setup.system);
        if (!sfs)
            throw Error(Error::Code::Config, sc.origin + ": backstep requires a strict-feedback system");
        auto [ctrl, trace] = synthesize(*sfs, consts);
        setup.ctrl = std::move(ctrl);
    } else if (sc.controller == "standard" || sc.controller == "damped") {
        auto* ms = std::get_if<MatchedSystem>(&setup.system);
        if (!ms)
            throw Error(Error::Code::Config,
                        sc.origin + ": controller '" + sc.controller + "' requires a matched system");
        ValidationReport vr = validate_matched(*ms);
        if (!vr.valid())
            throw Error(Error::Code::Config, sc.origin + ": system fails validation:\n" + vr.summary());
        setup.ctrl = sc.controller == "standard"
                         ? standard_controller(*ms, consts.gamma_matrix(ms->p))
                         : damped_controller(*ms, consts);
    } else if (sc.controller == "none") {
        setup.ctrl.u = Expr::constant(0.0);
        setup.ctrl.w.assign(static_cast<std::size_t>(setup.p), Expr::constant(0.0));
    } else if (sc.controller.rfind("file:", 0) == 0) {
        std::string path = sc.controller.substr(5);
        if (!std::filesystem::exists(path))
            throw Error(Error::Code::Config, sc.origin + ": controller file not found: " + path);
        setup.ctrl = read_controller_section(load_keyfile(path), path);
    } else {
        throw Error(Error::Code::Config, sc.origin + ": unknown controller '" + sc.controller + "'");
    }

    TrueParameters theta{sc.theta_true};
    std::visit([&](const auto& s) { setup.loop = build_closed_loop(s, setup.ctrl, theta); },
               setup.system);

    if (static_cast<int>(sc.theta_hat0.size()) != setup.p && !sc.theta_hat0.empty())
        throw Error(Error::Code::Config,
                    sc.origin + ": theta_hat0 must have " + std::to_string(setup.p) + " entries");

    if (static_cast<int>(sc.x0.size()) != setup.n && sc.kind != "sweep" && sc.kind != "figure")
        throw Error(Error::Code::Config,
                    sc.origin + ": x0 must have " + std::to_string(setup.n) + " entries");
    return setup;
}

[[nodiscard]] inline std::vector<double> initial_estimate(const Scenario& sc, const ScenarioSetup& setup) {
    if (!sc.theta_hat0.empty()) return sc.theta_hat0;
    return std::vector<double>(static_cast<std::size_t>(setup.p), 0.0);
}

struct RunResult {
    Trajectory traj;
    VerificationReport report;
    std::vector<bool> expected_pass;  // aligned with report.checks
    bool all_expected = true;         // every check matched its expectation
};

namespace detail {

inline std::vector<Expr> scenario_T(const ScenarioSetup& setup) {
    std::vector<Expr> T;
    for (int i = 1;; ++i) {
        auto it = setup.ctrl.diagnostics.find("T" + std::to_string(i));
        if (it == setup.ctrl.diagnostics.end()) break;
        T.push_back(it->second);
    }
    return T;
}

}  // namespace detail

inline RunResult run_checks(const Scenario& sc, const ScenarioSetup& setup, const Trajectory& traj,
                            std::uint64_t seed = 2026) {
    RunResult out;
    out.traj = traj;
    DesignConstants consts = detail::scenario_constants(sc, setup.p);
    for (const auto& spec : sc.checks) {
        std::vector<Check> produced;
        double omega = spec.omega.value_or(setup.default_omega);
        double epsilon = spec.epsilon.value_or(detail::const_or(sc.constants, "epsilon", 1.0));
        double r = spec.r.value_or(detail::const_or(sc.constants, "r", 0.0));
        if (spec.type == "lyapunov") {
            auto v = setup.ctrl.diagnostics.find(setup.ctrl.diagnostics.count("W") ? "W" : "V");
            auto b = setup.ctrl.diagnostics.find("bound");
            if (v == setup.ctrl.diagnostics.end() || b == setup.ctrl.diagnostics.end())
                throw Error(Error::Code::Config, "controller exposes no V/bound diagnostics");
            produced.push_back(check_lyapunov(setup.loop, traj, v->second, b->second, spec.tol));
        } else if (spec.type == "ios") {
            auto T = detail::scenario_T(setup);
            if (T.empty()) throw Error(Error::Code::Config, "controller exposes no T diagnostics");
            produced.push_back(check_ios(setup.loop, traj, T, omega, epsilon, r, spec.tol));
        } else if (spec.type == "exp-envelope") {
            auto T = detail::scenario_T(setup);
            if (T.empty()) throw Error(Error::Code::Config, "controller exposes no T diagnostics");
            produced.push_back(
                check_exponential_envelope(setup.loop, traj, T, omega, epsilon, r, spec.slack));
        } else if (spec.type == "equilibrium") {
            produced.push_back(check_equilibrium(setup.loop, spec.samples, spec.tol, seed));
        } else if (spec.type == "theorem1") {
            auto* ms = std::get_if<MatchedSystem>(&setup.system);
            if (!ms) throw Error(Error::Code::Config, "theorem1 checks require a matched system");
            GridSpec dense;
            dense.points_per_axis = 401;
            dense.lo = -6.0;
            dense.hi = 6.0;
            auto env = fit_rho_envelope(ms->P, ms->Q, ms->n, ms->constants, dense);
            auto rr = residual_radius(sc.theta_true, consts, env);
            auto cs = check_theorem1_comparison(setup.loop, traj, ms->P, env, rr.alpha_val, consts,
                                                spec.tol);
            produced.insert(produced.end(), cs.begin(), cs.end());
        } else {
            throw Error(Error::Code::Config, sc.origin + ": unknown check type '" + spec.type + "'");
        }
        for (auto& c : produced) {
            if (!spec.expect_pass) c.name += " (expected to fail)";
            bool matched = spec.expect_pass ? c.pass : !c.pass;
            if (!matched && !spec.expect_pass) out.all_expected = false;
            out.expected_pass.push_back(spec.expect_pass);
            out.report.checks.push_back(std::move(c));
        }
    }
    return out;
}

/// exit-code semantics shared by the CLI: 0 on success, 1 when an expected-pass
/// check fails, 2 for configuration errors, 3 for runtime blow-up.
inline int verification_exit_code(const RunResult& result) {
    for (std::size_t i = 0; i < result.report.checks.size(); ++i)
        if (result.expected_pass[i] && !result.report.checks[i].pass) return 1;
    return 0;
}

}  // namespace kladapt
