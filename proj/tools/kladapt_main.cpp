// kladapt: scenario-driven front end for adaptive-controller synthesis, closed-loop
// simulation, inequality verification, and figure reproduction.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error, 3 runtime
// failure (finite escape / non-finite state).

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "kladapt/scenario.hpp"

namespace fs = std::filesystem;
using namespace kladapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct GlobalOpts {
    std::string out_dir = ".";
    double rtol = 0.0;  // 0 = take from scenario
    double atol = 0.0;
    std::uint64_t seed = 2026;
};

[[nodiscard]] bool is_config_error(const Error& e) {
    switch (e.code()) {
    case Error::Code::Config:
    case Error::Code::Parse:
    case Error::Code::DimensionMismatch:
    case Error::Code::UnboundSymbol:
        return true;
    default:
        return false;
    }
}

fs::path out_path(const GlobalOpts& g, const std::string& rel) {
    fs::path p(rel);
    return p.is_absolute() ? p : fs::path(g.out_dir) / p;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& emit) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error(Error::Code::Config, "cannot write " + path.string());
    emit(os);
}

void apply_tolerance_overrides(Scenario& sc, const GlobalOpts& g) {
    if (g.rtol > 0.0) sc.rtol = g.rtol;
    if (g.atol > 0.0) sc.atol = g.atol;
}

moore_greitzer::FigureData norm_curve(const Trajectory& traj) {
    moore_greitzer::FigureData fig;
    fig.xlabel = "t";
    fig.ylabel = "|x(t)|";
    moore_greitzer::Series s;
    s.label = "run";
    s.xs = traj.t;
    for (std::size_t k = 0; k < traj.size(); ++k) s.ys.push_back(traj.state_norm_at(k));
    fig.series.push_back(std::move(s));
    return fig;
}

int integrate_scenario(const Scenario& sc, const ScenarioSetup& setup, const GlobalOpts& g,
                       Trajectory& traj) {
    traj = integrate(setup.loop, sc.x0, initial_estimate(sc, setup), sc.t_end, sc.rtol, sc.atol, sc.n_report);
    if (!sc.csv_path.empty())
        write_file(out_path(g, sc.csv_path), [&](std::ostream& os) { write_trajectory_csv(os, traj); });
    if (!traj.meta.completed) {
        std::cerr << "runtime failure: " << traj.meta.fail_reason << " at t=" << traj.meta.fail_time
                  << "\n";
        return kExitRuntime;
    }
    if (!sc.svg_path.empty()) {
        auto fig = norm_curve(traj);
        write_file(out_path(g, sc.svg_path), [&](std::ostream& os) { write_figure_svg(os, fig); });
    }
    return kExitOk;
}

int cmd_run(const std::string& scenario_path, const GlobalOpts& g) {
    Scenario sc = load_scenario(scenario_path);
    apply_tolerance_overrides(sc, g);
    if (sc.kind == "figure")
        throw Error(Error::Code::Config, scenario_path + ": figure presets run via `kladapt figures`");
    if (sc.kind == "sweep")
        throw Error(Error::Code::Config, scenario_path + ": sweep presets run via `kladapt sweep`");
    ScenarioSetup setup = build_scenario(sc);
    Trajectory traj;
    int rc = integrate_scenario(sc, setup, g, traj);
    if (rc != kExitOk) return rc;
    std::cout << "completed t=" << traj.t.back() << " |x(end)|=" << traj.state_norm_at(traj.size() - 1)
              << " steps=" << traj.meta.n_steps << "\n";
    return kExitOk;
}

int cmd_verify(const std::string& scenario_path, const GlobalOpts& g, bool dump_margins) {
    Scenario sc = load_scenario(scenario_path);
    apply_tolerance_overrides(sc, g);
    if (sc.checks.empty())
        throw Error(Error::Code::Config, scenario_path + ": no checks section");
    ScenarioSetup setup = build_scenario(sc);
    Trajectory traj;
    int rc = integrate_scenario(sc, setup, g, traj);
    if (rc != kExitOk) return rc;
    RunResult result = run_checks(sc, setup, traj, g.seed);
    std::cout << result.report.to_text();
    if (dump_margins) {
        fs::path mpath = sc.csv_path.empty() ? fs::path("margins.csv")
                                             : fs::path(sc.csv_path).replace_extension(".margins.csv");
        write_file(out_path(g, mpath.string()),
                   [&](std::ostream& os) { write_margins_csv(os, traj, result.report); });
    }
    if (!result.all_expected)
        std::cout << "note: some expected-fail checks passed; see report above\n";
    return verification_exit_code(result);
}

int cmd_synth(const std::string& model_path, const std::string& out_file,
              const std::string& trace_file, DesignConstants consts, int quad_order,
              std::vector<double> gamma_flag) {
    AnySystem sys = load_model(model_path);
    auto* sfs = std::get_if<StrictFeedbackSystem>(&sys);
    if (!sfs)
        throw Error(Error::Code::Config, "synth requires a strict-feedback model");
    ValidationReport vr = validate_strict_feedback(*sfs);
    if (!vr.valid()) {
        std::cerr << "model fails validation:\n" << vr.summary();
        return kExitConfig;
    }
    if (!gamma_flag.empty())
        consts.gamma = std::move(gamma_flag);
    else
        consts.gamma.assign(static_cast<std::size_t>(sfs->p), 1.0);
    SynthesisOptions opts;
    opts.quad_order = quad_order;
    auto [ctrl, trace] = synthesize(*sfs, consts, opts);
    write_file(out_file, [&](std::ostream& os) {
        os << write_model(*sfs);
        os << write_controller_section(ctrl);
    });
    if (!trace_file.empty())
        write_file(trace_file, [&](std::ostream& os) { os << trace.to_text(); });
    std::cout << "controller written to " << out_file << "\n";
    return kExitOk;
}

int cmd_figures(const std::string& which, const std::string& presets_dir, const GlobalOpts& g) {
    std::vector<int> indices;
    if (which == "all") {
        indices = {1, 2, 3, 4, 5, 6};
    } else {
        try {
            std::size_t pos = 0;
            int n = std::stoi(which, &pos);
            if (pos != which.size()) throw std::invalid_argument(which);
            indices = {n};
        } catch (const std::exception&) {
            throw Error(Error::Code::Config, "figures takes 'all' or an index 1..6");
        }
    }
    for (int n : indices)
        if (n < 1 || n > 6) throw Error(Error::Code::Config, "figure index must lie in 1..6");
    for (int n : indices) {
        fs::path preset = fs::path(presets_dir) / "figures" / ("fig" + std::to_string(n) + ".preset");
        if (!fs::exists(preset))
            throw Error(Error::Code::Config, "preset not found: " + preset.string());
        Scenario sc = load_scenario(preset.string());
        if (sc.kind != "figure" || sc.figure != n)
            throw Error(Error::Code::Config, preset.string() + ": expected kind = figure, figure = " +
                                                 std::to_string(n));
        apply_tolerance_overrides(sc, g);
        auto cfg = detail::scenario_example_config(sc);
        auto fig = moore_greitzer::figure_dataset(n, cfg, sc.rtol, sc.atol);
        std::string csv = sc.csv_path.empty() ? "fig" + std::to_string(n) + ".csv" : sc.csv_path;
        std::string svg = sc.svg_path.empty() ? "fig" + std::to_string(n) + ".svg" : sc.svg_path;
        write_file(out_path(g, csv), [&](std::ostream& os) { write_figure_csv(os, fig); });
        write_file(out_path(g, svg), [&](std::ostream& os) { write_figure_svg(os, fig); });
        std::cout << "figure " << n << " -> " << out_path(g, csv).string() << ", "
                  << out_path(g, svg).string() << "\n";
    }
    return kExitOk;
}

int cmd_sweep(const std::string& scenario_path, const GlobalOpts& g) {
    Scenario sc = load_scenario(scenario_path);
    apply_tolerance_overrides(sc, g);
    ScenarioSetup setup = build_scenario(sc);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> initials;
    std::vector<double> th0 = sc.theta_hat0;
    if (static_cast<int>(th0.size()) != setup.p) th0.assign(static_cast<std::size_t>(setup.p), 0.0);
    if (sc.circle_count > 0)
        for (auto& x0 : circle_points(sc.circle_radius, sc.circle_count, setup.n))
            initials.emplace_back(std::move(x0), th0);
    for (const auto& pt : sc.extra_points) {
        if (static_cast<int>(pt.size()) != setup.n)
            throw Error(Error::Code::Config, scenario_path + ": initial point has wrong dimension");
        initials.emplace_back(pt, th0);
    }
    if (initials.empty())
        throw Error(Error::Code::Config, scenario_path + ": sweep needs an initial_set");
    auto runs = sweep(setup.loop, initials, sc.t_end, sc.rtol, sc.atol, sc.n_report);
    std::string csv = sc.csv_path.empty() ? "sweep.csv" : sc.csv_path;
    write_file(out_path(g, csv), [&](std::ostream& os) {
        os << "run";
        for (int i = 1; i <= setup.n; ++i) os << ",x0_" << i;
        os << ",completed,final_norm,peak_norm\n";
        for (std::size_t i = 0; i < runs.size(); ++i) {
            os << i;
            for (double v : initials[i].first) {
                os << ',';
                detail::put_g17(os, v);
            }
            const auto& tr = runs[i];
            double peak = 0.0;
            for (std::size_t k = 0; k < tr.size(); ++k) peak = std::max(peak, tr.state_norm_at(k));
            os << ',' << (tr.meta.completed ? 1 : 0) << ',';
            detail::put_g17(os, tr.size() ? tr.state_norm_at(tr.size() - 1)
                                          : std::numeric_limits<double>::quiet_NaN());
            os << ',';
            detail::put_g17(os, peak);
            os << "\n";
        }
    });
    bool all_ok = true;
    for (const auto& tr : runs) all_ok = all_ok && tr.meta.completed;
    std::cout << "sweep: " << runs.size() << " runs -> " << out_path(g, csv).string() << "\n";
    return all_ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kladapt: adaptive controller synthesis, simulation, and verification"};
    app.require_subcommand(1);
    GlobalOpts g;
    app.add_option("--out-dir", g.out_dir, "directory for output artifacts")->capture_default_str();
    app.add_option("--rtol", g.rtol, "override scenario relative tolerance");
    app.add_option("--atol", g.atol, "override scenario absolute tolerance");
    app.add_option("--seed", g.seed, "seed for sampled checks")->capture_default_str();

    std::string scenario_path, model_path, out_file = "controller.model", trace_file, which;
    std::string presets_dir = "presets";
    bool dump_margins = false;
    DesignConstants consts;
    int quad_order = 16;
    std::vector<double> gamma_flag;

    auto* run = app.add_subcommand("run", "integrate a scenario and write its artifacts");
    run->add_option("scenario", scenario_path, "scenario preset file")->required();

    auto* verify = app.add_subcommand("verify", "run a scenario and check its inequalities");
    verify->add_option("scenario", scenario_path, "scenario preset file")->required();
    verify->add_flag("--dump-margins", dump_margins, "write per-point margins next to the csv");

    auto* synth = app.add_subcommand("synth", "synthesize a backstepping controller for a model");
    synth->add_option("model", model_path, "strict-feedback model file")->required();
    synth->add_option("--out", out_file, "controller output file")->capture_default_str();
    synth->add_option("--trace", trace_file, "synthesis trace output file");
    synth->add_option("--r", consts.r, "parameter-norm-squared budget")->capture_default_str();
    synth->add_option("--alpha", consts.alpha, "Lyapunov decrease rate")->capture_default_str();
    synth->add_option("--omega", consts.omega, "IOS decay rate")->capture_default_str();
    synth->add_option("--epsilon", consts.epsilon, "residual margin")->capture_default_str();
    synth->add_option("--gamma", gamma_flag, "adaptation gains (one per parameter)");
    synth->add_option("--quad-order", quad_order, "Gauss-Legendre order for growth bounds")
        ->capture_default_str();

    auto* figures = app.add_subcommand("figures", "regenerate the example figure datasets");
    figures->add_option("which", which, "'all' or a figure index 1..6")->required();
    figures->add_option("--presets-dir", presets_dir, "directory holding figures/figN.preset")
        ->capture_default_str();

    auto* sweep_cmd = app.add_subcommand("sweep", "batch-integrate an initial-condition set");
    sweep_cmd->add_option("scenario", scenario_path, "scenario preset file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(scenario_path, g);
        if (verify->parsed()) return cmd_verify(scenario_path, g, dump_margins);
        if (synth->parsed())
            return cmd_synth(model_path, out_file, trace_file, consts, quad_order, gamma_flag);
        if (figures->parsed()) return cmd_figures(which, presets_dir, g);
        if (sweep_cmd->parsed()) return cmd_sweep(scenario_path, g);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_config_error(e) ? kExitConfig : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
