#pragma once

// Model-file format (schema kladapt-model-v1): structured text holding system
// dimensions, constant bindings, and the defining expressions as S-expressions.
// Controllers serialize into the same format under a `controller { ... }` section.

#include <variant>

#include "kladapt/keyfile.hpp"
#include "kladapt/model.hpp"
#include "kladapt/sexpr.hpp"

namespace kladapt {

inline constexpr const char* kModelSchema = "kladapt-model-v1";

struct AdaptiveController {
    Expr u;
    std::vector<Expr> w;                  // p entries, d(theta_hat)/dt = w
    std::map<std::string, Expr> diagnostics;  // V, U, W, T1..Tn, bound, ...
};

using AnySystem = std::variant<MatchedSystem, StrictFeedbackSystem>;

namespace detail {

inline std::map<std::string, double> read_constants(const KeySection& root) {
    std::map<std::string, double> out;
    if (const KeySection* c = root.find_section("constants"))
        for (const auto& [k, v] : c->entries) out[k] = KeySection::parse_double(k, v);
    return out;
}

inline Expr read_expr(const KeySection& s, const std::string& key) {
    return parse_sexpr(s.get(key));
}

}  // namespace detail

inline AnySystem read_model(const KeySection& root, const std::string& origin = "<model>") {
    if (root.get_or("schema", "") != kModelSchema)
        throw Error(Error::Code::Config, origin + ": expected schema = " + std::string(kModelSchema));
    const std::string type = root.get("type");
    const int n = root.get_int("n");
    const int p = root.get_int("p");
    if (n < 1 || p < 1) throw Error(Error::Code::Config, origin + ": need n >= 1 and p >= 1");
    auto consts = detail::read_constants(root);
    if (type == "strict-feedback") {
        StrictFeedbackSystem sys;
        sys.n = n;
        sys.p = p;
        sys.constants = std::move(consts);
        for (int i = 1; i <= n; ++i) {
            sys.f.push_back(detail::read_expr(root, "f[" + std::to_string(i) + "]"));
            sys.g.push_back(detail::read_expr(root, "g[" + std::to_string(i) + "]"));
            std::vector<Expr> row;
            for (int j = 1; j <= p; ++j)
                row.push_back(detail::read_expr(root, "phi[" + std::to_string(i) + "][" + std::to_string(j) + "]"));
            sys.phi.push_back(std::move(row));
        }
        return sys;
    }
    if (type == "matched") {
        MatchedSystem sys;
        sys.n = n;
        sys.p = p;
        sys.constants = std::move(consts);
        for (int i = 1; i <= n; ++i) {
            sys.f.push_back(detail::read_expr(root, "f[" + std::to_string(i) + "]"));
            sys.g.push_back(detail::read_expr(root, "g[" + std::to_string(i) + "]"));
        }
        for (int j = 1; j <= p; ++j)
            sys.phi.push_back(detail::read_expr(root, "phi[" + std::to_string(j) + "]"));
        sys.P = detail::read_expr(root, "P");
        sys.Q = detail::read_expr(root, "Q");
        sys.k0 = detail::read_expr(root, "k0");
        sys.mu = detail::read_expr(root, "mu");
        return sys;
    }
    throw Error(Error::Code::Config, origin + ": unknown model type '" + type + "'");
}

inline AnySystem load_model(const std::string& path) {
    return read_model(load_keyfile(path), path);
}

namespace detail {

inline void write_constants(std::string& out, const std::map<std::string, double>& consts) {
    if (consts.empty()) return;
    out += "constants {\n";
    for (const auto& [k, v] : consts) {
        out += "  " + k + " = ";
        print_number(out, v);
        out += "\n";
    }
    out += "}\n";
}

}  // namespace detail

inline std::string write_model(const StrictFeedbackSystem& sys) {
    std::string out;
    out += "schema = ";
    out += kModelSchema;
    out += "\ntype = strict-feedback\n";
    out += "n = " + std::to_string(sys.n) + "\n";
    out += "p = " + std::to_string(sys.p) + "\n";
    detail::write_constants(out, sys.constants);
    for (int i = 1; i <= sys.n; ++i) {
        out += "f[" + std::to_string(i) + "] = " + to_sexpr(sys.f[static_cast<std::size_t>(i - 1)]) + "\n";
        out += "g[" + std::to_string(i) + "] = " + to_sexpr(sys.g[static_cast<std::size_t>(i - 1)]) + "\n";
        for (int j = 1; j <= sys.p; ++j)
            out += "phi[" + std::to_string(i) + "][" + std::to_string(j) + "] = " +
                   to_sexpr(sys.phi[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)]) + "\n";
    }
    return out;
}

inline std::string write_model(const MatchedSystem& sys) {
    std::string out;
    out += "schema = ";
    out += kModelSchema;
    out += "\ntype = matched\n";
    out += "n = " + std::to_string(sys.n) + "\n";
    out += "p = " + std::to_string(sys.p) + "\n";
    detail::write_constants(out, sys.constants);
    for (int i = 1; i <= sys.n; ++i) {
        out += "f[" + std::to_string(i) + "] = " + to_sexpr(sys.f[static_cast<std::size_t>(i - 1)]) + "\n";
        out += "g[" + std::to_string(i) + "] = " + to_sexpr(sys.g[static_cast<std::size_t>(i - 1)]) + "\n";
    }
    for (int j = 1; j <= sys.p; ++j)
        out += "phi[" + std::to_string(j) + "] = " + to_sexpr(sys.phi[static_cast<std::size_t>(j - 1)]) + "\n";
    out += "P = " + to_sexpr(sys.P) + "\n";
    out += "Q = " + to_sexpr(sys.Q) + "\n";
    out += "k0 = " + to_sexpr(sys.k0) + "\n";
    out += "mu = " + to_sexpr(sys.mu) + "\n";
    return out;
}

inline std::string write_controller_section(const AdaptiveController& ctrl) {
    std::string out = "controller {\n";
    out += "  u = " + to_sexpr(ctrl.u) + "\n";
    for (std::size_t j = 0; j < ctrl.w.size(); ++j)
        out += "  w[" + std::to_string(j + 1) + "] = " + to_sexpr(ctrl.w[j]) + "\n";
    for (const auto& [name, e] : ctrl.diagnostics)
        out += "  diag[" + name + "] = " + to_sexpr(e) + "\n";
    out += "}\n";
    return out;
}

inline AdaptiveController read_controller_section(const KeySection& root,
                                                  const std::string& origin = "<controller>") {
    const KeySection* c = root.find_section("controller");
    if (!c) throw Error(Error::Code::Config, origin + ": no controller section");
    AdaptiveController ctrl;
    ctrl.u = parse_sexpr(c->get("u"));
    for (int j = 1;; ++j) {
        const std::string* v = c->find("w[" + std::to_string(j) + "]");
        if (!v) break;
        ctrl.w.push_back(parse_sexpr(*v));
    }
    if (ctrl.w.empty()) throw Error(Error::Code::Config, origin + ": controller has no update law");
    for (const auto& [k, v] : c->entries) {
        if (k.size() > 6 && k.rfind("diag[", 0) == 0 && k.back() == ']')
            ctrl.diagnostics[k.substr(5, k.size() - 6)] = parse_sexpr(v);
    }
    return ctrl;
}

}  // namespace kladapt
