#pragma once

// Symbolic expression core: immutable expression trees over state symbols x1..xn,
// estimate symbols th1..thp and named design constants, closed under exact partial
// differentiation. Everything downstream (controller synthesis, closed-loop fields,
// Lyapunov margins) is built from these trees and evaluated either one-shot or
// through a compiled instruction tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace kladapt {

class Error : public std::runtime_error {
public:
    enum class Code {
        UnboundSymbol,
        NearSingularDenominator,
        NegativeSqrtArgument,
        NonFiniteResult,
        NonvanishingAtOrigin,
        EnvelopeDegenerate,
        ArgumentAboveRange,
        RhoPreconditionFailed,
        DimensionMismatch,
        Parse,
        Config,
    };

    Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] Code code() const noexcept { return code_; }

private:
    Code code_;
};

/// Denominators smaller than this (absolute) are treated as singular at evaluation.
inline constexpr double kSingularDenominator = 1e-12;

enum class ExprKind : std::uint8_t {
    Constant,
    StateSym,     // x_i, 1-based index
    EstimateSym,  // th_j, 1-based index
    NamedSym,     // named design constant
    Sum,
    Product,
    Power,  // integer exponent >= 0
    Quotient,
    Sqrt,  // argument expected positive on the evaluation domain
};

class Expr;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    ExprKind kind;
    double value = 0.0;      // Constant
    int index = 0;           // StateSym/EstimateSym (1-based), Power exponent
    std::string name;        // NamedSym
    std::vector<NodePtr> children;
    std::uint64_t hash = 0;
    std::uint64_t tree_size = 1;  // size with multiplicity, saturating
};

inline std::uint64_t hash_mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

inline NodePtr make_node(ExprKind kind, double value, int index, std::string name,
                         std::vector<NodePtr> children) {
    auto n = std::make_shared<Node>();
    n->kind = kind;
    n->value = value;
    n->index = index;
    n->name = std::move(name);
    n->children = std::move(children);
    std::uint64_t h = static_cast<std::uint64_t>(kind) * 0x100000001b3ULL;
    if (kind == ExprKind::Constant) {
        std::uint64_t bits;
        std::memcpy(&bits, &n->value, sizeof bits);
        h = hash_mix(h, bits);
    }
    h = hash_mix(h, static_cast<std::uint64_t>(n->index));
    for (char c : n->name) h = hash_mix(h, static_cast<std::uint64_t>(c));
    std::uint64_t sz = 1;
    for (const auto& c : n->children) {
        h = hash_mix(h, c->hash);
        sz = std::min<std::uint64_t>(sz + c->tree_size, 1000000000ULL);
    }
    n->hash = h;
    n->tree_size = sz;
    return n;
}

// Total structural order (kind, payload, children lexicographically).
inline int compare(const NodePtr& a, const NodePtr& b) {
    if (a.get() == b.get()) return 0;
    if (a->kind != b->kind) return a->kind < b->kind ? -1 : 1;
    switch (a->kind) {
    case ExprKind::Constant:
        if (a->value != b->value) return a->value < b->value ? -1 : 1;
        return 0;
    case ExprKind::StateSym:
    case ExprKind::EstimateSym:
        if (a->index != b->index) return a->index < b->index ? -1 : 1;
        return 0;
    case ExprKind::NamedSym: {
        int c = a->name.compare(b->name);
        return c < 0 ? -1 : (c == 0 ? 0 : 1);
    }
    case ExprKind::Power:
        if (a->index != b->index) return a->index < b->index ? -1 : 1;
        break;
    default:
        break;
    }
    if (a->children.size() != b->children.size())
        return a->children.size() < b->children.size() ? -1 : 1;
    for (std::size_t i = 0; i < a->children.size(); ++i) {
        int c = compare(a->children[i], b->children[i]);
        if (c != 0) return c;
    }
    return 0;
}

inline bool equal(const NodePtr& a, const NodePtr& b) {
    if (a.get() == b.get()) return true;
    if (a->hash != b->hash) return false;
    return compare(a, b) == 0;
}

struct NodeLess {
    bool operator()(const NodePtr& a, const NodePtr& b) const { return compare(a, b) < 0; }
};

}  // namespace detail

/// Evaluation context: state vector, estimate vector, named-constant bindings.
struct Point {
    std::vector<double> x;
    std::vector<double> theta_hat;
    std::map<std::string, double> constants;
};

class Expr {
public:
    Expr() : node_(detail::make_node(ExprKind::Constant, 0.0, 0, {}, {})) {}
    explicit Expr(detail::NodePtr n) : node_(std::move(n)) {}

    static Expr constant(double v) { return Expr(detail::make_node(ExprKind::Constant, v, 0, {}, {})); }
    static Expr state(int i) {
        if (i < 1) throw Error(Error::Code::DimensionMismatch, "state symbol index must be >= 1");
        return Expr(detail::make_node(ExprKind::StateSym, 0.0, i, {}, {}));
    }
    static Expr estimate(int j) {
        if (j < 1) throw Error(Error::Code::DimensionMismatch, "estimate symbol index must be >= 1");
        return Expr(detail::make_node(ExprKind::EstimateSym, 0.0, j, {}, {}));
    }
    static Expr named(std::string name) {
        return Expr(detail::make_node(ExprKind::NamedSym, 0.0, 0, std::move(name), {}));
    }

    [[nodiscard]] ExprKind kind() const { return node_->kind; }
    [[nodiscard]] const detail::NodePtr& node() const { return node_; }
    [[nodiscard]] double constant_value() const { return node_->value; }
    [[nodiscard]] int symbol_index() const { return node_->index; }
    [[nodiscard]] int power_exponent() const { return node_->index; }
    [[nodiscard]] const std::string& symbol_name() const { return node_->name; }
    [[nodiscard]] std::size_t child_count() const { return node_->children.size(); }
    [[nodiscard]] Expr child(std::size_t i) const { return Expr(node_->children[i]); }

    [[nodiscard]] bool is_constant(double v) const {
        return node_->kind == ExprKind::Constant && node_->value == v;
    }

    friend bool operator==(const Expr& a, const Expr& b) { return detail::equal(a.node_, b.node_); }

private:
    detail::NodePtr node_;
};

// ---- construction helpers ----------------------------------------------------------

inline Expr sum_of(std::vector<Expr> terms) {
    if (terms.empty()) return Expr::constant(0.0);
    if (terms.size() == 1) return terms[0];
    std::vector<detail::NodePtr> ch;
    ch.reserve(terms.size());
    for (auto& t : terms) ch.push_back(t.node());
    return Expr(detail::make_node(ExprKind::Sum, 0.0, 0, {}, std::move(ch)));
}

inline Expr product_of(std::vector<Expr> factors) {
    if (factors.empty()) return Expr::constant(1.0);
    if (factors.size() == 1) return factors[0];
    std::vector<detail::NodePtr> ch;
    ch.reserve(factors.size());
    for (auto& f : factors) ch.push_back(f.node());
    return Expr(detail::make_node(ExprKind::Product, 0.0, 0, {}, std::move(ch)));
}

inline Expr operator+(const Expr& a, const Expr& b) { return sum_of({a, b}); }
inline Expr operator-(const Expr& a, const Expr& b) {
    return sum_of({a, product_of({Expr::constant(-1.0), b})});
}
inline Expr operator-(const Expr& a) { return product_of({Expr::constant(-1.0), a}); }
inline Expr operator*(const Expr& a, const Expr& b) { return product_of({a, b}); }
inline Expr operator+(const Expr& a, double b) { return a + Expr::constant(b); }
inline Expr operator+(double a, const Expr& b) { return Expr::constant(a) + b; }
inline Expr operator-(const Expr& a, double b) { return a - Expr::constant(b); }
inline Expr operator-(double a, const Expr& b) { return Expr::constant(a) - b; }
inline Expr operator*(const Expr& a, double b) { return a * Expr::constant(b); }
inline Expr operator*(double a, const Expr& b) { return Expr::constant(a) * b; }

inline Expr pow(const Expr& base, int exponent) {
    if (exponent < 0) throw Error(Error::Code::Parse, "power exponent must be >= 0");
    return Expr(detail::make_node(ExprKind::Power, 0.0, exponent, {}, {base.node()}));
}

inline Expr quotient(const Expr& num, const Expr& den) {
    return Expr(detail::make_node(ExprKind::Quotient, 0.0, 0, {}, {num.node(), den.node()}));
}

inline Expr operator/(const Expr& a, const Expr& b) { return quotient(a, b); }
inline Expr operator/(const Expr& a, double b) { return quotient(a, Expr::constant(b)); }
inline Expr operator/(double a, const Expr& b) { return quotient(Expr::constant(a), b); }

inline Expr sqrt_of(const Expr& arg) {
    return Expr(detail::make_node(ExprKind::Sqrt, 0.0, 0, {}, {arg.node()}));
}

// ---- evaluation --------------------------------------------------------------------

namespace detail {

inline double pow_int(double base, int e) {
    double r = 1.0, b = base;
    for (int k = e; k > 0; k >>= 1) {
        if (k & 1) r *= b;
        b *= b;
    }
    return r;
}

inline double eval_node(const NodePtr& n, const Point& pt,
                        std::unordered_map<const Node*, double>& memo) {
    auto it = memo.find(n.get());
    if (it != memo.end()) return it->second;
    double v = 0.0;
    switch (n->kind) {
    case ExprKind::Constant:
        v = n->value;
        break;
    case ExprKind::StateSym:
        if (n->index > static_cast<int>(pt.x.size()))
            throw Error(Error::Code::UnboundSymbol, "unbound state symbol x" + std::to_string(n->index));
        v = pt.x[static_cast<std::size_t>(n->index - 1)];
        break;
    case ExprKind::EstimateSym:
        if (n->index > static_cast<int>(pt.theta_hat.size()))
            throw Error(Error::Code::UnboundSymbol, "unbound estimate symbol th" + std::to_string(n->index));
        v = pt.theta_hat[static_cast<std::size_t>(n->index - 1)];
        break;
    case ExprKind::NamedSym: {
        auto c = pt.constants.find(n->name);
        if (c == pt.constants.end())
            throw Error(Error::Code::UnboundSymbol, "unbound named constant " + n->name);
        v = c->second;
        break;
    }
    case ExprKind::Sum:
        for (const auto& c : n->children) v += eval_node(c, pt, memo);
        break;
    case ExprKind::Product:
        v = 1.0;
        for (const auto& c : n->children) v *= eval_node(c, pt, memo);
        break;
    case ExprKind::Power:
        v = pow_int(eval_node(n->children[0], pt, memo), n->index);
        break;
    case ExprKind::Quotient: {
        double num = eval_node(n->children[0], pt, memo);
        double den = eval_node(n->children[1], pt, memo);
        if (std::abs(den) < kSingularDenominator)
            throw Error(Error::Code::NearSingularDenominator, "denominator magnitude below 1e-12");
        v = num / den;
        break;
    }
    case ExprKind::Sqrt: {
        double a = eval_node(n->children[0], pt, memo);
        if (a < 0.0)
            throw Error(Error::Code::NegativeSqrtArgument, "sqrt of negative argument");
        v = std::sqrt(a);
        break;
    }
    }
    memo.emplace(n.get(), v);
    return v;
}

}  // namespace detail

inline double eval(const Expr& e, const Point& pt) {
    std::unordered_map<const detail::Node*, double> memo;
    double v = detail::eval_node(e.node(), pt, memo);
    if (!std::isfinite(v)) throw Error(Error::Code::NonFiniteResult, "evaluation produced non-finite value");
    return v;
}

// ---- symbol scan -------------------------------------------------------------------

struct SymbolUse {
    int max_state_index = 0;
    int max_estimate_index = 0;
    std::vector<std::string> named;
    [[nodiscard]] bool has_named(const std::string& s) const {
        return std::find(named.begin(), named.end(), s) != named.end();
    }
};

namespace detail {
inline void scan_node(const NodePtr& n, SymbolUse& out, std::unordered_map<const Node*, bool>& seen) {
    if (seen.count(n.get())) return;
    seen.emplace(n.get(), true);
    switch (n->kind) {
    case ExprKind::StateSym:
        out.max_state_index = std::max(out.max_state_index, n->index);
        break;
    case ExprKind::EstimateSym:
        out.max_estimate_index = std::max(out.max_estimate_index, n->index);
        break;
    case ExprKind::NamedSym:
        if (!out.has_named(n->name)) out.named.push_back(n->name);
        break;
    default:
        break;
    }
    for (const auto& c : n->children) scan_node(c, out, seen);
}
}  // namespace detail

inline SymbolUse scan_symbols(const Expr& e) {
    SymbolUse u;
    std::unordered_map<const detail::Node*, bool> seen;
    detail::scan_node(e.node(), u, seen);
    std::sort(u.named.begin(), u.named.end());
    return u;
}

/// Number of distinct nodes in the expression DAG (shared subtrees counted once).
inline std::size_t dag_size(const Expr& e) {
    std::unordered_map<const detail::Node*, bool> seen;
    std::vector<const detail::Node*> stack{e.node().get()};
    while (!stack.empty()) {
        const auto* n = stack.back();
        stack.pop_back();
        if (seen.count(n)) continue;
        seen.emplace(n, true);
        for (const auto& c : n->children) stack.push_back(c.get());
    }
    return seen.size();
}

// ---- differentiation ---------------------------------------------------------------

/// Differentiation variable: a state or estimate symbol.
struct DiffVar {
    ExprKind kind;  // StateSym or EstimateSym
    int index;
    static DiffVar state(int i) { return {ExprKind::StateSym, i}; }
    static DiffVar estimate(int j) { return {ExprKind::EstimateSym, j}; }
};

namespace detail {

inline NodePtr partial_node(const NodePtr& n, const DiffVar& v,
                            std::unordered_map<const Node*, NodePtr>& memo) {
    auto it = memo.find(n.get());
    if (it != memo.end()) return it->second;
    auto zero = [] { return make_node(ExprKind::Constant, 0.0, 0, {}, {}); };
    NodePtr out;
    switch (n->kind) {
    case ExprKind::Constant:
    case ExprKind::NamedSym:
        out = zero();
        break;
    case ExprKind::StateSym:
    case ExprKind::EstimateSym:
        out = (n->kind == v.kind && n->index == v.index)
                  ? make_node(ExprKind::Constant, 1.0, 0, {}, {})
                  : zero();
        break;
    case ExprKind::Sum: {
        std::vector<NodePtr> terms;
        for (const auto& c : n->children) terms.push_back(partial_node(c, v, memo));
        out = make_node(ExprKind::Sum, 0.0, 0, {}, std::move(terms));
        break;
    }
    case ExprKind::Product: {
        std::vector<NodePtr> terms;
        for (std::size_t i = 0; i < n->children.size(); ++i) {
            std::vector<NodePtr> factors = n->children;
            factors[i] = partial_node(n->children[i], v, memo);
            terms.push_back(make_node(ExprKind::Product, 0.0, 0, {}, std::move(factors)));
        }
        out = make_node(ExprKind::Sum, 0.0, 0, {}, std::move(terms));
        break;
    }
    case ExprKind::Power: {
        int m = n->index;
        if (m == 0) {
            out = zero();
            break;
        }
        NodePtr du = partial_node(n->children[0], v, memo);
        NodePtr um1 = make_node(ExprKind::Power, 0.0, m - 1, {}, {n->children[0]});
        out = make_node(ExprKind::Product, 0.0, 0, {},
                        {make_node(ExprKind::Constant, static_cast<double>(m), 0, {}, {}), um1, du});
        break;
    }
    case ExprKind::Quotient: {
        const NodePtr& u = n->children[0];
        const NodePtr& w = n->children[1];
        NodePtr du = partial_node(u, v, memo);
        NodePtr dw = partial_node(w, v, memo);
        NodePtr num = make_node(
            ExprKind::Sum, 0.0, 0, {},
            {make_node(ExprKind::Product, 0.0, 0, {}, {du, w}),
             make_node(ExprKind::Product, 0.0, 0, {},
                       {make_node(ExprKind::Constant, -1.0, 0, {}, {}), u, dw})});
        NodePtr den = make_node(ExprKind::Power, 0.0, 2, {}, {w});
        out = make_node(ExprKind::Quotient, 0.0, 0, {}, {num, den});
        break;
    }
    case ExprKind::Sqrt: {
        NodePtr du = partial_node(n->children[0], v, memo);
        NodePtr den = make_node(ExprKind::Product, 0.0, 0, {},
                                {make_node(ExprKind::Constant, 2.0, 0, {}, {}),
                                 make_node(ExprKind::Sqrt, 0.0, 0, {}, {n->children[0]})});
        out = make_node(ExprKind::Quotient, 0.0, 0, {}, {du, den});
        break;
    }
    }
    memo.emplace(n.get(), out);
    return out;
}

}  // namespace detail

[[nodiscard]] Expr simplify(const Expr& e);

[[nodiscard]] inline Expr partial(const Expr& e, const DiffVar& v) {
    std::unordered_map<const detail::Node*, detail::NodePtr> memo;
    return simplify(Expr(detail::partial_node(e.node(), v, memo)));
}

// ---- substitution ------------------------------------------------------------------

/// Simultaneous substitution of symbols by expressions. Map keys are symbol exprs
/// (state/estimate/named); non-symbol keys are rejected.
class Substitution {
public:
    void set_state(int i, const Expr& e) { state_[i] = e.node(); }
    void set_estimate(int j, const Expr& e) { estimate_[j] = e.node(); }
    void set_named(const std::string& s, const Expr& e) { named_[s] = e.node(); }

    [[nodiscard]] const detail::NodePtr* find(const detail::Node& n) const {
        switch (n.kind) {
        case ExprKind::StateSym: {
            auto it = state_.find(n.index);
            return it == state_.end() ? nullptr : &it->second;
        }
        case ExprKind::EstimateSym: {
            auto it = estimate_.find(n.index);
            return it == estimate_.end() ? nullptr : &it->second;
        }
        case ExprKind::NamedSym: {
            auto it = named_.find(n.name);
            return it == named_.end() ? nullptr : &it->second;
        }
        default:
            return nullptr;
        }
    }

private:
    std::map<int, detail::NodePtr> state_;
    std::map<int, detail::NodePtr> estimate_;
    std::map<std::string, detail::NodePtr> named_;
};

namespace detail {
inline NodePtr substitute_node(const NodePtr& n, const Substitution& sub,
                               std::unordered_map<const Node*, NodePtr>& memo) {
    auto it = memo.find(n.get());
    if (it != memo.end()) return it->second;
    NodePtr out;
    if (const NodePtr* rep = sub.find(*n)) {
        out = *rep;
    } else if (n->children.empty()) {
        out = n;
    } else {
        std::vector<NodePtr> ch;
        ch.reserve(n->children.size());
        bool changed = false;
        for (const auto& c : n->children) {
            NodePtr nc = substitute_node(c, sub, memo);
            changed = changed || nc.get() != c.get();
            ch.push_back(std::move(nc));
        }
        out = changed ? make_node(n->kind, n->value, n->index, n->name, std::move(ch)) : n;
    }
    memo.emplace(n.get(), out);
    return out;
}
}  // namespace detail

[[nodiscard]] inline Expr substitute(const Expr& e, const Substitution& sub) {
    std::unordered_map<const detail::Node*, detail::NodePtr> memo;
    return Expr(detail::substitute_node(e.node(), sub, memo));
}

/// Binds all named constants to numeric values (missing names are left symbolic).
[[nodiscard]] inline Expr bind_constants(const Expr& e, const std::map<std::string, double>& consts) {
    Substitution sub;
    for (const auto& [k, v] : consts) sub.set_named(k, Expr::constant(v));
    return substitute(e, sub);
}

}  // namespace kladapt

#include "kladapt/simplify.hpp"
