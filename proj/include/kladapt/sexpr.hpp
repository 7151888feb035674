#pragma once

// Prefix S-expression serialization of Expr, e.g. (+ (* 2 (^ x1 2)) th1).
// Printing uses shortest round-trip float formatting; parse(print(e)) reproduces
// the tree exactly.

#include <charconv>
#include <cctype>

#include "kladapt/expr.hpp"

namespace kladapt {

namespace detail {

inline void print_number(std::string& out, double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

inline void print_node(std::string& out, const NodePtr& n) {
    switch (n->kind) {
    case ExprKind::Constant:
        print_number(out, n->value);
        return;
    case ExprKind::StateSym:
        out += "x" + std::to_string(n->index);
        return;
    case ExprKind::EstimateSym:
        out += "th" + std::to_string(n->index);
        return;
    case ExprKind::NamedSym:
        out += n->name;
        return;
    case ExprKind::Sum:
    case ExprKind::Product: {
        out += n->kind == ExprKind::Sum ? "(+" : "(*";
        for (const auto& c : n->children) {
            out += ' ';
            print_node(out, c);
        }
        out += ')';
        return;
    }
    case ExprKind::Power:
        out += "(^ ";
        print_node(out, n->children[0]);
        out += ' ';
        out += std::to_string(n->index);
        out += ')';
        return;
    case ExprKind::Quotient:
        out += "(/ ";
        print_node(out, n->children[0]);
        out += ' ';
        print_node(out, n->children[1]);
        out += ')';
        return;
    case ExprKind::Sqrt:
        out += "(sqrt ";
        print_node(out, n->children[0]);
        out += ')';
        return;
    }
}

}  // namespace detail

[[nodiscard]] inline std::string to_sexpr(const Expr& e) {
    std::string out;
    detail::print_node(out, e.node());
    return out;
}

namespace detail {

struct SexprParser {
    std::string_view src;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw Error(Error::Code::Parse,
                    "s-expression parse error at offset " + std::to_string(pos) + ": " + msg);
    }

    void skip_ws() {
        while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }

    std::string_view token() {
        skip_ws();
        if (pos >= src.size()) fail("unexpected end of input");
        if (src[pos] == '(' || src[pos] == ')') return src.substr(pos++, 1);
        std::size_t start = pos;
        while (pos < src.size() && !std::isspace(static_cast<unsigned char>(src[pos])) &&
               src[pos] != '(' && src[pos] != ')')
            ++pos;
        return src.substr(start, pos - start);
    }

    static bool is_number(std::string_view t) {
        if (t.empty()) return false;
        char c = t[0];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return true;
        if ((c == '-' || c == '+') && t.size() > 1 &&
            (std::isdigit(static_cast<unsigned char>(t[1])) || t[1] == '.'))
            return true;
        return false;
    }

    double parse_number(std::string_view t) {
        double v = 0.0;
        auto res = std::from_chars(t.data(), t.data() + t.size(), v);
        if (res.ec != std::errc{} || res.ptr != t.data() + t.size()) fail("bad number '" + std::string(t) + "'");
        return v;
    }

    Expr atom(std::string_view t) {
        if (is_number(t)) return Expr::constant(parse_number(t));
        if (t.size() >= 2 && t[0] == 'x' && std::isdigit(static_cast<unsigned char>(t[1]))) {
            int idx = 0;
            auto res = std::from_chars(t.data() + 1, t.data() + t.size(), idx);
            if (res.ec == std::errc{} && res.ptr == t.data() + t.size()) return Expr::state(idx);
        }
        if (t.size() >= 3 && t[0] == 't' && t[1] == 'h' &&
            std::isdigit(static_cast<unsigned char>(t[2]))) {
            int idx = 0;
            auto res = std::from_chars(t.data() + 2, t.data() + t.size(), idx);
            if (res.ec == std::errc{} && res.ptr == t.data() + t.size()) return Expr::estimate(idx);
        }
        for (char c : t)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
                fail("bad symbol '" + std::string(t) + "'");
        return Expr::named(std::string(t));
    }

    Expr expr() {
        std::string_view t = token();
        if (t == ")") fail("unexpected ')'");
        if (t != "(") return atom(t);
        std::string_view op = token();
        std::vector<Expr> args;
        while (true) {
            skip_ws();
            if (pos >= src.size()) fail("missing ')'");
            if (src[pos] == ')') {
                ++pos;
                break;
            }
            args.push_back(expr());
        }
        if (op == "+") {
            if (args.empty()) fail("(+) needs arguments");
            return sum_of(std::move(args));
        }
        if (op == "*") {
            if (args.empty()) fail("(*) needs arguments");
            return product_of(std::move(args));
        }
        if (op == "-") {
            if (args.empty()) fail("(-) needs arguments");
            if (args.size() == 1) return -args[0];
            Expr acc = args[0];
            for (std::size_t i = 1; i < args.size(); ++i) acc = acc - args[i];
            return acc;
        }
        if (op == "/") {
            if (args.size() != 2) fail("(/) needs exactly 2 arguments");
            return quotient(args[0], args[1]);
        }
        if (op == "^") {
            if (args.size() != 2 || args[1].kind() != ExprKind::Constant)
                fail("(^) needs a base and an integer exponent");
            double ev = args[1].constant_value();
            int e = static_cast<int>(ev);
            if (e < 0 || static_cast<double>(e) != ev) fail("exponent must be an integer >= 0");
            return pow(args[0], e);
        }
        if (op == "sqrt") {
            if (args.size() != 1) fail("(sqrt) needs exactly 1 argument");
            return sqrt_of(args[0]);
        }
        fail("unknown operator '" + std::string(op) + "'");
    }
};

}  // namespace detail

[[nodiscard]] inline Expr parse_sexpr(std::string_view text) {
    detail::SexprParser p{text};
    Expr e = p.expr();
    p.skip_ws();
    if (p.pos != text.size())
        throw Error(Error::Code::Parse, "trailing characters after s-expression");
    return e;
}

}  // namespace kladapt
