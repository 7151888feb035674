#pragma once

// Expression simplification: local algebraic rewrites (constant folding, unit laws,
// flattening, power/term collection) plus a bounded expand-and-collect pass that
// normalizes polynomial subtrees over "atoms" (symbols plus opaque quotient/sqrt
// subtrees). The collected form is adopted only when it is not larger, so the pass
// collapses quadrature sums of polynomial integrands to closed form without ever
// inflating genuinely non-polynomial expressions.

#include <optional>

#include "kladapt/expr.hpp"

namespace kladapt {
namespace detail {

inline NodePtr nconst(double v) { return make_node(ExprKind::Constant, v, 0, {}, {}); }

class Simplifier {
public:
    explicit Simplifier(std::size_t max_terms = 4096) : max_terms_(max_terms) {}

    NodePtr run(const NodePtr& n) {
        auto it = memo_.find(n);
        if (it != memo_.end()) return it->second;
        std::vector<NodePtr> ch;
        ch.reserve(n->children.size());
        for (const auto& c : n->children) ch.push_back(run(c));
        NodePtr local = rebuild_local(n->kind, n->value, n->index, n->name, std::move(ch));
        NodePtr out = local;
        if (local->kind == ExprKind::Sum || local->kind == ExprKind::Product ||
            local->kind == ExprKind::Power) {
            if (auto p = poly_of(local)) {
                NodePtr collected = rebuild_poly(*p);
                if (collected->tree_size <= local->tree_size) out = collected;
            }
        }
        memo_.emplace(n, out);
        return out;
    }

private:
    using Monomial = std::vector<std::pair<NodePtr, int>>;  // sorted by atom order

    struct MonoLess {
        bool operator()(const Monomial& a, const Monomial& b) const {
            std::size_t m = std::min(a.size(), b.size());
            for (std::size_t i = 0; i < m; ++i) {
                int c = compare(a[i].first, b[i].first);
                if (c != 0) return c < 0;
                if (a[i].second != b[i].second) return a[i].second < b[i].second;
            }
            return a.size() < b.size();
        }
    };
    using Poly = std::map<Monomial, double, MonoLess>;

    // Memo keys hold shared ownership: transient nodes must stay alive for the
    // simplifier's lifetime or freed addresses could alias later allocations.
    std::size_t max_terms_;
    std::unordered_map<NodePtr, NodePtr> memo_;
    std::unordered_map<NodePtr, std::optional<Poly>> poly_memo_;

    // ---- local rules ----

    static std::pair<double, NodePtr> split_coefficient(const NodePtr& term) {
        if (term->kind == ExprKind::Product && !term->children.empty() &&
            term->children.front()->kind == ExprKind::Constant) {
            double c = term->children.front()->value;
            std::vector<NodePtr> rest(term->children.begin() + 1, term->children.end());
            if (rest.empty()) return {c, nconst(1.0)};
            if (rest.size() == 1) return {c, rest[0]};
            return {c, make_node(ExprKind::Product, 0.0, 0, {}, std::move(rest))};
        }
        if (term->kind == ExprKind::Constant) return {term->value, nconst(1.0)};
        return {1.0, term};
    }

    NodePtr rebuild_sum(std::vector<NodePtr> children) {
        std::vector<NodePtr> flat;
        for (auto& c : children) {
            if (c->kind == ExprKind::Sum)
                flat.insert(flat.end(), c->children.begin(), c->children.end());
            else
                flat.push_back(std::move(c));
        }
        double const_sum = 0.0;
        std::map<NodePtr, double, NodeLess> terms;
        for (auto& t : flat) {
            if (t->kind == ExprKind::Constant) {
                const_sum += t->value;
                continue;
            }
            auto [c, core] = split_coefficient(t);
            if (core->kind == ExprKind::Constant) {
                const_sum += c * core->value;
                continue;
            }
            terms[core] += c;
        }
        std::vector<NodePtr> out;
        for (const auto& [core, c] : terms) {
            if (c == 0.0) continue;
            if (c == 1.0) {
                out.push_back(core);
            } else if (core->kind == ExprKind::Product) {
                std::vector<NodePtr> f{nconst(c)};
                f.insert(f.end(), core->children.begin(), core->children.end());
                out.push_back(make_node(ExprKind::Product, 0.0, 0, {}, std::move(f)));
            } else {
                out.push_back(make_node(ExprKind::Product, 0.0, 0, {}, {nconst(c), core}));
            }
        }
        std::sort(out.begin(), out.end(), NodeLess{});
        if (const_sum != 0.0) out.insert(out.begin(), nconst(const_sum));
        if (out.empty()) return nconst(0.0);
        if (out.size() == 1) return out[0];
        return make_node(ExprKind::Sum, 0.0, 0, {}, std::move(out));
    }

    NodePtr rebuild_product(std::vector<NodePtr> children) {
        std::vector<NodePtr> flat;
        for (auto& c : children) {
            if (c->kind == ExprKind::Product)
                flat.insert(flat.end(), c->children.begin(), c->children.end());
            else
                flat.push_back(std::move(c));
        }
        double const_prod = 1.0;
        std::map<NodePtr, long, NodeLess> bases;
        for (auto& f : flat) {
            if (f->kind == ExprKind::Constant) {
                const_prod *= f->value;
                continue;
            }
            if (f->kind == ExprKind::Power)
                bases[f->children[0]] += f->index;
            else
                bases[f] += 1;
        }
        if (const_prod == 0.0) return nconst(0.0);
        std::vector<NodePtr> out;
        for (const auto& [b, e] : bases) {
            if (e == 0) continue;
            out.push_back(e == 1 ? b : make_node(ExprKind::Power, 0.0, static_cast<int>(e), {}, {b}));
        }
        std::sort(out.begin(), out.end(), NodeLess{});
        if (const_prod != 1.0 || out.empty()) out.insert(out.begin(), nconst(const_prod));
        if (out.size() == 1) return out[0];
        return make_node(ExprKind::Product, 0.0, 0, {}, std::move(out));
    }

    NodePtr rebuild_power(const NodePtr& base, int m) {
        if (m == 0) return nconst(1.0);
        if (m == 1) return base;
        if (base->kind == ExprKind::Constant) return nconst(pow_int(base->value, m));
        if (base->kind == ExprKind::Power)
            return rebuild_power(base->children[0], base->index * m);
        if (base->kind == ExprKind::Product) {
            std::vector<NodePtr> f;
            f.reserve(base->children.size());
            for (const auto& c : base->children) f.push_back(rebuild_power(c, m));
            return rebuild_product(std::move(f));
        }
        return make_node(ExprKind::Power, 0.0, m, {}, {base});
    }

    NodePtr rebuild_quotient(const NodePtr& num, const NodePtr& den) {
        if (num->kind == ExprKind::Constant && num->value == 0.0) return nconst(0.0);
        if (den->kind == ExprKind::Constant && std::abs(den->value) >= kSingularDenominator)
            return rebuild_product({nconst(1.0 / den->value), num});
        if (num->kind == ExprKind::Quotient) {
            // (a/b)/c -> a/(b*c)
            return make_node(ExprKind::Quotient, 0.0, 0, {},
                             {num->children[0], rebuild_product({num->children[1], den})});
        }
        return make_node(ExprKind::Quotient, 0.0, 0, {}, {num, den});
    }

    NodePtr rebuild_local(ExprKind kind, double value, int index, const std::string& name,
                          std::vector<NodePtr> ch) {
        switch (kind) {
        case ExprKind::Sum:
            return rebuild_sum(std::move(ch));
        case ExprKind::Product:
            return rebuild_product(std::move(ch));
        case ExprKind::Power:
            return rebuild_power(ch[0], index);
        case ExprKind::Quotient:
            return rebuild_quotient(ch[0], ch[1]);
        case ExprKind::Sqrt:
            if (ch[0]->kind == ExprKind::Constant && ch[0]->value >= 0.0)
                return nconst(std::sqrt(ch[0]->value));
            return make_node(ExprKind::Sqrt, 0.0, 0, {}, std::move(ch));
        default:
            return make_node(kind, value, index, name, std::move(ch));
        }
    }

    // ---- bounded expand-and-collect ----

    std::optional<Poly> poly_of(const NodePtr& n) {
        auto it = poly_memo_.find(n);
        if (it != poly_memo_.end()) return it->second;
        std::optional<Poly> out;
        switch (n->kind) {
        case ExprKind::Constant: {
            Poly p;
            if (n->value != 0.0) p.emplace(Monomial{}, n->value);
            out = std::move(p);
            break;
        }
        case ExprKind::StateSym:
        case ExprKind::EstimateSym:
        case ExprKind::NamedSym:
        case ExprKind::Quotient:
        case ExprKind::Sqrt: {
            Poly p;
            p.emplace(Monomial{{n, 1}}, 1.0);
            out = std::move(p);
            break;
        }
        case ExprKind::Sum: {
            Poly acc;
            bool ok = true;
            for (const auto& c : n->children) {
                auto pc = poly_of(c);
                if (!pc) {
                    ok = false;
                    break;
                }
                for (const auto& [m, v] : *pc) {
                    double& slot = acc[m];
                    slot += v;
                    if (slot == 0.0) acc.erase(m);
                }
                if (acc.size() > max_terms_) {
                    ok = false;
                    break;
                }
            }
            if (ok) out = std::move(acc);
            break;
        }
        case ExprKind::Product: {
            Poly acc;
            acc.emplace(Monomial{}, 1.0);
            bool ok = true;
            for (const auto& c : n->children) {
                auto pc = poly_of(c);
                if (!pc) {
                    ok = false;
                    break;
                }
                auto prod = convolve(acc, *pc);
                if (!prod) {
                    ok = false;
                    break;
                }
                acc = std::move(*prod);
            }
            if (ok) out = std::move(acc);
            break;
        }
        case ExprKind::Power: {
            if (n->index > 32) break;
            auto pb = poly_of(n->children[0]);
            if (!pb) break;
            Poly acc;
            acc.emplace(Monomial{}, 1.0);
            Poly b = std::move(*pb);
            bool ok = true;
            for (int k = n->index; k > 0; k >>= 1) {
                if (k & 1) {
                    auto r = convolve(acc, b);
                    if (!r) {
                        ok = false;
                        break;
                    }
                    acc = std::move(*r);
                }
                if (k > 1) {
                    auto r = convolve(b, b);
                    if (!r) {
                        ok = false;
                        break;
                    }
                    b = std::move(*r);
                }
            }
            if (ok) out = std::move(acc);
            break;
        }
        }
        poly_memo_.emplace(n, out);
        return out;
    }

    std::optional<Poly> convolve(const Poly& a, const Poly& b) {
        Poly r;
        for (const auto& [ma, va] : a) {
            for (const auto& [mb, vb] : b) {
                Monomial m;
                m.reserve(ma.size() + mb.size());
                std::size_t i = 0, j = 0;
                while (i < ma.size() && j < mb.size()) {
                    int c = compare(ma[i].first, mb[j].first);
                    if (c < 0)
                        m.push_back(ma[i++]);
                    else if (c > 0)
                        m.push_back(mb[j++]);
                    else {
                        m.emplace_back(ma[i].first, ma[i].second + mb[j].second);
                        ++i;
                        ++j;
                    }
                }
                for (; i < ma.size(); ++i) m.push_back(ma[i]);
                for (; j < mb.size(); ++j) m.push_back(mb[j]);
                double& slot = r[m];
                slot += va * vb;
                if (slot == 0.0) r.erase(m);
                if (r.size() > max_terms_) return std::nullopt;
            }
        }
        return r;
    }

    NodePtr rebuild_poly(const Poly& p) {
        std::vector<NodePtr> terms;
        for (const auto& [mono, c] : p) {
            if (c == 0.0) continue;
            std::vector<NodePtr> factors;
            if (c != 1.0 || mono.empty()) factors.push_back(nconst(c));
            for (const auto& [atom, e] : mono)
                factors.push_back(e == 1 ? atom
                                         : make_node(ExprKind::Power, 0.0, e, {}, {atom}));
            terms.push_back(factors.size() == 1
                                ? factors[0]
                                : make_node(ExprKind::Product, 0.0, 0, {}, std::move(factors)));
        }
        return rebuild_sum(std::move(terms));
    }
};

}  // namespace detail

[[nodiscard]] inline Expr simplify(const Expr& e) {
    detail::Simplifier s;
    return Expr(s.run(e.node()));
}

}  // namespace kladapt
