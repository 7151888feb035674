#pragma once

// Compiled evaluation tape for hot paths (closed-loop fields, margin sweeps).
// A Program flattens one or more expression DAGs into a topologically ordered
// instruction vector with common subexpressions evaluated once. Named constants
// are bound (folded to immediates) at compile time, so evaluation needs only the
// state and estimate vectors. Evaluation never throws; domain violations set a
// fault flag and the outputs become NaN, which callers treat as a failed step.

#include <limits>

#include "kladapt/expr.hpp"

namespace kladapt {

enum class EvalFault : std::uint8_t { None, SingularDenominator, NegativeSqrt, UnboundSymbol };

class Program {
public:
    Program() = default;

    Program(std::span<const Expr> roots, int n_state, int n_estimate,
            const std::map<std::string, double>& constants) {
        n_state_ = n_state;
        n_estimate_ = n_estimate;
        std::unordered_map<const detail::Node*, int> slot;
        for (const Expr& r : roots) root_slots_.push_back(compile(r.node(), slot, constants));
        n_slots_ = static_cast<int>(next_slot_);
    }

    [[nodiscard]] std::size_t output_count() const { return root_slots_.size(); }
    [[nodiscard]] std::size_t slot_count() const { return static_cast<std::size_t>(n_slots_); }

    /// Evaluates all roots; returns the fault status. Outputs are written to `out`
    /// (size >= output_count()). `work` is resized as needed and may be reused.
    EvalFault eval(std::span<const double> x, std::span<const double> theta_hat,
                   std::span<double> out, std::vector<double>& work) const {
        work.resize(static_cast<std::size_t>(n_slots_));
        EvalFault fault = EvalFault::None;
        for (const auto& ins : code_) {
            double v = 0.0;
            switch (ins.op) {
            case Op::Imm:
                v = ins.imm;
                break;
            case Op::State:
                if (ins.a >= static_cast<int>(x.size())) {
                    fault = EvalFault::UnboundSymbol;
                    v = std::numeric_limits<double>::quiet_NaN();
                } else {
                    v = x[static_cast<std::size_t>(ins.a)];
                }
                break;
            case Op::Estimate:
                if (ins.a >= static_cast<int>(theta_hat.size())) {
                    fault = EvalFault::UnboundSymbol;
                    v = std::numeric_limits<double>::quiet_NaN();
                } else {
                    v = theta_hat[static_cast<std::size_t>(ins.a)];
                }
                break;
            case Op::Add:
                v = work[static_cast<std::size_t>(ins.a)] + work[static_cast<std::size_t>(ins.b)];
                break;
            case Op::Mul:
                v = work[static_cast<std::size_t>(ins.a)] * work[static_cast<std::size_t>(ins.b)];
                break;
            case Op::PowInt:
                v = detail::pow_int(work[static_cast<std::size_t>(ins.a)], ins.b);
                break;
            case Op::Div: {
                double den = work[static_cast<std::size_t>(ins.b)];
                if (std::abs(den) < kSingularDenominator) {
                    fault = EvalFault::SingularDenominator;
                    v = std::numeric_limits<double>::quiet_NaN();
                } else {
                    v = work[static_cast<std::size_t>(ins.a)] / den;
                }
                break;
            }
            case Op::Sqrt: {
                double a = work[static_cast<std::size_t>(ins.a)];
                if (a < 0.0) {
                    fault = EvalFault::NegativeSqrt;
                    v = std::numeric_limits<double>::quiet_NaN();
                } else {
                    v = std::sqrt(a);
                }
                break;
            }
            }
            work[static_cast<std::size_t>(ins.dst)] = v;
        }
        for (std::size_t i = 0; i < root_slots_.size(); ++i)
            out[i] = work[static_cast<std::size_t>(root_slots_[i])];
        return fault;
    }

private:
    enum class Op : std::uint8_t { Imm, State, Estimate, Add, Mul, PowInt, Div, Sqrt };
    struct Ins {
        Op op;
        int dst = 0;
        int a = 0;
        int b = 0;
        double imm = 0.0;
    };

    int emit(Op op, int a, int b, double imm) {
        int dst = static_cast<int>(next_slot_++);
        code_.push_back({op, dst, a, b, imm});
        return dst;
    }

    int compile(const detail::NodePtr& n, std::unordered_map<const detail::Node*, int>& slot,
                const std::map<std::string, double>& constants) {
        auto it = slot.find(n.get());
        if (it != slot.end()) return it->second;
        int dst = -1;
        switch (n->kind) {
        case ExprKind::Constant:
            dst = emit(Op::Imm, 0, 0, n->value);
            break;
        case ExprKind::StateSym:
            dst = emit(Op::State, n->index - 1, 0, 0.0);
            break;
        case ExprKind::EstimateSym:
            dst = emit(Op::Estimate, n->index - 1, 0, 0.0);
            break;
        case ExprKind::NamedSym: {
            auto c = constants.find(n->name);
            if (c == constants.end())
                throw Error(Error::Code::UnboundSymbol,
                            "named constant '" + n->name + "' has no binding at compile time");
            dst = emit(Op::Imm, 0, 0, c->second);
            break;
        }
        case ExprKind::Sum:
        case ExprKind::Product: {
            Op op = n->kind == ExprKind::Sum ? Op::Add : Op::Mul;
            dst = compile(n->children[0], slot, constants);
            for (std::size_t i = 1; i < n->children.size(); ++i)
                dst = emit(op, dst, compile(n->children[i], slot, constants), 0.0);
            break;
        }
        case ExprKind::Power:
            dst = emit(Op::PowInt, compile(n->children[0], slot, constants), n->index, 0.0);
            break;
        case ExprKind::Quotient: {
            int a = compile(n->children[0], slot, constants);
            int b = compile(n->children[1], slot, constants);
            dst = emit(Op::Div, a, b, 0.0);
            break;
        }
        case ExprKind::Sqrt:
            dst = emit(Op::Sqrt, compile(n->children[0], slot, constants), 0, 0.0);
            break;
        }
        slot.emplace(n.get(), dst);
        return dst;
    }

    std::vector<Ins> code_;
    std::vector<int> root_slots_;
    std::size_t next_slot_ = 0;
    int n_slots_ = 0;
    int n_state_ = 0;
    int n_estimate_ = 0;
};

}  // namespace kladapt
